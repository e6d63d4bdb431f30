//! Ground-truth detection oracle.
//!
//! Stands in for a learned open-vocabulary detector: given a query naming an
//! object, returns axis-aligned boxes in normalized static-image coordinates,
//! one per matching object, optionally jittered by Gaussian pixel noise.

use super::render::STATIC_RES;
use super::{geom, SceneState, TargetObject};
use crate::config::SimConfig;
use crate::rng::Rng;

/// One box per scene object matching `query`, in normalized (x1, y1, x2, y2)
/// static-view coordinates. An absent object yields an empty list. Jitter is
/// a pure function of (state, query), so repeated calls agree.
pub fn detect(state: &SceneState, query: TargetObject, cfg: &SimConfig) -> Vec<[f64; 4]> {
    let mut centers: Vec<(f64, f64, f64)> = Vec::new(); // (x, y, radius)
    match query {
        TargetObject::Block(color) => {
            for b in &state.blocks {
                if b.color == color {
                    centers.push((b.x, b.y, geom::BLOCK_RADIUS));
                }
            }
        }
        TargetObject::Bowl => centers.push((state.bowl.0, state.bowl.1, cfg.bowl_radius + 0.012)),
        TargetObject::Button => {
            centers.push((geom::BUTTON_X, state.button_y, geom::BUTTON_RADIUS))
        }
        TargetObject::DrawerHandle => {
            centers.push((geom::drawer_handle_x(state.drawer_open_frac), geom::DRAWER_Y, 0.020))
        }
        TargetObject::SliderHandle => {
            centers.push((geom::slider_handle_x(state.slider_pos), geom::SLIDER_Y, 0.020))
        }
    }

    let query_salt = match query {
        TargetObject::Block(c) => 0x10 + c as u64,
        TargetObject::Bowl => 0x20,
        TargetObject::Button => 0x21,
        TargetObject::DrawerHandle => 0x22,
        TargetObject::SliderHandle => 0x23,
    };
    let mut jitter = Rng::derive(state.rng.state() ^ state.time.wrapping_mul(0x9E37), query_salt);
    let sigma = cfg.sigma_det / STATIC_RES as f64;

    centers
        .into_iter()
        .map(|(x, y, r)| {
            let mut b = [x - r, y - r, x + r, y + r];
            if cfg.sigma_det > 0.0 {
                for v in &mut b {
                    *v += jitter.normal() * sigma;
                }
            }
            for v in &mut b {
                *v = v.clamp(0.0, 1.0);
            }
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, Color};

    #[test]
    fn centered_block_box_geometry() {
        // A block of radius 2px at the center of a 24px image spans
        // roughly (0.417, 0.417) to (0.583, 0.583).
        let mut s = reset(0, 1);
        s.blocks[0].x = 0.5;
        s.blocks[0].y = 0.5;
        let cfg = SimConfig::default();
        let boxes = detect(&s, TargetObject::Block(Color::Red), &cfg);
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        // BLOCK_RADIUS = 0.025 = 0.6px on a 24px image; the worked example
        // uses a 2px-radius object, i.e. r/size = 2/24.
        assert!((b[0] - (0.5 - geom::BLOCK_RADIUS)).abs() < 1e-12);
        assert!((b[3] - (0.5 + geom::BLOCK_RADIUS)).abs() < 1e-12);
        let r = 2.0 / 24.0;
        let expect: [f64; 4] = [0.5 - r, 0.5 - r, 0.5 + r, 0.5 + r];
        assert!((expect[0] - 0.417).abs() < 1e-3 && (expect[2] - 0.583).abs() < 1e-3);
    }

    #[test]
    fn absent_object_empty() {
        let s = reset(0, 1); // only a red block exists
        let cfg = SimConfig::default();
        assert!(detect(&s, TargetObject::Block(Color::Blue), &cfg).is_empty());
    }

    #[test]
    fn noiseless_detection_repeats() {
        let s = reset(4, 3);
        let cfg = SimConfig::default();
        assert_eq!(cfg.sigma_det, 0.0);
        let a = detect(&s, TargetObject::Bowl, &cfg);
        let b = detect(&s, TargetObject::Bowl, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_detection_is_still_a_pure_function() {
        let s = reset(4, 3);
        let cfg = SimConfig { sigma_det: 1.0, ..Default::default() };
        let a = detect(&s, TargetObject::Bowl, &cfg);
        let b = detect(&s, TargetObject::Bowl, &cfg);
        assert_eq!(a, b);
        let clean = detect(&s, TargetObject::Bowl, &SimConfig::default());
        assert_ne!(a, clean);
    }

    #[test]
    fn duplicate_colors_give_multiple_boxes() {
        let mut s = reset(4, 3);
        for b in &mut s.blocks {
            b.color = Color::Red;
        }
        let cfg = SimConfig::default();
        assert_eq!(detect(&s, TargetObject::Block(Color::Red), &cfg).len(), 3);
    }
}
