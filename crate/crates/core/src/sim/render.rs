//! Deterministic software rasterizer for the two camera views.
//!
//! The static view covers the whole table at 24x24; the gripper view is a
//! 2x-zoomed 12x12 crop centered on the gripper. Shapes are drawn with a
//! one-pixel soft edge so object positions survive the low resolution as
//! sub-pixel intensity gradients.

use super::{geom, Color, SceneState};
use crate::config::SimConfig;

pub const STATIC_RES: usize = 24;
pub const GRIPPER_RES: usize = 12;
/// Half-extent of the gripper viewport in table units (2x zoom).
pub const GRIPPER_HALF: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Static,
    Gripper,
}

/// Rendering perturbations. The default is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    /// Gain multiplying pixel intensities before clamping.
    pub lighting: f64,
    /// Colored blobs drawn on the static view only.
    pub distractors: Vec<(f64, f64, Color)>,
    /// Re-randomize the next target object position between subtasks.
    pub relocalize: bool,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec { lighting: 1.0, distractors: Vec::new(), relocalize: false }
    }
}

impl PerturbationSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.lighting == 1.0 && self.distractors.is_empty() && !self.relocalize
    }
}

/// Row-major RGB image with float channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Image {
    fn filled(w: usize, h: usize, rgb: [f32; 3]) -> Image {
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&rgb);
        }
        Image { w, h, data }
    }

    #[inline]
    fn blend(&mut self, px: usize, py: usize, rgb: [f32; 3], alpha: f32) {
        let i = (py * self.w + px) * 3;
        for c in 0..3 {
            self.data[i + c] = self.data[i + c] * (1.0 - alpha) + rgb[c] * alpha;
        }
    }

    pub fn pixel(&self, px: usize, py: usize) -> [f32; 3] {
        let i = (py * self.w + px) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// World-to-pixel mapping for one camera.
struct Viewport {
    cx: f64,
    cy: f64,
    half: f64,
    res: usize,
}

impl Viewport {
    /// World units per pixel.
    fn pixel_size(&self) -> f64 {
        2.0 * self.half / self.res as f64
    }

    /// Pixel center in world coordinates.
    fn pixel_center(&self, px: usize, py: usize) -> (f64, f64) {
        let s = self.pixel_size();
        (self.cx - self.half + (px as f64 + 0.5) * s, self.cy - self.half + (py as f64 + 0.5) * s)
    }

    fn world_to_px(&self, wx: f64, wy: f64) -> (f64, f64) {
        let s = self.pixel_size();
        ((wx - (self.cx - self.half)) / s - 0.5, (wy - (self.cy - self.half)) / s - 0.5)
    }

    fn draw_disk(&self, img: &mut Image, wx: f64, wy: f64, r: f64, rgb: [f32; 3]) {
        let aa = self.pixel_size();
        let (pcx, pcy) = self.world_to_px(wx, wy);
        let pr = (r + aa) / aa; // reach in pixels
        let x0 = (pcx - pr).floor().max(0.0) as usize;
        let x1 = (pcx + pr).ceil().min((img.w - 1) as f64) as usize;
        let y0 = (pcy - pr).floor().max(0.0) as usize;
        let y1 = (pcy + pr).ceil().min((img.h - 1) as f64) as usize;
        if (pcx + pr) < 0.0 || (pcy + pr) < 0.0 {
            return;
        }
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (cx, cy) = self.pixel_center(px, py);
                let d = ((cx - wx).powi(2) + (cy - wy).powi(2)).sqrt();
                let alpha = ((r - d) / aa + 0.5).clamp(0.0, 1.0) as f32;
                if alpha > 0.0 {
                    img.blend(px, py, rgb, alpha);
                }
            }
        }
    }

    fn draw_rect(&self, img: &mut Image, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [f32; 3]) {
        let aa = self.pixel_size();
        for py in 0..img.h {
            for px in 0..img.w {
                let (cx, cy) = self.pixel_center(px, py);
                // 1D soft coverage along each axis.
                let ax = (((x1 - cx).min(cx - x0)) / aa + 0.5).clamp(0.0, 1.0);
                let ay = (((y1 - cy).min(cy - y0)) / aa + 0.5).clamp(0.0, 1.0);
                let alpha = (ax * ay) as f32;
                if alpha > 0.0 {
                    img.blend(px, py, rgb, alpha);
                }
            }
        }
    }
}

const BG: [f32; 3] = [0.22, 0.22, 0.24];
const DRAWER_BODY: [f32; 3] = [0.45, 0.30, 0.15];
const DRAWER_HANDLE: [f32; 3] = [0.85, 0.72, 0.30];
const SLIDER_RAIL: [f32; 3] = [0.36, 0.36, 0.40];
const SLIDER_HANDLE: [f32; 3] = [0.20, 0.72, 0.80];
const BOWL_RIM: [f32; 3] = [0.85, 0.85, 0.90];
const BOWL_INNER: [f32; 3] = [0.12, 0.12, 0.16];
const LED_ON: [f32; 3] = [1.00, 0.92, 0.20];
const LED_OFF: [f32; 3] = [0.35, 0.10, 0.10];

/// Deterministic rasterization of a state into one camera view.
pub fn render(state: &SceneState, view: View, pert: &PerturbationSpec, cfg: &SimConfig) -> Image {
    let vp = match view {
        View::Static => Viewport { cx: 0.5, cy: 0.5, half: 0.5, res: STATIC_RES },
        View::Gripper => {
            Viewport { cx: state.gripper.x, cy: state.gripper.y, half: GRIPPER_HALF, res: GRIPPER_RES }
        }
    };
    let mut img = Image::filled(vp.res, vp.res, BG);

    // Drawer: body follows the handle, handle knob on top.
    let hx = geom::drawer_handle_x(state.drawer_open_frac);
    vp.draw_rect(&mut img, hx - 0.16, geom::DRAWER_Y - 0.045, hx, geom::DRAWER_Y + 0.045, DRAWER_BODY);
    vp.draw_disk(&mut img, hx, geom::DRAWER_Y, 0.020, DRAWER_HANDLE);

    // Slider rail and handle.
    vp.draw_rect(
        &mut img,
        geom::SLIDER_X0 - 0.02,
        geom::SLIDER_Y - 0.008,
        geom::SLIDER_X0 + geom::SLIDER_TRAVEL + 0.02,
        geom::SLIDER_Y + 0.008,
        SLIDER_RAIL,
    );
    vp.draw_disk(&mut img, geom::slider_handle_x(state.slider_pos), geom::SLIDER_Y, 0.020, SLIDER_HANDLE);

    // Bowl as a bright rim with a dark well.
    vp.draw_disk(&mut img, state.bowl.0, state.bowl.1, cfg.bowl_radius + 0.012, BOWL_RIM);
    vp.draw_disk(&mut img, state.bowl.0, state.bowl.1, cfg.bowl_radius - 0.014, BOWL_INNER);

    // LED button.
    let led = if state.led_on { LED_ON } else { LED_OFF };
    vp.draw_disk(&mut img, geom::BUTTON_X, state.button_y, geom::BUTTON_RADIUS, led);

    // Blocks (a held block rides at the gripper position already).
    for b in &state.blocks {
        vp.draw_disk(&mut img, b.x, b.y, geom::BLOCK_RADIUS, b.color.rgb());
    }

    // Gripper: brightness encodes height (low = bright), fill encodes open/closed.
    let closeness = 1.0 - (state.gripper.z / geom::Z_MAX) as f32;
    let body = 0.45 + 0.55 * closeness;
    vp.draw_disk(&mut img, state.gripper.x, state.gripper.y, 0.022, [body, body, body]);
    if !state.gripper_closed {
        // Open gripper shows a dark center.
        vp.draw_disk(&mut img, state.gripper.x, state.gripper.y, 0.010, [0.05, 0.05, 0.05]);
    }

    // Distractors affect the static view only.
    if view == View::Static {
        for &(dx, dy, color) in &pert.distractors {
            vp.draw_disk(&mut img, dx, dy, 0.022, color.rgb());
        }
    }

    // Lighting gain, then clamp.
    let gain = pert.lighting as f32;
    for v in &mut img.data {
        *v = (*v * gain).clamp(0.0, 1.0);
    }
    img
}

/// What the policy sees at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub static_img: Image,
    pub gripper_img: Image,
    /// Gripper pose, closed flag, held flag, drawer fraction, led flag.
    pub proprio: [f32; 8],
}

impl Observation {
    pub fn capture(state: &SceneState, pert: &PerturbationSpec, cfg: &SimConfig) -> Observation {
        Observation {
            static_img: render(state, View::Static, pert, cfg),
            gripper_img: render(state, View::Gripper, pert, cfg),
            proprio: [
                state.gripper.x as f32,
                state.gripper.y as f32,
                state.gripper.z as f32,
                state.gripper.yaw as f32,
                state.gripper_closed as u8 as f32,
                state.held.is_some() as u8 as f32,
                state.drawer_open_frac as f32,
                state.led_on as u8 as f32,
            ],
        }
    }
}
