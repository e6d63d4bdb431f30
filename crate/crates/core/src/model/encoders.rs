//! Token encoders: images via patch embedding plus two token-grid conv
//! layers, language via an embedding bag with one transformer layer, and
//! detection boxes via sinusoidal corner features through a trainable
//! linear map.

use super::params::{GraphParams, DET_FEATURES};
use crate::autodiff::{Tape, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::sim::Image;

/// Image as a [H*W, 3] matrix of channel floats.
pub fn image_matrix<T: Real>(img: &Image) -> Tensor<T> {
    Tensor::from_vec(
        &[img.w * img.h, 3],
        img.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
}

/// Pixel-row gather order that groups each patch's pixels contiguously.
pub fn patch_indices(res: usize, patch: usize) -> Vec<usize> {
    let grid = res / patch;
    let mut idx = Vec::with_capacity(res * res);
    for gy in 0..grid {
        for gx in 0..grid {
            for py in 0..patch {
                for px in 0..patch {
                    idx.push((gy * patch + py) * res + gx * patch + px);
                }
            }
        }
    }
    idx
}

/// 3x3 neighborhood gather over a token grid; index `grid*grid` is the
/// zero-pad sentinel row.
pub fn conv_neighbor_lut(grid: usize) -> Vec<usize> {
    let pad = grid * grid;
    let mut lut = Vec::with_capacity(grid * grid * 9);
    for gy in 0..grid as isize {
        for gx in 0..grid as isize {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (gy + dy, gx + dx);
                    if ny < 0 || nx < 0 || ny >= grid as isize || nx >= grid as isize {
                        lut.push(pad);
                    } else {
                        lut.push((ny * grid as isize + nx) as usize);
                    }
                }
            }
        }
    }
    lut
}

/// Patch-embed an image and mix it with two 3x3 token-grid conv layers.
pub fn encode_image<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    prefix: &str,
    img: &Image,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    let expected = match prefix {
        "enc_static" => crate::sim::render::STATIC_RES,
        "enc_gripper" => crate::sim::render::GRIPPER_RES,
        other => panic!("unknown encoder prefix {other}"),
    };
    if img.w != expected || img.h != expected {
        return Err(Error::Shape(format!(
            "{prefix}: expected {expected}x{expected} image, got {}x{}",
            img.w, img.h
        )));
    }
    let grid = expected / cfg.patch;
    let tokens = grid * grid;
    let d = cfg.d_model;

    let pixels = tape.constant(image_matrix(img));
    let patches = pixels
        .gather_rows(&patch_indices(expected, cfg.patch))
        .reshape(&[tokens, cfg.patch * cfg.patch * 3]);
    let mut x = patches
        .matmul(g.p(&format!("{prefix}.patch_w")))
        .add_row(g.p(&format!("{prefix}.patch_b")))
        .add(g.p(&format!("{prefix}.pos")));

    let lut = conv_neighbor_lut(grid);
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    for conv in ["conv1", "conv2"] {
        let padded = tape.concat_rows(&[x, zero]);
        x = padded
            .gather_rows(&lut)
            .reshape(&[tokens, 9 * d])
            .matmul(g.p(&format!("{prefix}.{conv}_w")))
            .add_row(g.p(&format!("{prefix}.{conv}_b")))
            .gelu();
    }
    Ok(x)
}

/// Language instruction -> pooled embedding (pre-projection).
pub fn encode_text<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    token_ids: &[usize],
    cfg: &ModelConfig,
) -> Var<'t, T> {
    assert_eq!(token_ids.len(), cfg.text_len, "tokenize to text_len first");
    let l = cfg.text_len;

    let all = vec![true; l];

    let mut x = g.p("text.embed").gather_rows(token_ids).add(g.p("text.pos"));
    let xn = x.layer_norm(g.p("text.ln1_g"), g.p("text.ln1_b"), 1e-5);
    let attn = super::transformer::multi_head_attention(tape, g, "text", xn, &all, cfg.n_heads);
    x = x.add(attn);
    let xn2 = x.layer_norm(g.p("text.ln2_g"), g.p("text.ln2_b"), 1e-5);
    let mlp = xn2
        .matmul(g.p("text.mlp1_w"))
        .add_row(g.p("text.mlp1_b"))
        .gelu()
        .matmul(g.p("text.mlp2_w"))
        .add_row(g.p("text.mlp2_b"));
    x = x.add(mlp);
    let pooled = x.masked_mean_rows(&all);
    pooled.matmul(g.p("text.proj_w")).add_row(g.p("text.proj_b"))
}

/// Sinusoidal features for one box corner.
fn corner_features<T: Real>(x: f64, y: f64) -> Tensor<T> {
    let mut data = Vec::with_capacity(DET_FEATURES);
    let n_freq = DET_FEATURES / 4;
    for &coord in &[x, y] {
        for k in 0..n_freq {
            let w = std::f64::consts::PI * (1 << k) as f64;
            data.push(T::from_f64((w * coord).sin()));
            data.push(T::from_f64((w * coord).cos()));
        }
    }
    Tensor::from_vec(&[1, DET_FEATURES], data)
}

/// Detection boxes -> two corner tokens per slot; missing slots get the
/// learned null token and a `false` presence bit.
pub fn encode_detection<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    boxes: &[[f64; 4]],
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, Vec<bool>)> {
    const EPS: f64 = 1e-6;
    for b in boxes {
        if b.iter().any(|v| !(-EPS..=1.0 + EPS).contains(v)) {
            return Err(Error::Shape(format!("box coordinates outside [0,1]: {b:?}")));
        }
    }
    let mut tokens: Vec<Var<'t, T>> = Vec::with_capacity(2 * cfg.n_boxes);
    let mut present = Vec::with_capacity(2 * cfg.n_boxes);
    for slot in 0..cfg.n_boxes {
        if let Some(b) = boxes.get(slot) {
            for corner in [(b[0], b[1]), (b[2], b[3])] {
                let feats = tape.constant(corner_features(corner.0, corner.1));
                tokens.push(feats.matmul(g.p("det.phi_w")).add_row(g.p("det.phi_b")));
                present.push(true);
            }
        } else {
            tokens.push(g.p("det.null"));
            tokens.push(g.p("det.null"));
            present.push(false);
            present.push(false);
        }
    }
    Ok((tape.concat_rows(&tokens), present))
}

/// FiLM modulation of the static tokens by the mean detection token:
/// e_hat = (1 + W_mult(summary)) * e_s + W_add(summary), per channel.
pub fn film_modulate<'t, T: Real>(
    g: &GraphParams<'t, T>,
    static_tokens: Var<'t, T>,
    det_summary: Var<'t, T>,
) -> Var<'t, T> {
    let mult = det_summary.matmul(g.p("film.mult_w")).add(g.p("film.mult_b"));
    let add = det_summary.matmul(g.p("film.add_w")).add(g.p("film.add_b"));
    static_tokens.mul_row(mult.add_scalar(T::ONE)).add_row(add)
}

/// Action channels normalized to roughly [-1, 1] for diffusion.
pub fn normalize_action(a: &crate::sim::Action8) -> [f64; 8] {
    [
        2.0 * a.x - 1.0,
        2.0 * a.y - 1.0,
        2.0 * (a.z / crate::sim::geom::Z_MAX) - 1.0,
        a.eu_x / std::f64::consts::PI,
        a.eu_y,
        a.eu_z,
        a.s_g,
        a.s_p,
    ]
}

pub fn denormalize_action(v: &[f64; 8]) -> crate::sim::Action8 {
    crate::sim::Action8 {
        x: (v[0] + 1.0) / 2.0,
        y: (v[1] + 1.0) / 2.0,
        z: (v[2] + 1.0) / 2.0 * crate::sim::geom::Z_MAX,
        eu_x: v[3] * std::f64::consts::PI,
        eu_y: v[4],
        eu_z: v[5],
        s_g: v[6],
        s_p: v[7],
    }
}
