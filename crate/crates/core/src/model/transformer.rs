//! Masked multi-head attention and the multimodal encoder stack.
//!
//! Attention scores are gated by the rank-1 mask M_ij = m_i * m_j: active
//! query rows renormalize over active keys only, and inactive rows emit
//! exact zeros. The residual stream of inactive tokens is also zeroed after
//! every sublayer so nothing can re-enter through per-token MLPs or norms.

use super::params::GraphParams;
use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::real::Real;

/// Single-head masked attention: P = QK^T / sqrt(C), A = masked softmax of
/// P under m, output A V. Rows with m_i = 0 are exactly zero.
pub fn masked_attention<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    m: &[bool],
) -> Var<'t, T> {
    let c = q.shape()[1];
    let scale = T::from_f64(1.0 / (c as f64).sqrt());
    let p = q.matmul(k.t()).scale(scale);
    p.masked_softmax(m).matmul(v)
}

/// Multi-head masked attention with the projection weights under `prefix`.
pub fn multi_head_attention<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    prefix: &str,
    x: Var<'t, T>,
    m: &[bool],
    n_heads: usize,
) -> Var<'t, T> {
    let d = x.shape()[1];
    assert_eq!(d % n_heads, 0);
    let hd = d / n_heads;
    let q = x.matmul(g.p(&format!("{prefix}.wq_w"))).add_row(g.p(&format!("{prefix}.wq_b")));
    let k = x.matmul(g.p(&format!("{prefix}.wk_w"))).add_row(g.p(&format!("{prefix}.wk_b")));
    let v = x.matmul(g.p(&format!("{prefix}.wv_w"))).add_row(g.p(&format!("{prefix}.wv_b")));
    let heads: Vec<Var<'t, T>> = (0..n_heads)
        .map(|h| {
            masked_attention(
                q.slice_cols(h * hd, hd),
                k.slice_cols(h * hd, hd),
                v.slice_cols(h * hd, hd),
                m,
            )
        })
        .collect();
    tape.concat_cols(&heads)
        .matmul(g.p(&format!("{prefix}.wo_w")))
        .add_row(g.p(&format!("{prefix}.wo_b")))
}

/// The multimodal encoder: n_layers of {masked attention, layer norm, GELU
/// MLP} with residuals, then a final norm. Inactive rows of the output are
/// exact zeros.
pub fn forward_encoder<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    cfg: &ModelConfig,
    e_pre: Var<'t, T>,
    mask: &[bool],
) -> Var<'t, T> {
    let n = e_pre.shape()[0];
    assert_eq!(mask.len(), n, "mask length does not match token count");
    let w: Vec<T> = mask.iter().map(|&b| if b { T::ONE } else { T::ZERO }).collect();
    let mut x = e_pre.scale_rows(&w);
    for l in 0..cfg.n_layers {
        let pre = format!("xf.l{l}");
        let xn = x.layer_norm(g.p(&format!("{pre}.ln1_g")), g.p(&format!("{pre}.ln1_b")), 1e-5);
        let attn = multi_head_attention(tape, g, &pre, xn, mask, cfg.n_heads);
        x = x.add(attn).scale_rows(&w);
        let xn2 = x.layer_norm(g.p(&format!("{pre}.ln2_g")), g.p(&format!("{pre}.ln2_b")), 1e-5);
        let mlp = xn2
            .matmul(g.p(&format!("{pre}.mlp1_w")))
            .add_row(g.p(&format!("{pre}.mlp1_b")))
            .gelu()
            .matmul(g.p(&format!("{pre}.mlp2_w")))
            .add_row(g.p(&format!("{pre}.mlp2_b")));
        x = x.add(mlp).scale_rows(&w);
    }
    x.layer_norm(g.p("xf.lnf_g"), g.p("xf.lnf_b"), 1e-5).scale_rows(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::params::init_params;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect())
    }

    #[test]
    fn all_active_equals_standard_softmax_attention() {
        let mut rng = Rng::new(1);
        let tape: Tape<f64> = Tape::new();
        let n = 5;
        let c = 4;
        let q = tape.constant(rand_tensor(&mut rng, &[n, c]));
        let k = tape.constant(rand_tensor(&mut rng, &[n, c]));
        let v = tape.constant(rand_tensor(&mut rng, &[n, c]));
        let out = masked_attention(q, k, v, &vec![true; n]).tensor();

        // Plain softmax attention computed independently.
        let (qt, kt, vt) = (q.tensor(), k.tensor(), v.tensor());
        let p = qt.matmul(&kt.transpose());
        let scale = 1.0 / (c as f64).sqrt();
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| p.data[i * n + j] * scale).collect();
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
            let s: f64 = exps.iter().sum();
            for col in 0..c {
                let expect: f64 = (0..n).map(|j| exps[j] / s * vt.data[j * c + col]).sum();
                assert!((out.data[i * c + col] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_token_single_active_pair() {
        // N=2, m=[1,0]: A = [[1,0],[0,0]].
        let tape: Tape<f64> = Tape::new();
        let p = tape.constant(Tensor::from_vec(&[2, 2], vec![0.3, 9.0, -2.0, 4.0]));
        let a = p.masked_softmax(&[true, false]).tensor();
        assert_eq!(a.data, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn row_stochastic_on_active_rows_zero_on_inactive_columns() {
        let mut rng = Rng::new(7);
        for trial in 0..50 {
            let n = 2 + (trial % 14);
            let tape: Tape<f64> = Tape::new();
            let p = tape.constant(rand_tensor(&mut rng, &[n, n]));
            let mut m: Vec<bool> = (0..n).map(|_| rng.chance(0.6)).collect();
            m[rng.below(n)] = true; // at least one active token
            let a = p.masked_softmax(&m).tensor();
            for i in 0..n {
                let sum: f64 = (0..n).map(|j| a.data[i * n + j]).sum();
                if m[i] {
                    assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
                    for j in 0..n {
                        if !m[j] {
                            assert_eq!(a.data[i * n + j], 0.0);
                        }
                    }
                } else {
                    assert_eq!(sum, 0.0, "inactive row must be exactly zero");
                }
            }
        }
    }

    #[test]
    fn encoder_output_shape_and_masked_zeroes() {
        let cfg = ModelConfig::default();
        let ps = init_params::<f64>(&cfg, 32, 3);
        let tape = Tape::new();
        let g = GraphParams::inject(&tape, &ps, false);
        let mut rng = Rng::new(2);
        let n = 25;
        let e_pre = tape.constant(rand_tensor(&mut rng, &[n, cfg.d_model]));
        let mut mask = vec![true; n];
        for i in 16..20 {
            mask[i] = false;
        }
        let out = forward_encoder(&tape, &g, &cfg, e_pre, &mask).tensor();
        assert_eq!(out.shape, vec![25, 64]);
        for i in 16..20 {
            for j in 0..64 {
                assert_eq!(out.data[i * 64 + j], 0.0, "masked row {i} leaked");
            }
        }
    }

    #[test]
    fn perturbing_masked_token_leaves_active_rows_unchanged() {
        let cfg = ModelConfig::default();
        let ps = init_params::<f64>(&cfg, 32, 4);
        let tape = Tape::new();
        let g = GraphParams::inject(&tape, &ps, false);
        let mut rng = Rng::new(3);
        let n = 25;
        let base = rand_tensor(&mut rng, &[n, cfg.d_model]);
        let mut mask = vec![true; n];
        mask[17] = false;
        let out1 = forward_encoder(&tape, &g, &cfg, tape.constant(base.clone()), &mask).tensor();
        let mut perturbed = base.clone();
        for j in 0..cfg.d_model {
            perturbed.data[17 * cfg.d_model + j] += 1000.0;
        }
        let out2 = forward_encoder(&tape, &g, &cfg, tape.constant(perturbed), &mask).tensor();
        for i in 0..n {
            if i == 17 {
                continue;
            }
            for j in 0..cfg.d_model {
                assert_eq!(out1.data[i * cfg.d_model + j], out2.data[i * cfg.d_model + j]);
            }
        }
    }
}
