//! Training losses: the diffusion score-matching term, the symmetric
//! InfoNCE goal-alignment term, and their weighted total.

use super::denoiser::denoise;
use super::mod_forward::Encoded;
use super::params::GraphParams;
use super::Policy;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;

/// Mean squared error between a prediction and a constant target.
pub fn mse<'t, T: Real>(tape: &'t Tape<T>, pred: Var<'t, T>, target: &Tensor<T>) -> Var<'t, T> {
    let tgt = tape.constant(target.clone());
    let d = pred.sub(tgt);
    d.mul(d).mean_all()
}

/// Symmetric InfoNCE over paired goal embeddings:
/// L = (1/2B) sum_t [ -log softmax_row(S/nu)_tt - log softmax_col(S/nu)_tt ]
/// with S the cosine similarity matrix.
pub fn goal_align_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    z_o: &[Var<'t, T>],
    z_l: &[Var<'t, T>],
    nu: f64,
) -> Result<Var<'t, T>> {
    assert_eq!(z_o.len(), z_l.len());
    let b = z_o.len();
    if b == 0 {
        return Err(Error::Numeric("goal_align_loss with empty batch".into()));
    }
    let mut rows_o = Vec::with_capacity(b);
    let mut rows_l = Vec::with_capacity(b);
    for (zo, zl) in z_o.iter().zip(z_l) {
        for z in [zo, zl] {
            let norm = z.tensor().frobenius_norm();
            if norm < 1e-12 {
                return Err(Error::Numeric("zero-norm goal embedding".into()));
            }
        }
        rows_o.push(normalize_row(tape, *zo));
        rows_l.push(normalize_row(tape, *zl));
    }
    let zo_mat = tape.concat_rows(&rows_o);
    let zl_mat = tape.concat_rows(&rows_l);
    let s = zo_mat.matmul(zl_mat.t()).scale(T::from_f64(1.0 / nu));
    let row_term = cross_entropy_diag(s);
    let col_term = cross_entropy_diag(s.t());
    Ok(row_term.add(col_term).scale(T::from_f64(1.0 / (2 * b) as f64)))
}

fn normalize_row<'t, T: Real>(tape: &'t Tape<T>, z: Var<'t, T>) -> Var<'t, T> {
    let norm = z.mul(z).sum_all().sqrt();
    let one = tape.constant(Tensor::scalar(T::ONE));
    z.mul_scalar_var(one.div(norm))
}

/// sum_i [ logsumexp(S_i*) - S_ii ] with a detached row max for stability.
fn cross_entropy_diag<T: Real>(s: Var<'_, T>) -> Var<'_, T> {
    let sv = s.tensor();
    let n = sv.rows();
    let row_max: Vec<T> = (0..n)
        .map(|i| {
            sv.data[i * n..(i + 1) * n]
                .iter()
                .copied()
                .fold(T::from_f64(f64::NEG_INFINITY), |a, b| a.max(b))
        })
        .collect();
    let max_sum: T = row_max.iter().copied().sum();
    let shifted = s.sub_col_const(&row_max);
    let lse = shifted.exp().row_sum().ln().sum_all().add_scalar(max_sum);
    lse.sub(s.diag().sum_all())
}

/// One assembled training example.
pub struct BatchItem {
    pub input: super::mod_forward::PolicyInput,
    /// Ground-truth chunk, already normalized, shape [H, 8] flattened.
    pub chunk: Vec<f64>,
}

pub struct BatchLoss<'t, T: Real> {
    pub total: Var<'t, T>,
    pub diff_value: f64,
    pub goal_value: f64,
    pub labeled: usize,
}

/// L_Diff + alpha * (labeled fraction) * L_Goal over one mini-batch.
///
/// For each item a noise level is drawn log-uniformly, the chunk is
/// corrupted with Gaussian noise of that scale, and the denoiser's clean
/// prediction is regressed to the target. The s_p channel rides along in
/// the targets, so phase prediction is learned jointly.
pub fn batch_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    policy: &Policy<T>,
    items: &[BatchItem],
    mask_mode: &super::mod_forward::MaskMode,
    rng: &mut Rng,
    alpha: f64,
) -> Result<BatchLoss<'t, T>> {
    if items.is_empty() {
        return Err(Error::Numeric("batch_loss on an empty batch".into()));
    }
    let cfg = &policy.cfg;
    let h8 = cfg.chunk * 8;
    let mut item_losses = Vec::with_capacity(items.len());
    let mut z_o = Vec::new();
    let mut z_l = Vec::new();
    for item in items {
        assert_eq!(item.chunk.len(), h8);
        let enc: Encoded<'t, T> = policy.forward_encode(tape, g, &item.input, mask_mode, rng)?;
        let sigma = rng.log_uniform(cfg.sigma_min, cfg.sigma_max);
        let target = Tensor::from_f64(&[cfg.chunk, 8], &item.chunk);
        let noisy = Tensor::from_vec(
            &[cfg.chunk, 8],
            target.data.iter().map(|&t| t + T::from_f64(rng.normal() * sigma)).collect(),
        );
        let pred = denoise(tape, g, cfg, tape.constant(noisy), enc.e_post, &enc.active, sigma)?;
        item_losses.push(mse(tape, pred, &target));
        if let (Some(zo), Some(zl)) = (enc.z_o, enc.z_l) {
            z_o.push(zo);
            z_l.push(zl);
        }
    }
    let b = items.len();
    let mut l_diff = item_losses[0];
    for l in &item_losses[1..] {
        l_diff = l_diff.add(*l);
    }
    let l_diff = l_diff.scale(T::from_f64(1.0 / b as f64));
    let labeled = z_o.len();
    let diff_value = l_diff.tensor().item().to_f64();
    let (total, goal_value) = if labeled > 0 && alpha != 0.0 {
        let l_goal = goal_align_loss(tape, &z_o, &z_l, cfg.nu)?;
        let gv = l_goal.tensor().item().to_f64();
        let coeff = alpha * labeled as f64 / b as f64;
        (l_diff.add(l_goal.scale(T::from_f64(coeff))), gv)
    } else {
        (l_diff, 0.0)
    };
    Ok(BatchLoss { total, diff_value, goal_value, labeled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows<'a>(tape: &'a Tape<f64>, rows: &[[f64; 3]]) -> Vec<Var<'a, f64>> {
        rows.iter().map(|r| tape.leaf(Tensor::from_vec(&[1, 3], r.to_vec()))).collect()
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let tape = Tape::new();
        let zo = unit_rows(&tape, &[[1.0, 0.0, 0.0]]);
        let zl = unit_rows(&tape, &[[0.5, 0.5, 0.0]]);
        let l = goal_align_loss(&tape, &zo, &zl, 1.0).unwrap().tensor().item();
        assert!(l.abs() < 1e-12, "B=1 softmax over one element must give 0, got {l}");
    }

    #[test]
    fn identity_similarity_matches_hand_value() {
        // B=2, orthonormal pairs: S = I, nu = 1 -> loss = log(1 + e^{-1}).
        let tape = Tape::new();
        let zo = unit_rows(&tape, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let zl = unit_rows(&tape, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let l = goal_align_loss(&tape, &zo, &zl, 1.0).unwrap().tensor().item();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
        assert!((expect - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn all_equal_embeddings_give_log_b() {
        let tape = Tape::new();
        let zo = unit_rows(&tape, &[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let zl = unit_rows(&tape, &[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let l = goal_align_loss(&tape, &zo, &zl, 1.0).unwrap().tensor().item();
        assert!((l - 2.0f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn zero_norm_embedding_rejected() {
        let tape = Tape::new();
        let zo = unit_rows(&tape, &[[0.0, 0.0, 0.0]]);
        let zl = unit_rows(&tape, &[[1.0, 0.0, 0.0]]);
        match goal_align_loss(&tape, &zo, &zl, 0.1) {
            Err(Error::Numeric(_)) => {}
            other => panic!("expected numeric error, got {:?}", other.map(|v| v.tensor().item())),
        }
    }

    #[test]
    fn loss_decreases_with_alignment() {
        // Aligned pairs must score lower than misaligned ones.
        let tape = Tape::new();
        let zo = unit_rows(&tape, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let zl_good = unit_rows(&tape, &[[1.0, 0.1, 0.0], [0.1, 1.0, 0.0]]);
        let zl_bad = unit_rows(&tape, &[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let good = goal_align_loss(&tape, &zo, &zl_good, 0.5).unwrap().tensor().item();
        let bad = goal_align_loss(&tape, &zo, &zl_bad, 0.5).unwrap().tensor().item();
        assert!(good < bad);
        assert!(good >= 0.0);
    }
}
