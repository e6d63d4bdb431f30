//! Conditional action denoiser and the deterministic DDIM sampler.
//!
//! The denoiser predicts the clean chunk directly: conditioning is the
//! masked mean of the encoder latents concatenated with a sinusoidal
//! noise-level embedding; the body is a residual MLP over the flattened
//! chunk and the head is a two-layer GELU MLP.

use super::params::GraphParams;
use crate::autodiff::{Tape, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;

/// Sinusoidal embedding of ln(sigma).
pub fn sigma_features<T: Real>(sigma: f64, width: usize) -> Tensor<T> {
    assert!(width % 2 == 0);
    let x = sigma.ln();
    let mut data = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let w = 0.5 * (1 << k) as f64;
        data.push(T::from_f64((w * x).sin()));
        data.push(T::from_f64((w * x).cos()));
    }
    Tensor::from_vec(&[1, width], data)
}

/// Predict the clean chunk directly from a noisy one at noise level
/// `sigma`. The input is scaled by 1/sqrt(1 + s^2) so its variance is
/// level-independent; the output is the raw clean-chunk prediction (no
/// skip term, so constant channels are trivially representable at every
/// noise level).
pub fn denoise<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    cfg: &ModelConfig,
    noisy: Var<'t, T>,
    e_post: Var<'t, T>,
    active: &[bool],
    sigma: f64,
) -> Result<Var<'t, T>> {
    if sigma <= 0.0 {
        return Err(Error::Numeric(format!("denoise needs sigma > 0, got {sigma}")));
    }
    let h8 = cfg.chunk * 8;
    assert_eq!(noisy.shape(), vec![cfg.chunk, 8]);
    let c_in = T::from_f64(1.0 / (1.0 + sigma * sigma).sqrt());

    let pooled = e_post.masked_mean_rows(active);
    let sig = tape.constant(sigma_features(sigma, cfg.sigma_embed));
    let cond = tape
        .concat_cols(&[pooled, sig])
        .matmul(g.p("den.cond_w"))
        .add_row(g.p("den.cond_b"));
    let flat = noisy.reshape(&[1, h8]);
    let mut h = flat.scale(c_in).matmul(g.p("den.in_w")).add_row(g.p("den.in_b")).add(cond).gelu();
    for b in 0..3 {
        let pre = format!("den.blk{b}");
        let t = h
            .layer_norm(g.p(&format!("{pre}.ln_g")), g.p(&format!("{pre}.ln_b")), 1e-5)
            .matmul(g.p(&format!("{pre}.fc1_w")))
            .add_row(g.p(&format!("{pre}.fc1_b")))
            .gelu()
            .matmul(g.p(&format!("{pre}.fc2_w")))
            .add_row(g.p(&format!("{pre}.fc2_b")));
        h = h.add(t);
    }
    let out = h
        .matmul(g.p("den.head1_w"))
        .add_row(g.p("den.head1_b"))
        .gelu()
        .matmul(g.p("den.head2_w"))
        .add_row(g.p("den.head2_b"));
    Ok(out.reshape(&[cfg.chunk, 8]))
}

/// Noise ladder sigma_K = sigma_max > ... > sigma_1 = sigma_min, log-spaced,
/// with sigma_0 = 0. Indexed so that `ladder[t]` is sigma_t.
pub fn ddim_ladder(cfg: &ModelConfig, k: usize) -> Vec<f64> {
    assert!(k >= 1);
    let mut ladder = vec![0.0; k + 1];
    ladder[k] = cfg.sigma_max;
    if k >= 2 {
        let (lo, hi) = (cfg.sigma_min.ln(), cfg.sigma_max.ln());
        for t in 1..k {
            ladder[t] = (lo + (hi - lo) * (t - 1) as f64 / (k - 1) as f64).exp();
        }
    }
    ladder
}

/// Walk the deterministic DDIM update down a noise ladder:
/// x_{t-1} = x_hat0 + (sigma_{t-1}/sigma_t)(x_t - x_hat0), where x_hat0 is
/// the denoiser's clean prediction at sigma_t.
pub fn ddim_walk<T: Real>(
    ladder: &[f64],
    x_init: Tensor<T>,
    mut denoiser: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let k = ladder.len() - 1;
    let mut x = x_init;
    for t in (1..=k).rev() {
        let x0 = denoiser(&x, ladder[t])?;
        let ratio = T::from_f64(ladder[t - 1] / ladder[t]);
        x = x0.zip(&x, |x0v, xv| x0v + ratio * (xv - x0v));
    }
    Ok(x)
}

/// DDIM sampling with the trained denoiser. Returns x_0 (normalized action
/// chunk) given the initial Gaussian draw from `rng`.
pub fn sample_ddim<'t, T: Real>(
    tape: &'t Tape<T>,
    g: &GraphParams<'t, T>,
    cfg: &ModelConfig,
    e_post: Var<'t, T>,
    active: &[bool],
    k: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let ladder = ddim_ladder(cfg, k);
    let h8 = cfg.chunk * 8;
    let x_init = Tensor::from_vec(
        &[cfg.chunk, 8],
        (0..h8).map(|_| T::from_f64(rng.normal() * cfg.sigma_max)).collect(),
    );
    ddim_walk(&ladder, x_init, |x, sigma| {
        Ok(denoise(tape, g, cfg, tape.constant(x.clone()), e_post, active, sigma)?.tensor())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;

    fn setup(tape: &Tape<f64>) -> (ModelConfig, GraphParams<'_, f64>) {
        let cfg = ModelConfig::default();
        let ps = init_params::<f64>(&cfg, 32, 6);
        let g = GraphParams::inject(tape, &ps, false);
        (cfg, g)
    }

    fn rand_epost<'t>(tape: &'t Tape<f64>, n: usize, d: usize, seed: u64) -> Var<'t, f64> {
        let mut rng = Rng::new(seed);
        tape.constant(Tensor::from_vec(&[n, d], (0..n * d).map(|_| rng.normal()).collect()))
    }

    #[test]
    fn output_shape_and_determinism() {
        let tape = Tape::new();
        let (cfg, g) = setup(&tape);
        let e_post = rand_epost(&tape, 25, 64, 1);
        let active = vec![true; 25];
        let noisy = tape.constant(Tensor::zeros(&[8, 8]));
        let a = denoise(&tape, &g, &cfg, noisy, e_post, &active, 0.5).unwrap().tensor();
        let b = denoise(&tape, &g, &cfg, noisy, e_post, &active, 0.5).unwrap().tensor();
        assert_eq!(a.shape, vec![8, 8]);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let tape = Tape::new();
        let (cfg, g) = setup(&tape);
        let e_post = rand_epost(&tape, 25, 64, 2);
        let noisy = tape.constant(Tensor::zeros(&[8, 8]));
        assert!(denoise(&tape, &g, &cfg, noisy, e_post, &[true; 25], 0.0).is_err());
        assert!(denoise(&tape, &g, &cfg, noisy, e_post, &[true; 25], -1.0).is_err());
    }

    #[test]
    fn inactive_latent_does_not_condition() {
        let tape = Tape::new();
        let (cfg, g) = setup(&tape);
        let mut rng = Rng::new(3);
        let mut base = Tensor::from_vec(&[25, 64], (0..25 * 64).map(|_| rng.normal()).collect());
        let mut active = vec![true; 25];
        active[20] = false;
        let noisy = tape.constant(Tensor::zeros(&[8, 8]));
        let a = denoise(&tape, &g, &cfg, noisy, tape.constant(base.clone()), &active, 0.7)
            .unwrap()
            .tensor();
        for j in 0..64 {
            base.data[20 * 64 + j] += 123.0;
        }
        let b = denoise(&tape, &g, &cfg, noisy, tape.constant(base), &active, 0.7)
            .unwrap()
            .tensor();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn ladder_endpoints() {
        let cfg = ModelConfig::default();
        let l = ddim_ladder(&cfg, 8);
        assert_eq!(l[0], 0.0);
        assert_eq!(l[8], cfg.sigma_max);
        assert!((l[1] - cfg.sigma_min).abs() < 1e-12);
        for t in 1..8 {
            assert!(l[t] < l[t + 1]);
        }
        // K=1 collapses to [0, sigma_max].
        assert_eq!(ddim_ladder(&cfg, 1), vec![0.0, cfg.sigma_max]);
    }
}
