//! The policy network: detection-conditioned multimodal encoding with
//! phase-aware attention masking and a diffusion action decoder.

pub mod denoiser;
pub mod encoders;
pub mod layout;
pub mod losses;
pub mod mask;
pub mod params;
pub mod transformer;

pub use denoiser::{ddim_ladder, ddim_walk, denoise, sample_ddim, sigma_features};
pub use encoders::{denormalize_action, encode_detection, encode_image, encode_text, film_modulate, normalize_action};
pub use layout::TokenLayout;
pub use losses::{batch_loss, goal_align_loss, mse, BatchItem, BatchLoss};
pub use mask::{build_mask, MaskPhase, ModalitySet, PhaseMask, PhaseModalities};
pub use params::{init_params, load_checkpoint, save_checkpoint, Checkpoint, GraphParams, ParamSet};
pub use transformer::{forward_encoder, masked_attention, multi_head_attention};

// Loss code refers to the forward types under this alias.
pub(crate) use self as mod_forward;

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::sim::Image;

/// Everything the policy sees for one decision.
#[derive(Debug, Clone)]
pub struct PolicyInput {
    pub static_img: Image,
    pub gripper_img: Image,
    /// Up to n_boxes detection boxes for the current target.
    pub boxes: Vec<[f64; 4]>,
    /// Tokenized instruction (length text_len), if language-conditioned.
    pub lang: Option<Vec<usize>>,
    pub goal_img: Option<Image>,
    pub phase: MaskPhase,
}

/// How the attention mask is chosen.
#[derive(Debug, Clone)]
pub enum MaskMode {
    /// Phase-aware masks from a fixed per-phase modality table.
    Fixed(PhaseModalities),
    /// Ablation: every token active regardless of phase.
    NoMasking,
    /// Learned gate over {static, gripper}; hard decisions with
    /// straight-through gradients when `train` is set.
    Learned { train: bool },
}

/// Result of encoding one input.
pub struct Encoded<'t, T: Real> {
    pub e_post: Var<'t, T>,
    /// Final per-token activation (phase mask AND detection presence).
    pub active: Vec<bool>,
    pub mask: PhaseMask,
    pub z_l: Option<Var<'t, T>>,
    pub z_o: Option<Var<'t, T>>,
    /// Learned-gate keep probabilities (static, gripper), when in use.
    pub gate_probs: Option<(f64, f64)>,
}

/// A policy = config + layout + vocabulary + parameters.
#[derive(Debug, Clone)]
pub struct Policy<T: Real> {
    pub cfg: ModelConfig,
    pub layout: TokenLayout,
    pub vocab: Vec<String>,
    pub params: ParamSet<T>,
}

impl<T: Real> Policy<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let vocab = crate::dataset::vocabulary();
        let params = init_params(cfg, vocab.len(), seed);
        Policy { cfg: cfg.clone(), layout: TokenLayout::from_config(cfg), vocab, params }
    }

    pub fn from_params(cfg: &ModelConfig, params: ParamSet<T>) -> Self {
        Policy {
            cfg: cfg.clone(),
            layout: TokenLayout::from_config(cfg),
            vocab: crate::dataset::vocabulary(),
            params,
        }
    }

    pub fn tokenize(&self, instruction: &str) -> Vec<usize> {
        crate::dataset::tokenize(instruction, &self.vocab, self.cfg.text_len)
    }

    /// Language and visual goal embeddings for one input. The language
    /// path is an embedding bag plus one transformer layer; the visual
    /// path reuses the static image encoder.
    pub fn goal_embeddings<'t>(
        &self,
        tape: &'t Tape<T>,
        g: &GraphParams<'t, T>,
        input: &PolicyInput,
    ) -> Result<(Option<Var<'t, T>>, Option<Var<'t, T>>)> {
        let cfg = &self.cfg;
        let z_l = match &input.lang {
            Some(ids) => Some(encode_text(tape, g, ids, cfg)),
            None => None,
        };
        let z_o = match &input.goal_img {
            Some(img) => {
                let tokens = encode_image(tape, g, "enc_static", img, cfg)?;
                let pooled = tokens.masked_mean_rows(&vec![true; self.layout.static_tokens]);
                Some(pooled.matmul(g.p("goal.proj_w")).add_row(g.p("goal.proj_b")))
            }
            None => None,
        };
        Ok((z_l, z_o))
    }

    /// Build the multimodal token sequence, apply the phase mask, and run
    /// the encoder. `rng` is only consulted by the learned gate.
    pub fn forward_encode<'t>(
        &self,
        tape: &'t Tape<T>,
        g: &GraphParams<'t, T>,
        input: &PolicyInput,
        mask_mode: &MaskMode,
        rng: &mut Rng,
    ) -> Result<Encoded<'t, T>> {
        let cfg = &self.cfg;
        let layout = &self.layout;
        if input.lang.is_none() && input.goal_img.is_none() {
            return Err(Error::Numeric("need a language or image goal".into()));
        }

        let e_static = encode_image(tape, g, "enc_static", &input.static_img, cfg)?;
        let e_grip = encode_image(tape, g, "enc_gripper", &input.gripper_img, cfg)?;
        let (e_det, det_present) = encode_detection(tape, g, &input.boxes, cfg)?;

        // Detection-conditioned FiLM on the static tokens.
        let det_summary = e_det.masked_mean_rows(&vec![true; layout.det_tokens]);
        let e_static_hat = film_modulate(g, e_static, det_summary);

        // Goal embeddings: z_l from language, z_o from the static-encoder
        // path on the goal image. The conditioning token is z_l when
        // language is present.
        let (z_l, z_o) = self.goal_embeddings(tape, g, input)?;
        let goal_token = z_l.or(z_o).expect("checked above");

        // Phase mask (possibly from the learned gate), then detection
        // presence bits.
        let (mask, gate_scales, gate_probs) = match mask_mode {
            MaskMode::Fixed(sets) => (build_mask(input.phase, layout, sets), None, None),
            MaskMode::NoMasking => {
                (build_mask(MaskPhase::None, layout, &PhaseModalities::default()), None, None)
            }
            MaskMode::Learned { train } => {
                let pooled_parts = tape.concat_rows(&[e_static_hat, e_grip, goal_token, e_det]);
                let n = layout.n_tokens();
                let pooled = pooled_parts.masked_mean_rows(&vec![true; n]);
                let phase_feat = tape.constant(Tensor::from_f64(
                    &[1, 1],
                    &[match input.phase {
                        MaskPhase::Moving => -1.0,
                        MaskPhase::Interaction => 1.0,
                        MaskPhase::None => 0.0,
                    }],
                ));
                let probs = tape
                    .concat_cols(&[pooled, phase_feat])
                    .matmul(g.p("gate.w"))
                    .add(g.p("gate.b"))
                    .sigmoid();
                let pv = probs.tensor();
                let (p_s, p_g) = (pv.data[0].to_f64(), pv.data[1].to_f64());
                let (mut keep_s, mut keep_g) = if *train {
                    (rng.uniform() < p_s, rng.uniform() < p_g)
                } else {
                    (p_s >= 0.5, p_g >= 0.5)
                };
                // At most one of {static, gripper} is masked: when both come
                // out masked, keep the more confidently kept modality.
                if !keep_s && !keep_g {
                    if p_s >= p_g {
                        keep_s = true;
                    } else {
                        keep_g = true;
                    }
                }
                let sets = PhaseModalities {
                    moving: ModalitySet { detection: true, static_view: keep_s, gripper: keep_g },
                    interaction: ModalitySet { detection: true, static_view: keep_s, gripper: keep_g },
                };
                let phase = match input.phase {
                    MaskPhase::None => MaskPhase::Moving,
                    p => p,
                };
                let mask = build_mask(phase, layout, &sets);
                // Straight-through multipliers so gradients reach the gate.
                let scales = if *train {
                    let hard_s = tape.constant(Tensor::from_f64(&[1, 1], &[keep_s as u8 as f64 - p_s]));
                    let hard_g = tape.constant(Tensor::from_f64(&[1, 1], &[keep_g as u8 as f64 - p_g]));
                    let st_s = probs.slice_cols(0, 1).add(hard_s);
                    let st_g = probs.slice_cols(1, 1).add(hard_g);
                    Some((st_s, st_g))
                } else {
                    None
                };
                (mask, scales, Some((p_s, p_g)))
            }
        };

        let (e_static_final, e_grip_final) = match gate_scales {
            Some((st_s, st_g)) => (e_static_hat.mul_scalar_var(st_s), e_grip.mul_scalar_var(st_g)),
            None => (e_static_hat, e_grip),
        };
        let e_pre = tape.concat_rows(&[e_static_final, e_grip_final, goal_token, e_det]);
        let mask = mask.with_det_presence(layout, &det_present);
        let e_post = forward_encoder(tape, g, cfg, e_pre, &mask.m);
        Ok(Encoded { e_post, active: mask.m.clone(), mask, z_l, z_o, gate_probs })
    }

    /// Inference: encode, run DDIM for K steps, denormalize to actions.
    pub fn sample_actions(
        &self,
        input: &PolicyInput,
        mask_mode: &MaskMode,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Vec<crate::sim::Action8>> {
        let tape: Tape<T> = Tape::new();
        let g = GraphParams::inject(&tape, &self.params, false);
        let enc = self.forward_encode(&tape, &g, input, mask_mode, rng)?;
        let chunk = sample_ddim(&tape, &g, &self.cfg, enc.e_post, &enc.active, k, rng)?;
        Ok(chunk
            .data
            .chunks(8)
            .map(|row| {
                let mut v = [0f64; 8];
                for (i, x) in row.iter().enumerate() {
                    v[i] = x.to_f64();
                }
                denormalize_action(&v)
            })
            .collect())
    }
}
