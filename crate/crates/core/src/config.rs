//! Flat key=value configuration shared by the simulator, model, trainer,
//! and evaluation harness. One file, one namespace; the CLI overlays flag
//! values on top (flag wins). `to_text` emits a canonical echo so configs
//! can be embedded in checkpoints and regenerated byte-identically.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scene and physics constants for the tabletop world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Max end-effector displacement per step, table units.
    pub v_max: f64,
    /// Max yaw change per step, radians.
    pub yaw_rate: f64,
    /// Closing within this planar distance of a block attaches it.
    pub grasp_radius: f64,
    /// Gripper must be below this height to grasp or drag.
    pub grasp_height: f64,
    /// Button press: planar distance threshold.
    pub press_radius: f64,
    /// Button press: gripper must be below this height.
    pub press_height: f64,
    /// Handle drag engagement distance (drawer and slider).
    pub drag_radius: f64,
    /// A block within this distance of the bowl center counts as placed.
    pub bowl_radius: f64,
    /// Drawer counts as open once its fraction crosses this going up.
    pub drawer_open_threshold: f64,
    /// Drawer counts as closed once its fraction crosses this going down.
    pub drawer_close_threshold: f64,
    /// Slider side boundaries (left below, right above).
    pub slider_left_threshold: f64,
    pub slider_right_threshold: f64,
    /// Gaussian pixel noise on detection boxes, in static-image pixels.
    pub sigma_det: f64,
    /// Bounded exploration noise on the scripted expert's targets.
    pub sigma_expert: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v_max: 0.05,
            yaw_rate: 0.2,
            grasp_radius: 0.04,
            grasp_height: 0.1,
            press_radius: 0.05,
            press_height: 0.05,
            drag_radius: 0.05,
            bowl_radius: 0.06,
            drawer_open_threshold: 0.8,
            drawer_close_threshold: 0.2,
            slider_left_threshold: 0.2,
            slider_right_threshold: 0.8,
            sigma_det: 0.0,
            sigma_expert: 0.005,
        }
    }
}

/// Policy network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Square patch edge for the image tokenizers.
    pub patch: usize,
    /// Max detection boxes (two corner tokens each).
    pub n_boxes: usize,
    /// Action chunk length H.
    pub chunk: usize,
    /// DDIM ladder length K.
    pub diffusion_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// InfoNCE temperature.
    pub nu: f64,
    /// Weight of the goal-alignment term in the total loss.
    pub alpha: f64,
    /// Width of the sinusoidal noise-level embedding.
    pub sigma_embed: usize,
    /// Max instruction length in word tokens.
    pub text_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            patch: 6,
            n_boxes: 2,
            chunk: 8,
            diffusion_steps: 8,
            sigma_min: 0.01,
            sigma_max: 1.0,
            nu: 0.1,
            alpha: 0.1,
            sigma_embed: 16,
            text_len: 12,
        }
    }
}

impl ModelConfig {
    /// A tiny 64-bit-friendly configuration for gradient checking.
    pub fn tiny() -> Self {
        ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, sigma_embed: 4, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.sigma_min <= 0.0 || self.sigma_max <= self.sigma_min {
            return Err(Error::Config("need 0 < sigma_min < sigma_max".into()));
        }
        if self.chunk == 0 || self.diffusion_steps == 0 || self.n_layers == 0 {
            return Err(Error::Config("chunk, diffusion_steps, n_layers must be positive".into()));
        }
        Ok(())
    }
}

/// Optimization settings and the ablation axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Phase decomposition: cutting points, movement instructions, s_p supervision.
    pub decomposition: bool,
    /// Input-level adaptation: detection tokens plus per-phase attention masks.
    pub masking: bool,
    /// One shared parameter set (true) vs one per phase (false).
    pub unified: bool,
    /// Replace the fixed per-phase masks with a learned gate.
    pub learnable_mask: bool,
    /// Window extraction stride.
    pub window_stride: usize,
    /// Emit a checkpoint every N epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            epochs: 40,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decomposition: true,
            masking: true,
            unified: true,
            learnable_mask: false,
            window_stride: 16,
            checkpoint_every: 0,
        }
    }
}

/// Data collection volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Labeled expert demonstrations per task type.
    pub n_per_task: usize,
    /// Unlabeled play volume as a fraction of the labeled volume.
    pub play_fraction: f64,
    /// Subtasks per play rollout.
    pub play_chain_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n_per_task: 20, play_fraction: 0.2, play_chain_len: 4 }
    }
}

/// Rollout harness settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// continuous | independent
    pub mode: String,
    pub step_budget: usize,
    pub chain_len: usize,
    pub n_chains: usize,
    /// Chunk-mean s_p at or above this switches moving -> interaction.
    pub phase_threshold: f64,
    /// Lighting gain used by the lighting perturbation.
    pub lighting_gain: f64,
    /// Distractor blob count used by the distractor perturbation.
    pub n_distractors: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: "continuous".into(),
            step_budget: 120,
            chain_len: 10,
            n_chains: 200,
            phase_threshold: 0.0,
            lighting_gain: 0.6,
            n_distractors: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+, $kind:ident;)*) => {
        pub const KEYS: &'static [&'static str] = &[$($key),*];

        pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => { $kind(&mut self.$($field).+, key, value) })*
                _ => Err(Error::Config(format!("unknown config key '{key}'"))),
            }
        }

        pub fn get_key(&self, key: &str) -> Option<String> {
            match key {
                $($key => Some(fmt_value(&self.$($field).+)),)*
                _ => None,
            }
        }
    };
}

fn set_f64(slot: &mut f64, key: &str, value: &str) -> Result<()> {
    *slot = value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key '{key}': bad float '{value}'")))?;
    Ok(())
}

fn set_usize(slot: &mut usize, key: &str, value: &str) -> Result<()> {
    *slot = value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("key '{key}': bad integer '{value}'")))?;
    Ok(())
}

fn set_bool(slot: &mut bool, key: &str, value: &str) -> Result<()> {
    *slot = match value {
        "true" | "1" => true,
        "false" | "0" => false,
        _ => return Err(Error::Config(format!("key '{key}': bad bool '{value}'"))),
    };
    Ok(())
}

fn set_string(slot: &mut String, _key: &str, value: &str) -> Result<()> {
    *slot = value.to_string();
    Ok(())
}

trait FmtValue {
    fn fmt_value(&self) -> String;
}
impl FmtValue for f64 {
    fn fmt_value(&self) -> String {
        format!("{self}")
    }
}
impl FmtValue for usize {
    fn fmt_value(&self) -> String {
        format!("{self}")
    }
}
impl FmtValue for bool {
    fn fmt_value(&self) -> String {
        format!("{self}")
    }
}
impl FmtValue for String {
    fn fmt_value(&self) -> String {
        self.clone()
    }
}

fn fmt_value<T: FmtValue>(v: &T) -> String {
    v.fmt_value()
}

impl Config {
    keys! {
        "v_max" => sim.v_max, set_f64;
        "yaw_rate" => sim.yaw_rate, set_f64;
        "grasp_radius" => sim.grasp_radius, set_f64;
        "grasp_height" => sim.grasp_height, set_f64;
        "press_radius" => sim.press_radius, set_f64;
        "press_height" => sim.press_height, set_f64;
        "drag_radius" => sim.drag_radius, set_f64;
        "bowl_radius" => sim.bowl_radius, set_f64;
        "drawer_open_threshold" => sim.drawer_open_threshold, set_f64;
        "drawer_close_threshold" => sim.drawer_close_threshold, set_f64;
        "slider_left_threshold" => sim.slider_left_threshold, set_f64;
        "slider_right_threshold" => sim.slider_right_threshold, set_f64;
        "sigma_det" => sim.sigma_det, set_f64;
        "sigma_expert" => sim.sigma_expert, set_f64;
        "d_model" => model.d_model, set_usize;
        "n_heads" => model.n_heads, set_usize;
        "n_layers" => model.n_layers, set_usize;
        "patch" => model.patch, set_usize;
        "n_boxes" => model.n_boxes, set_usize;
        "chunk" => model.chunk, set_usize;
        "diffusion_steps" => model.diffusion_steps, set_usize;
        "sigma_min" => model.sigma_min, set_f64;
        "sigma_max" => model.sigma_max, set_f64;
        "nu" => model.nu, set_f64;
        "alpha" => model.alpha, set_f64;
        "sigma_embed" => model.sigma_embed, set_usize;
        "text_len" => model.text_len, set_usize;
        "lr" => train.lr, set_f64;
        "batch_size" => train.batch_size, set_usize;
        "epochs" => train.epochs, set_usize;
        "grad_clip" => train.grad_clip, set_f64;
        "beta1" => train.beta1, set_f64;
        "beta2" => train.beta2, set_f64;
        "adam_eps" => train.adam_eps, set_f64;
        "decomposition" => train.decomposition, set_bool;
        "masking" => train.masking, set_bool;
        "unified" => train.unified, set_bool;
        "learnable_mask" => train.learnable_mask, set_bool;
        "window_stride" => train.window_stride, set_usize;
        "checkpoint_every" => train.checkpoint_every, set_usize;
        "n_per_task" => data.n_per_task, set_usize;
        "play_fraction" => data.play_fraction, set_f64;
        "play_chain_len" => data.play_chain_len, set_usize;
        "mode" => eval.mode, set_string;
        "step_budget" => eval.step_budget, set_usize;
        "chain_len" => eval.chain_len, set_usize;
        "n_chains" => eval.n_chains, set_usize;
        "phase_threshold" => eval.phase_threshold, set_f64;
        "lighting_gain" => eval.lighting_gain, set_f64;
        "n_distractors" => eval.n_distractors, set_usize;
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Overlay `key = value` lines onto the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical echo: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get_key(key).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.lr <= 0.0 || self.train.batch_size == 0 {
            return Err(Error::Config("lr and batch_size must be positive".into()));
        }
        if self.eval.step_budget == 0 || self.eval.chain_len == 0 {
            return Err(Error::Config("step_budget and chain_len must be positive".into()));
        }
        match self.eval.mode.as_str() {
            "continuous" | "independent" => {}
            other => return Err(Error::Config(format!("unknown eval mode '{other}'"))),
        }
        Ok(())
    }
}
