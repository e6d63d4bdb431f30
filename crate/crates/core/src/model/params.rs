//! Named parameter tensors, deterministic initialization, and checkpoints.

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::{Container, ContainerWriter, RecordWriter};
use crate::real::Real;
use crate::rng::Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Ordered name -> tensor table. Order is fixed at construction so the
/// optimizer state and checkpoints line up index-for-index.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) {
        assert!(!self.index.contains_key(name), "duplicate parameter '{name}'");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn convert<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.insert(name, Tensor::from_vec(&t.shape, t.data.iter().map(|&x| U::from_f64(x.to_f64())).collect()));
        }
        out
    }
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters injected into a tape, keyed by name. In training mode the
/// tensors are tracked leaves; in inference mode they are constants so the
/// tape skips all gradient bookkeeping.
pub struct GraphParams<'t, T: Real> {
    vars: Vec<Var<'t, T>>,
    index: BTreeMap<String, usize>,
}

impl<'t, T: Real> GraphParams<'t, T> {
    pub fn inject(tape: &'t Tape<T>, params: &ParamSet<T>, train: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| if train { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        GraphParams { vars, index: params.index.clone() }
    }

    pub fn p(&self, name: &str) -> Var<'t, T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        self.vars[i]
    }

    /// Gradient tensors aligned with the parameter order; zeros where a
    /// parameter was unused by the loss.
    pub fn collect_grads(
        &self,
        params: &ParamSet<T>,
        grads: &crate::autodiff::Gradients<T>,
    ) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&t.shape)))
            .collect()
    }
}

fn normal_tensor<T: Real>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(rng.normal() * std)).collect())
}

fn linear<T: Real>(ps: &mut ParamSet<T>, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) {
    let std = (1.0 / fan_in as f64).sqrt();
    ps.insert(&format!("{name}_w"), normal_tensor(rng, &[fan_in, fan_out], std));
    ps.insert(&format!("{name}_b"), Tensor::zeros(&[1, fan_out]));
}

fn layer_norm_params<T: Real>(ps: &mut ParamSet<T>, name: &str, dim: usize) {
    ps.insert(&format!("{name}_g"), Tensor::from_vec(&[1, dim], vec![T::ONE; dim]));
    ps.insert(&format!("{name}_b"), Tensor::zeros(&[1, dim]));
}

fn image_encoder<T: Real>(ps: &mut ParamSet<T>, rng: &mut Rng, prefix: &str, patch_dim: usize, tokens: usize, d: usize) {
    linear(ps, rng, &format!("{prefix}.patch"), patch_dim, d);
    ps.insert(&format!("{prefix}.pos"), normal_tensor(rng, &[tokens, d], 0.02));
    linear(ps, rng, &format!("{prefix}.conv1"), 9 * d, d);
    linear(ps, rng, &format!("{prefix}.conv2"), 9 * d, d);
}

/// Width of the sinusoidal corner features fed to the detection projection.
pub const DET_FEATURES: usize = 16;

/// Build the full parameter set for one policy network.
pub fn init_params<T: Real>(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> ParamSet<T> {
    let d = cfg.d_model;
    let dh = 2 * d;
    let h8 = cfg.chunk * 8;
    let mut rng = Rng::derive(seed, 0x1317);
    let mut ps = ParamSet::new();

    let layout = super::layout::TokenLayout::from_config(cfg);
    image_encoder(&mut ps, &mut rng, "enc_static", cfg.patch * cfg.patch * 3, layout.static_tokens, d);
    image_encoder(&mut ps, &mut rng, "enc_gripper", cfg.patch * cfg.patch * 3, layout.gripper_tokens, d);

    // Text encoder: embedding bag + one transformer layer.
    ps.insert("text.embed", normal_tensor(&mut rng, &[vocab_size + 1, d], 0.02));
    ps.insert("text.pos", normal_tensor(&mut rng, &[cfg.text_len, d], 0.02));
    layer_norm_params(&mut ps, "text.ln1", d);
    for nm in ["text.wq", "text.wk", "text.wv", "text.wo"] {
        linear(&mut ps, &mut rng, nm, d, d);
    }
    layer_norm_params(&mut ps, "text.ln2", d);
    linear(&mut ps, &mut rng, "text.mlp1", d, 4 * d);
    linear(&mut ps, &mut rng, "text.mlp2", 4 * d, d);
    linear(&mut ps, &mut rng, "text.proj", d, d);

    // Visual goal projection (the encoder itself is shared with enc_static).
    linear(&mut ps, &mut rng, "goal.proj", d, d);

    // Detection corner tokens.
    linear(&mut ps, &mut rng, "det.phi", DET_FEATURES, d);
    ps.insert("det.null", normal_tensor(&mut rng, &[1, d], 0.02));

    // FiLM fusion, zero-initialized so detection has no effect at init.
    ps.insert("film.mult_w", Tensor::zeros(&[d, d]));
    ps.insert("film.mult_b", Tensor::zeros(&[1, d]));
    ps.insert("film.add_w", Tensor::zeros(&[d, d]));
    ps.insert("film.add_b", Tensor::zeros(&[1, d]));

    // Multimodal transformer.
    for l in 0..cfg.n_layers {
        layer_norm_params(&mut ps, &format!("xf.l{l}.ln1"), d);
        for nm in ["wq", "wk", "wv", "wo"] {
            linear(&mut ps, &mut rng, &format!("xf.l{l}.{nm}"), d, d);
        }
        layer_norm_params(&mut ps, &format!("xf.l{l}.ln2"), d);
        linear(&mut ps, &mut rng, &format!("xf.l{l}.mlp1"), d, 4 * d);
        linear(&mut ps, &mut rng, &format!("xf.l{l}.mlp2"), 4 * d, d);
    }
    layer_norm_params(&mut ps, "xf.lnf", d);

    // Denoiser.
    linear(&mut ps, &mut rng, "den.in", h8, dh);
    linear(&mut ps, &mut rng, "den.cond", d + cfg.sigma_embed, dh);
    for b in 0..3 {
        layer_norm_params(&mut ps, &format!("den.blk{b}.ln"), dh);
        linear(&mut ps, &mut rng, &format!("den.blk{b}.fc1"), dh, dh);
        linear(&mut ps, &mut rng, &format!("den.blk{b}.fc2"), dh, dh);
    }
    linear(&mut ps, &mut rng, "den.head1", dh, dh);
    linear(&mut ps, &mut rng, "den.head2", dh, h8);

    // Learnable mask gate (zero logits at init -> keep probabilities 0.5).
    ps.insert("gate.w", Tensor::zeros(&[d + 1, 2]));
    ps.insert("gate.b", Tensor::zeros(&[1, 2]));

    ps
}

const CKPT_KIND: &str = "lvla.checkpoint";

/// Checkpoint: one or more named parameter sets plus a config echo block.
pub struct Checkpoint {
    pub sets: Vec<(String, ParamSet<f32>)>,
    pub config_text: String,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = ContainerWriter::create(path)?;
    let mut meta = RecordWriter::new();
    meta.put_string(CKPT_KIND);
    meta.put_string(&ckpt.config_text);
    meta.put_u32(ckpt.sets.len() as u32);
    out.write_record(&meta.into_bytes())?;
    for (set_name, ps) in &ckpt.sets {
        let mut w = RecordWriter::new();
        w.put_string(set_name);
        w.put_u32(ps.len() as u32);
        for (name, t) in ps.names().iter().zip(ps.tensors()) {
            w.put_string(name);
            let data: Vec<f32> = t.data.iter().map(|&x| x.to_f64() as f32).collect();
            w.put_tensor(&t.shape, &data);
        }
        out.write_record(&w.into_bytes())?;
    }
    out.finish()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::open(path)?;
    if c.is_empty() {
        return Err(Error::Format("checkpoint container empty".into()));
    }
    let mut meta = c.record(0);
    let kind = meta.get_string()?;
    if kind != CKPT_KIND {
        return Err(Error::Format(format!("expected {CKPT_KIND}, found '{kind}'")));
    }
    let config_text = meta.get_string()?;
    let declared = meta.get_u32()? as usize;
    if declared != c.len() - 1 {
        return Err(Error::Format(format!(
            "checkpoint declares {declared} sets, container holds {}",
            c.len() - 1
        )));
    }
    let mut sets = Vec::with_capacity(declared);
    for i in 1..c.len() {
        let mut r = c.record(i);
        let set_name = r.get_string()?;
        let n = r.get_u32()? as usize;
        let mut ps = ParamSet::new();
        for _ in 0..n {
            let name = r.get_string()?;
            let (shape, data) = r.get_tensor()?;
            ps.insert(&name, Tensor::from_vec(&shape, data));
        }
        sets.push((set_name, ps));
    }
    Ok(Checkpoint { sets, config_text })
}
