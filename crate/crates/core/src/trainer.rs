//! Optimization loop, gradient checking, and checkpoint emission.
//!
//! Training is shuffled mini-batch descent on the total loss with an
//! Adam-style optimizer and global-norm gradient clipping. The ablation
//! flags rewire the data pipeline:
//!   - decomposition off: phase labels stripped, s_p targets fixed to 0,
//!     masks forced to none, interaction instructions only;
//!   - masking off: no detection boxes and no phase masks;
//!   - unified off: two parameter sets, one per phase partition.

use crate::autodiff::{Tape, Tensor};
use crate::config::Config;
use crate::dataset::{extract_windows, Dataset, TrainingWindow, WINDOW};
use crate::error::{Error, Result};
use crate::model::{
    batch_loss, normalize_action, BatchItem, Checkpoint, GraphParams, MaskMode, MaskPhase,
    ParamSet, PhaseModalities, Policy, PolicyInput,
};
use crate::real::Real;
use crate::rng::Rng;
use crate::sim::Phase;
use std::path::Path;

/// Adam with bias correction; state aligned index-for-index with the
/// parameter set.
pub struct Adam<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, cfg: &Config) -> Self {
        Adam {
            m: params.tensors().iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            v: params.tensors().iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            t: 0,
            lr: cfg.train.lr,
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            eps: cfg.train.adam_eps,
        }
    }

    /// Clip the global gradient norm, then apply one update.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &mut [Tensor<T>], clip: f64) {
        let norm: f64 = grads.iter().map(|g| g.frobenius_norm().powi(2)).sum::<f64>().sqrt();
        if clip > 0.0 && norm > clip {
            let s = T::from_f64(clip / norm);
            for g in grads.iter_mut() {
                for x in g.data.iter_mut() {
                    *x *= s;
                }
            }
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let bc1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (T::ONE - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::ONE - b2) * gi * gi;
                let mhat = m.data[i] * bc1;
                let vhat = v.data[i] * bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One loss-curve record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub l_diff: f64,
    pub l_goal: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<LossRow>,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,l_diff,l_goal,total\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.epoch, r.l_diff, r.l_goal, r.total));
    }
    out
}

/// Assemble one training example from a window: a uniformly drawn real
/// conditioning step and the following H actions.
pub fn sample_item(
    ds: &Dataset,
    w: &TrainingWindow,
    cfg: &Config,
    policy: &Policy<f32>,
    rng: &mut Rng,
) -> BatchItem {
    let chunk = cfg.model.chunk;
    let lo = w.real_start();
    let hi = WINDOW - chunk;
    let t = lo + rng.below(hi - lo + 1);
    let step = w.step(ds, t);
    let traj = w.trajectory(ds);
    let dec = cfg.train.decomposition;
    let adapt = cfg.train.masking;

    let mut target = Vec::with_capacity(chunk * 8);
    for j in 0..chunk {
        let a = &w.step(ds, t + j).action;
        let mut n = normalize_action(a);
        if !dec {
            n[7] = 0.0; // phase supervision stripped
        }
        target.extend_from_slice(&n);
    }

    let phase = if !dec {
        MaskPhase::None
    } else {
        match step.phase {
            Phase::Moving => MaskPhase::Moving,
            Phase::Interaction => MaskPhase::Interaction,
        }
    };
    let lang = if traj.labeled() {
        let instr = if dec && step.phase == Phase::Moving {
            traj.instr_move.as_deref().unwrap()
        } else {
            traj.instr_interact.as_deref().unwrap()
        };
        Some(policy.tokenize(instr))
    } else {
        None
    };
    let boxes = if adapt { step.bbox.into_iter().collect() } else { Vec::new() };
    BatchItem {
        input: PolicyInput {
            static_img: step.obs.static_img.clone(),
            gripper_img: step.obs.gripper_img.clone(),
            boxes,
            lang,
            goal_img: Some(w.goal_image(ds).clone()),
            phase,
        },
        chunk: target,
    }
}

pub fn mask_mode_for(cfg: &Config) -> MaskMode {
    if !cfg.train.masking {
        MaskMode::NoMasking
    } else if cfg.train.learnable_mask {
        MaskMode::Learned { train: true }
    } else {
        MaskMode::Fixed(PhaseModalities::default())
    }
}

struct ModelSlot {
    name: String,
    policy: Policy<f32>,
    opt: Adam<f32>,
}

/// One optimization step over a batch.
///
/// The total loss decomposes exactly as
///   mean_i L_Diff(item_i) + alpha * (labeled/B) * L_Goal(labeled items),
/// so per-item diffusion gradients are computed on independent tapes (in
/// parallel) and the small goal-alignment graph runs once; summation order
/// is fixed by item index, keeping the update deterministic at any thread
/// count.
fn batch_step(
    slot: &mut ModelSlot,
    items: &[BatchItem],
    mask_mode: &MaskMode,
    cfg: &Config,
    step_seed: u64,
) -> Result<(f64, f64, f64)> {
    let b = items.len();
    let policy = &slot.policy;

    // Diffusion inputs do not need the goal image when language conditions
    // the sample; the goal graph below covers the alignment term.
    let diff_items: Vec<BatchItem> = items
        .iter()
        .map(|it| {
            let mut input = it.input.clone();
            if input.lang.is_some() {
                input.goal_img = None;
            }
            BatchItem { input, chunk: it.chunk.clone() }
        })
        .collect();

    let workers = crate::worker_count().min(b).max(1);
    let mut per_item: Vec<Option<(f64, Vec<Tensor<f32>>)>> = vec![None; b];
    let compute_one = |i: usize, item: &BatchItem| -> Result<(f64, Vec<Tensor<f32>>)> {
        let tape: Tape<f32> = Tape::new();
        let g = GraphParams::inject(&tape, &policy.params, true);
        let mut rng = Rng::derive(step_seed, 0xD1FF + i as u64);
        let loss = batch_loss(&tape, &g, policy, std::slice::from_ref(item), mask_mode, &mut rng, 0.0)?;
        let value = loss.total.tensor().item() as f64;
        let grads = tape.backward(loss.total);
        Ok((value, g.collect_grads(&policy.params, &grads)))
    };
    if workers <= 1 {
        for (i, item) in diff_items.iter().enumerate() {
            per_item[i] = Some(compute_one(i, item)?);
        }
    } else {
        let results: Vec<Result<(usize, (f64, Vec<Tensor<f32>>))>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let diff_items = &diff_items;
                let compute_one = &compute_one;
                handles.push(scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut i = w;
                    while i < b {
                        out.push(compute_one(i, &diff_items[i]).map(|r| (i, r)));
                        i += workers;
                    }
                    out
                }));
            }
            handles.into_iter().flat_map(|h| h.join().expect("trainer worker panicked")).collect()
        });
        for r in results {
            let (i, v) = r?;
            per_item[i] = Some(v);
        }
    }

    // Accumulate mean diffusion gradients in index order.
    let inv_b = 1.0 / b as f64;
    let mut grads: Vec<Tensor<f32>> =
        policy.params.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect();
    let mut diff_value = 0.0;
    for slot_result in per_item.into_iter() {
        let (v, gs) = slot_result.expect("all items computed");
        diff_value += v * inv_b;
        for (acc, g) in grads.iter_mut().zip(gs) {
            for (a, x) in acc.data.iter_mut().zip(g.data) {
                *a += x * inv_b as f32;
            }
        }
    }

    // Goal-alignment term over labeled items.
    let labeled: Vec<&BatchItem> =
        items.iter().filter(|it| it.input.lang.is_some() && it.input.goal_img.is_some()).collect();
    let mut goal_value = 0.0;
    if !labeled.is_empty() && cfg.model.alpha != 0.0 {
        let tape: Tape<f32> = Tape::new();
        let g = GraphParams::inject(&tape, &policy.params, true);
        let mut z_l = Vec::new();
        let mut z_o = Vec::new();
        for it in &labeled {
            let (zl, zo) = policy.goal_embeddings(&tape, &g, &it.input)?;
            z_l.push(zl.expect("labeled item"));
            z_o.push(zo.expect("labeled item"));
        }
        let l_goal = crate::model::goal_align_loss(&tape, &z_o, &z_l, cfg.model.nu)?;
        goal_value = l_goal.tensor().item() as f64;
        let coeff = cfg.model.alpha * labeled.len() as f64 / b as f64;
        let scaled = l_goal.scale(coeff as f32);
        let ggrads = tape.backward(scaled);
        for (acc, g) in grads.iter_mut().zip(g.collect_grads(&policy.params, &ggrads)) {
            acc.add_assign(&g);
        }
    }

    let total = diff_value + cfg.model.alpha * goal_value * labeled.len() as f64 * inv_b;
    if !total.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss: {total}")));
    }
    slot.opt.step(&mut slot.policy.params, &mut grads, cfg.train.grad_clip);
    Ok((diff_value, goal_value, total))
}

/// Train on the windowed dataset. Deterministic per seed in single-context
/// mode. Emits intermediate checkpoints into `artifacts` when
/// `checkpoint_every` is set.
pub fn train(
    ds: &Dataset,
    cfg: &Config,
    seed: u64,
    artifacts: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let windows = extract_windows(ds, cfg.train.window_stride)?;
    let unified = cfg.train.unified;
    let slot_names: &[&str] = if unified { &["policy"] } else { &["moving", "interaction"] };
    let mut slots: Vec<ModelSlot> = slot_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let policy = Policy::init(&cfg.model, seed ^ i as u64);
            let opt = Adam::new(&policy.params, cfg);
            ModelSlot { name: name.to_string(), policy, opt }
        })
        .collect();

    let mask_mode = mask_mode_for(cfg);
    let mut curve = Vec::with_capacity(cfg.train.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..cfg.train.epochs {
        let mut rng = Rng::derive(seed, 0xEE_0000 + epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_diff = 0.0;
        let mut epoch_goal = 0.0;
        let mut epoch_total = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in order.chunks(cfg.train.batch_size) {
            // Route items to their parameter set (by conditioning phase
            // when training two policies).
            let mut per_slot: Vec<Vec<BatchItem>> =
                (0..slots.len()).map(|_| Vec::new()).collect();
            for &wi in batch_idx {
                let item = sample_item(ds, &windows[wi], cfg, &slots[0].policy, &mut rng);
                let slot = if unified || item.input.phase != MaskPhase::Interaction { 0 } else { 1 };
                per_slot[slot].push(item);
            }
            for (si, (slot, items)) in slots.iter_mut().zip(per_slot).enumerate() {
                if items.is_empty() {
                    continue;
                }
                let step_seed = rng.next_u64() ^ (si as u64) << 56;
                let (d, gl, total) = batch_step(slot, &items, &mask_mode, cfg, step_seed)?;
                epoch_diff += d;
                epoch_goal += gl;
                epoch_total += total;
                n_batches += 1;
            }
        }
        let inv = 1.0 / n_batches.max(1) as f64;
        curve.push(LossRow {
            epoch,
            l_diff: epoch_diff * inv,
            l_goal: epoch_goal * inv,
            total: epoch_total * inv,
        });
        if cfg.train.checkpoint_every > 0
            && (epoch + 1) % cfg.train.checkpoint_every == 0
            && artifacts.is_some()
        {
            let ckpt = checkpoint_of(&slots, cfg);
            let path = artifacts.unwrap().join(format!("ckpt_epoch{}.bin", epoch + 1));
            crate::model::save_checkpoint(&path, &ckpt)?;
        }
    }
    Ok(TrainOutcome { checkpoint: checkpoint_of(&slots, cfg), curve })
}

fn checkpoint_of(slots: &[ModelSlot], cfg: &Config) -> Checkpoint {
    Checkpoint {
        sets: slots.iter().map(|s| (s.name.clone(), s.policy.params.clone())).collect(),
        config_text: cfg.to_text(),
    }
}

/// Deterministic loss evaluation used by the gradient checker: the rng is
/// reseeded so noise draws are identical across calls.
fn gradcheck_loss(
    policy: &Policy<f64>,
    items: &[BatchItem],
    mask_mode: &MaskMode,
    alpha: f64,
    noise_seed: u64,
) -> Result<(f64, Vec<Tensor<f64>>)> {
    let tape: Tape<f64> = Tape::new();
    let g = GraphParams::inject(&tape, &policy.params, true);
    let mut rng = Rng::new(noise_seed);
    let loss = batch_loss(&tape, &g, policy, items, mask_mode, &mut rng, alpha)?;
    let value = loss.total.tensor().item();
    let grads = tape.backward(loss.total);
    Ok((value, g.collect_grads(&policy.params, &grads)))
}

/// Compare analytic gradients of the total loss against central finite
/// differences for every parameter. Returns the max relative error.
pub fn grad_check(cfg: &Config, alpha: f64, seed: u64) -> Result<f64> {
    let mut policy: Policy<f64> = Policy::init(&cfg.model, seed);
    let sim = crate::config::SimConfig::default();
    let state = crate::sim::reset(seed ^ 0xBEEF, 3);
    let obs = crate::sim::Observation::capture(&state, &crate::sim::PerturbationSpec::identity(), &sim);
    let boxes = crate::sim::detect(&state, crate::sim::TaskId::PickRed.target(), &sim);
    let mut rng = Rng::derive(seed, 0xFD);
    let chunk_len = cfg.model.chunk * 8;
    let mk_chunk =
        |rng: &mut Rng| -> Vec<f64> { (0..chunk_len).map(|_| rng.range(-1.0, 1.0)).collect() };
    let items = vec![
        BatchItem {
            input: PolicyInput {
                static_img: obs.static_img.clone(),
                gripper_img: obs.gripper_img.clone(),
                boxes: boxes.clone(),
                lang: Some(policy.tokenize("move: move to the red block from the top")),
                goal_img: Some(obs.static_img.clone()),
                phase: MaskPhase::Moving,
            },
            chunk: mk_chunk(&mut rng),
        },
        BatchItem {
            input: PolicyInput {
                static_img: obs.static_img.clone(),
                gripper_img: obs.gripper_img.clone(),
                boxes,
                lang: None,
                goal_img: Some(obs.static_img.clone()),
                phase: MaskPhase::Interaction,
            },
            chunk: mk_chunk(&mut rng),
        },
    ];
    let mask_mode = MaskMode::Fixed(PhaseModalities::default());
    let noise_seed = seed ^ 0x5109;
    let (_, analytic) = gradcheck_loss(&policy, &items, &mask_mode, alpha, noise_seed)?;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for pi in 0..policy.params.len() {
        for k in 0..policy.params.tensors()[pi].len() {
            let orig = policy.params.tensors()[pi].data[k];
            policy.params.tensors_mut()[pi].data[k] = orig + h;
            let (lp, _) = gradcheck_loss_value(&policy, &items, &mask_mode, alpha, noise_seed)?;
            policy.params.tensors_mut()[pi].data[k] = orig - h;
            let (lm, _) = gradcheck_loss_value(&policy, &items, &mask_mode, alpha, noise_seed)?;
            policy.params.tensors_mut()[pi].data[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[pi].data[k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn gradcheck_loss_value(
    policy: &Policy<f64>,
    items: &[BatchItem],
    mask_mode: &MaskMode,
    alpha: f64,
    noise_seed: u64,
) -> Result<(f64, ())> {
    let tape: Tape<f64> = Tape::new();
    let g = GraphParams::inject(&tape, &policy.params, false);
    let mut rng = Rng::new(noise_seed);
    let loss = batch_loss(&tape, &g, policy, items, mask_mode, &mut rng, alpha)?;
    Ok((loss.total.tensor().item(), ()))
}
