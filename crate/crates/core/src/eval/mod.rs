//! Long-horizon evaluation: per-position success curves, the Avg. Len
//! metric, paired independent/continuous diagnostics, perturbation studies,
//! and the ablation grid.

mod ablation;
mod diagnostic;
mod perturb;
mod rollout;

pub use ablation::{ablation_csv, modality_grid, run_ablation, run_modality_grid, AblationRow};
pub use diagnostic::{skill_chain_diagnostic, DiagnosticReport};
pub use perturb::{perturbation_csv, perturbation_suite, PerturbRow};
pub use rollout::{
    rollout_chain, Actor, ChainOutcome, ChainRun, GateEvent, Mode, PerturbKind, PhaseController,
    RolloutConfig,
};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, MaskMode, MaskPhase, PhaseModalities, Policy, PolicyInput};
use crate::rng::Rng;
use crate::sim::{Action8, Phase, TaskId};
use crate::taskchain::TaskChain;
use serde::Serialize;
use std::collections::BTreeMap;

/// A trained policy plus the ablation flags it was trained with, recovered
/// from the checkpoint's config echo.
pub struct PolicyBundle {
    pub policies: Vec<(String, Policy<f32>)>,
    pub unified: bool,
    pub decomposition: bool,
    pub masking: bool,
    pub learnable_mask: bool,
    /// Eval-time override of the per-phase modality sets (modality grid).
    pub modalities: PhaseModalities,
}

impl PolicyBundle {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = Config::parse(&ckpt.config_text)
            .map_err(|e| Error::Format(format!("bad config echo in checkpoint: {e}")))?;
        let policies: Vec<(String, Policy<f32>)> = ckpt
            .sets
            .iter()
            .map(|(name, ps)| (name.clone(), Policy::from_params(&cfg.model, ps.clone())))
            .collect();
        if policies.is_empty() {
            return Err(Error::Format("checkpoint holds no parameter sets".into()));
        }
        let unified = cfg.train.unified;
        if !unified && policies.len() != 2 {
            return Err(Error::Format(format!(
                "two-policy checkpoint must hold 2 sets, found {}",
                policies.len()
            )));
        }
        Ok(PolicyBundle {
            policies,
            unified,
            decomposition: cfg.train.decomposition,
            masking: cfg.train.masking,
            learnable_mask: cfg.train.learnable_mask,
            modalities: PhaseModalities::default(),
        })
    }

    pub fn single(policy: Policy<f32>, decomposition: bool, masking: bool) -> Self {
        PolicyBundle {
            policies: vec![("policy".into(), policy)],
            unified: true,
            decomposition,
            masking,
            learnable_mask: false,
            modalities: PhaseModalities::default(),
        }
    }

    pub fn policy_for(&self, phase: Phase) -> &Policy<f32> {
        if self.unified || self.policies.len() == 1 {
            &self.policies[0].1
        } else {
            match phase {
                Phase::Moving => &self.policies[0].1,
                Phase::Interaction => &self.policies[1].1,
            }
        }
    }

    /// Map a controller phase to the mask phase fed to the network.
    pub fn mask_phase_for(&self, phase: Phase) -> MaskPhase {
        if !self.decomposition {
            return MaskPhase::None;
        }
        match phase {
            Phase::Moving => MaskPhase::Moving,
            Phase::Interaction => MaskPhase::Interaction,
        }
    }

    pub fn mask_mode(&self) -> MaskMode {
        if !self.masking {
            MaskMode::NoMasking
        } else if self.learnable_mask {
            MaskMode::Learned { train: false }
        } else {
            MaskMode::Fixed(self.modalities)
        }
    }

    /// Sample a chunk and report gate activity when the learned gate is on.
    pub fn sample_with_info(
        &self,
        input: &PolicyInput,
        phase: Phase,
        k: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<Action8>, Option<GateEvent>)> {
        let policy = self.policy_for(phase);
        let mode = self.mask_mode();
        let tape: crate::autodiff::Tape<f32> = crate::autodiff::Tape::new();
        let g = crate::model::GraphParams::inject(&tape, &policy.params, false);
        let enc = policy.forward_encode(&tape, &g, input, &mode, rng)?;
        let chunk =
            crate::model::sample_ddim(&tape, &g, &policy.cfg, enc.e_post, &enc.active, k, rng)?;
        let actions: Vec<Action8> = chunk
            .data
            .chunks(8)
            .map(|row| {
                let mut v = [0f64; 8];
                for (i, x) in row.iter().enumerate() {
                    v[i] = *x as f64;
                }
                crate::model::denormalize_action(&v)
            })
            .collect();
        let gate = enc.gate_probs.map(|_| {
            let layout = &policy.layout;
            GateEvent {
                phase,
                kept_static: enc.mask.m[layout.static_range().start],
                kept_gripper: enc.mask.m[layout.gripper_range().start],
            }
        });
        Ok((actions, gate))
    }
}

/// Sum of per-position success rates; equals the expected number of
/// consecutively completed subtasks.
pub fn avg_len(rates: &[f64]) -> f64 {
    debug_assert!(rates.iter().all(|r| (0.0..=1.0 + 1e-12).contains(r)));
    rates.iter().sum()
}

/// Per-phase learned-gate activity in the Table-7 layout.
#[derive(Debug, Clone, Serialize, Default)]
pub struct GateRates {
    /// phase -> (static masking %, gripper masking %, no masking %)
    pub by_phase: BTreeMap<String, (f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mode: String,
    pub perturb: String,
    pub n_chains: usize,
    pub chain_len: usize,
    /// r_1..r_L.
    pub rates: Vec<f64>,
    pub avg_len: f64,
    /// Completed prefix length per chain.
    pub prefix_lens: Vec<usize>,
    /// task -> (attempts, successes).
    pub per_task: BTreeMap<String, (usize, usize)>,
    pub gate_rates: Option<GateRates>,
    pub config_echo: String,
}

impl EvalReport {
    pub fn per_task_rate(&self, task: &str) -> Option<f64> {
        self.per_task.get(task).map(|&(a, s)| s as f64 / a.max(1) as f64)
    }

    /// Mean per-task success over tasks with at least one attempt.
    pub fn mean_task_rate(&self) -> f64 {
        let rs: Vec<f64> =
            self.per_task.values().filter(|&&(a, _)| a > 0).map(|&(a, s)| s as f64 / a as f64).collect();
        if rs.is_empty() {
            0.0
        } else {
            rs.iter().sum::<f64>() / rs.len() as f64
        }
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("position,rate\n");
        for (i, r) in self.rates.iter().enumerate() {
            out.push_str(&format!("{},{:.4}\n", i + 1, r));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

use crate::worker_count;

/// Evaluate an actor over a chain manifest. Chains run in parallel (one
/// simulator and RNG stream each); aggregation is ordered by chain index so
/// reports are identical at any thread count.
pub fn evaluate(
    actor: &Actor<'_>,
    chains: &[TaskChain],
    rcfg: &RolloutConfig,
    cfg: &Config,
    base_seed: u64,
) -> Result<EvalReport> {
    if chains.is_empty() {
        return Err(Error::InvalidChain("empty chain manifest".into()));
    }
    let n = chains.len();
    let workers = worker_count().min(n).max(1);
    let mut runs: Vec<Option<ChainRun>> = Vec::with_capacity(n);
    for _ in 0..n {
        runs.push(None);
    }

    if workers <= 1 {
        for (i, chain) in chains.iter().enumerate() {
            runs[i] = Some(rollout_chain(actor, chain, rcfg, cfg, base_seed ^ (i as u64) << 17)?);
        }
    } else {
        let results: Vec<Result<(usize, ChainRun)>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let chains_ref = &chains;
                let actor_ref = &actor;
                handles.push(scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut i = w;
                    while i < n {
                        let run =
                            rollout_chain(actor_ref, &chains_ref[i], rcfg, cfg, base_seed ^ (i as u64) << 17);
                        out.push(run.map(|r| (i, r)));
                        i += workers;
                    }
                    out
                }));
            }
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            let (i, run) = r?;
            runs[i] = Some(run);
        }
    }

    let runs: Vec<ChainRun> = runs.into_iter().map(|r| r.expect("all chains ran")).collect();
    let len = rcfg.chain_len;
    let mut rates = vec![0.0; len];
    let mut prefix_lens = Vec::with_capacity(n);
    let mut per_task: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut gate_counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut gate_total = 0usize;
    for run in &runs {
        let res = &run.outcome.results;
        for (k, &ok) in res.iter().enumerate() {
            if ok {
                rates[k] += 1.0;
            }
        }
        let prefix = res.iter().take_while(|&&b| b).count();
        prefix_lens.push(prefix);
        let attempted: usize = match rcfg.mode {
            Mode::Continuous => (prefix + 1).min(res.len()),
            Mode::Independent => res.len(),
        };
        for k in 0..attempted {
            let entry = per_task.entry(run.outcome.tasks[k].clone()).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += res[k] as usize;
        }
        for ev in &run.gates {
            gate_total += 1;
            let key = match ev.phase {
                Phase::Moving => "moving",
                Phase::Interaction => "interaction",
            };
            let c = gate_counts.entry(key.into()).or_insert((0, 0, 0));
            match (ev.kept_static, ev.kept_gripper) {
                (false, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
    }
    for r in &mut rates {
        *r /= n as f64;
    }
    let gate_rates = (gate_total > 0).then(|| {
        let mut by_phase = BTreeMap::new();
        for (phase, (s, g, none)) in gate_counts {
            let tot = (s + g + none).max(1) as f64;
            by_phase.insert(
                phase,
                (100.0 * s as f64 / tot, 100.0 * g as f64 / tot, 100.0 * none as f64 / tot),
            );
        }
        GateRates { by_phase }
    });
    Ok(EvalReport {
        mode: rcfg.mode.name().into(),
        perturb: rcfg.perturb.label().into(),
        n_chains: n,
        chain_len: len,
        avg_len: avg_len(&rates),
        rates,
        prefix_lens,
        per_task,
        gate_rates,
        config_echo: cfg.to_text(),
    })
}

/// Generate a chain manifest: `n` validated chains of length `len`.
pub fn make_chains(seed: u64, n: usize, len: usize) -> Result<Vec<TaskChain>> {
    (0..n).map(|i| crate::taskchain::gen_chain(seed.wrapping_add(i as u64), len)).collect()
}

/// The manifest line format plus a per-manifest perturbation tag.
pub fn manifest_to_string(chains: &[TaskChain]) -> String {
    let mut out = String::new();
    for c in chains {
        out.push_str(&crate::taskchain::chain_to_line(c));
        out.push('\n');
    }
    out
}

pub fn manifest_from_string(text: &str) -> Result<Vec<TaskChain>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(crate::taskchain::chain_from_line)
        .collect()
}

/// Build a bundle holding a freshly initialized (untrained) policy; used by
/// tests and as a random-weights baseline.
pub fn untrained_bundle(cfg: &Config, seed: u64) -> PolicyBundle {
    PolicyBundle::single(Policy::init(&cfg.model, seed), cfg.train.decomposition, cfg.train.masking)
}

// Re-exported for tests that need task names.
pub use crate::sim::ALL_TASKS as ALL_TASK_IDS;

pub fn task_names() -> Vec<&'static str> {
    crate::sim::ALL_TASKS.iter().map(|t| t.name()).collect()
}

#[allow(dead_code)]
fn unused_task_id(_t: TaskId) {}
