//! Chain execution: phase-switch control, replanned chunk execution, and
//! the per-subtask success protocol.

use crate::config::Config;
use crate::dataset::{annotate_language, Split};
use crate::error::Result;
use crate::model::Policy;
use crate::rng::Rng;
use crate::sim::{
    detect, feasible_start, reset, run_expert_subtask, step, task_detector, Action8, Observation,
    PerturbationSpec, Phase, SceneState, TaskId,
};
use crate::taskchain::TaskChain;
use serde::Serialize;

/// Evaluation mode: carry state across subtasks, or reset each subtask to a
/// fresh in-distribution start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Continuous,
    Independent,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "continuous" => Some(Mode::Continuous),
            "independent" => Some(Mode::Independent),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Continuous => "continuous",
            Mode::Independent => "independent",
        }
    }
}

/// Perturbation kinds applied between subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerturbKind {
    None,
    Relocalize,
    Lighting,
    Distractors,
}

impl PerturbKind {
    pub const ALL_ACTIVE: [PerturbKind; 3] =
        [PerturbKind::Relocalize, PerturbKind::Lighting, PerturbKind::Distractors];

    pub fn parse(s: &str) -> Option<PerturbKind> {
        match s {
            "none" => Some(PerturbKind::None),
            "relocalize" => Some(PerturbKind::Relocalize),
            "lighting" => Some(PerturbKind::Lighting),
            "distractors" => Some(PerturbKind::Distractors),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PerturbKind::None => "none",
            PerturbKind::Relocalize => "random_localization",
            PerturbKind::Lighting => "unseen_lighting",
            PerturbKind::Distractors => "visual_distraction",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutConfig {
    pub mode: Mode,
    pub step_budget: usize,
    pub chain_len: usize,
    pub n_chains: usize,
    pub perturb: PerturbKind,
    pub phase_threshold: f64,
    pub ddim_k: usize,
}

impl RolloutConfig {
    pub fn from_config(cfg: &Config) -> Self {
        RolloutConfig {
            mode: Mode::parse(&cfg.eval.mode).unwrap_or(Mode::Continuous),
            step_budget: cfg.eval.step_budget,
            chain_len: cfg.eval.chain_len,
            n_chains: cfg.eval.n_chains,
            perturb: PerturbKind::None,
            phase_threshold: cfg.eval.phase_threshold,
            ddim_k: cfg.model.diffusion_steps,
        }
    }
}

/// Inference-time phase switching: a subtask starts in the moving phase and
/// latches to interaction once a predicted chunk's mean s_p crosses the
/// threshold. Monotone within a subtask.
#[derive(Debug, Clone)]
pub struct PhaseController {
    phase: Phase,
    threshold: f64,
}

impl PhaseController {
    pub fn new(threshold: f64) -> Self {
        PhaseController { phase: Phase::Moving, threshold }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Feed one predicted chunk's mean s_p; returns the phase the *next*
    /// prediction should use.
    pub fn observe_chunk(&mut self, mean_sp: f64) -> Phase {
        if self.phase == Phase::Moving && mean_sp >= self.threshold {
            self.phase = Phase::Interaction;
        }
        self.phase
    }

    pub fn reset(&mut self) {
        self.phase = Phase::Moving;
    }
}

/// Gate activity for one prediction (Table-7 style accounting).
#[derive(Debug, Clone, Copy)]
pub struct GateEvent {
    pub phase: Phase,
    pub kept_static: bool,
    pub kept_gripper: bool,
}

/// What executes the chains.
pub enum Actor<'a> {
    Model(&'a super::PolicyBundle),
    /// The scripted expert, as a ceiling reference.
    Expert,
    /// Uniform random actions, as a floor reference.
    Random,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainOutcome {
    pub tasks: Vec<String>,
    /// Per-position success. In continuous mode this is of the form
    /// 1^k 0^(L-k).
    pub results: Vec<bool>,
    pub gate_events: usize,
}

pub struct ChainRun {
    pub outcome: ChainOutcome,
    pub gates: Vec<GateEvent>,
}

fn relocalize_target(state: &mut SceneState, task: TaskId, rng: &mut Rng, cfg: &Config) {
    use crate::sim::geom;
    let sample = |rng: &mut Rng| {
        (rng.range(geom::REGION_X.0, geom::REGION_X.1), rng.range(geom::REGION_Y.0, geom::REGION_Y.1))
    };
    let clear_of = |x: f64, y: f64, state: &SceneState| {
        let mut ok = ((x - state.bowl.0).powi(2) + (y - state.bowl.1).powi(2)).sqrt()
            > cfg.sim.bowl_radius + 0.04;
        for b in &state.blocks {
            ok &= ((x - b.x).powi(2) + (y - b.y).powi(2)).sqrt() > 0.08;
        }
        ok
    };
    match task.target() {
        crate::sim::TargetObject::Block(color) => {
            let Some(id) = state.block_by_color(color).map(|b| b.id) else { return };
            if state.held == Some(id) || state.block_in_bowl(id, &cfg.sim) {
                return;
            }
            for _ in 0..100 {
                let (x, y) = sample(rng);
                if clear_of(x, y, state) {
                    if let Some(b) = state.blocks.iter_mut().find(|b| b.id == id) {
                        b.x = x;
                        b.y = y;
                    }
                    return;
                }
            }
        }
        crate::sim::TargetObject::Bowl => {
            for _ in 0..100 {
                let (x, y) = sample(rng);
                if clear_of(x, y, state) {
                    state.bowl = (x, y);
                    return;
                }
            }
        }
        crate::sim::TargetObject::Button => {
            state.button_y = rng.range(0.30, 0.70);
        }
        // Articulated handles cannot be relocated.
        _ => {}
    }
}

fn apply_between_subtask_perturbation(
    kind: PerturbKind,
    state: &mut SceneState,
    pert: &mut PerturbationSpec,
    next_task: TaskId,
    rng: &mut Rng,
    cfg: &Config,
) {
    match kind {
        PerturbKind::None => {}
        PerturbKind::Relocalize => relocalize_target(state, next_task, rng, cfg),
        PerturbKind::Lighting => pert.lighting = cfg.eval.lighting_gain,
        PerturbKind::Distractors => {
            if pert.distractors.is_empty() {
                use crate::sim::geom;
                for _ in 0..cfg.eval.n_distractors {
                    let x = rng.range(geom::REGION_X.0, geom::REGION_X.1);
                    let y = rng.range(geom::REGION_Y.0, geom::REGION_Y.1);
                    let color = *rng.choose(&crate::sim::Color::ALL);
                    pert.distractors.push((x, y, color));
                }
            }
        }
    }
}

/// Run one subtask with the model policy. Returns success and the gate
/// events observed.
#[allow(clippy::too_many_arguments)]
fn model_subtask(
    bundle: &super::PolicyBundle,
    state: &mut SceneState,
    task: TaskId,
    pert: &PerturbationSpec,
    rcfg: &RolloutConfig,
    cfg: &Config,
    seed: u64,
    gates: &mut Vec<GateEvent>,
) -> Result<bool> {
    let mut controller = PhaseController::new(rcfg.phase_threshold);
    let mut rng = Rng::derive(seed, 0x5AD0);
    let (instr_move, instr_interact) = annotate_language(task, seed, Split::Val)?;
    let mut steps_used = 0usize;
    while steps_used < rcfg.step_budget {
        let phase = controller.phase();
        let mask_phase = bundle.mask_phase_for(phase);
        let policy: &Policy<f32> = bundle.policy_for(phase);
        let instr = if bundle.decomposition && phase == Phase::Moving {
            instr_move.as_str()
        } else {
            instr_interact.as_str()
        };
        let obs = Observation::capture(state, pert, &cfg.sim);
        let boxes = if bundle.masking { detect(state, task.target(), &cfg.sim) } else { Vec::new() };
        let input = crate::model::PolicyInput {
            static_img: obs.static_img,
            gripper_img: obs.gripper_img,
            boxes,
            lang: Some(policy.tokenize(instr)),
            goal_img: None,
            phase: mask_phase,
        };
        let (actions, gate) =
            bundle.sample_with_info(&input, phase, rcfg.ddim_k, &mut rng)?;
        if let Some(ev) = gate {
            gates.push(GateEvent { phase, ..ev });
        }
        let mean_sp = actions.iter().map(|a| a.s_p).sum::<f64>() / actions.len() as f64;
        controller.observe_chunk(mean_sp);
        for a in &actions {
            let next = step(state, a, &cfg.sim)?;
            let fired = task_detector(state, &next, task, &cfg.sim);
            *state = next;
            steps_used += 1;
            if fired {
                return Ok(true);
            }
            if steps_used >= rcfg.step_budget {
                return Ok(false);
            }
        }
    }
    Ok(false)
}

fn random_subtask(
    state: &mut SceneState,
    task: TaskId,
    rcfg: &RolloutConfig,
    cfg: &Config,
    seed: u64,
) -> Result<bool> {
    let mut rng = Rng::derive(seed, 0xDA);
    for _ in 0..rcfg.step_budget {
        let a = Action8 {
            x: rng.uniform(),
            y: rng.uniform(),
            z: rng.range(0.0, crate::sim::geom::Z_MAX),
            eu_x: 0.0,
            eu_y: 0.0,
            eu_z: 0.0,
            s_g: rng.range(-1.0, 1.0),
            s_p: 0.0,
        };
        let next = step(state, &a, &cfg.sim)?;
        let fired = task_detector(state, &next, task, &cfg.sim);
        *state = next;
        if fired {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Execute one chain under the configured protocol.
pub fn rollout_chain(
    actor: &Actor<'_>,
    chain: &TaskChain,
    rcfg: &RolloutConfig,
    cfg: &Config,
    seed: u64,
) -> Result<ChainRun> {
    let mut state = reset(seed, 3);
    let mut pert = PerturbationSpec::identity();
    let mut pert_rng = Rng::derive(seed, 0x9E27);
    let mut results = Vec::with_capacity(chain.tasks.len());
    let mut gates = Vec::new();
    for (k, &task) in chain.tasks.iter().enumerate() {
        if rcfg.mode == Mode::Independent {
            state = feasible_start(Rng::derive(seed, 0x1D0 + k as u64).next_u64(), task, &cfg.sim);
            // Perturbations also apply to independent starts (after the
            // first subtask), mirroring the continuous protocol.
            if k > 0 && rcfg.perturb != PerturbKind::None {
                apply_between_subtask_perturbation(
                    rcfg.perturb, &mut state, &mut pert, task, &mut pert_rng, cfg,
                );
            }
        } else if k > 0 && rcfg.perturb != PerturbKind::None {
            apply_between_subtask_perturbation(
                rcfg.perturb, &mut state, &mut pert, task, &mut pert_rng, cfg,
            );
        }
        let sub_seed = Rng::derive(seed, 0xC0DE + k as u64).next_u64();
        let ok = match actor {
            Actor::Model(bundle) => {
                model_subtask(bundle, &mut state, task, &pert, rcfg, cfg, sub_seed, &mut gates)?
            }
            Actor::Expert => {
                let mut rng = Rng::derive(sub_seed, 0xE);
                if crate::sim::task_feasible(&state, task, &cfg.sim) {
                    let (_, end, ok) =
                        run_expert_subtask(&state, task, &cfg.sim, &mut rng, rcfg.step_budget)?;
                    state = end;
                    ok
                } else {
                    false
                }
            }
            Actor::Random => random_subtask(&mut state, task, rcfg, cfg, sub_seed)?,
        };
        results.push(ok);
        if rcfg.mode == Mode::Continuous && !ok {
            break;
        }
    }
    // Pad unattempted positions as failures.
    results.resize(chain.tasks.len(), false);
    Ok(ChainRun {
        outcome: ChainOutcome {
            tasks: chain.tasks.iter().map(|t| t.name().to_string()).collect(),
            results,
            gate_events: gates.len(),
        },
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_controller_threshold_and_latch() {
        let mut c = PhaseController::new(0.0);
        assert_eq!(c.phase(), Phase::Moving);
        assert_eq!(c.observe_chunk(-0.9), Phase::Moving);
        assert_eq!(c.observe_chunk(-0.2), Phase::Moving);
        // Mean crosses the threshold: switch before the next chunk.
        assert_eq!(c.observe_chunk(0.4), Phase::Interaction);
        // A later negative value must not switch back.
        assert_eq!(c.observe_chunk(-0.8), Phase::Interaction);
        c.reset();
        assert_eq!(c.phase(), Phase::Moving);
    }

    #[test]
    fn never_crossing_threshold_stays_moving() {
        let mut c = PhaseController::new(0.0);
        for _ in 0..100 {
            assert_eq!(c.observe_chunk(-0.01), Phase::Moving);
        }
    }

    #[test]
    fn expert_actor_completes_chains() {
        let cfg = Config::default();
        let rcfg = RolloutConfig {
            mode: Mode::Continuous,
            step_budget: 120,
            chain_len: 10,
            n_chains: 1,
            perturb: PerturbKind::None,
            phase_threshold: 0.0,
            ddim_k: 8,
        };
        let mut full = 0;
        let n = 40;
        for s in 0..n {
            let chain = crate::taskchain::gen_chain(s, 10).unwrap();
            let run = rollout_chain(&Actor::Expert, &chain, &rcfg, &cfg, 7_000 + s).unwrap();
            assert_eq!(run.outcome.results.len(), 10);
            if run.outcome.results.iter().all(|&b| b) {
                full += 1;
            }
            // Prefix closure in continuous mode.
            let first_fail = run.outcome.results.iter().position(|&b| !b);
            if let Some(f) = first_fail {
                assert!(run.outcome.results[f..].iter().all(|&b| !b));
            }
        }
        assert!(full as f64 / n as f64 >= 0.95, "expert completed {full}/{n}");
    }

    #[test]
    fn random_actor_rarely_succeeds_at_position_one() {
        let cfg = Config::default();
        let rcfg = RolloutConfig {
            mode: Mode::Continuous,
            step_budget: 120,
            chain_len: 10,
            n_chains: 1,
            perturb: PerturbKind::None,
            phase_threshold: 0.0,
            ddim_k: 8,
        };
        let mut pos1 = 0;
        let n = 100;
        for s in 0..n {
            let chain = crate::taskchain::gen_chain(s, 10).unwrap();
            let run = rollout_chain(&Actor::Random, &chain, &rcfg, &cfg, 9_000 + s).unwrap();
            pos1 += run.outcome.results[0] as usize;
        }
        assert!((pos1 as f64 / n as f64) < 0.05, "random policy position-1 rate {pos1}/{n}");
    }
}
