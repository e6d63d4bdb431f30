//! Expert data collection, phase decomposition, and dataset assembly.
//!
//! A stored trajectory is one task execution: per-step observations,
//! 8-channel actions with rewritten phase signs, the cutting point, and
//! (for labeled data) the movement/interaction instruction pair. Play
//! rollouts are random task sequences recorded segment-per-task without
//! instructions; they widen the visual start distribution and train the
//! image-goal pathway.

mod disk;
pub mod language;
mod windows;

pub use disk::{load, save};
pub use language::{annotate_language, tokenize, vocabulary, Split};
pub use windows::{extract_windows, TrainingWindow, WINDOW};

use crate::config::{DataConfig, SimConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sim::{
    detect, feasible_start, reset, run_expert_subtask, task_detector, Action8, Observation,
    PerturbationSpec, Phase, SceneState, TaskId,
};
use crate::taskchain::gen_chain;

#[derive(Debug, Clone)]
pub struct TrajStep {
    pub obs: Observation,
    pub action: Action8,
    pub phase: Phase,
    /// Detection box of the task target in this step's static view.
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub task_id: TaskId,
    /// Cutting point d: steps at t <= d are the moving phase.
    pub cutting_point: usize,
    /// Frame index of the first object-state change (t*).
    pub t_star: usize,
    /// Present on labeled trajectories only.
    pub instr_move: Option<String>,
    pub instr_interact: Option<String>,
    pub seed: u64,
}

impl Trajectory {
    pub fn labeled(&self) -> bool {
        self.instr_move.is_some()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
}

impl Dataset {
    pub fn labeled_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.labeled()).count()
    }

    pub fn play_count(&self) -> usize {
        self.trajectories.len() - self.labeled_count()
    }
}

/// First frame index whose task-relevant object state differs from its
/// predecessor. `states` holds n+1 frames for n actions.
pub fn find_state_change(states: &[SceneState], task: TaskId, cfg: &SimConfig) -> Option<usize> {
    (1..states.len()).find(|&j| task_detector(&states[j - 1], &states[j], task, cfg))
}

/// Compute the cutting point: the offset before the state change is drawn
/// deterministically per trajectory from {10..15}, then clamped so d >= 1.
pub fn cutting_point(t_star: usize, traj_seed: u64) -> usize {
    let offset = 10 + Rng::derive(traj_seed, 0xD0FF).below(6);
    t_star.saturating_sub(offset).max(1)
}

/// Rewrite phase labels and s_p channels around the cutting point.
fn apply_cut(steps: &mut [TrajStep], d: usize) {
    for (t, s) in steps.iter_mut().enumerate() {
        let phase = if t <= d { Phase::Moving } else { Phase::Interaction };
        s.phase = phase;
        s.action.s_p = phase.sign();
    }
}

/// Turn a raw expert rollout into a decomposed trajectory.
///
/// `states` must hold one more frame than `actions`. Fails with an
/// undecomposable-trajectory error when no object-state change exists.
pub fn decompose(
    states: &[SceneState],
    actions: &[Action8],
    raw_phases: &[Phase],
    task: TaskId,
    traj_seed: u64,
    instructions: Option<(String, String)>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    assert_eq!(states.len(), actions.len() + 1);
    let t_star = find_state_change(states, task, cfg)
        .ok_or_else(|| Error::Undecomposable(format!("{task}: no object-state change")))?;
    let d = cutting_point(t_star, traj_seed);
    let pert = PerturbationSpec::identity();
    let mut steps: Vec<TrajStep> = states[..actions.len()]
        .iter()
        .zip(actions.iter())
        .zip(raw_phases.iter())
        .map(|((state, action), phase)| TrajStep {
            obs: Observation::capture(state, &pert, cfg),
            action: *action,
            phase: *phase,
            bbox: detect(state, task.target(), cfg).first().copied(),
        })
        .collect();
    apply_cut(&mut steps, d);
    let (instr_move, instr_interact) = match instructions {
        Some((m, i)) => (Some(m), Some(i)),
        None => (None, None),
    };
    Ok(Trajectory {
        steps,
        task_id: task,
        cutting_point: d,
        t_star,
        instr_move,
        instr_interact,
        seed: traj_seed,
    })
}

/// Re-derive cutting points, phase channels, and (for labeled data)
/// instructions on an existing dataset. With salt 0 this reproduces the
/// annotation produced at collection time.
pub fn redecompose(ds: &mut Dataset, salt: u64) -> Result<()> {
    for t in &mut ds.trajectories {
        let seed = if salt == 0 { t.seed } else { Rng::derive(t.seed, salt).next_u64() };
        let d = cutting_point(t.t_star, seed);
        t.cutting_point = d;
        apply_cut(&mut t.steps, d);
        if t.labeled() {
            let (m, i) = annotate_language(t.task_id, seed, Split::Train)?;
            t.instr_move = Some(m);
            t.instr_interact = Some(i);
        }
    }
    Ok(())
}

const MIN_TRAJ_LEN: usize = 10;
const COLLECT_BUDGET: usize = 120;
const START_ATTEMPTS: usize = 50;

fn collect_one(
    task: TaskId,
    traj_seed: u64,
    labeled: bool,
    sim: &SimConfig,
) -> Result<Trajectory> {
    for attempt in 0..START_ATTEMPTS {
        let start_seed = Rng::derive(traj_seed, 0x57A7 + attempt as u64).next_u64();
        let start = feasible_start(start_seed, task, sim);
        let mut noise = Rng::derive(traj_seed, 0xE0 + attempt as u64);
        let (steps, end, ok) = run_expert_subtask(&start, task, sim, &mut noise, COLLECT_BUDGET)?;
        if !ok || steps.len() < MIN_TRAJ_LEN {
            continue;
        }
        let mut states: Vec<SceneState> = steps.iter().map(|s| s.state.clone()).collect();
        states.push(end);
        let actions: Vec<Action8> = steps.iter().map(|s| s.action).collect();
        let phases: Vec<Phase> = steps.iter().map(|s| s.phase).collect();
        let instructions = if labeled {
            Some(annotate_language(task, traj_seed, Split::Train)?)
        } else {
            None
        };
        return decompose(&states, &actions, &phases, task, traj_seed, instructions, sim);
    }
    Err(Error::Generation(format!("no successful start for {task} after {START_ATTEMPTS} attempts")))
}

/// Collect `n_per_task` labeled demonstrations per task type plus unlabeled
/// play segments at `play_fraction` of the labeled volume. Deterministic
/// per seed.
pub fn collect(n_per_task: usize, seed: u64, sim: &SimConfig, data: &DataConfig) -> Result<Dataset> {
    assert!(n_per_task >= 1);
    let mut trajectories = Vec::new();
    for (ti, &task) in crate::sim::ALL_TASKS.iter().enumerate() {
        for k in 0..n_per_task {
            let traj_seed = Rng::derive(seed, 1_000_000 + (ti * 10_000 + k) as u64).next_u64();
            trajectories.push(collect_one(task, traj_seed, true, sim)?);
        }
    }

    let n_play = ((trajectories.len() as f64) * data.play_fraction).round() as usize;
    let mut collected_play = 0;
    let mut chain_idx = 0u64;
    while collected_play < n_play {
        let chain_seed = Rng::derive(seed, 2_000_000 + chain_idx).next_u64();
        chain_idx += 1;
        let chain = gen_chain(chain_seed, data.play_chain_len.max(1))?;
        let mut state = reset(chain_seed, 3);
        let mut noise = Rng::derive(chain_seed, 0x91A7);
        for (si, &task) in chain.tasks.iter().enumerate() {
            if collected_play >= n_play {
                break;
            }
            let Ok((steps, end, ok)) = run_expert_subtask(&state, task, sim, &mut noise, COLLECT_BUDGET)
            else {
                break;
            };
            if !ok {
                break;
            }
            if steps.len() >= MIN_TRAJ_LEN {
                let mut states: Vec<SceneState> = steps.iter().map(|s| s.state.clone()).collect();
                states.push(end.clone());
                let actions: Vec<Action8> = steps.iter().map(|s| s.action).collect();
                let phases: Vec<Phase> = steps.iter().map(|s| s.phase).collect();
                let seg_seed = Rng::derive(chain_seed, 0x9E0 + si as u64).next_u64();
                trajectories.push(decompose(&states, &actions, &phases, task, seg_seed, None, sim)?);
                collected_play += 1;
            }
            state = end;
        }
    }
    Ok(Dataset { trajectories, seed })
}
