//! Long-horizon chain generation over an abstract scene model.
//!
//! Chains are built incrementally: at each position, sample uniformly from
//! the set of tasks whose preconditions hold, then apply the task's abstract
//! effect. The legacy approach — sample a whole random sequence and keep it
//! only if it validates — is kept for comparison; its acceptance rate
//! collapses at length 10.

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sim::{Color, SceneState, TaskId, ALL_TASKS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLoc {
    Table,
    Held,
    Bowl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliderSide {
    Left,
    Right,
}

/// Abstract scene summary: just enough to decide task preconditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffordanceState {
    pub led_on: bool,
    pub drawer_open: bool,
    pub slider_side: SliderSide,
    /// Indexed red, green, blue.
    pub blocks: [BlockLoc; 3],
    pub gripper_free: bool,
}

impl AffordanceState {
    /// The canonical post-reset abstraction: everything on the table, LED
    /// off, drawer closed, slider parked left.
    pub fn initial() -> Self {
        AffordanceState {
            led_on: false,
            drawer_open: false,
            slider_side: SliderSide::Left,
            blocks: [BlockLoc::Table; 3],
            gripper_free: true,
        }
    }

    /// Pure projection from the concrete simulator state.
    pub fn from_scene(state: &SceneState, cfg: &SimConfig) -> Self {
        let mut blocks = [BlockLoc::Table; 3];
        for (i, color) in Color::ALL.iter().enumerate() {
            if let Some(b) = state.block_by_color(*color) {
                blocks[i] = if state.held == Some(b.id) {
                    BlockLoc::Held
                } else if state.block_in_bowl(b.id, cfg) {
                    BlockLoc::Bowl
                } else {
                    BlockLoc::Table
                };
            }
        }
        AffordanceState {
            led_on: state.led_on,
            drawer_open: state.drawer_open_frac > 0.5,
            slider_side: if state.slider_pos >= 0.5 { SliderSide::Right } else { SliderSide::Left },
            blocks,
            gripper_free: state.held.is_none(),
        }
    }

    fn block(&self, color: Color) -> BlockLoc {
        self.blocks[color as usize]
    }

    fn set_block(&mut self, color: Color, loc: BlockLoc) {
        self.blocks[color as usize] = loc;
    }

    pub fn allows(&self, task: TaskId) -> bool {
        match task {
            TaskId::PickRed | TaskId::PickGreen | TaskId::PickBlue => {
                self.gripper_free && self.block(task.color().unwrap()) == BlockLoc::Table
            }
            TaskId::PlaceRedInBowl | TaskId::PlaceGreenInBowl | TaskId::PlaceBlueInBowl => {
                self.block(task.color().unwrap()) == BlockLoc::Held
            }
            TaskId::TurnLedOn => !self.led_on,
            TaskId::TurnLedOff => self.led_on,
            TaskId::OpenDrawer => !self.drawer_open && self.gripper_free,
            TaskId::CloseDrawer => self.drawer_open && self.gripper_free,
            TaskId::PushSliderLeft => self.slider_side == SliderSide::Right && self.gripper_free,
            TaskId::PushSliderRight => self.slider_side == SliderSide::Left && self.gripper_free,
        }
    }

    pub fn apply(&mut self, task: TaskId) {
        match task {
            TaskId::PickRed | TaskId::PickGreen | TaskId::PickBlue => {
                self.set_block(task.color().unwrap(), BlockLoc::Held);
                self.gripper_free = false;
            }
            TaskId::PlaceRedInBowl | TaskId::PlaceGreenInBowl | TaskId::PlaceBlueInBowl => {
                self.set_block(task.color().unwrap(), BlockLoc::Bowl);
                self.gripper_free = true;
            }
            TaskId::TurnLedOn => self.led_on = true,
            TaskId::TurnLedOff => self.led_on = false,
            TaskId::OpenDrawer => self.drawer_open = true,
            TaskId::CloseDrawer => self.drawer_open = false,
            TaskId::PushSliderLeft => self.slider_side = SliderSide::Left,
            TaskId::PushSliderRight => self.slider_side = SliderSide::Right,
        }
    }
}

/// Exactly the tasks whose preconditions hold.
pub fn possible_next(s: &AffordanceState) -> Vec<TaskId> {
    ALL_TASKS.iter().copied().filter(|&t| s.allows(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskChain {
    pub tasks: Vec<TaskId>,
    pub seed: u64,
}

impl TaskChain {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

const RESTART_CAP: usize = 64;

/// Incremental chain construction. Dead ends restart from a fresh abstract
/// state under a derived sub-seed so emitted chains always have exactly
/// `len` tasks; pass `allow_short` to get the printed-algorithm behavior of
/// breaking at a dead end instead.
pub fn gen_chain_with(seed: u64, len: usize, allow_short: bool) -> Result<TaskChain> {
    assert!(len >= 1, "chain length must be >= 1");
    for attempt in 0..RESTART_CAP {
        let mut rng = Rng::derive(seed, attempt as u64);
        let mut state = AffordanceState::initial();
        let mut tasks = Vec::with_capacity(len);
        for _ in 0..len {
            let options = possible_next(&state);
            if options.is_empty() {
                break;
            }
            let task = *rng.choose(&options);
            state.apply(task);
            tasks.push(task);
        }
        if tasks.len() == len || (allow_short && !tasks.is_empty()) {
            return Ok(TaskChain { tasks, seed });
        }
    }
    Err(Error::Generation(format!(
        "no length-{len} chain after {RESTART_CAP} restarts; affordance model is mis-specified"
    )))
}

pub fn gen_chain(seed: u64, len: usize) -> Result<TaskChain> {
    gen_chain_with(seed, len, false)
}

/// Legacy rejection sampling: draw a uniformly random task list and keep it
/// only if it validates from the initial abstract state.
pub fn gen_chain_rejection(seed: u64, len: usize) -> Option<TaskChain> {
    assert!(len >= 1, "chain length must be >= 1");
    let mut rng = Rng::derive(seed, 0xA16_0);
    let tasks: Vec<TaskId> = (0..len).map(|_| *rng.choose(&ALL_TASKS)).collect();
    let chain = TaskChain { tasks, seed };
    match validate_chain(&chain, &AffordanceState::initial()) {
        Ok(true) => Some(chain),
        _ => None,
    }
}

/// True iff each task's preconditions hold in the abstract state produced by
/// applying all prior tasks' effects.
pub fn validate_chain(chain: &TaskChain, init: &AffordanceState) -> Result<bool> {
    if chain.tasks.is_empty() {
        return Err(Error::InvalidChain("empty chain".into()));
    }
    let mut state = *init;
    for &task in &chain.tasks {
        if !state.allows(task) {
            return Ok(false);
        }
        state.apply(task);
    }
    Ok(true)
}

/// Line format: `seed,task1,...,taskN`.
pub fn chain_to_line(chain: &TaskChain) -> String {
    let mut parts = vec![chain.seed.to_string()];
    parts.extend(chain.tasks.iter().map(|t| t.name().to_string()));
    parts.join(",")
}

pub fn chain_from_line(line: &str) -> Result<TaskChain> {
    let mut parts = line.trim().split(',');
    let seed: u64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidChain(format!("bad seed in '{line}'")))?;
    let tasks: Result<Vec<TaskId>> = parts.map(TaskId::parse).collect();
    let tasks = tasks?;
    if tasks.is_empty() {
        return Err(Error::InvalidChain(format!("no tasks in '{line}'")));
    }
    Ok(TaskChain { tasks, seed })
}
