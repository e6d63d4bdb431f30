//! Task inventory and completion detectors.
//!
//! Twelve task types covering the four verb classes: pick, place, press,
//! and slide/drawer. Success predicates depend only on object-state
//! changes between two states, never on the gripper pose.

use super::{Color, SceneState};
use crate::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    PickRed,
    PickGreen,
    PickBlue,
    PlaceRedInBowl,
    PlaceGreenInBowl,
    PlaceBlueInBowl,
    TurnLedOn,
    TurnLedOff,
    OpenDrawer,
    CloseDrawer,
    PushSliderLeft,
    PushSliderRight,
}

pub const ALL_TASKS: [TaskId; 12] = [
    TaskId::PickRed,
    TaskId::PickGreen,
    TaskId::PickBlue,
    TaskId::PlaceRedInBowl,
    TaskId::PlaceGreenInBowl,
    TaskId::PlaceBlueInBowl,
    TaskId::TurnLedOn,
    TaskId::TurnLedOff,
    TaskId::OpenDrawer,
    TaskId::CloseDrawer,
    TaskId::PushSliderLeft,
    TaskId::PushSliderRight,
];

/// What the policy should navigate to for this task (the detection query).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetObject {
    Block(Color),
    Bowl,
    Button,
    DrawerHandle,
    SliderHandle,
}

impl TargetObject {
    pub fn phrase(self) -> String {
        match self {
            TargetObject::Block(c) => format!("the {} block", c.name()),
            TargetObject::Bowl => "the bowl".into(),
            TargetObject::Button => "the led button".into(),
            TargetObject::DrawerHandle => "the drawer handle".into(),
            TargetObject::SliderHandle => "the slider handle".into(),
        }
    }
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::PickRed => "pick_red",
            TaskId::PickGreen => "pick_green",
            TaskId::PickBlue => "pick_blue",
            TaskId::PlaceRedInBowl => "place_red_in_bowl",
            TaskId::PlaceGreenInBowl => "place_green_in_bowl",
            TaskId::PlaceBlueInBowl => "place_blue_in_bowl",
            TaskId::TurnLedOn => "turn_led_on",
            TaskId::TurnLedOff => "turn_led_off",
            TaskId::OpenDrawer => "open_drawer",
            TaskId::CloseDrawer => "close_drawer",
            TaskId::PushSliderLeft => "push_slider_left",
            TaskId::PushSliderRight => "push_slider_right",
        }
    }

    pub fn parse(s: &str) -> Result<TaskId> {
        ALL_TASKS
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidChain(format!("unknown task id '{s}'")))
    }

    pub fn index(self) -> usize {
        ALL_TASKS.iter().position(|&t| t == self).unwrap()
    }

    /// Block color for pick/place tasks.
    pub fn color(self) -> Option<Color> {
        match self {
            TaskId::PickRed | TaskId::PlaceRedInBowl => Some(Color::Red),
            TaskId::PickGreen | TaskId::PlaceGreenInBowl => Some(Color::Green),
            TaskId::PickBlue | TaskId::PlaceBlueInBowl => Some(Color::Blue),
            _ => None,
        }
    }

    pub fn target(self) -> TargetObject {
        match self {
            TaskId::PickRed => TargetObject::Block(Color::Red),
            TaskId::PickGreen => TargetObject::Block(Color::Green),
            TaskId::PickBlue => TargetObject::Block(Color::Blue),
            TaskId::PlaceRedInBowl | TaskId::PlaceGreenInBowl | TaskId::PlaceBlueInBowl => {
                TargetObject::Bowl
            }
            TaskId::TurnLedOn | TaskId::TurnLedOff => TargetObject::Button,
            TaskId::OpenDrawer | TaskId::CloseDrawer => TargetObject::DrawerHandle,
            TaskId::PushSliderLeft | TaskId::PushSliderRight => TargetObject::SliderHandle,
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec { id: self, target: self.target() }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub target: TargetObject,
}

/// True iff the task's object-state-change predicate holds between `prev`
/// and `cur`. Pure: re-evaluating the same pair gives the same answer.
pub fn task_detector(prev: &SceneState, cur: &SceneState, task: TaskId, cfg: &SimConfig) -> bool {
    match task {
        TaskId::PickRed | TaskId::PickGreen | TaskId::PickBlue => {
            let c = task.color().unwrap();
            prev.held_color() != Some(c) && cur.held_color() == Some(c)
        }
        TaskId::PlaceRedInBowl | TaskId::PlaceGreenInBowl | TaskId::PlaceBlueInBowl => {
            let c = task.color().unwrap();
            let id = match cur.block_by_color(c) {
                Some(b) => b.id,
                None => return false,
            };
            !prev.block_in_bowl(id, cfg) && cur.block_in_bowl(id, cfg)
        }
        TaskId::TurnLedOn => !prev.led_on && cur.led_on,
        TaskId::TurnLedOff => prev.led_on && !cur.led_on,
        TaskId::OpenDrawer => {
            prev.drawer_open_frac < cfg.drawer_open_threshold
                && cur.drawer_open_frac >= cfg.drawer_open_threshold
        }
        TaskId::CloseDrawer => {
            prev.drawer_open_frac > cfg.drawer_close_threshold
                && cur.drawer_open_frac <= cfg.drawer_close_threshold
        }
        TaskId::PushSliderLeft => {
            prev.slider_pos > cfg.slider_left_threshold
                && cur.slider_pos <= cfg.slider_left_threshold
        }
        TaskId::PushSliderRight => {
            prev.slider_pos < cfg.slider_right_threshold
                && cur.slider_pos >= cfg.slider_right_threshold
        }
    }
}
