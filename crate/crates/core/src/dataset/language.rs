//! Instruction templates and the word vocabulary.
//!
//! Each task carries movement-phase and interaction-phase instruction
//! variants. Train and validation draw from disjoint variant pools so
//! evaluation always sees unseen wordings.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sim::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

pub struct InstructionTemplate {
    pub task: TaskId,
    pub move_train: [&'static str; 2],
    pub move_val: [&'static str; 2],
    pub interact_train: &'static str,
    pub interact_val: &'static str,
}

/// `{c}` expands to the block color.
const TEMPLATES: &[InstructionTemplate] = &[
    InstructionTemplate {
        task: TaskId::PickRed,
        move_train: ["move: move to the {c} block from the top", "move: go to the top side of the {c} block"],
        move_val: ["move: approach the {c} block from above", "move: reach the {c} block"],
        interact_train: "pick up the {c} block",
        interact_val: "grasp the {c} block and lift it",
    },
    InstructionTemplate {
        task: TaskId::PickGreen,
        move_train: ["move: move to the {c} block from the top", "move: go to the top side of the {c} block"],
        move_val: ["move: approach the {c} block from above", "move: reach the {c} block"],
        interact_train: "pick up the {c} block",
        interact_val: "grasp the {c} block and lift it",
    },
    InstructionTemplate {
        task: TaskId::PickBlue,
        move_train: ["move: move to the {c} block from the top", "move: go to the top side of the {c} block"],
        move_val: ["move: approach the {c} block from above", "move: reach the {c} block"],
        interact_train: "pick up the {c} block",
        interact_val: "grasp the {c} block and lift it",
    },
    InstructionTemplate {
        task: TaskId::PlaceRedInBowl,
        move_train: ["move: move above the bowl", "move: go to the top of the bowl"],
        move_val: ["move: approach the bowl from the top", "move: reach the bowl"],
        interact_train: "place the {c} block in the bowl",
        interact_val: "put the {c} block into the bowl",
    },
    InstructionTemplate {
        task: TaskId::PlaceGreenInBowl,
        move_train: ["move: move above the bowl", "move: go to the top of the bowl"],
        move_val: ["move: approach the bowl from the top", "move: reach the bowl"],
        interact_train: "place the {c} block in the bowl",
        interact_val: "put the {c} block into the bowl",
    },
    InstructionTemplate {
        task: TaskId::PlaceBlueInBowl,
        move_train: ["move: move above the bowl", "move: go to the top of the bowl"],
        move_val: ["move: approach the bowl from the top", "move: reach the bowl"],
        interact_train: "place the {c} block in the bowl",
        interact_val: "put the {c} block into the bowl",
    },
    InstructionTemplate {
        task: TaskId::TurnLedOn,
        move_train: ["move: move to the top side of the led button", "move: approach the led button from the top"],
        move_val: ["move: go to the led button", "move: reach the button from above"],
        interact_train: "press the button to turn on the led light",
        interact_val: "push the button so the led lights up",
    },
    InstructionTemplate {
        task: TaskId::TurnLedOff,
        move_train: ["move: move to the top side of the led button", "move: approach the led button from the top"],
        move_val: ["move: go to the led button", "move: reach the button from above"],
        interact_train: "press the button to turn off the led light",
        interact_val: "push the button so the led goes dark",
    },
    InstructionTemplate {
        task: TaskId::OpenDrawer,
        move_train: ["move: move in front of the closed drawer", "move: go to the drawer handle"],
        move_val: ["move: approach the drawer handle", "move: reach the handle of the drawer"],
        interact_train: "pull the handle to open the drawer",
        interact_val: "slide the drawer open by its handle",
    },
    InstructionTemplate {
        task: TaskId::CloseDrawer,
        move_train: ["move: move in front of the open drawer", "move: go to the drawer handle"],
        move_val: ["move: approach the drawer handle", "move: reach the handle of the drawer"],
        interact_train: "push the handle to close the drawer",
        interact_val: "slide the drawer shut by its handle",
    },
    InstructionTemplate {
        task: TaskId::PushSliderLeft,
        move_train: ["move: go to the slider from the right", "move: reach the right side of the slider handle"],
        move_val: ["move: approach the slider handle", "move: move to the slider rail"],
        interact_train: "push the sliding handle to the left side",
        interact_val: "slide the handle to the left",
    },
    InstructionTemplate {
        task: TaskId::PushSliderRight,
        move_train: ["move: go to the slider from the left", "move: reach the left side of the slider handle"],
        move_val: ["move: approach the slider handle", "move: move to the slider rail"],
        interact_train: "push the sliding handle to the right side",
        interact_val: "slide the handle to the right",
    },
];

pub fn template_for(task: TaskId) -> Result<&'static InstructionTemplate> {
    TEMPLATES
        .iter()
        .find(|t| t.task == task)
        .ok_or_else(|| Error::Config(format!("no instruction template for {task}")))
}

fn fill(template: &str, task: TaskId) -> String {
    match task.color() {
        Some(c) => template.replace("{c}", c.name()),
        None => template.to_string(),
    }
}

/// Deterministically sample a (movement, interaction) instruction pair for
/// one trajectory. A pure function of (trajectory seed, task, split).
pub fn annotate_language(task: TaskId, traj_seed: u64, split: Split) -> Result<(String, String)> {
    let t = template_for(task)?;
    let mut rng = Rng::derive(traj_seed, 0x1A06);
    let mv = match split {
        Split::Train => t.move_train[rng.below(t.move_train.len())],
        Split::Val => t.move_val[rng.below(t.move_val.len())],
    };
    let inter = match split {
        Split::Train => t.interact_train,
        Split::Val => t.interact_val,
    };
    Ok((fill(mv, task), fill(inter, task)))
}

/// Lowercase word tokens with punctuation stripped.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Sorted unique vocabulary over all template variants and color slot
/// values. Id 0 is reserved for out-of-vocabulary words; real words get
/// ids starting at 1.
pub fn vocabulary() -> Vec<String> {
    let mut vocab = std::collections::BTreeSet::new();
    for t in TEMPLATES {
        for v in t.move_train.iter().chain(t.move_val.iter()) {
            for task_color in ["red", "green", "blue"] {
                for w in words(&v.replace("{c}", task_color)) {
                    vocab.insert(w);
                }
            }
        }
        for v in [t.interact_train, t.interact_val] {
            for task_color in ["red", "green", "blue"] {
                for w in words(&v.replace("{c}", task_color)) {
                    vocab.insert(w);
                }
            }
        }
    }
    vocab.into_iter().collect()
}

/// Map an instruction to fixed-length token ids (0 = OOV, padded with 0).
pub fn tokenize(s: &str, vocab: &[String], max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = words(s)
        .into_iter()
        .map(|w| vocab.binary_search(&w).map(|i| i + 1).unwrap_or(0))
        .take(max_len)
        .collect();
    ids.resize(max_len, 0);
    ids
}
