//! Token layout of the multimodal sequence.
//!
//! Segment order is fixed: FiLM-enhanced static view, gripper view, one
//! goal token, then two corner tokens per detection box slot.

use crate::config::ModelConfig;
use crate::sim::render::{GRIPPER_RES, STATIC_RES};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub static_tokens: usize,
    pub gripper_tokens: usize,
    pub goal_tokens: usize,
    pub det_tokens: usize,
}

impl TokenLayout {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        assert_eq!(STATIC_RES % cfg.patch, 0, "patch must divide the static resolution");
        assert_eq!(GRIPPER_RES % cfg.patch, 0, "patch must divide the gripper resolution");
        let sg = STATIC_RES / cfg.patch;
        let gg = GRIPPER_RES / cfg.patch;
        TokenLayout {
            static_tokens: sg * sg,
            gripper_tokens: gg * gg,
            goal_tokens: 1,
            det_tokens: 2 * cfg.n_boxes,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.static_tokens + self.gripper_tokens + self.goal_tokens + self.det_tokens
    }

    pub fn static_range(&self) -> Range<usize> {
        0..self.static_tokens
    }

    pub fn gripper_range(&self) -> Range<usize> {
        let s = self.static_tokens;
        s..s + self.gripper_tokens
    }

    pub fn goal_range(&self) -> Range<usize> {
        let s = self.static_tokens + self.gripper_tokens;
        s..s + self.goal_tokens
    }

    pub fn det_range(&self) -> Range<usize> {
        let s = self.static_tokens + self.gripper_tokens + self.goal_tokens;
        s..s + self.det_tokens
    }
}
