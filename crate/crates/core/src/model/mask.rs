//! Phase-aware attention masks.
//!
//! A binary activation vector m over the token sequence expands to the
//! rank-1 mask matrix M_ij = m_i * m_j that gates attention. The moving
//! phase keeps the static view, detection, and goal active; the interaction
//! phase swaps the static view for the gripper view. The goal token is
//! always active.

use super::layout::TokenLayout;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskPhase {
    Moving,
    Interaction,
    /// Ablation: no masking, every token active.
    None,
}

/// Which modalities stay active in one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySet {
    pub detection: bool,
    pub static_view: bool,
    pub gripper: bool,
}

/// Per-phase modality sets. The default is the configuration that wins the
/// input-modality ablation: moving uses detection + static, interaction
/// uses detection + gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseModalities {
    pub moving: ModalitySet,
    pub interaction: ModalitySet,
}

impl Default for PhaseModalities {
    fn default() -> Self {
        PhaseModalities {
            moving: ModalitySet { detection: true, static_view: true, gripper: false },
            interaction: ModalitySet { detection: true, static_view: false, gripper: true },
        }
    }
}

impl PhaseModalities {
    pub fn all_active() -> ModalitySet {
        ModalitySet { detection: true, static_view: true, gripper: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseMask {
    pub m: Vec<bool>,
    pub phase: MaskPhase,
}

impl PhaseMask {
    pub fn n(&self) -> usize {
        self.m.len()
    }

    /// Rank-1 expansion M_ij = m_i * m_j.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        let n = self.m.len();
        (0..n)
            .map(|i| (0..n).map(|j| (self.m[i] && self.m[j]) as u8).collect())
            .collect()
    }

    pub fn weights<T: Real>(&self) -> Vec<T> {
        self.m.iter().map(|&b| if b { T::ONE } else { T::ZERO }).collect()
    }

    /// AND the detection segment with per-token presence bits (absent box
    /// slots are padded with null tokens and masked out).
    pub fn with_det_presence(&self, layout: &TokenLayout, present: &[bool]) -> PhaseMask {
        assert_eq!(present.len(), layout.det_tokens);
        let mut m = self.m.clone();
        for (k, idx) in layout.det_range().enumerate() {
            m[idx] = m[idx] && present[k];
        }
        PhaseMask { m, phase: self.phase }
    }
}

/// Per-token activation for the given phase.
pub fn build_mask(phase: MaskPhase, layout: &TokenLayout, sets: &PhaseModalities) -> PhaseMask {
    let set = match phase {
        MaskPhase::Moving => sets.moving,
        MaskPhase::Interaction => sets.interaction,
        MaskPhase::None => PhaseModalities::all_active(),
    };
    let mut m = vec![false; layout.n_tokens()];
    for i in layout.static_range() {
        m[i] = set.static_view;
    }
    for i in layout.gripper_range() {
        m[i] = set.gripper;
    }
    for i in layout.goal_range() {
        m[i] = true; // the goal token is always active
    }
    for i in layout.det_range() {
        m[i] = set.detection;
    }
    PhaseMask { m, phase }
}
