//! Fixed-length training windows over stored trajectories.
//!
//! Windows reference their trajectory instead of copying 64 observations;
//! trajectories shorter than the window are front-padded by repeating the
//! first frame. The goal image is the static view at the window's last step.

use super::{Dataset, TrajStep, Trajectory};
use crate::error::{Error, Result};
use crate::sim::Image;

pub const WINDOW: usize = 64;

/// A 64-step view into one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingWindow {
    pub traj: usize,
    /// Start offset into the trajectory (0 when padded).
    pub start: usize,
    /// Leading positions that repeat the first frame.
    pub pad: usize,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        WINDOW
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Map a window position to a trajectory step index.
    pub fn step_index(&self, j: usize) -> usize {
        debug_assert!(j < WINDOW);
        if j < self.pad {
            0
        } else {
            self.start + (j - self.pad)
        }
    }

    pub fn step<'d>(&self, ds: &'d Dataset, j: usize) -> &'d TrajStep {
        &ds.trajectories[self.traj].steps[self.step_index(j)]
    }

    pub fn trajectory<'d>(&self, ds: &'d Dataset) -> &'d Trajectory {
        &ds.trajectories[self.traj]
    }

    /// Window positions backed by real (non-padded) frames.
    pub fn real_start(&self) -> usize {
        self.pad
    }

    pub fn goal_image<'d>(&self, ds: &'d Dataset) -> &'d Image {
        &self.step(ds, WINDOW - 1).obs.static_img
    }

    /// Windows carry language iff they view a labeled trajectory.
    pub fn has_language(&self, ds: &Dataset) -> bool {
        self.trajectory(ds).labeled()
    }
}

/// All 64-step windows at the given stride. Short trajectories produce one
/// front-padded window each.
pub fn extract_windows(ds: &Dataset, stride: usize) -> Result<Vec<TrainingWindow>> {
    assert!(stride >= 1, "stride must be >= 1");
    if ds.trajectories.is_empty() {
        return Err(Error::Generation("empty dataset: nothing to window".into()));
    }
    let mut out = Vec::new();
    for (ti, traj) in ds.trajectories.iter().enumerate() {
        let n = traj.len();
        if n >= WINDOW {
            let mut s = 0;
            while s + WINDOW <= n {
                out.push(TrainingWindow { traj: ti, start: s, pad: 0 });
                s += stride;
            }
        } else {
            out.push(TrainingWindow { traj: ti, start: 0, pad: WINDOW - n });
        }
    }
    Ok(out)
}
