//! Mid-chain perturbation study.
//!
//! Each perturbation kind is injected after every completed subtask; the
//! report compares next-subtask success (conditional on reaching it)
//! against the identity-perturbation control on the same chains.

use super::rollout::{Actor, PerturbKind, RolloutConfig};
use super::{evaluate, EvalReport};
use crate::config::Config;
use crate::error::Result;
use crate::taskchain::TaskChain;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct PerturbRow {
    pub kind: String,
    pub baseline_next_rate: f64,
    pub perturbed_next_rate: f64,
    /// baseline - perturbed; positive means the perturbation hurt.
    pub drop: f64,
    pub avg_len: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbRow>,
    pub baseline: EvalReport,
}

/// Success rate at positions after the first, conditional on reaching them.
fn next_subtask_rate(report: &EvalReport) -> f64 {
    let len = report.chain_len;
    let mut attempts = 0usize;
    let mut successes = 0usize;
    for &prefix in &report.prefix_lens {
        // A chain with completed prefix m attempts positions 1..=min(m+1, L)
        // and succeeds at 1..=m.
        attempts += (prefix + 1).min(len) - 1;
        successes += prefix.saturating_sub(1);
    }
    if attempts == 0 {
        0.0
    } else {
        successes as f64 / attempts as f64
    }
}

pub fn perturbation_suite(
    actor: &Actor<'_>,
    chains: &[TaskChain],
    rcfg: &RolloutConfig,
    cfg: &Config,
    seed: u64,
) -> Result<PerturbationReport> {
    let base_cfg = RolloutConfig { perturb: PerturbKind::None, ..rcfg.clone() };
    let baseline = evaluate(actor, chains, &base_cfg, cfg, seed)?;
    let base_rate = next_subtask_rate(&baseline);
    let mut rows = Vec::new();
    for kind in PerturbKind::ALL_ACTIVE {
        let run_cfg = RolloutConfig { perturb: kind, ..rcfg.clone() };
        let report = evaluate(actor, chains, &run_cfg, cfg, seed)?;
        let rate = next_subtask_rate(&report);
        rows.push(PerturbRow {
            kind: kind.label().into(),
            baseline_next_rate: base_rate,
            perturbed_next_rate: rate,
            drop: base_rate - rate,
            avg_len: report.avg_len,
        });
    }
    Ok(PerturbationReport { rows, baseline })
}

pub fn perturbation_csv(reports: &[(String, PerturbationReport)]) -> String {
    let mut out = String::from("policy,kind,baseline_next_rate,perturbed_next_rate,drop,avg_len\n");
    for (name, rep) in reports {
        for row in &rep.rows {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4},{:.3}\n",
                name, row.kind, row.baseline_next_rate, row.perturbed_next_rate, row.drop, row.avg_len
            ));
        }
    }
    out
}
