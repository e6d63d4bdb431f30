//! Independent-vs-continuous skill-chaining diagnostic.
//!
//! The same chains run in both modes; per-task success in the independent
//! setting (every subtask starts in-distribution) is compared with the
//! continuous setting (state carries over). The gap measures how much
//! chained execution erodes single-task competence.

use super::rollout::{Actor, Mode, RolloutConfig};
use super::{evaluate, EvalReport};
use crate::config::Config;
use crate::error::Result;
use crate::taskchain::TaskChain;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport {
    pub independent: EvalReport,
    pub continuous: EvalReport,
    /// task -> (independent rate, continuous rate, gap).
    pub per_task: BTreeMap<String, (f64, f64, f64)>,
    pub mean_independent: f64,
    pub mean_continuous: f64,
    /// mean_independent - mean_continuous; positive means chaining hurts.
    pub gap: f64,
}

pub fn skill_chain_diagnostic(
    actor: &Actor<'_>,
    chains: &[TaskChain],
    rcfg: &RolloutConfig,
    cfg: &Config,
    seed: u64,
) -> Result<DiagnosticReport> {
    let ind = evaluate(actor, chains, &RolloutConfig { mode: Mode::Independent, ..rcfg.clone() }, cfg, seed)?;
    let cont = evaluate(actor, chains, &RolloutConfig { mode: Mode::Continuous, ..rcfg.clone() }, cfg, seed)?;
    let mut per_task = BTreeMap::new();
    for (task, &(a_i, s_i)) in &ind.per_task {
        if let Some(&(a_c, s_c)) = cont.per_task.get(task) {
            if a_i > 0 && a_c > 0 {
                let ri = s_i as f64 / a_i as f64;
                let rc = s_c as f64 / a_c as f64;
                per_task.insert(task.clone(), (ri, rc, ri - rc));
            }
        }
    }
    let mean_independent = ind.mean_task_rate();
    let mean_continuous = cont.mean_task_rate();
    Ok(DiagnosticReport {
        independent: ind,
        continuous: cont,
        per_task,
        mean_independent,
        mean_continuous,
        gap: mean_independent - mean_continuous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{make_chains, PerturbKind};

    #[test]
    fn expert_gap_is_negligible() {
        // The expert acts from ground truth, so chained start states do not
        // hurt it: both curves are near-perfect and the gap is ~0.
        let cfg = Config::default();
        let chains = make_chains(7, 15, 8).unwrap();
        let rcfg = RolloutConfig {
            mode: Mode::Continuous,
            step_budget: 120,
            chain_len: 8,
            n_chains: chains.len(),
            perturb: PerturbKind::None,
            phase_threshold: 0.0,
            ddim_k: 8,
        };
        let d = skill_chain_diagnostic(&Actor::Expert, &chains, &rcfg, &cfg, 31).unwrap();
        assert_eq!(d.independent.rates.len(), d.continuous.rates.len());
        assert!(d.gap.abs() < 0.05, "expert gap {}", d.gap);
        assert!(!d.per_task.is_empty());
    }
}
