//! Multi-seed runs, data-parallel across seeds.

use serde::Serialize;

use crate::par::{self, Execution};

use super::{audit, Pipeline, RunSummary, Scenario};

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub summary: RunSummary,
    pub approval_violations: usize,
    pub connectivity_violations: usize,
    pub completeness_gaps: usize,
    pub chain_ok: bool,
}

/// Runs `scenario` once per seed and audits each resulting ledger.
pub fn sweep(exec: Execution, scenario: &Scenario, seeds: &[u64]) -> Vec<SeedReport> {
    par::map(exec, seeds, |&seed| {
        let mut s = scenario.clone();
        s.seed = seed;
        let ticks = s.ticks;
        let p = Pipeline::new(s).expect("scenario validated by caller");
        let summary = p.run(ticks);
        let records = p.plane().ledger().snapshot();
        SeedReport {
            seed,
            summary,
            approval_violations: audit::approval_necessity(&records).len(),
            connectivity_violations: audit::trace_connectivity(&records).len(),
            completeness_gaps: audit::completeness(p.plane()).len(),
            chain_ok: p.plane().ledger().verify_all().is_ok(),
        }
    })
}
