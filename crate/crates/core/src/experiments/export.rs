//! CSV and JSON serialization of experiment results.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::monte_carlo::LearningCurves;
use super::phases::PhaseReport;
use super::verdicts::VerdictTable;
use crate::analysis::Envelopes;

/// Version tag carried by every JSON document.
pub const SCHEMA: &str = "adaptnet/1";

pub const CURVES_HEADER: &str =
    "iter,agent,mse,stderr,ref_mse,centroid_gap_energy,residual_energy_sum,bound_wc,bound_we";

/// Formats with 17 significant digits, which round-trips every finite `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per `(iteration, agent)`. The bound columns are empty when no
/// envelopes are supplied.
pub fn curves_csv(curves: &LearningCurves, envelopes: Option<&Envelopes>) -> String {
    let mut out = String::with_capacity(200 * curves.iterations() * curves.n_agents);
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for i in 0..=curves.horizon {
        let shared = format!(
            "{},{},{}",
            fmt_f64(curves.ref_mse[i]),
            fmt_f64(curves.centroid_gap(i)),
            fmt_f64(curves.residual_sum[i])
        );
        let bounds = match envelopes {
            Some(e) => format!("{},{}", fmt_f64(e.wc[i]), fmt_f64(e.we_sum[i])),
            None => ",".to_string(),
        };
        for k in 0..curves.n_agents {
            let _ = writeln!(
                out,
                "{i},{k},{},{},{shared},{bounds}",
                fmt_f64(curves.agent_mse(i, k)),
                fmt_f64(curves.agent_mse_se(i, k))
            );
        }
    }
    out
}

/// Phase segmentation and verdicts of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub strategy: String,
    pub n_agents: usize,
    pub dim: usize,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub phases: PhaseReport,
    pub verdicts: VerdictTable,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn new(
        strategy: &str,
        seed: u64,
        curves: &LearningCurves,
        phases: PhaseReport,
        verdicts: VerdictTable,
    ) -> Self {
        ExperimentReport {
            schema: SCHEMA.into(),
            strategy: strategy.into(),
            n_agents: curves.n_agents,
            dim: curves.dim,
            horizon: curves.horizon,
            trials: curves.trials,
            seed,
            passed: verdicts.passed(),
            phases,
            verdicts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
