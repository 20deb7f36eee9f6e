//! Pass/fail comparison of measured curves against the theoretical predictions.

use serde::{Deserialize, Serialize};

use super::monte_carlo::LearningCurves;
use super::phases::PhaseReport;
use crate::analysis::{agent_band, bound_envelopes, EnergyVector, Envelopes, TheoryBundle};
use crate::error::{Error, Result};

/// Tolerances used by [`compare_to_theory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOptions {
    /// Additive tolerance on the Phase I rate.
    pub rate1_tolerance: f64,
    /// Relative tolerance on the Phase II rate.
    pub rate2_relative: f64,
    /// Monte Carlo standard errors added to every band.
    pub mc_sigmas: f64,
    /// Multiplicative slack on the leading-order envelopes.
    pub envelope_slack: f64,
    /// Accepted range of the steady-state MSE ratio between `mu` and `mu/2`.
    pub scaling_range: (f64, f64),
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            rate1_tolerance: 0.02,
            rate2_relative: 0.05,
            mc_sigmas: 3.0,
            envelope_slack: 0.25,
            scaling_range: (1.6, 2.4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The row does not apply to this experiment (for example a Phase I window
    /// too short to fit, or no companion run).
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub predicted: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictTable {
    pub rows: Vec<Verdict>,
}

impl VerdictTable {
    /// True when no row failed.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != Status::Fail)
    }

    pub fn failures(&self) -> Vec<&Verdict> {
        self.rows
            .iter()
            .filter(|r| r.status == Status::Fail)
            .collect()
    }

    pub fn row(&self, id: &str) -> Option<&Verdict> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// Envelopes seeded with the measured `E P[w_{e,0}]` over the curve horizon.
pub fn curve_envelopes(curves: &LearningCurves, bundle: &TheoryBundle) -> Result<Envelopes> {
    let w_e0 = EnergyVector {
        values: nalgebra::DVector::from_column_slice(curves.residual(0)),
    };
    bound_envelopes(bundle, &w_e0, curves.horizon)
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Evaluates rows (a) to (e). `companion` is the phase report of a run at half
/// the step size; without it row (e) is skipped.
pub fn compare_to_theory(
    report: &PhaseReport,
    curves: &LearningCurves,
    bundle: &TheoryBundle,
    companion: Option<&PhaseReport>,
    opts: &ComparisonOptions,
) -> Result<VerdictTable> {
    if bundle.n_agents != curves.n_agents || report.steady_state_mse.len() != curves.n_agents {
        return Err(Error::InvalidArgument(
            "report, curves and bundle describe different networks".into(),
        ));
    }
    let env = curve_envelopes(curves, bundle)?;
    let mut rows = Vec::with_capacity(5);

    rows.push(match report.fitted_rate_phase1 {
        Some(fit) => {
            let limit = bundle.lambda2_mag + opts.rate1_tolerance;
            Verdict {
                id: "a".into(),
                name: "phase I rate".into(),
                status: status(fit.ratio <= limit),
                measured: Some(fit.ratio),
                predicted: Some(bundle.lambda2_mag),
                detail: format!(
                    "fitted residual-energy ratio {:.5} <= |lambda_2| + {} = {limit:.5}",
                    fit.ratio, opts.rate1_tolerance
                ),
            }
        }
        None => skipped(
            "a",
            "phase I rate",
            "phase I window shorter than the minimum fit length",
        ),
    });

    rows.push(match report.fitted_rate_phase2 {
        Some(fit) => {
            let rel = (fit.ratio - bundle.rate_phase2).abs() / bundle.rate_phase2;
            Verdict {
                id: "b".into(),
                name: "phase II rate".into(),
                status: status(rel <= opts.rate2_relative),
                measured: Some(fit.ratio),
                predicted: Some(bundle.rate_phase2),
                detail: format!(
                    "fitted {:.6} vs predicted {:.6}, relative deviation {rel:.3e} (limit {})",
                    fit.ratio, bundle.rate_phase2, opts.rate2_relative
                ),
            }
        }
        None => skipped(
            "b",
            "phase II rate",
            "phase II window shorter than the minimum fit length",
        ),
    });

    rows.push(if report.phase2_end > report.phase1_end {
        let slack = 1.0 + opts.envelope_slack;
        let mut worst: f64 = 0.0;
        let mut worst_at = (0, 0);
        for i in report.phase1_end..=report.phase2_end {
            let ref_norm = curves.ref_mse[i].sqrt();
            for k in 0..curves.n_agents {
                let band = agent_band(
                    slack * env.wc[i],
                    slack * env.we_sum[i],
                    ref_norm,
                    bundle.u_left_row_norms[k],
                ) + opts.mc_sigmas * curves.agent_mse_se(i, k);
                let gap = (curves.agent_mse(i, k) - curves.ref_mse[i]).abs();
                let ratio = if band > 0.0 {
                    gap / band
                } else if gap > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio > worst {
                    worst = ratio;
                    worst_at = (i, k);
                }
            }
        }
        Verdict {
            id: "c".into(),
            name: "agent MSE tracks reference".into(),
            status: status(worst <= 1.0),
            measured: Some(worst),
            predicted: Some(1.0),
            detail: format!(
                "max |MSE_k - ref| / band over phase II is {worst:.3e} (iteration {}, agent {})",
                worst_at.0, worst_at.1
            ),
        }
    } else {
        skipped(
            "c",
            "agent MSE tracks reference",
            "phase II window is empty",
        )
    });

    {
        let slack = 1.0 + opts.envelope_slack;
        let mut worst: f64 = 0.0;
        let mut worst_at = 0;
        for i in 0..=curves.horizon {
            let gap_limit = slack * env.wc[i] + opts.mc_sigmas * curves.centroid_gap_se(i);
            let res_limit = slack * env.we_sum[i] + opts.mc_sigmas * curves.residual_sum_se[i];
            for (value, limit) in [
                (curves.centroid_gap(i), gap_limit),
                (curves.residual_sum[i], res_limit),
            ] {
                let ratio = if limit > 0.0 {
                    value / limit
                } else if value > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio > worst {
                    worst = ratio;
                    worst_at = i;
                }
            }
        }
        rows.push(Verdict {
            id: "d".into(),
            name: "energy envelopes".into(),
            status: status(worst <= 1.0),
            measured: Some(worst),
            predicted: Some(1.0),
            detail: format!(
                "max measured / envelope is {worst:.3e} at iteration {worst_at}; rho(Gamma) {} 1",
                if env.valid { "<" } else { ">=" }
            ),
        });
    }

    rows.push(match companion {
        Some(half) => {
            let ratio = report.steady_state_mse_avg / half.steady_state_mse_avg;
            let (lo, hi) = opts.scaling_range;
            Verdict {
                id: "e".into(),
                name: "steady-state O(mu) scaling".into(),
                status: status(ratio >= lo && ratio <= hi),
                measured: Some(ratio),
                predicted: Some(2.0),
                detail: format!("MSE(mu) / MSE(mu/2) = {ratio:.4}, accepted range [{lo}, {hi}]"),
            }
        }
        None => skipped(
            "e",
            "steady-state O(mu) scaling",
            "no companion run at mu/2",
        ),
    });

    Ok(VerdictTable { rows })
}

fn skipped(id: &str, name: &str, why: &str) -> Verdict {
    Verdict {
        id: id.into(),
        name: name.into(),
        status: Status::Skipped,
        measured: None,
        predicted: None,
        detail: why.into(),
    }
}
