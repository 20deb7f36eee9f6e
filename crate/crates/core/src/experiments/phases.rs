//! Geometric rate fitting and segmentation of learning curves into phases.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::monte_carlo::LearningCurves;
use crate::analysis::TheoryBundle;
use crate::error::{Error, Result};

/// Minimum number of points accepted by [`fit_rate`].
pub const MIN_FIT_WINDOW: usize = 10;

/// Tail ratio below which a still-decaying curve is reported.
pub const TAIL_RATIO_LIMIT: f64 = 0.999;

/// Multiple of the residual floor that ends Phase I.
pub const PHASE1_FLOOR_FACTOR: f64 = 4.0;

/// Fraction of the initial residual energy that also ends Phase I.
pub const PHASE1_RELATIVE_DROP: f64 = 1e-4;

/// Multiple of the steady-state MSE that ends Phase II.
pub const PHASE2_STEADY_FACTOR: f64 = 2.0;

/// Result of a log-linear least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Per-iteration geometric ratio `exp(slope)`.
    pub ratio: f64,
    pub r_squared: f64,
    /// Standard error of the fitted log-slope.
    pub slope_se: f64,
}

/// Fits `log(curve[i]) ≈ a + i log(r)` over `window` and returns `r`.
pub fn fit_rate(curve: &[f64], window: Range<usize>) -> Result<RateFit> {
    if window.end > curve.len() || window.start >= window.end {
        return Err(Error::InvalidArgument(format!(
            "fit window {}..{} is outside a curve of length {}",
            window.start,
            window.end,
            curve.len()
        )));
    }
    let n = window.len();
    if n < MIN_FIT_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "fit window has {n} points, at least {MIN_FIT_WINDOW} required"
        )));
    }
    let mut logs = Vec::with_capacity(n);
    for i in window.clone() {
        let v = curve[i];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!(
                "curve value {v} at index {i} is not positive"
            )));
        }
        logs.push(v.ln());
    }
    let nf = n as f64;
    let x_mean = (window.start + window.end - 1) as f64 / 2.0;
    let y_mean = logs.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (j, &y) in logs.iter().enumerate() {
        let dx = (window.start + j) as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (j, &y) in logs.iter().enumerate() {
        let dx = (window.start + j) as f64 - x_mean;
        let fit = y_mean + slope * dx;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot > 1e-24 * nf * (1.0 + y_mean * y_mean) {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    let slope_se = (ss_res / (nf - 2.0) / sxx).sqrt();
    Ok(RateFit {
        ratio: slope.exp(),
        r_squared,
        slope_se,
    })
}

/// Phase boundaries, fitted rates and steady-state levels of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase1_end: usize,
    pub phase2_end: usize,
    /// Ratio of the residual energy over `[0, phase1_end]`, when that window is long enough.
    pub fitted_rate_phase1: Option<RateFit>,
    /// Ratio of the network MSE above its floor over `[phase1_end, phase2_end]`.
    pub fitted_rate_phase2: Option<RateFit>,
    pub steady_state_mse: Vec<f64>,
    pub steady_state_mse_avg: f64,
    /// Tail mean of `1^T E P[w_{e,i}]`.
    pub residual_floor: f64,
    /// Fit of the network MSE over the tail window, when it has enough points.
    pub tail_fit: Option<RateFit>,
    pub predicted_rate_phase1: f64,
    pub predicted_rate_phase2: f64,
}

fn fit_positive_prefix(series: &[f64], start: usize, end_inclusive: usize) -> Option<RateFit> {
    let stop = (start..=end_inclusive)
        .find(|&i| !(series[i] > 0.0))
        .unwrap_or(end_inclusive + 1);
    if stop - start < MIN_FIT_WINDOW {
        return None;
    }
    fit_rate(series, start..stop).ok()
}

pub fn detect_phases(curves: &LearningCurves, bundle: &TheoryBundle) -> Result<PhaseReport> {
    if bundle.n_agents != curves.n_agents || bundle.dim != curves.dim {
        return Err(Error::InvalidArgument(
            "curves and bundle describe different networks".into(),
        ));
    }
    let t = curves.horizon;
    let tail = curves.tail_start..t + 1;
    let tail_fit = if tail.len() >= MIN_FIT_WINDOW
        && curves.network_mse[tail.clone()].iter().all(|&v| v > 0.0)
    {
        Some(fit_rate(&curves.network_mse, tail.clone())?)
    } else {
        None
    };
    if let Some(fit) = tail_fit {
        let upper = (fit.ratio.ln() + 3.0 * fit.slope_se).exp();
        if upper < TAIL_RATIO_LIMIT {
            return Err(Error::HorizonInsufficient(format!(
                "network MSE still decays over the last 10% of {t} iterations (ratio {:.6}); increase the horizon",
                fit.ratio
            )));
        }
    }

    let steady_state_mse = curves.steady_state_mse();
    let steady_state_mse_avg = steady_state_mse.iter().sum::<f64>() / steady_state_mse.len() as f64;
    let residual_floor = curves.tail_mean(&curves.residual_sum);
    let e0 = curves.residual_sum[0];
    let phase1_end = if e0 <= 0.0 {
        0
    } else {
        let threshold = (PHASE1_FLOOR_FACTOR * residual_floor).max(PHASE1_RELATIVE_DROP * e0);
        (0..=t)
            .find(|&i| curves.residual_sum[i] <= threshold)
            .unwrap_or(t)
    };
    let phase2_end = (phase1_end..=t)
        .find(|&i| curves.ref_mse[i] <= PHASE2_STEADY_FACTOR * steady_state_mse_avg)
        .unwrap_or(t);

    let fitted_rate_phase1 = fit_positive_prefix(&curves.residual_sum, 0, phase1_end);
    let excess: Vec<f64> = curves
        .network_mse
        .iter()
        .map(|v| v - steady_state_mse_avg)
        .collect();
    let fitted_rate_phase2 = fit_positive_prefix(&excess, phase1_end, phase2_end);

    Ok(PhaseReport {
        phase1_end,
        phase2_end,
        fitted_rate_phase1,
        fitted_rate_phase2,
        steady_state_mse,
        steady_state_mse_avg,
        residual_floor,
        tail_fit,
        predicted_rate_phase1: bundle.rate_phase1,
        predicted_rate_phase2: bundle.rate_phase2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_geometric_sequence() {
        let c: Vec<f64> = (0..200).map(|i| 0.95f64.powi(i)).collect();
        let f = fit_rate(&c, 0..200).unwrap();
        assert!((f.ratio - 0.95).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn floor_trimmed_window() {
        let r: f64 = 0.9;
        let c_floor = 1e-8;
        let c: Vec<f64> = (0..400).map(|i| c_floor + r.powi(i)).collect();
        let end = (0..400usize)
            .find(|&i| r.powi(i as i32) <= 100.0 * c_floor)
            .unwrap();
        let f = fit_rate(&c, 0..end).unwrap();
        assert!((f.ratio - r).abs() / r < 0.02);
    }

    #[test]
    fn constant_sequence_has_unit_ratio() {
        let c = vec![3.0; 50];
        let f = fit_rate(&c, 0..50).unwrap();
        assert!((f.ratio - 1.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn rejects_bad_windows() {
        let c = vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert!(matches!(fit_rate(&c, 0..11), Err(Error::Domain(_))));
        assert!(matches!(
            fit_rate(&c, 2..11),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fit_rate(&c, 0..12),
            Err(Error::InvalidArgument(_))
        ));
    }
}
