//! Non-asymptotic envelopes on the centroid-gap and residual energies.
//!
//! ```text
//! E‖w̌_{c,i}‖²  <= mu h_c(mu) 1^T sum_{j<i} gamma_c^{i-1-j} Γ_e^j W_{e,0} + floor_c
//! E P[w_{e,i}] ⪯  Γ_e^i W_{e,0} + floor_e
//! ```
//!
//! The sum equals `(gamma_c I - Γ_e)^{-1} (gamma_c^i I - Γ_e^i)` but has no
//! singularity when `gamma_c` meets an eigenvalue of `Γ_e`. The floors keep
//! only the leading `O(mu)` and `O(mu²)` terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bundle::TheoryBundle;
use super::operators::EnergyVector;
use crate::error::{Error, Result};

/// Envelope sequences for `i = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    /// Bound on `E‖w̌_{c,i}‖²`.
    pub wc: Vec<f64>,
    /// Bound on `E P[w_{e,i}]`, one vector of length `N-1` per iteration.
    pub we: Vec<Vec<f64>>,
    /// Bound on `1^T E P[w_{e,i}]`.
    pub we_sum: Vec<f64>,
    pub floor_c: f64,
    pub floor_e: Vec<f64>,
    /// Whether `rho(Γ) < 1`, the condition under which the envelopes are proven.
    pub valid: bool,
}

/// `(I - Γ_e)^{-1} b` by back substitution.
fn solve_i_minus_gamma_e(ge: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    for r in (0..n).rev() {
        let mut acc = b[r];
        if r + 1 < n {
            acc += ge[(r, r + 1)] * x[r + 1];
        }
        x[r] = acc / (1.0 - ge[(r, r)]);
    }
    x
}

/// Leading-order floors `(floor_c, floor_e)` of the two envelopes.
pub fn envelope_floors(bundle: &TheoryBundle, w_e0: &EnergyVector) -> Result<(f64, DVector<f64>)> {
    let l = bundle.n_agents - 1;
    if w_e0.len() != l {
        return Err(Error::InvalidArgument(format!(
            "residual energy has {} entries, expected {l}",
            w_e0.len()
        )));
    }
    let mu = bundle.mu_max;
    let ll = bundle.lambda_l;
    let transient = solve_i_minus_gamma_e(&bundle.gamma_e, &w_e0.values).sum();
    let coupling = bundle.psi0 * (ll + bundle.h_c_zero) * transient;
    let floor_c = mu * (coupling + bundle.b_vc * ll) / (ll * ll);
    let ones = DVector::from_element(l, 1.0);
    let floor_e = solve_i_minus_gamma_e(&bundle.gamma_e, &ones)
        * (mu * mu * (coupling + bundle.b_ve * ll) / ll);
    Ok((floor_c, floor_e))
}

pub fn bound_envelopes(
    bundle: &TheoryBundle,
    w_e0: &EnergyVector,
    horizon: usize,
) -> Result<Envelopes> {
    let (floor_c, floor_e) = envelope_floors(bundle, w_e0)?;
    let gc = bundle.gamma_c;
    let scale = bundle.mu_max * bundle.h_c_mu;
    let ge = &bundle.gamma_e;

    let mut wc = Vec::with_capacity(horizon + 1);
    let mut we = Vec::with_capacity(horizon + 1);
    let mut we_sum = Vec::with_capacity(horizon + 1);
    let mut power = w_e0.values.clone();
    let mut acc = 0.0;
    for _ in 0..=horizon {
        wc.push(scale * acc + floor_c);
        let e = &power + &floor_e;
        we_sum.push(e.sum());
        we.push(e.as_slice().to_vec());
        acc = gc * acc + power.sum();
        power = ge * power;
    }
    Ok(Envelopes {
        wc,
        we,
        we_sum,
        floor_c,
        floor_e: floor_e.as_slice().to_vec(),
        valid: bundle.gamma_stable(),
    })
}

/// The centroid-gap transient term in resolvent form,
/// `mu h_c 1^T (gamma_c I - Γ_e)^{-1} (gamma_c^i I - Γ_e^i) W_{e,0}`.
/// When `gamma_c` is within `1e-12` of `|lambda_2|`, it is shifted by `1e-9`.
pub fn resolvent_transient(bundle: &TheoryBundle, w_e0: &EnergyVector, i: usize) -> Result<f64> {
    let l = bundle.n_agents - 1;
    let mut gc = bundle.gamma_c;
    if (gc - bundle.lambda2_mag).abs() < 1e-12 {
        gc += 1e-9;
    }
    let ge = &bundle.gamma_e;
    let mut ge_pow = DMatrix::identity(l, l);
    for _ in 0..i {
        ge_pow = ge * ge_pow;
    }
    let lhs = DMatrix::identity(l, l) * gc - ge;
    let rhs = (DMatrix::identity(l, l) * gc.powi(i as i32) - ge_pow) * &w_e0.values;
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("resolvent is singular".into()))?;
    Ok(bundle.mu_max * bundle.h_c_mu * x.sum())
}

/// Half-width of the band around the reference MSE for agent `k`:
/// `2 Wc + 2 ‖u_{L,k}‖² We + 2 ‖w̃_{c,i}‖ (sqrt(Wc) + ‖u_{L,k}‖ sqrt(We))`,
/// with `Wc`, `We` the envelope values at iteration `i`.
pub fn agent_band(wc: f64, we_sum: f64, ref_error_norm: f64, u_row_norm: f64) -> f64 {
    let u2 = u_row_norm * u_row_norm;
    2.0 * wc + 2.0 * u2 * we_sum + 2.0 * ref_error_norm * (wc.sqrt() + u_row_norm * we_sum.sqrt())
}
