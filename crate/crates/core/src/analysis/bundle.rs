//! Theoretical quantities of the transient analysis.
//!
//! The energy vector `col{E‖w̌_{c,i}‖², E P[w_{e,i}]}` obeys
//! `W_i ⪯ Γ W_{i-1} + mu² b_v` with
//!
//! ```text
//! Γ   = Γ_0 + mu² psi_0 1 1^T
//! Γ_0 = [ gamma_c   mu h_c(mu) 1^T ]
//!       [ 0         Γ_e            ]
//! ```
//!
//! where `Γ_e` is upper bidiagonal with `|lambda_2(A)|` on the diagonal and
//! `2 / (1 - |lambda_2(A)|)` above it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::operators::kron_norm_matrix;
use crate::error::{Error, Result};
use crate::linalg::{self, to_complex, PerronRoot};
use crate::models::{hessian_bundle, AgentModel, RegularityConstants};
use crate::network::{CombinationMatrices, SpectralSplit};
use crate::serde_util;
use crate::strategies::aggregate_update;

pub const DEFAULT_RATE_EPSILON: f64 = 1e-3;

/// `gamma_c = 1 - mu lambda_L + mu² ‖p‖_1² lambda_U² / 2`.
pub fn gamma_c(mu_max: f64, consts: &RegularityConstants, p_l1: f64) -> f64 {
    1.0 - mu_max * consts.lambda_l
        + 0.5 * mu_max * mu_max * p_l1 * p_l1 * consts.lambda_u * consts.lambda_u
}

/// Largest step-size for which the reference recursion contracts: `2 lambda_L / (‖p‖_1² lambda_U²)`.
pub fn reference_step_bound(consts: &RegularityConstants, p_l1: f64) -> f64 {
    2.0 * consts.lambda_l / (p_l1 * p_l1 * consts.lambda_u * consts.lambda_u)
}

/// `h_c(mu) = ‖p‖_1² K1² lambda_U² / (lambda_L - mu ‖p‖_1² lambda_U² / 2)`.
pub fn h_c(mu: f64, consts: &RegularityConstants, p_l1: f64, k1: f64) -> Result<f64> {
    let denominator = consts.lambda_l - 0.5 * mu * p_l1 * p_l1 * consts.lambda_u * consts.lambda_u;
    if denominator <= 0.0 {
        return Err(Error::StepSizeTooLarge { denominator });
    }
    Ok(p_l1 * p_l1 * k1 * k1 * consts.lambda_u * consts.lambda_u / denominator)
}

/// `(N-1) × (N-1)` upper bidiagonal matrix of the residual energy recursion.
pub fn gamma_e(n_minus_1: usize, lambda2_mag: f64) -> DMatrix<f64> {
    let off = 2.0 / (1.0 - lambda2_mag);
    DMatrix::from_fn(n_minus_1, n_minus_1, |r, c| {
        if r == c {
            lambda2_mag
        } else if c == r + 1 {
            off
        } else {
            0.0
        }
    })
}

/// Everything [`theory_bundle`] needs.
#[derive(Debug, Clone, Copy)]
pub struct TheoryInputs<'a> {
    pub factors: &'a CombinationMatrices,
    pub split: &'a SpectralSplit,
    pub consts: &'a RegularityConstants,
    pub p: &'a DVector<f64>,
    pub mu_max: f64,
    pub model: &'a AgentModel,
    pub w_o: &'a DVector<f64>,
    /// `‖w̃_{c,0}‖²` of the experiment's initialization.
    pub ref_error0_sq: f64,
    pub rate_epsilon: f64,
}

/// Derived scalars and matrices of the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryBundle {
    pub n_agents: usize,
    pub dim: usize,
    pub mu_max: f64,
    #[serde(with = "serde_util::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "serde_util::vector")]
    pub p: DVector<f64>,
    pub p_l1: f64,
    #[serde(with = "serde_util::vector")]
    pub w_o: DVector<f64>,
    pub lambda2_mag: f64,
    pub lambda_u: f64,
    pub lambda_l: f64,
    pub alpha: f64,
    pub sigma_v2: f64,
    pub ref_error0_sq: f64,
    pub gamma_c: f64,
    #[serde(with = "serde_util::rows")]
    pub gamma_e: DMatrix<f64>,
    /// `‖P̄[A1^T U_L ⊗ I]‖_∞`.
    pub k1: f64,
    /// `‖P̄[U_R A2^T ⊗ I]‖_∞`.
    pub k2: f64,
    /// `‖P̄[A^T U_L ⊗ I]‖_∞`.
    pub k_product: f64,
    pub psi0: f64,
    pub h_c_mu: f64,
    pub h_c_zero: f64,
    pub b_vc: f64,
    pub b_ve: f64,
    #[serde(with = "serde_util::vector")]
    pub g_o: DVector<f64>,
    #[serde(with = "serde_util::rows")]
    pub gamma0: DMatrix<f64>,
    #[serde(with = "serde_util::rows")]
    pub gamma: DMatrix<f64>,
    /// Collatz-Wielandt bracket of `rho(Γ)`.
    pub rho_gamma_lower: f64,
    pub rho_gamma_upper: f64,
    #[serde(with = "serde_util::rows")]
    pub h_c_matrix: DMatrix<f64>,
    pub rate_phase1: f64,
    pub rate_phase2: f64,
    pub ref_rate_lb: f64,
    pub ref_rate_ub: f64,
    pub mu_stab: f64,
    pub mu_stab_terms: [f64; 3],
    pub rate_epsilon: f64,
    /// `(mu epsilon)^{1/(2(M-1))}`, the width of the asymptotic rate correction (zero for `M = 1`).
    pub rate_correction_width: f64,
    /// `‖u_{L,k}‖` for every agent.
    pub u_left_row_norms: Vec<f64>,
}

impl TheoryBundle {
    /// `rho(Γ) < 1`, certified by the upper Collatz-Wielandt bound.
    pub fn gamma_stable(&self) -> bool {
        self.rho_gamma_upper < 1.0
    }

    pub fn rho_gamma(&self) -> f64 {
        PerronRoot {
            lower: self.rho_gamma_lower,
            upper: self.rho_gamma_upper,
        }
        .estimate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }
}

pub fn theory_bundle(inp: &TheoryInputs) -> Result<TheoryBundle> {
    let split = inp.split;
    let consts = inp.consts;
    let n = split.n_agents();
    let m = inp.model.dim();
    let mu = inp.mu_max;
    if inp.factors.n_agents() != n || inp.p.len() != n || inp.model.n_agents() != n {
        return Err(Error::InvalidArgument(
            "theory inputs have inconsistent sizes".into(),
        ));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu_max must be >= 0, got {mu}"
        )));
    }
    let p_l1: f64 = inp.p.iter().map(|x| x.abs()).sum();
    let lambda2 = split.lambda2_mag();
    let lu2 = consts.lambda_u * consts.lambda_u;
    let alpha = consts.alpha;
    let gap = 1.0 - lambda2;

    let a1t = to_complex(&inp.factors.a1.transpose());
    let a2t = to_complex(&inp.factors.a2.transpose());
    let at = to_complex(&inp.factors.product().transpose());
    let k1 = linalg::inf_norm(&kron_norm_matrix(&(&a1t * split.u_left())));
    let k2 = linalg::inf_norm(&kron_norm_matrix(&(split.u_right() * &a2t)));
    let k_product = linalg::inf_norm(&kron_norm_matrix(&(&at * split.u_left())));

    let nf = n as f64;
    let psi0 = [
        4.0 * alpha * p_l1 * p_l1,
        4.0 * alpha * p_l1 * p_l1 * k1 * k1,
        4.0 * nf * k2 * k2 * lu2 * (3.0 / gap + alpha / lu2),
        4.0 * nf * k2 * k2 * k1 * k1 * lu2 * (1.0 / gap + alpha / lu2),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let h_c_mu = h_c(mu, consts, p_l1, k1)?;
    let h_c_zero = h_c(0.0, consts, p_l1, k1)?;
    let gc = gamma_c(mu, consts, p_l1);

    let mut g_o = DVector::zeros(n);
    for k in 0..n {
        g_o[k] = inp.model.true_update(k, inp.w_o)?.norm_squared();
    }
    let g_o_inf = g_o.amax();
    let w0 = inp.ref_error0_sq;
    let wo2 = inp.w_o.norm_squared();
    let b_vc = p_l1 * p_l1 * (4.0 * alpha * (w0 + wo2) + consts.sigma_v2);
    let b_ve = nf
        * k2
        * k2
        * (12.0 * (lu2 * w0 + g_o_inf) / gap + 4.0 * alpha * (w0 + wo2) + consts.sigma_v2);

    let ge = gamma_e(n - 1, lambda2);
    let mut gamma0 = DMatrix::zeros(n, n);
    gamma0[(0, 0)] = gc;
    for c in 1..n {
        gamma0[(0, c)] = mu * h_c_mu;
    }
    gamma0.view_mut((1, 1), (n - 1, n - 1)).copy_from(&ge);
    let gamma = gamma0.add_scalar(mu * mu * psi0);
    let rho = linalg::perron_root(&gamma)?;

    let k = k_product.max(k1);
    let two_n = 2 * n as i32;
    let mu_stab_terms = [
        consts.lambda_l / (0.5 * p_l1 * p_l1 * lu2 + psi0 / 3.0 * (gap / 2.0).powi(-two_n)),
        (3.0 * gap.powi(two_n + 1) / (2f64.powi(two_n + 2) * psi0)).sqrt(),
        consts.lambda_l / (p_l1 * p_l1 * lu2 * (k * k + 0.5)),
    ];
    let mu_stab = mu_stab_terms.iter().copied().fold(f64::INFINITY, f64::min);

    let hb = hessian_bundle(inp.model, inp.p, inp.w_o)?;
    let step = DMatrix::identity(m, m) - &hb.h_c * mu;
    let rate_phase2 = linalg::spectral_radius(&step)?.powi(2);

    // Sanity check that w_o is the limit point for these weights.
    let residual = aggregate_update(inp.model, inp.p, inp.w_o)?.norm();
    let scale = consts.lambda_u * (1.0 + inp.w_o.norm());
    if residual > 1e-8 * scale {
        return Err(Error::InvalidArgument(format!(
            "w_o is not the limit point for p (residual {residual:.3e})"
        )));
    }

    let rate_correction_width = if m >= 2 {
        (mu * inp.rate_epsilon).powf(1.0 / (2.0 * (m as f64 - 1.0)))
    } else {
        0.0
    };

    Ok(TheoryBundle {
        n_agents: n,
        dim: m,
        mu_max: mu,
        theta: split.theta().clone(),
        p: inp.p.clone(),
        p_l1,
        w_o: inp.w_o.clone(),
        lambda2_mag: lambda2,
        lambda_u: consts.lambda_u,
        lambda_l: consts.lambda_l,
        alpha,
        sigma_v2: consts.sigma_v2,
        ref_error0_sq: w0,
        gamma_c: gc,
        gamma_e: ge,
        k1,
        k2,
        k_product,
        psi0,
        h_c_mu,
        h_c_zero,
        b_vc,
        b_ve,
        g_o,
        gamma0,
        gamma,
        rho_gamma_lower: rho.lower,
        rho_gamma_upper: rho.upper,
        h_c_matrix: hb.h_c,
        rate_phase1: lambda2,
        rate_phase2,
        ref_rate_lb: 1.0 - 2.0 * mu * p_l1 * consts.lambda_u,
        ref_rate_ub: gc * gc,
        mu_stab,
        mu_stab_terms,
        rate_epsilon: inp.rate_epsilon,
        rate_correction_width,
        u_left_row_norms: (0..n).map(|k| split.u_left_row_norm(k)).collect(),
    })
}
