//! Network basis transform and error decomposition.
//!
//! With `U^{-1} = [theta^T ; U_R]`, the state splits into the centroid
//! `w_c = sum_k theta_k w_k` and the residual `w_e = (U_R ⊗ I) w`, and
//! `w = 1 ⊗ w_c + (U_L ⊗ I) w_e`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{CVector, Complex64};
use crate::network::SpectralSplit;
use crate::strategies::{NetworkState, ReferenceState};

/// Centroid and residual coordinates of a network state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub w_c: DVector<f64>,
    /// `(N-1)M` complex entries, block `j` belongs to residual mode `j`.
    pub w_e: CVector,
}

pub fn transform(state: &NetworkState, split: &SpectralSplit) -> Result<Transformed> {
    let n = state.n_agents();
    let m = state.dim();
    if split.n_agents() != n {
        return Err(Error::InvalidArgument(
            "spectral split does not match the number of agents".into(),
        ));
    }
    let theta = split.theta();
    let mut w_c = DVector::zeros(m);
    for k in 0..n {
        for (d, x) in w_c.iter_mut().zip(state.block(k)) {
            *d += theta[k] * x;
        }
    }
    let ur = split.u_right();
    let mut w_e = CVector::zeros((n - 1) * m);
    for j in 0..n - 1 {
        for k in 0..n {
            let c = ur[(j, k)];
            for (d, x) in state.block(k).iter().enumerate() {
                w_e[j * m + d] += c * *x;
            }
        }
    }
    Ok(Transformed { w_c, w_e })
}

/// `w = 1 ⊗ w_c + (U_L ⊗ I) w_e`, returned as complex blocks (imaginary parts
/// vanish up to rounding for real states).
pub fn inverse_transform(t: &Transformed, split: &SpectralSplit) -> Vec<CVector> {
    let n = split.n_agents();
    let m = t.w_c.len();
    let ul = split.u_left();
    (0..n)
        .map(|k| {
            let mut b = t.w_c.map(|x| Complex64::new(x, 0.0));
            for j in 0..n - 1 {
                let c = ul[(k, j)];
                for d in 0..m {
                    b[d] += c * t.w_e[j * m + d];
                }
            }
            b
        })
        .collect()
}

/// The three error pieces of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorComponents {
    /// `w̃_{c,i} = w° - w̄_{c,i}`.
    pub ref_error: DVector<f64>,
    /// `w̌_{c,i} = w_{c,i} - w̄_{c,i}`.
    pub centroid_gap: DVector<f64>,
    /// `w_{e,i}`.
    pub residual: CVector,
}

impl ErrorComponents {
    /// `w̃_{k,i} = w̃_{c,i} - w̌_{c,i} - (u_{L,k} ⊗ I) w_{e,i}`.
    pub fn agent_error(&self, k: usize, split: &SpectralSplit) -> CVector {
        let m = self.ref_error.len();
        let ul = split.u_left();
        let mut e = (&self.ref_error - &self.centroid_gap).map(|x| Complex64::new(x, 0.0));
        for j in 0..split.n_agents() - 1 {
            let c = ul[(k, j)];
            for d in 0..m {
                e[d] -= c * self.residual[j * m + d];
            }
        }
        e
    }
}

pub fn error_components(
    state: &NetworkState,
    reference: &ReferenceState,
    split: &SpectralSplit,
    w_o: &DVector<f64>,
) -> Result<ErrorComponents> {
    if state.iteration() != reference.iteration {
        return Err(Error::InvalidArgument(format!(
            "state is at iteration {} but the reference is at {}",
            state.iteration(),
            reference.iteration
        )));
    }
    if w_o.len() != state.dim() || reference.w_bar.len() != state.dim() {
        return Err(Error::InvalidArgument(
            "dimension mismatch in error_components".into(),
        ));
    }
    let t = transform(state, split)?;
    let out = ErrorComponents {
        ref_error: w_o - &reference.w_bar,
        centroid_gap: &t.w_c - &reference.w_bar,
        residual: t.w_e,
    };
    #[cfg(debug_assertions)]
    for k in 0..state.n_agents() {
        let direct = w_o - state.block_vector(k);
        let rebuilt = out.agent_error(k, split);
        let scale = 1.0 + direct.norm();
        let gap = (0..state.dim())
            .map(|d| (rebuilt[d] - direct[d]).norm())
            .fold(0.0, f64::max);
        debug_assert!(
            gap <= 1e-8 * scale,
            "reconstruction mismatch {gap:e} at agent {k}"
        );
    }
    Ok(out)
}
