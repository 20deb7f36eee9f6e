//! Eigen-structure of the combination product `A`.
//!
//! `A^T = U D U^{-1}` with `U = [1 | U_L]`, `U^{-1} = [theta^T ; U_R]` and
//! `D = diag(1, D_{N-1})`. The residual block is required to be diagonalizable;
//! defective products are rejected instead of being approximated by a Jordan form.

use nalgebra::{DMatrix, DVector};

use super::policy::check_left_stochastic;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Complex64};

/// Residual eigenvalues closer than this are treated as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-6;
/// A cluster of multiplicity `m` must have `m` singular values of `A^T - lambda I` below this.
const NULL_TOL: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e8;
const UNIT_GAP: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralSplit {
    theta: DVector<f64>,
    u_left: CMatrix,
    u_right: CMatrix,
    residual_block: CMatrix,
    residual_eigenvalues: Vec<Complex64>,
    lambda2_mag: f64,
    condition: f64,
}

impl SpectralSplit {
    /// Perron vector: `A theta = theta`, `1^T theta = 1`.
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// `N × (N-1)`, columns are unit-norm eigenvectors of `A^T`.
    pub fn u_left(&self) -> &CMatrix {
        &self.u_left
    }

    /// `(N-1) × N`, the lower rows of `U^{-1}`.
    pub fn u_right(&self) -> &CMatrix {
        &self.u_right
    }

    /// `U_R A^T U_L`; diagonal up to rounding.
    pub fn residual_block(&self) -> &CMatrix {
        &self.residual_block
    }

    pub fn residual_eigenvalues(&self) -> &[Complex64] {
        &self.residual_eigenvalues
    }

    /// `|lambda_2(A)|`, zero for a single agent.
    pub fn lambda2_mag(&self) -> f64 {
        self.lambda2_mag
    }

    pub fn n_agents(&self) -> usize {
        self.theta.len()
    }

    /// Condition number of the eigenvector matrix `U`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Euclidean norm of row `k` of `U_L`, i.e. `||u_{L,k} ⊗ I_M||`.
    pub fn u_left_row_norm(&self, k: usize) -> f64 {
        self.u_left
            .row(k)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `U = [1 | U_L]`.
    pub fn basis(&self) -> CMatrix {
        let n = self.n_agents();
        let mut u = CMatrix::zeros(n, n);
        for r in 0..n {
            u[(r, 0)] = Complex64::new(1.0, 0.0);
            for c in 1..n {
                u[(r, c)] = self.u_left[(r, c - 1)];
            }
        }
        u
    }

    /// `U^{-1} = [theta^T ; U_R]`.
    pub fn inverse_basis(&self) -> CMatrix {
        let n = self.n_agents();
        let mut v = CMatrix::zeros(n, n);
        for c in 0..n {
            v[(0, c)] = Complex64::new(self.theta[c], 0.0);
            for r in 1..n {
                v[(r, c)] = self.u_right[(r - 1, c)];
            }
        }
        v
    }

    /// Rebuilds `A^T` from the factors.
    pub fn reconstruct_transpose(&self) -> CMatrix {
        let n = self.n_agents();
        let mut d = CMatrix::zeros(n, n);
        d[(0, 0)] = Complex64::new(1.0, 0.0);
        for r in 1..n {
            for c in 1..n {
                d[(r, c)] = self.residual_block[(r - 1, c - 1)];
            }
        }
        self.basis() * d * self.inverse_basis()
    }
}

pub fn spectral_split(a: &DMatrix<f64>) -> Result<SpectralSplit> {
    check_left_stochastic(a)?;
    let n = a.nrows();
    if n == 1 {
        return Ok(SpectralSplit {
            theta: DVector::from_element(1, 1.0),
            u_left: CMatrix::zeros(1, 0),
            u_right: CMatrix::zeros(0, 1),
            residual_block: CMatrix::zeros(0, 0),
            residual_eigenvalues: Vec::new(),
            lambda2_mag: 0.0,
            condition: 1.0,
        });
    }

    let at = a.transpose();
    let mut eigs = linalg::eigenvalues(&at)?;
    let unit_idx = eigs
        .iter()
        .enumerate()
        .min_by(|x, y| {
            (x.1 - Complex64::new(1.0, 0.0))
                .norm()
                .total_cmp(&(y.1 - Complex64::new(1.0, 0.0)).norm())
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("no eigenvalues".into()))?;
    eigs.remove(unit_idx);
    let lambda2_mag = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if lambda2_mag >= 1.0 - UNIT_GAP {
        return Err(Error::IllConditionedSpectrum {
            magnitude: lambda2_mag,
        });
    }

    let theta = perron_vector(a)?;

    // Sort residual eigenvalues by decreasing magnitude, then cluster repeats.
    eigs.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.im.total_cmp(&x.im)));
    let at_c = linalg::to_complex(&at);
    let mut columns: Vec<DVector<Complex64>> = Vec::with_capacity(n - 1);
    let mut used = vec![false; eigs.len()];
    for i in 0..eigs.len() {
        if used[i] {
            continue;
        }
        let members: Vec<usize> = (i..eigs.len())
            .filter(|&j| !used[j] && (eigs[j] - eigs[i]).norm() < CLUSTER_TOL)
            .collect();
        for &j in &members {
            used[j] = true;
        }
        let center = members.iter().map(|&j| eigs[j]).sum::<Complex64>() / members.len() as f64;
        let shifted = &at_c - CMatrix::identity(n, n) * center;
        let (basis, sv) = linalg::near_null_space(&shifted, members.len())?;
        let worst = sv[members.len() - 1];
        if worst > NULL_TOL {
            return Err(Error::Defective {
                condition: f64::INFINITY,
            });
        }
        for c in 0..basis.ncols() {
            columns.push(normalize_phase(basis.column(c).into_owned()));
        }
    }

    let mut u = CMatrix::zeros(n, n);
    for r in 0..n {
        u[(r, 0)] = Complex64::new(1.0, 0.0);
    }
    for (c, col) in columns.iter().enumerate() {
        u.set_column(c + 1, col);
    }
    let condition = linalg::condition_number(&u);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Defective { condition });
    }
    let u_inv = u
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix is singular".into()))?;

    let u_left = u.columns(1, n - 1).into_owned();
    let u_right = u_inv.rows(1, n - 1).into_owned();
    let residual_block = &u_right * &at_c * &u_left;

    Ok(SpectralSplit {
        theta,
        u_left,
        u_right,
        residual_block,
        residual_eigenvalues: eigs,
        lambda2_mag,
        condition,
    })
}

/// Right eigenvector of `A` at eigenvalue one, normalized to sum to one.
pub fn perron_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let shifted = linalg::to_complex(&(a - DMatrix::identity(n, n)));
    let (basis, sv) = linalg::near_null_space(&shifted, 1)?;
    if sv[0] > NULL_TOL {
        return Err(Error::Numerical(format!(
            "no unit eigenvalue found (smallest singular value {:.3e})",
            sv[0]
        )));
    }
    let v = normalize_phase(basis.column(0).into_owned());
    let mut theta = DVector::from_fn(n, |k, _| v[k].re);
    let s = theta.sum();
    if s == 0.0 {
        return Err(Error::Numerical("Perron vector sums to zero".into()));
    }
    theta /= s;
    if theta.iter().any(|&t| t < -1e-12) {
        return Err(Error::NotPrimitive(
            "Perron vector has negative entries".into(),
        ));
    }
    Ok(theta)
}

/// Unit norm, with the largest-magnitude entry rotated onto the positive real axis.
fn normalize_phase(mut v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = *z * phase / norm;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, make_policy, PolicyRule, TopologyKind};

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn check_invariants(s: &SpectralSplit, a: &DMatrix<f64>) {
        let n = s.n_agents();
        let at = a * s.theta();
        assert!((at - s.theta()).amax() < 1e-10);
        assert!((s.theta().sum() - 1.0).abs() < 1e-10);
        let theta_c = linalg::to_complex(&DMatrix::from_column_slice(1, n, s.theta().as_slice()));
        assert!(max_abs(&(theta_c * s.u_left())) < 1e-8);
        let ones = CMatrix::from_element(n, 1, Complex64::new(1.0, 0.0));
        assert!(max_abs(&(s.u_right() * ones)) < 1e-8);
        let eye = CMatrix::identity(n - 1, n - 1);
        assert!(max_abs(&(s.u_right() * s.u_left() - eye)) < 1e-8);
        assert!(s.lambda2_mag() < 1.0);
        let recon = s.reconstruct_transpose() - linalg::to_complex(&a.transpose());
        assert!(max_abs(&recon) < 1e-8);
    }

    #[test]
    fn doubly_stochastic_theta_uniform() {
        let t = build_topology(&TopologyKind::Ring, 6, 0).unwrap();
        let a = make_policy(&t, &PolicyRule::Metropolis).unwrap();
        let s = spectral_split(&a).unwrap();
        for &th in s.theta().iter() {
            assert!((th - 1.0 / 6.0).abs() < 1e-12);
        }
        check_invariants(&s, &a);
    }

    #[test]
    fn single_agent() {
        let s = spectral_split(&DMatrix::identity(1, 1)).unwrap();
        assert_eq!(s.theta().as_slice(), &[1.0]);
        assert_eq!(s.lambda2_mag(), 0.0);
        assert_eq!(s.u_left().ncols(), 0);
        assert_eq!(s.u_right().nrows(), 0);
    }

    #[test]
    fn two_by_two_closed_form() {
        // columns (0.5, 0.5) and (0.25, 0.75)
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75]);
        let s = spectral_split(&a).unwrap();
        assert!((s.theta()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.theta()[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.lambda2_mag() - 0.25).abs() < 1e-12);
        check_invariants(&s, &a);
    }

    #[test]
    fn repeated_residual_eigenvalues() {
        // uniform averaging on a complete graph: all residual eigenvalues are zero
        let t = build_topology(&TopologyKind::Complete, 5, 0).unwrap();
        let a = make_policy(&t, &PolicyRule::UniformAveraging).unwrap();
        let s = spectral_split(&a).unwrap();
        assert!(s.lambda2_mag() < 1e-12);
        check_invariants(&s, &a);
    }

    #[test]
    fn complex_residual_eigenvalues() {
        // a left-stochastic matrix with a rotation-like residual part
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.1, 0.6, 0.6, 0.2, 0.1, 0.2, 0.7, 0.3]);
        let s = spectral_split(&a).unwrap();
        assert!(s.residual_eigenvalues().iter().any(|z| z.im.abs() > 1e-3));
        check_invariants(&s, &a);
    }

    #[test]
    fn periodic_matrix_rejected() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            spectral_split(&swap),
            Err(Error::IllConditionedSpectrum { .. })
        ));
    }

    #[test]
    fn defective_matrix_rejected() {
        // columns sum to one; eigenvalue 0.5 has algebraic multiplicity 2 and a
        // single eigenvector
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 1.0]);
        check_left_stochastic(&a).unwrap();
        assert!(matches!(spectral_split(&a), Err(Error::Defective { .. })));
    }
}
