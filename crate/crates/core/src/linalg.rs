//! Small dense linear-algebra helpers shared by the network and analysis code.
//!
//! All matrices involved are at most a few dozen rows, so these routines favor
//! clarity and robustness over asymptotic speed.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a general real square matrix (unordered).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m == &m.transpose() {
        let eig = SymmetricEigen::new(m.clone());
        return Ok(eig
            .eigenvalues
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect());
    }
    // The QR iteration can stall when eigenvalues come in pairs of equal
    // magnitude; a diagonal shift breaks the tie without changing eigenvectors.
    let scale = inf_norm(m).max(1.0);
    for shift in [0.0, 0.37, -0.61, 1.13] {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * (shift * scale);
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 100_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z - Complex64::new(shift * scale, 0.0))
                .collect());
        }
    }
    Err(Error::Numerical(
        "Schur decomposition did not converge".into(),
    ))
}

/// Largest eigenvalue magnitude of a general real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Induced 2-norm (largest singular value) of a real or complex matrix.
pub fn spectral_norm<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Ratio of largest to smallest singular value.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthonormal basis of the `dim` right-singular directions of `m` with the
/// smallest singular values, together with all singular values in ascending order.
pub(crate) fn near_null_space(m: &CMatrix, dim: usize) -> Result<(CMatrix, Vec<f64>)> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut basis = CMatrix::zeros(n, dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        for r in 0..n {
            basis[(r, col)] = v_t[(idx, r)].conj();
        }
    }
    let sorted = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok((basis, sorted))
}

/// Perron root of a nonnegative matrix with Collatz-Wielandt bracketing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronRoot {
    pub lower: f64,
    pub upper: f64,
}

impl PerronRoot {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Power iteration on a nonnegative matrix. When the iterate stays strictly
/// positive, `min_i (Gx)_i / x_i <= rho(G) <= max_i (Gx)_i / x_i` brackets the
/// spectral radius; the bracket is returned once it is tight or the budget runs out.
pub fn perron_root(g: &DMatrix<f64>) -> Result<PerronRoot> {
    let n = g.nrows();
    if n == 0 {
        return Ok(PerronRoot {
            lower: 0.0,
            upper: 0.0,
        });
    }
    if g.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "perron_root requires a finite nonnegative matrix".into(),
        ));
    }
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut best = PerronRoot {
        lower: 0.0,
        upper: f64::INFINITY,
    };
    for _ in 0..200_000 {
        let y = g * &x;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..n {
            if x[i] > 0.0 {
                let r = y[i] / x[i];
                lo = lo.min(r);
                hi = hi.max(r);
            } else if y[i] > 0.0 {
                hi = f64::INFINITY;
            } else {
                lo = 0.0;
            }
        }
        best.lower = best.lower.max(lo);
        best.upper = best.upper.min(hi);
        let s = y.sum();
        if s == 0.0 {
            return Ok(PerronRoot {
                lower: 0.0,
                upper: 0.0,
            });
        }
        x = y / s;
        if best.upper.is_finite() && best.upper - best.lower <= 1e-14 * best.upper.max(1e-300) {
            return Ok(best);
        }
    }
    // Reducible patterns can keep the bracket open: settle on the eigensolver
    // value, clamped into whatever bracket was established.
    let r = spectral_radius(g)?;
    let r = r.clamp(best.lower, best.upper.max(best.lower));
    Ok(PerronRoot { lower: r, upper: r })
}

/// Kronecker product `a ⊗ I_m`.
pub fn kron_identity(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() * m, a.ncols() * m);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 {
                for d in 0..m {
                    out[(i * m + d, j * m + d)] = v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perron_root_brackets_known_value() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.5, 0.75]);
        let r = perron_root(&g).unwrap();
        assert!(r.lower <= 1.0 + 1e-12 && r.upper >= 1.0 - 1e-12);
        assert!((r.estimate() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_root_of_upper_triangular() {
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 5.0, 0.0, 0.3]);
        let r = perron_root(&g).unwrap();
        assert!((r.estimate() - 0.9).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn null_space_of_rank_one() {
        let m = to_complex(&DMatrix::from_element(3, 3, 1.0));
        let (basis, sv) = near_null_space(&m, 2).unwrap();
        assert!(sv[0] < 1e-12 && sv[1] < 1e-12);
        let prod = &m * &basis;
        assert!(prod.norm() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        assert!((spectral_norm(&m) - 3.0).abs() < 1e-12);
        assert_eq!(inf_norm(&m), 3.0);
    }
}
