//! Energy vector operator `P[x]` and norm matrix operator `P̄[X]`.
//!
//! For a block vector `x = col{x_1, ..., x_N}` with `M × 1` blocks,
//! `P[x] = col{‖x_1‖², ..., ‖x_N‖²}`. For a block matrix `X` with `M × M`
//! blocks, `P̄[X]` holds the spectral norm of every block.

use nalgebra::{ComplexField, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::serde_util;

/// Per-block squared norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyVector {
    #[serde(with = "serde_util::vector")]
    pub values: DVector<f64>,
}

impl EnergyVector {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-block spectral norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormMatrix {
    #[serde(with = "serde_util::rows")]
    pub values: DMatrix<f64>,
}

/// `P[x]` for a real or complex block vector with blocks of length `m`.
pub fn energy<T>(x: &[T], m: usize) -> Result<EnergyVector>
where
    T: ComplexField<RealField = f64> + Copy,
{
    if m == 0 || !x.len().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "vector of length {} is not a stack of {m}-blocks",
            x.len()
        )));
    }
    let values = DVector::from_iterator(
        x.len() / m,
        x.chunks(m)
            .map(|b| b.iter().map(|z| z.modulus_squared()).sum::<f64>()),
    );
    Ok(EnergyVector { values })
}

/// `P̄[X]` for a real or complex block matrix with `m × m` blocks.
pub fn norm_matrix<T>(x: &DMatrix<T>, m: usize) -> Result<NormMatrix>
where
    T: ComplexField<RealField = f64>,
{
    if m == 0 || !x.nrows().is_multiple_of(m) || !x.ncols().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} matrix is not made of {m}x{m} blocks",
            x.nrows(),
            x.ncols()
        )));
    }
    let (k, n) = (x.nrows() / m, x.ncols() / m);
    let values = DMatrix::from_fn(k, n, |r, c| {
        let block = x.view((r * m, c * m), (m, m)).into_owned();
        if m == 1 {
            block[(0, 0)].clone().modulus()
        } else {
            linalg::spectral_norm(&block)
        }
    });
    Ok(NormMatrix { values })
}

/// `P̄[X ⊗ I_M] = P̄_1[X]`, the entrywise modulus; avoids forming the Kronecker product.
pub fn kron_norm_matrix<T>(x: &DMatrix<T>) -> DMatrix<f64>
where
    T: ComplexField<RealField = f64>,
{
    x.map(|z| z.modulus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron_identity, Complex64};

    #[test]
    fn energy_examples() {
        let e = energy(&[1.0, 0.0, 0.0, -2.0], 2).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 4.0]);
        let z = energy(&[0.0; 6], 3).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        let c = energy(&[Complex64::new(3.0, 4.0)], 1).unwrap();
        assert_eq!(c.values[0], 25.0);
        assert!(energy(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn kronecker_of_nonnegative_is_identity_map() {
        let b = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 2.0, 1.0, 3.0, 0.25]);
        let nm = norm_matrix(&kron_identity(&b, 3), 3).unwrap();
        assert!((nm.values - &b).amax() < 1e-14);
    }

    #[test]
    fn block_diagonal() {
        let mut x = DMatrix::zeros(4, 4);
        x.view_mut((0, 0), (2, 2))
            .copy_from(&(DMatrix::identity(2, 2) * 2.0));
        x.view_mut((2, 2), (2, 2))
            .copy_from(&(DMatrix::identity(2, 2) * -3.0));
        let nm = norm_matrix(&x, 2).unwrap();
        assert_eq!(
            nm.values,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])
        );
    }
}
