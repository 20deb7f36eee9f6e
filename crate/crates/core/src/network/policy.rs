use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::topology::Topology;
use crate::error::{Error, Result};

/// Column-sum tolerance for left-stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Rule for turning a topology into a left-stochastic combination matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum PolicyRule {
    /// `a_lk = 1/n_k` over the neighborhood of `k`.
    UniformAveraging,
    /// Doubly stochastic Metropolis-Hastings weights.
    Metropolis,
    /// `a_lk = n_l / sum_{m in N_k} n_m`.
    RelativeDegree,
    Identity,
    /// Entry `(l, k)` is the weight agent `k` assigns to agent `l`.
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
}

pub fn make_policy(topology: &Topology, rule: &PolicyRule) -> Result<DMatrix<f64>> {
    let n = topology.n_agents();
    let a = match rule {
        PolicyRule::UniformAveraging => DMatrix::from_fn(n, n, |l, k| {
            if topology.linked(l, k) {
                1.0 / topology.degree(k) as f64
            } else {
                0.0
            }
        }),
        PolicyRule::Metropolis => {
            let mut a = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut off = 0.0;
                for l in topology.neighbors(k) {
                    if l != k {
                        let w = 1.0 / topology.degree(k).max(topology.degree(l)) as f64;
                        a[(l, k)] = w;
                        off += w;
                    }
                }
                a[(k, k)] = 1.0 - off;
            }
            a
        }
        PolicyRule::RelativeDegree => DMatrix::from_fn(n, n, |l, k| {
            if topology.linked(l, k) {
                let total: usize = topology
                    .neighbors(k)
                    .iter()
                    .map(|&m| topology.degree(m))
                    .sum();
                topology.degree(l) as f64 / total as f64
            } else {
                0.0
            }
        }),
        PolicyRule::Identity => DMatrix::identity(n, n),
        PolicyRule::Explicit { matrix } => {
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::validation(format!(
                    "explicit policy must be {n}x{n}"
                )));
            }
            DMatrix::from_fn(n, n, |l, k| matrix[l][k])
        }
    };
    validate_policy(&a, topology)?;
    Ok(a)
}

/// Checks nonnegativity, unit column sums, and support on topology edges.
pub fn validate_policy(a: &DMatrix<f64>, topology: &Topology) -> Result<()> {
    let n = topology.n_agents();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::validation(format!(
            "combination matrix is {}x{} but N = {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_left_stochastic(a)?;
    for l in 0..n {
        for k in 0..n {
            if a[(l, k)] != 0.0 && !topology.linked(l, k) {
                return Err(Error::validation(format!(
                    "entry ({l},{k}) = {} is nonzero but {l} is not a neighbor of {k}",
                    a[(l, k)]
                )));
            }
        }
    }
    Ok(())
}

/// Checks that `a` is square, nonnegative, and has unit column sums.
pub fn check_left_stochastic(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::validation("combination matrix must be square"));
    }
    for (idx, &x) in a.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            let (l, k) = (idx % a.nrows(), idx / a.nrows());
            return Err(Error::validation(format!(
                "entry ({l},{k}) = {x} is negative or non-finite"
            )));
        }
    }
    for k in 0..a.ncols() {
        let s: f64 = a.column(k).sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::validation(format!(
                "column {k} sums to {s:.15}, not 1"
            )));
        }
    }
    Ok(())
}

/// The three factors of the general strategy; `product()` is `A = A1 A0 A2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationMatrices {
    pub a1: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub a2: DMatrix<f64>,
}

impl CombinationMatrices {
    pub fn new(a1: DMatrix<f64>, a0: DMatrix<f64>, a2: DMatrix<f64>) -> Result<Self> {
        let n = a1.nrows();
        for (name, m) in [("a1", &a1), ("a0", &a0), ("a2", &a2)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::validation(format!("{name} must be {n}x{n}")));
            }
            check_left_stochastic(m).map_err(|e| Error::validation(format!("{name}: {e}")))?;
        }
        Ok(CombinationMatrices { a1, a0, a2 })
    }

    /// Also checks that every factor respects the topology's support.
    pub fn with_topology(
        a1: DMatrix<f64>,
        a0: DMatrix<f64>,
        a2: DMatrix<f64>,
        topology: &Topology,
    ) -> Result<Self> {
        for (name, m) in [("a1", &a1), ("a0", &a0), ("a2", &a2)] {
            validate_policy(m, topology).map_err(|e| Error::validation(format!("{name}: {e}")))?;
        }
        Self::new(a1, a0, a2)
    }

    pub fn n_agents(&self) -> usize {
        self.a1.nrows()
    }

    pub fn product(&self) -> DMatrix<f64> {
        compose(self)
    }
}

pub fn compose(m: &CombinationMatrices) -> DMatrix<f64> {
    &m.a1 * &m.a0 * &m.a2
}

/// Result of the primitivity test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitivity {
    pub primitive: bool,
    /// Smallest power with all entries positive, when one exists.
    pub witness: Option<usize>,
}

/// Tests whether some power `A^j`, `j <= N^2 - 2N + 2`, is entrywise positive.
/// Works on the sparsity pattern so the answer is exact.
pub fn check_primitive(a: &DMatrix<f64>) -> Primitivity {
    let n = a.nrows();
    let pattern: Vec<bool> = (0..n * n).map(|i| a[(i / n, i % n)] > 0.0).collect();
    let wielandt = if n <= 1 { 1 } else { n * n - 2 * n + 2 };
    let mut power = pattern.clone();
    for j in 1..=wielandt {
        if power.iter().all(|&b| b) {
            return Primitivity {
                primitive: true,
                witness: Some(j),
            };
        }
        let mut next = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                next[r * n + c] = (0..n).any(|t| power[r * n + t] && pattern[t * n + c]);
            }
        }
        power = next;
    }
    Primitivity {
        primitive: false,
        witness: None,
    }
}

/// Per-agent step-sizes `mu_k = mu_max * beta_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizeProfile {
    mu_max: f64,
    beta: Vec<f64>,
}

impl StepSizeProfile {
    pub fn from_steps(mu: &[f64]) -> Result<Self> {
        if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::validation(
                "step-sizes must be finite and nonnegative",
            ));
        }
        let mu_max = mu.iter().copied().fold(0.0, f64::max);
        if mu_max == 0.0 {
            return Ok(StepSizeProfile {
                mu_max: 0.0,
                beta: vec![1.0; mu.len()],
            });
        }
        Ok(StepSizeProfile {
            mu_max,
            beta: mu.iter().map(|m| m / mu_max).collect(),
        })
    }

    /// `beta` must lie in `[0, 1]` with at least one positive entry.
    pub fn new(mu_max: f64, beta: Vec<f64>) -> Result<Self> {
        if !(mu_max >= 0.0) || !mu_max.is_finite() {
            return Err(Error::validation(format!(
                "mu_max must be finite and >= 0, got {mu_max}"
            )));
        }
        if beta.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(Error::validation("beta entries must lie in [0, 1]"));
        }
        if !beta.iter().any(|&b| b > 0.0) {
            return Err(Error::validation("at least one beta_k must be positive"));
        }
        Ok(StepSizeProfile { mu_max, beta })
    }

    pub fn uniform(mu_max: f64, n: usize) -> Result<Self> {
        Self::new(mu_max, vec![1.0; n])
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_max
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.mu_max * self.beta[k]
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Same profile scaled to a different `mu_max`.
    pub fn with_mu_max(&self, mu_max: f64) -> Result<Self> {
        Self::new(mu_max, self.beta.clone())
    }
}

/// `pi = A2 theta` and `p_k = pi_k beta_k`.
pub fn weight_vectors(
    a2: &DMatrix<f64>,
    theta: &DVector<f64>,
    steps: &StepSizeProfile,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = theta.len();
    if a2.nrows() != n || a2.ncols() != n || steps.len() != n {
        return Err(Error::validation("weight_vectors: dimension mismatch"));
    }
    let pi = a2 * theta;
    let p = DVector::from_fn(n, |k, _| pi[k] * steps.beta()[k]);
    Ok((pi, p))
}
