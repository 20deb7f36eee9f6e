//! Agent update maps and the regularity constants the analysis consumes.
//!
//! Two families are supported:
//! - `quadratic_lms`: the distributed LMS problem. Agent `k` observes
//!   `d = u w_k° + v` with Gaussian regressor `u ~ N(0, R_k)` and noise
//!   `v ~ N(0, sigma_k^2)`. The true update is `s_k(w) = R_k (w - w_k°)` and the
//!   stochastic update is the instantaneous gradient `u (u^T w - d)`.
//! - `custom_deterministic`: affine maps `s_k(w) = H_k (w - c_k)` with no gradient
//!   noise. `H_k` may be indefinite; only the weighted aggregate must be monotone.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
/// Multiplier applied to the empirical noise envelope.
pub const NOISE_SAFETY_FACTOR: f64 = 1.5;
pub const MIN_SAMPLE_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    QuadraticLms,
    CustomDeterministic,
}

/// Data of one LMS agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmsAgent {
    pub covariance: DMatrix<f64>,
    pub minimizer: DVector<f64>,
    pub noise_variance: f64,
}

#[derive(Debug, Clone)]
struct AgentData {
    /// `R_k` for LMS agents, `H_k` for deterministic ones.
    matrix: DMatrix<f64>,
    /// `w_k°` or `c_k`.
    center: DVector<f64>,
    noise_std: f64,
    /// Symmetric square root of `R_k`, row-major, used to draw regressors.
    sqrt_cov: Vec<f64>,
}

/// Per-agent update maps for a network of `N` agents in dimension `M`.
#[derive(Debug, Clone)]
pub struct AgentModel {
    kind: ModelKind,
    dim: usize,
    agents: Vec<AgentData>,
}

impl AgentModel {
    pub fn quadratic_lms(agents: Vec<LmsAgent>) -> Result<Self> {
        let dim = check_nonempty(agents.len(), agents.first().map(|a| a.minimizer.len()))?;
        let mut data = Vec::with_capacity(agents.len());
        for (k, a) in agents.into_iter().enumerate() {
            check_shape(k, &a.covariance, &a.minimizer, dim)?;
            let r = &a.covariance;
            if (r - r.transpose()).amax() > SYMMETRY_TOL {
                return Err(Error::validation(format!(
                    "covariance of agent {k} is not symmetric"
                )));
            }
            let eig = SymmetricEigen::new(r.clone());
            let min_eig = eig
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -PSD_TOL {
                return Err(Error::validation(format!(
                    "covariance of agent {k} is not positive semidefinite (min eigenvalue {min_eig:.3e})"
                )));
            }
            if !(a.noise_variance >= 0.0) || !a.noise_variance.is_finite() {
                return Err(Error::validation(format!(
                    "noise variance of agent {k} must be finite and >= 0"
                )));
            }
            let sqrt_eigs = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            let root = &eig.eigenvectors
                * DMatrix::from_diagonal(&sqrt_eigs)
                * eig.eigenvectors.transpose();
            let sqrt_cov = (0..dim * dim).map(|i| root[(i / dim, i % dim)]).collect();
            data.push(AgentData {
                matrix: a.covariance,
                center: a.minimizer,
                noise_std: a.noise_variance.sqrt(),
                sqrt_cov,
            });
        }
        Ok(AgentModel {
            kind: ModelKind::QuadraticLms,
            dim,
            agents: data,
        })
    }

    /// Affine maps `s_k(w) = H_k (w - c_k)`; the stochastic update equals the true one.
    pub fn custom_deterministic(h: Vec<DMatrix<f64>>, centers: Vec<DVector<f64>>) -> Result<Self> {
        if h.len() != centers.len() {
            return Err(Error::validation("need one center per agent"));
        }
        let dim = check_nonempty(h.len(), centers.first().map(|c| c.len()))?;
        let mut data = Vec::with_capacity(h.len());
        for (k, (m, c)) in h.into_iter().zip(centers).enumerate() {
            check_shape(k, &m, &c, dim)?;
            data.push(AgentData {
                matrix: m,
                center: c,
                noise_std: 0.0,
                sqrt_cov: Vec::new(),
            });
        }
        Ok(AgentModel {
            kind: ModelKind::CustomDeterministic,
            dim,
            agents: data,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// `R_k` (LMS) or `H_k` (deterministic).
    pub fn matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.agents[k].matrix
    }

    /// Local minimizer `w_k°` (LMS) or center `c_k` (deterministic).
    pub fn center(&self, k: usize) -> &DVector<f64> {
        &self.agents[k].center
    }

    pub fn noise_variance(&self, k: usize) -> f64 {
        self.agents[k].noise_std * self.agents[k].noise_std
    }

    /// `s_k(w)`.
    pub fn true_update(&self, k: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
        if k >= self.n_agents() {
            return Err(Error::Domain(format!("agent index {k} out of range")));
        }
        if w.len() != self.dim {
            return Err(Error::Domain(format!(
                "expected a {}-vector, got {}",
                self.dim,
                w.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(
                "true_update called with a non-finite vector".into(),
            ));
        }
        let mut out = DVector::zeros(self.dim);
        self.true_update_into(k, w.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `s_k(w)` written into `out`, no validation.
    pub(crate) fn true_update_into(&self, k: usize, w: &[f64], out: &mut [f64]) {
        let a = &self.agents[k];
        let m = self.dim;
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..m {
                acc += a.matrix[(r, c)] * (w[c] - a.center[c]);
            }
            out[r] = acc;
        }
    }

    /// One realization of `ŝ_k(w)`.
    pub fn stochastic_update<R: Rng + ?Sized>(
        &self,
        k: usize,
        w: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let mut scratch = vec![0.0; 2 * self.dim];
        self.stochastic_update_into(k, w.as_slice(), rng, &mut scratch, out.as_mut_slice());
        out
    }

    /// `ŝ_k(w)` written into `out`. `scratch` must hold at least `2M` entries.
    ///
    /// LMS agents consume exactly `M + 1` standard normals per call: `M` for the
    /// regressor and one for the measurement noise, drawn even when the noise
    /// variance is zero so that streams stay aligned across models.
    pub(crate) fn stochastic_update_into<R: Rng + ?Sized>(
        &self,
        k: usize,
        w: &[f64],
        rng: &mut R,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        if self.kind == ModelKind::CustomDeterministic {
            self.true_update_into(k, w, out);
            return;
        }
        let a = &self.agents[k];
        let m = self.dim;
        let (z, u) = scratch.split_at_mut(m);
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let noise: f64 = rng.sample(StandardNormal);
        for r in 0..m {
            let row = &a.sqrt_cov[r * m..(r + 1) * m];
            u[r] = row.iter().zip(z.iter()).map(|(x, y)| x * y).sum();
        }
        let mut err = -a.noise_std * noise;
        for c in 0..m {
            err += u[c] * (w[c] - a.center[c]);
        }
        for r in 0..m {
            out[r] = u[r] * err;
        }
    }

    /// Exact `E‖ŝ_k(w) - s_k(w)‖²` for Gaussian regressors:
    /// `e^T (tr(R) R + R²) e + sigma² tr(R)` with `e = w - w_k°`.
    pub fn gaussian_conditional_variance(&self, k: usize, w: &DVector<f64>) -> f64 {
        if self.kind == ModelKind::CustomDeterministic {
            return 0.0;
        }
        let a = &self.agents[k];
        let r = &a.matrix;
        let e = w - &a.center;
        let tr = r.trace();
        let q = r * tr + r * r;
        e.dot(&(&q * &e)) + self.noise_variance(k) * tr
    }
}

fn check_nonempty(n: usize, dim: Option<usize>) -> Result<usize> {
    match dim {
        Some(d) if n > 0 && d > 0 => Ok(d),
        _ => Err(Error::validation(
            "model needs at least one agent and dimension >= 1",
        )),
    }
}

fn check_shape(k: usize, m: &DMatrix<f64>, c: &DVector<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim || c.len() != dim {
        return Err(Error::validation(format!(
            "agent {k}: expected {dim}x{dim} matrix and {dim}-vector"
        )));
    }
    if m.iter().chain(c.iter()).any(|x| !x.is_finite()) {
        return Err(Error::validation(format!(
            "agent {k}: non-finite model data"
        )));
    }
    Ok(())
}

/// Constants of the Lipschitz, monotonicity and gradient-noise conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub lambda_u: f64,
    pub lambda_l: f64,
    pub alpha: f64,
    pub sigma_v2: f64,
    /// Lipschitz constant of the Jacobians; zero for affine models.
    pub lambda_h: f64,
    /// Radius of the neighborhood where `lambda_h` applies; `None` means unbounded.
    pub r_h: Option<f64>,
}

/// Settings of the empirical gradient-noise envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOptions {
    /// Samples drawn per (agent, probe point).
    pub sample_budget: usize,
    /// Radius of the probe sphere; `None` uses `10 max_k ‖w_k°‖ + 1`.
    pub probe_radius: Option<f64>,
    /// Random directions probed in addition to the `±` coordinate axes.
    pub random_directions: usize,
    pub seed: u64,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            sample_budget: 20_000,
            probe_radius: None,
            random_directions: 8,
            seed: 0x5eed,
        }
    }
}

/// Fitted envelope `E‖ŝ_k(w) - s_k(w)‖² <= alpha ‖w‖² + sigma_v2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub alpha: f64,
    pub sigma_v2: f64,
    /// Envelope before the safety factor.
    pub alpha_raw: f64,
    pub sigma_v2_raw: f64,
    pub probe_radius: f64,
    /// Largest sampled variance over agents at each probe, `(‖w‖, variance)`.
    pub probes: Vec<(f64, f64)>,
}

pub fn default_probe_radius(model: &AgentModel) -> f64 {
    let max_center = (0..model.n_agents())
        .map(|k| model.center(k).norm())
        .fold(0.0, f64::max);
    10.0 * max_center + 1.0
}

pub fn estimate_noise_constants(model: &AgentModel, opts: &NoiseOptions) -> Result<NoiseEstimate> {
    if opts.sample_budget < MIN_SAMPLE_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "sample_budget {} is below {MIN_SAMPLE_BUDGET}; too noisy to bound",
            opts.sample_budget
        )));
    }
    let radius = opts
        .probe_radius
        .unwrap_or_else(|| default_probe_radius(model));
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "probe_radius must be positive, got {radius}"
        )));
    }
    if model.kind() == ModelKind::CustomDeterministic {
        return Ok(NoiseEstimate {
            alpha: 0.0,
            sigma_v2: 0.0,
            alpha_raw: 0.0,
            sigma_v2_raw: 0.0,
            probe_radius: radius,
            probes: Vec::new(),
        });
    }
    let m = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = vec![DVector::zeros(m)];
    for d in 0..m {
        for sign in [1.0, -1.0] {
            let mut w = DVector::zeros(m);
            w[d] = sign * radius;
            points.push(w);
        }
    }
    for _ in 0..opts.random_directions {
        let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 0.0 {
            points.push(g * (radius / n));
        }
    }

    let mut probes = Vec::with_capacity(points.len());
    let mut scratch = vec![0.0; 2 * m];
    let mut noisy = vec![0.0; m];
    let mut clean = vec![0.0; m];
    for w in &points {
        let mut worst: f64 = 0.0;
        for k in 0..model.n_agents() {
            model.true_update_into(k, w.as_slice(), &mut clean);
            let mut acc = 0.0;
            for _ in 0..opts.sample_budget {
                model.stochastic_update_into(k, w.as_slice(), &mut rng, &mut scratch, &mut noisy);
                acc += noisy
                    .iter()
                    .zip(&clean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            worst = worst.max(acc / opts.sample_budget as f64);
        }
        probes.push((w.norm(), worst));
    }
    let sigma_v2_raw = probes[0].1;
    let alpha_raw = probes[1..]
        .iter()
        .map(|&(r, v)| (v - sigma_v2_raw) / (r * r))
        .fold(0.0, f64::max);
    Ok(NoiseEstimate {
        alpha: NOISE_SAFETY_FACTOR * alpha_raw,
        sigma_v2: NOISE_SAFETY_FACTOR * sigma_v2_raw,
        alpha_raw,
        sigma_v2_raw,
        probe_radius: radius,
        probes,
    })
}

/// Lipschitz constant of every `s_k`: `max_k ‖H_k‖` (equal to `max_k rho(R_k)` for LMS).
pub fn lipschitz_constant(model: &AgentModel) -> f64 {
    (0..model.n_agents())
        .map(|k| linalg::spectral_norm(model.matrix(k)))
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `sum_k p_k H_k`.
pub fn monotonicity_constant(model: &AgentModel, p: &DVector<f64>) -> Result<f64> {
    check_weights(model, p)?;
    let hc = weighted_matrix(model, p);
    Ok(linalg::symmetric_extremes(&hc).0)
}

fn check_weights(model: &AgentModel, p: &DVector<f64>) -> Result<()> {
    if p.len() != model.n_agents() {
        return Err(Error::validation(format!(
            "weight vector has length {} but the model has {} agents",
            p.len(),
            model.n_agents()
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0)) || !p.iter().any(|&x| x > 0.0) {
        return Err(Error::validation(
            "weights must be nonnegative with at least one positive entry",
        ));
    }
    Ok(())
}

fn weighted_matrix(model: &AgentModel, p: &DVector<f64>) -> DMatrix<f64> {
    let m = model.dim();
    (0..model.n_agents()).fold(DMatrix::zeros(m, m), |acc, k| acc + model.matrix(k) * p[k])
}

pub fn regularity_constants(model: &AgentModel, p: &DVector<f64>) -> Result<RegularityConstants> {
    regularity_constants_with(model, p, &NoiseOptions::default())
}

pub fn regularity_constants_with(
    model: &AgentModel,
    p: &DVector<f64>,
    opts: &NoiseOptions,
) -> Result<RegularityConstants> {
    let lambda_u = lipschitz_constant(model);
    let lambda_l = monotonicity_constant(model, p)?;
    if lambda_l <= 1e-12 * lambda_u.max(1.0) {
        return Err(Error::NotObservable { min_eig: lambda_l });
    }
    let noise = estimate_noise_constants(model, opts)?;
    Ok(RegularityConstants {
        lambda_u,
        lambda_l,
        alpha: noise.alpha,
        sigma_v2: noise.sigma_v2,
        lambda_h: 0.0,
        r_h: None,
    })
}

/// Jacobians `H_k` at the limit point and their weighted sum `H_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianBundle {
    pub h_k: Vec<DMatrix<f64>>,
    pub h_c: DMatrix<f64>,
}

/// The models here are affine, so the Jacobians do not depend on `w_o`; the
/// argument is checked for shape only.
pub fn hessian_bundle(
    model: &AgentModel,
    p: &DVector<f64>,
    w_o: &DVector<f64>,
) -> Result<HessianBundle> {
    check_weights(model, p)?;
    if w_o.len() != model.dim() {
        return Err(Error::Domain("limit point has the wrong dimension".into()));
    }
    let h_k: Vec<DMatrix<f64>> = (0..model.n_agents())
        .map(|k| model.matrix(k).clone())
        .collect();
    let h_c = weighted_matrix(model, p);
    Ok(HessianBundle { h_k, h_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lms(covs: Vec<DMatrix<f64>>, mins: Vec<Vec<f64>>, noise: f64) -> AgentModel {
        AgentModel::quadratic_lms(
            covs.into_iter()
                .zip(mins)
                .map(|(c, w)| LmsAgent {
                    covariance: c,
                    minimizer: DVector::from_vec(w),
                    noise_variance: noise,
                })
                .collect(),
        )
        .unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn true_update_examples() {
        let m = lms(vec![DMatrix::identity(2, 2)], vec![vec![0.0, 0.0]], 0.0);
        let w = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(m.true_update(0, &w).unwrap(), w);
        let m = lms(vec![diag(&[2.0, 1.0])], vec![vec![1.0, 0.0]], 0.0);
        let s = m
            .true_update(0, &DVector::from_vec(vec![2.0, 2.0]))
            .unwrap();
        assert_eq!(s.as_slice(), &[2.0, 2.0]);
        let at_min = m
            .true_update(0, &DVector::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(at_min.norm(), 0.0);
        assert!(m
            .true_update(0, &DVector::from_vec(vec![f64::NAN, 0.0]))
            .is_err());
    }

    #[test]
    fn zero_data_gives_zero_update() {
        let m = lms(vec![DMatrix::zeros(2, 2)], vec![vec![1.0, 2.0]], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = m.stochastic_update(0, &DVector::from_vec(vec![5.0, -3.0]), &mut rng);
            assert_eq!(s.norm(), 0.0);
        }
    }

    #[test]
    fn stochastic_update_is_unbiased() {
        let m = lms(vec![DMatrix::identity(2, 2)], vec![vec![0.0, 0.0]], 1.0);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += m.stochastic_update(0, &w, &mut rng);
        }
        let mean = sum / n as f64;
        assert!((mean[0] - 1.0).abs() < 3e-3, "{mean}");
        assert!(mean[1].abs() < 3e-3, "{mean}");
    }

    #[test]
    fn noise_envelope_matches_gaussian_fourth_moment() {
        let m = lms(vec![DMatrix::identity(1, 1)], vec![vec![0.0]], 1.0);
        let est = estimate_noise_constants(
            &m,
            &NoiseOptions {
                sample_budget: 200_000,
                probe_radius: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        // variance at w is 2 w^2 + 1
        assert!((est.sigma_v2_raw - 1.0).abs() < 0.03, "{est:?}");
        assert!((est.alpha_raw - 2.0).abs() < 0.1, "{est:?}");
        assert_relative_eq!(est.alpha, 1.5 * est.alpha_raw);
        for &(r, v) in &est.probes {
            assert!(v <= est.alpha_raw * r * r + est.sigma_v2_raw + 1e-12);
        }
    }

    #[test]
    fn noise_envelope_of_noiseless_model_is_zero() {
        let m = lms(vec![DMatrix::zeros(2, 2)], vec![vec![0.0, 0.0]], 0.0);
        let est = estimate_noise_constants(&m, &NoiseOptions::default()).unwrap();
        assert_eq!((est.alpha, est.sigma_v2), (0.0, 0.0));
    }

    #[test]
    fn small_budget_rejected() {
        let m = lms(vec![DMatrix::identity(1, 1)], vec![vec![0.0]], 1.0);
        let opts = NoiseOptions {
            sample_budget: 999,
            ..Default::default()
        };
        assert!(matches!(
            estimate_noise_constants(&m, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn global_observability_without_local_observability() {
        let m = lms(
            vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])],
            vec![vec![0.0; 2], vec![0.0; 2]],
            0.1,
        );
        let p = DVector::from_vec(vec![0.5, 0.5]);
        let c = regularity_constants_with(
            &m,
            &p,
            &NoiseOptions {
                sample_budget: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(c.lambda_l, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.lambda_u, 1.0, epsilon = 1e-12);
        let only_first = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            regularity_constants(&m, &only_first),
            Err(Error::NotObservable { .. })
        ));
    }

    #[test]
    fn diagonal_read_off() {
        let m = lms(
            vec![diag(&[2.0, 1.0]), diag(&[1.0, 3.0])],
            vec![vec![0.0; 2], vec![0.0; 2]],
            0.0,
        );
        let p = DVector::from_vec(vec![0.3, 0.7]);
        assert_relative_eq!(monotonicity_constant(&m, &p).unwrap(), 1.3, epsilon = 1e-12);
        assert_relative_eq!(lipschitz_constant(&m), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn hessian_sum() {
        let m = lms(
            vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0])],
            vec![vec![0.0; 2], vec![0.0; 2]],
            0.0,
        );
        let hb =
            hessian_bundle(&m, &DVector::from_vec(vec![0.5, 0.5]), &DVector::zeros(2)).unwrap();
        assert_relative_eq!(hb.h_c, DMatrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let r = diag(&[1.0, -0.5]);
        let err = AgentModel::quadratic_lms(vec![LmsAgent {
            covariance: r,
            minimizer: DVector::zeros(2),
            noise_variance: 0.0,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("semidefinite"));
    }
}
