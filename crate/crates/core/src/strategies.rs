//! The distributed recursions and the centralized reference recursion.
//!
//! The general strategy runs, for every agent `k`,
//!
//! ```text
//! phi_k = sum_l a1[l,k] w_l
//! psi_k = sum_l a0[l,k] phi_l - mu_k ŝ_k(phi_k)
//! w_k   = sum_l a2[l,k] psi_l
//! ```
//!
//! Consensus, CTA and ATC are coded as separate engines so that their
//! agreement with the general engine is a real check rather than a tautology.
//! Every engine draws exactly one stochastic update per agent per iteration,
//! in increasing agent order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, AgentModel, ModelKind};
use crate::network::{CombinationMatrices, StepSizeProfile};

/// Any state entry above this magnitude is treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
const LIMIT_POINT_TOL: f64 = 1e-10;
const LIMIT_POINT_MAX_ITER: usize = 1_000_000;

/// Stacked agent iterates `col{w_1, ..., w_N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    n: usize,
    m: usize,
    w: Vec<f64>,
    iteration: usize,
}

impl NetworkState {
    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let n = blocks.len();
        let m = blocks.first().map(|b| b.len()).unwrap_or(0);
        if n == 0 || m == 0 || blocks.iter().any(|b| b.len() != m) {
            return Err(Error::validation(
                "state needs N >= 1 blocks of equal positive length",
            ));
        }
        let w: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("state entries must be finite"));
        }
        Ok(NetworkState {
            n,
            m,
            w,
            iteration: 0,
        })
    }

    /// Every agent at the same point `v`.
    pub fn uniform(n: usize, v: &DVector<f64>) -> Result<Self> {
        Self::from_blocks(&vec![v.clone(); n])
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.w[k * self.m..(k + 1) * self.m]
    }

    pub fn block_vector(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.block(k))
    }

    /// The stacked `NM`-vector.
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    fn check_finite(&self) -> Result<()> {
        if self.w.iter().any(|x| !(x.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Divergence {
                iteration: self.iteration,
                trial: None,
            });
        }
        Ok(())
    }
}

/// Which recursion to run. Named kinds take their single policy matrix from
/// the network; `General` carries all three factors.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    General(CombinationMatrices),
    Consensus,
    Cta,
    Atc,
}

impl StrategyKind {
    /// Factor assignment of each strategy: consensus `(I, A, I)`, CTA `(A, I, I)`,
    /// ATC `(I, I, A)`.
    pub fn factors(&self, a: &DMatrix<f64>) -> Result<CombinationMatrices> {
        let n = a.nrows();
        let eye = DMatrix::identity(n, n);
        match self {
            StrategyKind::General(m) => Ok(m.clone()),
            StrategyKind::Consensus => CombinationMatrices::new(eye.clone(), a.clone(), eye),
            StrategyKind::Cta => CombinationMatrices::new(a.clone(), eye.clone(), eye),
            StrategyKind::Atc => CombinationMatrices::new(eye.clone(), eye, a.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::General(_) => "general",
            StrategyKind::Consensus => "consensus",
            StrategyKind::Cta => "cta",
            StrategyKind::Atc => "atc",
        }
    }
}

/// Nonzero entries of each column: `cols[k] = [(l, a[l,k]), ...]`.
#[derive(Debug, Clone)]
struct SparseColumns {
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    fn new(a: &DMatrix<f64>) -> Self {
        let cols = (0..a.ncols())
            .map(|k| {
                (0..a.nrows())
                    .filter(|&l| a[(l, k)] != 0.0)
                    .map(|l| (l, a[(l, k)]))
                    .collect()
            })
            .collect();
        SparseColumns { cols }
    }

    /// `out_k = sum_l a[l,k] x_l` for `M`-blocks.
    fn combine(&self, x: &[f64], m: usize, out: &mut [f64]) {
        for (k, col) in self.cols.iter().enumerate() {
            let dst = &mut out[k * m..(k + 1) * m];
            dst.fill(0.0);
            for &(l, a) in col {
                let src = &x[l * m..(l + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    General {
        a1: SparseColumns,
        a0: SparseColumns,
        a2: SparseColumns,
    },
    Consensus(SparseColumns),
    Cta(SparseColumns),
    Atc(SparseColumns),
}

/// Reusable stepping engine with preallocated buffers.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    plan: Plan,
    mu: Vec<f64>,
    model: &'a AgentModel,
    phi: Vec<f64>,
    psi: Vec<f64>,
    update: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Engine<'a> {
    /// `a` is the policy matrix used by named kinds; ignored for `General`.
    pub fn new(
        kind: &StrategyKind,
        a: &DMatrix<f64>,
        steps: &StepSizeProfile,
        model: &'a AgentModel,
    ) -> Result<Self> {
        let n = model.n_agents();
        if steps.len() != n {
            return Err(Error::validation(format!(
                "step-size profile has {} entries but the model has {n} agents",
                steps.len()
            )));
        }
        let plan = match kind {
            StrategyKind::General(f) => {
                if f.n_agents() != n {
                    return Err(Error::validation(
                        "combination matrices do not match the model size",
                    ));
                }
                Plan::General {
                    a1: SparseColumns::new(&f.a1),
                    a0: SparseColumns::new(&f.a0),
                    a2: SparseColumns::new(&f.a2),
                }
            }
            named => {
                if a.nrows() != n || a.ncols() != n {
                    return Err(Error::validation(
                        "policy matrix does not match the model size",
                    ));
                }
                let cols = SparseColumns::new(a);
                match named {
                    StrategyKind::Consensus => Plan::Consensus(cols),
                    StrategyKind::Cta => Plan::Cta(cols),
                    _ => Plan::Atc(cols),
                }
            }
        };
        let m = model.dim();
        Ok(Engine {
            plan,
            mu: (0..n).map(|k| steps.mu(k)).collect(),
            model,
            phi: vec![0.0; n * m],
            psi: vec![0.0; n * m],
            update: vec![0.0; m],
            scratch: vec![0.0; 2 * m],
        })
    }

    /// Advances `state` by one iteration in place.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut NetworkState, rng: &mut R) -> Result<()> {
        let m = state.m;
        let n = state.n;
        if n != self.mu.len() || m != self.model.dim() {
            return Err(Error::validation(
                "state does not match the engine dimensions",
            ));
        }
        let Engine {
            plan,
            mu,
            model,
            phi,
            psi,
            update,
            scratch,
        } = self;
        match plan {
            Plan::General { a1, a0, a2 } => {
                a1.combine(&state.w, m, phi);
                a0.combine(phi, m, psi);
                for k in 0..n {
                    model.stochastic_update_into(k, &phi[k * m..(k + 1) * m], rng, scratch, update);
                    for (d, u) in psi[k * m..(k + 1) * m].iter_mut().zip(update.iter()) {
                        *d -= mu[k] * u;
                    }
                }
                a2.combine(psi, m, &mut state.w);
            }
            Plan::Consensus(a) => {
                a.combine(&state.w, m, phi);
                for k in 0..n {
                    model.stochastic_update_into(
                        k,
                        &state.w[k * m..(k + 1) * m],
                        rng,
                        scratch,
                        update,
                    );
                    for (d, u) in phi[k * m..(k + 1) * m].iter_mut().zip(update.iter()) {
                        *d -= mu[k] * u;
                    }
                }
                state.w.copy_from_slice(phi);
            }
            Plan::Cta(a) => {
                a.combine(&state.w, m, phi);
                for k in 0..n {
                    let block = k * m..(k + 1) * m;
                    model.stochastic_update_into(k, &phi[block.clone()], rng, scratch, update);
                    for (d, u) in phi[block].iter_mut().zip(update.iter()) {
                        *d -= mu[k] * u;
                    }
                }
                state.w.copy_from_slice(phi);
            }
            Plan::Atc(a) => {
                psi.copy_from_slice(&state.w);
                for k in 0..n {
                    let block = k * m..(k + 1) * m;
                    model.stochastic_update_into(k, &state.w[block.clone()], rng, scratch, update);
                    for (d, u) in psi[block].iter_mut().zip(update.iter()) {
                        *d -= mu[k] * u;
                    }
                }
                a.combine(psi, m, &mut state.w);
            }
        }
        state.iteration += 1;
        state.check_finite()
    }
}

/// One iteration of the general strategy.
pub fn general_step<R: Rng + ?Sized>(
    state: &NetworkState,
    m: &CombinationMatrices,
    steps: &StepSizeProfile,
    model: &AgentModel,
    rng: &mut R,
) -> Result<NetworkState> {
    let kind = StrategyKind::General(m.clone());
    let mut engine = Engine::new(&kind, &m.a1, steps, model)?;
    let mut next = state.clone();
    engine.step(&mut next, rng)?;
    Ok(next)
}

/// One iteration of consensus, CTA or ATC with policy `a`.
pub fn named_step<R: Rng + ?Sized>(
    state: &NetworkState,
    kind: &StrategyKind,
    a: &DMatrix<f64>,
    steps: &StepSizeProfile,
    model: &AgentModel,
    rng: &mut R,
) -> Result<NetworkState> {
    if matches!(kind, StrategyKind::General(_)) {
        return Err(Error::InvalidArgument(
            "named_step requires consensus, cta or atc".into(),
        ));
    }
    let mut engine = Engine::new(kind, a, steps, model)?;
    let mut next = state.clone();
    engine.step(&mut next, rng)?;
    Ok(next)
}

/// Iterate `w̄_{c,i}` of the centralized reference recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    pub w_bar: DVector<f64>,
    pub iteration: usize,
}

impl ReferenceState {
    /// Starts at the Perron-weighted centroid `sum_k theta_k w_{k,0}`.
    pub fn from_network(state: &NetworkState, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != state.n_agents() {
            return Err(Error::validation(
                "theta length does not match the number of agents",
            ));
        }
        let mut w_bar = DVector::zeros(state.dim());
        for k in 0..state.n_agents() {
            for (d, x) in w_bar.iter_mut().zip(state.block(k)) {
                *d += theta[k] * x;
            }
        }
        Ok(ReferenceState {
            w_bar,
            iteration: state.iteration(),
        })
    }
}

/// `w̄ <- w̄ - mu_max sum_k p_k s_k(w̄)`.
pub fn reference_step(
    state: &ReferenceState,
    p: &DVector<f64>,
    mu_max: f64,
    model: &AgentModel,
) -> Result<ReferenceState> {
    let g = aggregate_update(model, p, &state.w_bar)?;
    let w_bar = &state.w_bar - g * mu_max;
    let iteration = state.iteration + 1;
    if w_bar.iter().any(|x| !(x.abs() <= DIVERGENCE_THRESHOLD)) {
        return Err(Error::Divergence {
            iteration,
            trial: None,
        });
    }
    Ok(ReferenceState { w_bar, iteration })
}

/// `sum_k p_k s_k(w)`.
pub fn aggregate_update(
    model: &AgentModel,
    p: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if p.len() != model.n_agents() {
        return Err(Error::validation(
            "weight vector length does not match the model",
        ));
    }
    let mut acc = DVector::zeros(model.dim());
    for k in 0..model.n_agents() {
        if p[k] != 0.0 {
            acc += model.true_update(k, w)? * p[k];
        }
    }
    Ok(acc)
}

/// The unique `w°` with `sum_k p_k s_k(w°) = 0`.
///
/// LMS models use the closed form `(sum p_k R_k)^{-1} sum p_k R_k w_k°`; other
/// models run the contraction [`limit_point_iterative`].
pub fn limit_point(model: &AgentModel, p: &DVector<f64>) -> Result<DVector<f64>> {
    match model.kind() {
        ModelKind::QuadraticLms => {
            let lambda_l = models::monotonicity_constant(model, p)?;
            if lambda_l <= 1e-12 * models::lipschitz_constant(model).max(1.0) {
                return Err(Error::NotObservable { min_eig: lambda_l });
            }
            let m = model.dim();
            let mut lhs = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for k in 0..model.n_agents() {
                lhs += model.matrix(k) * p[k];
                rhs += model.matrix(k) * model.center(k) * p[k];
            }
            let sym = (&lhs + lhs.transpose()) * 0.5;
            let w = sym.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| {
                Error::Numerical("weighted covariance is not positive definite".into())
            })?;
            // One refinement step against rounding in the solve.
            let r = aggregate_update(model, p, &w)?;
            let correction = lhs.lu().solve(&r).unwrap_or_else(|| DVector::zeros(m));
            Ok(w - correction)
        }
        ModelKind::CustomDeterministic => limit_point_iterative(model, p),
    }
}

/// Iterates `T_c(w) = w - mu sum_k p_k s_k(w)` with `mu = lambda_L / (‖p‖_1² lambda_U²)`,
/// a strict contraction, until `‖sum_k p_k s_k(w)‖ <= 1e-10`.
pub fn limit_point_iterative(model: &AgentModel, p: &DVector<f64>) -> Result<DVector<f64>> {
    let lambda_u = models::lipschitz_constant(model);
    let lambda_l = models::monotonicity_constant(model, p)?;
    if lambda_l <= 1e-12 * lambda_u.max(1.0) {
        return Err(Error::NotObservable { min_eig: lambda_l });
    }
    let p_l1: f64 = p.iter().sum();
    let mu = lambda_l / (p_l1 * p_l1 * lambda_u * lambda_u);
    let mut w = DVector::zeros(model.dim());
    let mut residual = f64::INFINITY;
    for _ in 0..LIMIT_POINT_MAX_ITER {
        let g = aggregate_update(model, p, &w)?;
        residual = g.norm();
        if residual <= LIMIT_POINT_TOL {
            return Ok(w);
        }
        w -= g * mu;
    }
    Err(Error::NoConvergence {
        iterations: LIMIT_POINT_MAX_ITER,
        residual,
    })
}

/// CSV dump `iter,agent,component,value` of a sequence of states.
pub fn trajectory_csv(states: &[NetworkState]) -> String {
    let mut out = String::from("iter,agent,component,value\n");
    for s in states {
        for k in 0..s.n_agents() {
            for (c, x) in s.block(k).iter().enumerate() {
                out.push_str(&format!("{},{},{},{:e}\n", s.iteration(), k, c, x));
            }
        }
    }
    out
}

/// Serializable name of a named strategy, used by configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    General,
    Consensus,
    Cta,
    Atc,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LmsAgent;
    use crate::network::{build_topology, make_policy, PolicyRule, TopologyKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(mins: &[f64], r: f64, noise: f64) -> AgentModel {
        AgentModel::quadratic_lms(
            mins.iter()
                .map(|&w| LmsAgent {
                    covariance: DMatrix::from_element(1, 1, r),
                    minimizer: DVector::from_element(1, w),
                    noise_variance: noise,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_agent_is_plain_sgd() {
        let model = scalar_model(&[2.0], 1.0, 0.5);
        let steps = StepSizeProfile::uniform(0.1, 1).unwrap();
        let one = DMatrix::identity(1, 1);
        let f = CombinationMatrices::new(one.clone(), one.clone(), one).unwrap();
        let s0 = NetworkState::uniform(1, &DVector::from_element(1, 0.0)).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let s1 = general_step(&s0, &f, &steps, &model, &mut r1).unwrap();
        let g = model.stochastic_update(0, &s0.block_vector(0), &mut r2);
        assert_eq!(s1.block(0)[0], 0.0 - 0.1 * g[0]);
        assert_eq!(s1.iteration(), 1);
    }

    #[test]
    fn zero_step_is_pure_averaging() {
        let t = build_topology(&TopologyKind::Ring, 4, 0).unwrap();
        let a = make_policy(&t, &PolicyRule::UniformAveraging).unwrap();
        let model = scalar_model(&[0.0, 1.0, 2.0, 3.0], 1.0, 1.0);
        let steps = StepSizeProfile::new(0.0, vec![1.0; 4]).unwrap();
        let s0 =
            NetworkState::from_blocks(&[0.0, 4.0, -1.0, 2.0].map(|x| DVector::from_element(1, x)))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s1 = named_step(&s0, &StrategyKind::Atc, &a, &steps, &model, &mut rng).unwrap();
        let expected = a.transpose() * s0.to_vector();
        assert!((s1.to_vector() - expected).amax() < 1e-15);
    }

    #[test]
    fn consensus_with_identity_is_local_sgd() {
        let model = scalar_model(&[1.0, -1.0], 2.0, 0.3);
        let steps = StepSizeProfile::uniform(0.05, 2).unwrap();
        let eye = DMatrix::identity(2, 2);
        let s0 = NetworkState::from_blocks(&[
            DVector::from_element(1, 3.0),
            DVector::from_element(1, 0.5),
        ])
        .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let s1 = named_step(&s0, &StrategyKind::Consensus, &eye, &steps, &model, &mut r1).unwrap();
        for k in 0..2 {
            let g = model.stochastic_update(k, &s0.block_vector(k), &mut r2);
            assert_eq!(s1.block(k)[0], s0.block(k)[0] - 0.05 * g[0]);
        }
    }

    #[test]
    fn consensus_and_cta_differ() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let model = scalar_model(&[0.0, 10.0], 1.0, 0.0);
        let steps = StepSizeProfile::uniform(0.1, 2).unwrap();
        let mut s_con = NetworkState::from_blocks(&[
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 4.0),
        ])
        .unwrap();
        let mut s_cta = s_con.clone();
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2 {
            s_con = named_step(
                &s_con,
                &StrategyKind::Consensus,
                &a,
                &steps,
                &model,
                &mut r1,
            )
            .unwrap();
            s_cta = named_step(&s_cta, &StrategyKind::Cta, &a, &steps, &model, &mut r2).unwrap();
        }
        assert!((s_con.to_vector() - s_cta.to_vector()).amax() > 1e-3);
    }

    #[test]
    fn divergence_detected() {
        let model = scalar_model(&[0.0], 1.0, 0.0);
        let steps = StepSizeProfile::uniform(10.0, 1).unwrap();
        let one = DMatrix::identity(1, 1);
        let mut s = NetworkState::uniform(1, &DVector::from_element(1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = loop {
            match named_step(&s, &StrategyKind::Atc, &one, &steps, &model, &mut rng) {
                Ok(next) => s = next,
                Err(e) => break e,
            }
        };
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn reference_scalar_step() {
        let model = scalar_model(&[0.0], 1.0, 0.0);
        let r0 = ReferenceState {
            w_bar: DVector::from_element(1, 1.0),
            iteration: 0,
        };
        let r1 = reference_step(&r0, &DVector::from_element(1, 1.0), 0.1, &model).unwrap();
        assert!((r1.w_bar[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn limit_point_weighted_average() {
        let model = scalar_model(&[0.0, 1.0], 1.0, 0.0);
        let w = limit_point(&model, &DVector::from_vec(vec![0.25, 0.75])).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-14);
        let it = limit_point_iterative(&model, &DVector::from_vec(vec![0.25, 0.75])).unwrap();
        assert!((it[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn limit_point_of_indefinite_custom_model() {
        // one agent has a negative curvature, the weighted sum is still positive
        let h = vec![
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::from_element(1, 1, 2.0),
        ];
        let c = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 3.0)];
        let model = AgentModel::custom_deterministic(h, c).unwrap();
        let p = DVector::from_vec(vec![0.5, 0.5]);
        let w = limit_point(&model, &p).unwrap();
        // -0.25 (w - 1) + (w - 3) = 0  =>  w = 2.75 / 0.75
        assert!((w[0] - 2.75 / 0.75).abs() < 1e-9);
    }
}
