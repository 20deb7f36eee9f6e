//! Monte Carlo harness producing averaged learning curves.
//!
//! Trials are grouped into fixed chunks of [`CHUNK`] consecutive trials. Each
//! chunk accumulates sums and sums of squares sequentially in trial order and
//! the chunks are then combined in index order, so the output is bit-identical
//! for any thread count and for the sequential path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    energy, theory_bundle, EnergyVector, TheoryBundle, TheoryInputs, DEFAULT_RATE_EPSILON,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Complex64;
use crate::models::{regularity_constants_with, AgentModel, NoiseOptions, RegularityConstants};
use crate::network::{
    spectral_split, weight_vectors, CombinationMatrices, SpectralSplit, StepSizeProfile,
};
use crate::strategies::{
    limit_point, reference_step, Engine, NetworkState, ReferenceState, StrategyKind,
};

/// Trials per accumulation chunk.
pub const CHUNK: usize = 16;

/// Initial agent iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Every agent starts at the origin.
    CommonZero,
    /// Agent `k` starts at a point drawn uniformly on the sphere of radius
    /// `spread`; the draw depends on `seed` only, so every trial shares it.
    Dispersed { spread: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    /// Policy matrix for consensus, CTA and ATC; ignored by the general strategy.
    pub policy: DMatrix<f64>,
    pub steps: StepSizeProfile,
    pub model: AgentModel,
    /// Iterations `T`; `None` uses `ceil(20 / (mu_max lambda_L))`.
    pub horizon: Option<usize>,
    pub trials: usize,
    pub init: Init,
    pub seed: u64,
    pub noise: NoiseOptions,
    pub execution: Execution,
    pub rate_epsilon: f64,
}

impl ExperimentConfig {
    pub fn new(
        strategy: StrategyKind,
        policy: DMatrix<f64>,
        steps: StepSizeProfile,
        model: AgentModel,
    ) -> Self {
        ExperimentConfig {
            strategy,
            policy,
            steps,
            model,
            horizon: None,
            trials: 100,
            init: Init::CommonZero,
            seed: 0,
            noise: NoiseOptions::default(),
            execution: Execution::Parallel,
            rate_epsilon: DEFAULT_RATE_EPSILON,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::validation("trials must be >= 1"));
        }
        if self.horizon == Some(0) {
            return Err(Error::validation("horizon must be >= 1"));
        }
        if let Init::Dispersed { spread, .. } = self.init {
            if !(spread > 0.0) || !spread.is_finite() {
                return Err(Error::validation("dispersed spread must be positive"));
            }
        }
        Ok(())
    }
}

/// Everything derived from a configuration before any trial runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub factors: CombinationMatrices,
    pub split: SpectralSplit,
    pub pi: DVector<f64>,
    pub p: DVector<f64>,
    pub consts: RegularityConstants,
    pub w_o: DVector<f64>,
    pub horizon: usize,
    pub initial: NetworkState,
    /// `w̄_{c,i}` for `i = 0..=T`.
    pub reference: Vec<DVector<f64>>,
    pub ref_mse: Vec<f64>,
    pub w_e0: EnergyVector,
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = &config.model;
        let n = model.n_agents();
        if config.steps.len() != n {
            return Err(Error::validation(format!(
                "step-size profile has {} entries but the model has {n} agents",
                config.steps.len()
            )));
        }
        let factors = config.strategy.factors(&config.policy)?;
        let split = spectral_split(&factors.product())?;
        let (pi, p) = weight_vectors(&factors.a2, split.theta(), &config.steps)?;
        let consts = regularity_constants_with(model, &p, &config.noise)?;
        let w_o = limit_point(model, &p)?;
        let mu = config.steps.mu_max();
        let horizon = match config.horizon {
            Some(t) => t,
            None => {
                if mu <= 0.0 {
                    return Err(Error::validation("horizon must be given when mu_max = 0"));
                }
                (20.0 / (mu * consts.lambda_l)).ceil() as usize
            }
        };
        let initial = initial_state(&config.init, n, model.dim())?;
        let mut reference = Vec::with_capacity(horizon + 1);
        let mut ref_mse = Vec::with_capacity(horizon + 1);
        let mut r = ReferenceState::from_network(&initial, split.theta())?;
        for i in 0..=horizon {
            ref_mse.push((&w_o - &r.w_bar).norm_squared());
            reference.push(r.w_bar.clone());
            if i < horizon {
                r = reference_step(&r, &p, mu, model)?;
            }
        }
        let w_e0 = residual_energy(&initial, &split);
        Ok(Prepared {
            config,
            factors,
            split,
            pi,
            p,
            consts,
            w_o,
            horizon,
            initial,
            reference,
            ref_mse,
            w_e0,
        })
    }

    /// Theory bundle for this configuration at its own `mu_max`.
    pub fn bundle(&self) -> Result<TheoryBundle> {
        theory_bundle(&TheoryInputs {
            factors: &self.factors,
            split: &self.split,
            consts: &self.consts,
            p: &self.p,
            mu_max: self.config.steps.mu_max(),
            model: &self.config.model,
            w_o: &self.w_o,
            ref_error0_sq: self.ref_mse[0],
            rate_epsilon: self.config.rate_epsilon,
        })
    }

    pub fn run(&self) -> Result<LearningCurves> {
        let trials = self.config.trials;
        let n_chunks = trials.div_ceil(CHUNK);
        let partials = self.config.execution.map(n_chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(trials);
            self.run_chunk(lo..hi)
        });
        let mut total = Accumulator::new(self.layout());
        for part in partials {
            total.merge(&part?);
        }
        Ok(total.finish(self))
    }

    fn layout(&self) -> Layout {
        let n = self.config.model.n_agents();
        Layout {
            n,
            m: self.config.model.dim(),
            horizon: self.horizon,
            tail_start: tail_start(self.horizon),
        }
    }

    fn run_chunk(&self, trials: std::ops::Range<usize>) -> Result<Accumulator> {
        let layout = self.layout();
        let mut acc = Accumulator::new(layout);
        let mut sample = TrialSample::new(layout);
        let model = &self.config.model;
        let mut engine = Engine::new(
            &self.config.strategy,
            &self.config.policy,
            &self.config.steps,
            model,
        )?;
        for t in trials {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(t as u64 + 1);
            let mut state = self.initial.clone();
            sample.clear();
            self.record(&state, 0, &mut sample);
            for i in 1..=self.horizon {
                engine.step(&mut state, &mut rng).map_err(|e| match e {
                    Error::Divergence { iteration, .. } => Error::Divergence {
                        iteration,
                        trial: Some(t),
                    },
                    other => other,
                })?;
                self.record(&state, i, &mut sample);
            }
            acc.add(&sample);
        }
        Ok(acc)
    }

    fn record(&self, state: &NetworkState, i: usize, s: &mut TrialSample) {
        let Layout {
            n, m, tail_start, ..
        } = s.layout;
        let theta = self.split.theta();
        let w_bar = &self.reference[i];
        let row = i * s.width();
        let mut gap = 0.0;
        for d in 0..m {
            let mut c = 0.0;
            for k in 0..n {
                c += theta[k] * state.block(k)[d];
            }
            gap += (c - w_bar[d]) * (c - w_bar[d]);
        }
        for k in 0..n {
            let b = state.block(k);
            let e: f64 = (0..m)
                .map(|d| (self.w_o[d] - b[d]) * (self.w_o[d] - b[d]))
                .sum();
            s.values[row + k] = e;
            if i >= tail_start {
                for d in 0..m {
                    s.tail_sum[k * m + d] += b[d];
                }
            }
        }
        s.values[row + n] = gap;
        let ur = self.split.u_right();
        for j in 0..n - 1 {
            let mut energy_j = 0.0;
            for d in 0..m {
                let mut z = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    z += ur[(j, k)] * state.block(k)[d];
                }
                energy_j += z.norm_sqr();
            }
            s.values[row + n + 1 + j] = energy_j;
        }
    }
}

/// Convenience wrapper: prepare and run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<LearningCurves> {
    Prepared::new(cfg.clone())?.run()
}

/// Tail window used for steady-state statistics: the last 10% of iterations.
pub fn tail_start(horizon: usize) -> usize {
    let len = ((horizon + 1) / 10).max(1);
    horizon + 1 - len
}

fn initial_state(init: &Init, n: usize, m: usize) -> Result<NetworkState> {
    match *init {
        Init::CommonZero => NetworkState::uniform(n, &DVector::zeros(m)),
        Init::Dispersed { spread, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<DVector<f64>> = (0..n)
                .map(|_| {
                    let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let norm = g.norm().max(f64::MIN_POSITIVE);
                    g * (spread / norm)
                })
                .collect();
            NetworkState::from_blocks(&blocks)
        }
    }
}

/// `P[w_e]` of a state.
pub fn residual_energy(state: &NetworkState, split: &SpectralSplit) -> EnergyVector {
    let t = crate::analysis::transform(state, split).expect("split matches state");
    energy(t.w_e.as_slice(), state.dim()).expect("residual has whole blocks")
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
    horizon: usize,
    tail_start: usize,
}

impl Layout {
    /// Per-iteration record: N agent errors, centroid gap, N-1 residual energies.
    fn width(&self) -> usize {
        2 * self.n
    }
}

struct TrialSample {
    layout: Layout,
    values: Vec<f64>,
    tail_sum: Vec<f64>,
}

impl TrialSample {
    fn new(layout: Layout) -> Self {
        TrialSample {
            layout,
            values: vec![0.0; (layout.horizon + 1) * layout.width()],
            tail_sum: vec![0.0; layout.n * layout.m],
        }
    }

    fn width(&self) -> usize {
        self.layout.width()
    }

    fn clear(&mut self) {
        self.values.fill(0.0);
        self.tail_sum.fill(0.0);
    }
}

/// Running means and centered second moments, mergeable in a fixed order.
struct Moments {
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    /// Adds the `count`-th sample.
    fn push(&mut self, j: usize, x: f64, count: f64) {
        let delta = x - self.mean[j];
        self.mean[j] += delta / count;
        self.m2[j] += delta * (x - self.mean[j]);
    }

    fn merge(&mut self, other: &Moments, n_a: f64, n_b: f64) {
        let n = n_a + n_b;
        for j in 0..self.mean.len() {
            let delta = other.mean[j] - self.mean[j];
            self.mean[j] += delta * (n_b / n);
            self.m2[j] += other.m2[j] + delta * delta * (n_a * n_b / n);
        }
    }

    /// Means and standard errors of the mean.
    fn finish(self, count: usize) -> (Vec<f64>, Vec<f64>) {
        let c = count as f64;
        let se = self
            .m2
            .iter()
            .map(|&m2| {
                if count > 1 {
                    (m2.max(0.0) / (c - 1.0) / c).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        (self.mean, se)
    }
}

struct Accumulator {
    layout: Layout,
    count: usize,
    table: Moments,
    /// Network-average MSE per iteration.
    network: Moments,
    /// Residual energy total per iteration.
    residual: Moments,
    tail_mean: Moments,
}

impl Accumulator {
    fn new(layout: Layout) -> Self {
        let iters = layout.horizon + 1;
        Accumulator {
            layout,
            count: 0,
            table: Moments::new(iters * layout.width()),
            network: Moments::new(iters),
            residual: Moments::new(iters),
            tail_mean: Moments::new(layout.n * layout.m),
        }
    }

    fn add(&mut self, s: &TrialSample) {
        let n = self.layout.n;
        let w = self.layout.width();
        self.count += 1;
        let c = self.count as f64;
        for (i, row) in s.values.chunks(w).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                self.table.push(i * w + j, v, c);
            }
            self.network
                .push(i, row[..n].iter().sum::<f64>() / n as f64, c);
            self.residual.push(i, row[n + 1..].iter().sum(), c);
        }
        let tail_len = (self.layout.horizon + 1 - self.layout.tail_start) as f64;
        for (j, &t) in s.tail_sum.iter().enumerate() {
            self.tail_mean.push(j, t / tail_len, c);
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        if o.count == 0 {
            return;
        }
        let (a, b) = (self.count as f64, o.count as f64);
        self.table.merge(&o.table, a, b);
        self.network.merge(&o.network, a, b);
        self.residual.merge(&o.residual, a, b);
        self.tail_mean.merge(&o.tail_mean, a, b);
        self.count += o.count;
    }

    fn finish(self, prep: &Prepared) -> LearningCurves {
        let count = self.count;
        let (table, table_se) = self.table.finish(count);
        let (network_mse, network_mse_se) = self.network.finish(count);
        let (residual_sum, residual_sum_se) = self.residual.finish(count);
        let (steady_mean, steady_mean_se) = self.tail_mean.finish(count);
        LearningCurves {
            n_agents: self.layout.n,
            dim: self.layout.m,
            horizon: self.layout.horizon,
            trials: count,
            tail_start: self.layout.tail_start,
            table,
            table_se,
            network_mse,
            network_mse_se,
            residual_sum,
            residual_sum_se,
            ref_mse: prep.ref_mse.clone(),
            steady_mean,
            steady_mean_se,
        }
    }
}

/// Trial-averaged learning curves for `i = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub n_agents: usize,
    pub dim: usize,
    pub horizon: usize,
    pub trials: usize,
    /// First iteration of the steady-state tail window.
    pub tail_start: usize,
    /// Row `i` holds `N` agent MSEs, the centroid-gap energy and `N-1` residual energies.
    table: Vec<f64>,
    table_se: Vec<f64>,
    pub network_mse: Vec<f64>,
    pub network_mse_se: Vec<f64>,
    pub residual_sum: Vec<f64>,
    pub residual_sum_se: Vec<f64>,
    /// `‖w̃_{c,i}‖²`, deterministic.
    pub ref_mse: Vec<f64>,
    /// Trial means of the tail-averaged iterates, `N × M` row-major.
    pub steady_mean: Vec<f64>,
    pub steady_mean_se: Vec<f64>,
}

impl LearningCurves {
    fn width(&self) -> usize {
        2 * self.n_agents
    }

    pub fn iterations(&self) -> usize {
        self.horizon + 1
    }

    /// `E‖w̃_{k,i}‖²`.
    pub fn agent_mse(&self, i: usize, k: usize) -> f64 {
        self.table[i * self.width() + k]
    }

    pub fn agent_mse_se(&self, i: usize, k: usize) -> f64 {
        self.table_se[i * self.width() + k]
    }

    /// `E‖w̌_{c,i}‖²`.
    pub fn centroid_gap(&self, i: usize) -> f64 {
        self.table[i * self.width() + self.n_agents]
    }

    pub fn centroid_gap_se(&self, i: usize) -> f64 {
        self.table_se[i * self.width() + self.n_agents]
    }

    /// `E P[w_{e,i}]`, length `N-1`.
    pub fn residual(&self, i: usize) -> &[f64] {
        let start = i * self.width() + self.n_agents + 1;
        &self.table[start..start + self.n_agents - 1]
    }

    pub fn residual_se(&self, i: usize) -> &[f64] {
        let start = i * self.width() + self.n_agents + 1;
        &self.table_se[start..start + self.n_agents - 1]
    }

    /// Tail-averaged mean iterate of agent `k`.
    pub fn steady_mean_of(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.steady_mean[k * self.dim..(k + 1) * self.dim])
    }

    pub fn steady_mean_se_of(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.steady_mean_se[k * self.dim..(k + 1) * self.dim])
    }

    /// Mean over the tail window of a per-iteration series.
    pub fn tail_mean(&self, series: &[f64]) -> f64 {
        let tail = &series[self.tail_start..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Steady-state MSE of each agent.
    pub fn steady_state_mse(&self) -> Vec<f64> {
        (0..self.n_agents)
            .map(|k| {
                let s: f64 = (self.tail_start..=self.horizon)
                    .map(|i| self.agent_mse(i, k))
                    .sum();
                s / (self.horizon + 1 - self.tail_start) as f64
            })
            .collect()
    }

    pub fn centroid_gap_series(&self) -> Vec<f64> {
        (0..=self.horizon).map(|i| self.centroid_gap(i)).collect()
    }
}

/// Samples a fresh random state around `center` for tests and benches.
pub fn random_state<R: Rng>(rng: &mut R, n: usize, m: usize, scale: f64) -> NetworkState {
    let blocks: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(m, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    NetworkState::from_blocks(&blocks).expect("finite blocks")
}
