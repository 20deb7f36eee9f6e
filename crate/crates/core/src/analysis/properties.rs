//! Randomized verification of the energy and norm operator properties.
//!
//! Every property is checked on independently seeded random instances with
//! `N <= 8` blocks of size `M <= 4`. An inequality `lhs ⪯ rhs` is violated by
//! `max_i (lhs_i - rhs_i)_+ / max(|lhs_i|, |rhs_i|, 1e-3 s)`, where `s` is the
//! magnitude of the instance, so rounding noise on tiny entries is not reported.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bundle::gamma_e;
use super::operators::{energy, kron_norm_matrix, norm_matrix};
use crate::exec::Execution;
use crate::linalg::{self, kron_identity, CMatrix, CVector, Complex64};

pub const PROPERTY_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_INSTANCES: usize = 200;

/// Names of the checked properties, in report order.
pub const PROPERTIES: [&str; 16] = [
    "nonnegativity",
    "scaling",
    "convexity_energy",
    "convexity_norm",
    "additivity",
    "triangle_inequality",
    "submultiplicativity",
    "kronecker_structure",
    "norm_relations",
    "upper_bounds",
    "linear_transform",
    "left_stochastic_contraction",
    "update_operator",
    "centralized_sandwich",
    "stable_jordan",
    "stable_kronecker_jordan",
];

/// Deliberate corruption of an operator, used to exercise failure reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The energy operator overstates the last block by 50%.
    EnergyOperator,
    /// The norm operator understates every block by 10%.
    NormOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    pub execution: Execution,
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 42,
            instances: DEFAULT_INSTANCES,
            execution: Execution::Parallel,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub instances: usize,
    pub max_violation: f64,
    /// Seed of the instance with the largest violation.
    pub worst_instance_seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub schema: String,
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    pub properties: Vec<PropertyResult>,
    pub passed: bool,
}

impl PropertyReport {
    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.properties.iter().filter(|p| !p.passed).collect()
    }
}

/// Runs every property on `opts.instances` random instances.
pub fn operator_property_suite(opts: &SuiteOptions) -> PropertyReport {
    let n_props = PROPERTIES.len();
    let jobs = n_props * opts.instances;
    let fault = opts.fault;
    let seed = opts.seed;
    let outcomes = opts.execution.map(jobs, |job| {
        let (prop, inst) = (job / opts.instances.max(1), job % opts.instances.max(1));
        let inst_seed = instance_seed(seed, prop, inst);
        let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
        let ops = Ops { fault };
        (inst_seed, check(prop, &mut rng, &ops))
    });
    let mut properties = Vec::with_capacity(n_props);
    for (prop, name) in PROPERTIES.iter().enumerate() {
        let chunk = &outcomes[prop * opts.instances..(prop + 1) * opts.instances];
        let (worst_seed, worst) = chunk.iter().copied().fold((0u64, 0.0f64), |acc, (s, v)| {
            if v > acc.1 || v.is_nan() {
                (s, v)
            } else {
                acc
            }
        });
        properties.push(PropertyResult {
            name: name.to_string(),
            instances: opts.instances,
            max_violation: worst,
            worst_instance_seed: worst_seed,
            passed: worst <= PROPERTY_TOLERANCE,
        });
    }
    let passed = opts.instances > 0 && properties.iter().all(|p| p.passed);
    PropertyReport {
        schema: crate::experiments::SCHEMA.into(),
        seed,
        instances: opts.instances,
        tolerance: PROPERTY_TOLERANCE,
        properties,
        passed,
    }
}

fn instance_seed(seed: u64, prop: usize, inst: usize) -> u64 {
    // SplitMix64 finalizer over the triple, so nearby indices give unrelated streams.
    let mut z = seed ^ ((prop as u64) << 40) ^ (inst as u64);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The operators under test, optionally corrupted.
struct Ops {
    fault: Option<Fault>,
}

impl Ops {
    fn p(&self, x: &CVector, m: usize) -> DVector<f64> {
        let mut v = energy(x.as_slice(), m).expect("block vector").values;
        if self.fault == Some(Fault::EnergyOperator) {
            let last = v.len() - 1;
            v[last] *= 1.5;
        }
        v
    }

    fn pbar(&self, x: &CMatrix, m: usize) -> DMatrix<f64> {
        let mut v = norm_matrix(x, m).expect("block matrix").values;
        if self.fault == Some(Fault::NormOperator) {
            v *= 0.9;
        }
        v
    }
}

/// `lhs ⪯ rhs` violation, see the module docs.
fn violation(lhs: &[f64], rhs: &[f64], scale: f64) -> f64 {
    let floor = 1e-3 * scale.abs().max(f64::MIN_POSITIVE);
    lhs.iter()
        .zip(rhs)
        .map(|(&a, &b)| {
            let d = (a - b).max(0.0);
            if a.is_nan() || b.is_nan() {
                f64::INFINITY
            } else {
                d / a.abs().max(b.abs()).max(floor)
            }
        })
        .fold(0.0, f64::max)
}

fn equality(lhs: &[f64], rhs: &[f64], scale: f64) -> f64 {
    violation(lhs, rhs, scale).max(violation(rhs, lhs, scale))
}

fn mat_slice(m: &DMatrix<f64>) -> &[f64] {
    m.as_slice()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn cnormal<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(normal(rng), normal(rng))
}

fn rand_cvec<R: Rng>(rng: &mut R, len: usize, complex: bool) -> CVector {
    CVector::from_fn(len, |_, _| {
        if complex {
            cnormal(rng)
        } else {
            Complex64::new(normal(rng), 0.0)
        }
    })
}

fn rand_cmat<R: Rng>(rng: &mut R, r: usize, c: usize, complex: bool) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| {
        if complex {
            cnormal(rng)
        } else {
            Complex64::new(normal(rng), 0.0)
        }
    })
}

fn dims<R: Rng>(rng: &mut R) -> (usize, usize) {
    (rng.random_range(1..=8), rng.random_range(1..=4))
}

fn rand_weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random left-stochastic matrix with a random sparsity pattern and a positive diagonal.
fn rand_left_stochastic<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |r, c| {
        if r == c || rng.random_bool(0.5) {
            rng.random::<f64>() + 1e-3
        } else {
            0.0
        }
    });
    for c in 0..n {
        let s: f64 = a.column(c).sum();
        a.column_mut(c).scale_mut(1.0 / s);
    }
    a
}

fn rand_psd<R: Rng>(rng: &mut R, m: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| normal(rng));
    &g * g.transpose() / m as f64
}

/// Random stable Jordan matrix `D_L` and its `|d_2|`; blocks are sorted by decreasing `|d_n|`.
fn rand_jordan<R: Rng>(rng: &mut R, l: usize, complex: bool) -> (CMatrix, f64) {
    let mut sizes = Vec::new();
    let mut left = l;
    while left > 0 {
        let s = rng.random_range(1..=left);
        sizes.push(s);
        left -= s;
    }
    let mut eig: Vec<Complex64> = sizes
        .iter()
        .map(|_| {
            let r = 0.999 * rng.random::<f64>();
            if complex {
                Complex64::from_polar(r, rng.random::<f64>() * std::f64::consts::TAU)
            } else if rng.random_bool(0.5) {
                Complex64::new(r, 0.0)
            } else {
                Complex64::new(-r, 0.0)
            }
        })
        .collect();
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut d = CMatrix::zeros(l, l);
    let mut pos = 0;
    for (s, e) in sizes.iter().zip(&eig) {
        for j in 0..*s {
            d[(pos + j, pos + j)] = *e;
            if j + 1 < *s {
                d[(pos + j, pos + j + 1)] = Complex64::new(1.0, 0.0);
            }
        }
        pos += s;
    }
    (d, eig[0].norm())
}

fn kron_c(a: &CMatrix, m: usize) -> CMatrix {
    let mut out = CMatrix::zeros(a.nrows() * m, a.ncols() * m);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            for d in 0..m {
                out[(i * m + d, j * m + d)] = a[(i, j)];
            }
        }
    }
    out
}

fn check(prop: usize, rng: &mut ChaCha8Rng, ops: &Ops) -> f64 {
    let (n, m) = dims(rng);
    match PROPERTIES[prop] {
        "nonnegativity" => {
            let x = rand_cvec(rng, n * m, true);
            let k = rng.random_range(1..=8);
            let xm = rand_cmat(rng, k * m, n * m, true);
            let p = ops.p(&x, m);
            let pb = ops.pbar(&xm, m);
            let zeros_p = vec![0.0; p.len()];
            let zeros_pb = vec![0.0; pb.len()];
            let neg_p: Vec<f64> = p.iter().map(|v| -v).collect();
            let neg_pb: Vec<f64> = pb.iter().map(|v| -v).collect();
            violation(&neg_p, &zeros_p, 1.0).max(violation(&neg_pb, &zeros_pb, 1.0))
        }
        "scaling" => {
            let x = rand_cvec(rng, n * m, true);
            let xm = rand_cmat(rng, n * m, n * m, true);
            let a = cnormal(rng);
            let lhs = ops.p(&(&x * a), m);
            let rhs = ops.p(&x, m) * a.norm_sqr();
            let lhs_m = ops.pbar(&(&xm * a), m);
            let rhs_m = ops.pbar(&xm, m) * a.norm();
            let s = rhs.amax();
            let sm = rhs_m.amax();
            equality(lhs.as_slice(), rhs.as_slice(), s).max(equality(
                mat_slice(&lhs_m),
                mat_slice(&rhs_m),
                sm,
            ))
        }
        "convexity_energy" => {
            let kk = rng.random_range(2..=5);
            let w = rand_weights(rng, kk);
            let xs: Vec<CVector> = (0..kk).map(|_| rand_cvec(rng, n * m, true)).collect();
            let mut comb = CVector::zeros(n * m);
            let mut rhs = DVector::zeros(n);
            for (wi, x) in w.iter().zip(&xs) {
                comb += x * Complex64::new(*wi, 0.0);
                rhs += ops.p(x, m) * *wi;
            }
            violation(ops.p(&comb, m).as_slice(), rhs.as_slice(), rhs.amax())
        }
        "convexity_norm" => {
            let kk = rng.random_range(2..=5);
            let rows = rng.random_range(1..=8);
            let w = rand_weights(rng, kk);
            let xs: Vec<CMatrix> = (0..kk)
                .map(|_| rand_cmat(rng, rows * m, n * m, true))
                .collect();
            let mut comb = CMatrix::zeros(rows * m, n * m);
            let mut rhs = DMatrix::zeros(rows, n);
            for (wi, x) in w.iter().zip(&xs) {
                comb += x * Complex64::new(*wi, 0.0);
                rhs += ops.pbar(x, m) * *wi;
            }
            violation(mat_slice(&ops.pbar(&comb, m)), mat_slice(&rhs), rhs.amax())
        }
        "additivity" => {
            // y = ±y0 with equal probability, independent of x, so E x_k^* y_k = 0
            // and the expectation is an exact two-point average.
            let x = rand_cvec(rng, n * m, true);
            let y0 = rand_cvec(rng, n * m, true);
            let lhs = (ops.p(&(&x + &y0), m) + ops.p(&(&x - &y0), m)) * 0.5;
            let rhs = ops.p(&x, m) + ops.p(&y0, m);
            equality(lhs.as_slice(), rhs.as_slice(), rhs.amax())
        }
        "triangle_inequality" => {
            let rows = rng.random_range(1..=8);
            let x = rand_cmat(rng, rows * m, n * m, true);
            let y = rand_cmat(rng, rows * m, n * m, true);
            let lhs = ops.pbar(&(&x + &y), m);
            let rhs = ops.pbar(&x, m) + ops.pbar(&y, m);
            violation(mat_slice(&lhs), mat_slice(&rhs), rhs.amax())
        }
        "submultiplicativity" => {
            let k = rng.random_range(1..=8);
            let l = rng.random_range(1..=8);
            let x = rand_cmat(rng, k * m, n * m, true);
            let z = rand_cmat(rng, n * m, l * m, true);
            let lhs = ops.pbar(&(&x * &z), m);
            let rhs = ops.pbar(&x, m) * ops.pbar(&z, m);
            violation(mat_slice(&lhs), mat_slice(&rhs), rhs.amax())
        }
        "kronecker_structure" => {
            let k = rng.random_range(1..=8);
            let x = rand_cmat(rng, k, n, true);
            let lhs = ops.pbar(&kron_c(&x, m), m);
            let rhs = kron_norm_matrix(&x);
            let a = rand_cvec(rng, n, true);
            let b = rand_cvec(rng, m, true);
            let mut ab = CVector::zeros(n * m);
            for i in 0..n {
                for j in 0..m {
                    ab[i * m + j] = a[i] * b[j];
                }
            }
            let lhs_v = ops.p(&ab, m);
            let rhs_v = DVector::from_fn(n, |i, _| a[i].norm_sqr() * b.norm_squared());
            // nonnegative real X: P̄[X ⊗ I] = X
            let xr = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>());
            let lhs_r = ops.pbar(&linalg::to_complex(&kron_identity(&xr, m)), m);
            equality(mat_slice(&lhs), mat_slice(&rhs), rhs.amax())
                .max(equality(lhs_v.as_slice(), rhs_v.as_slice(), rhs_v.amax()))
                .max(equality(mat_slice(&lhs_r), mat_slice(&xr), xr.amax()))
        }
        "norm_relations" => {
            let x = rand_cvec(rng, n * m, true);
            let p = ops.p(&x, m);
            let block_max = (0..n)
                .map(|k| (0..m).map(|d| x[k * m + d].norm_sqr()).sum::<f64>())
                .fold(0.0, f64::max);
            let total = x.norm_squared();
            equality(&[p.amax()], &[block_max], block_max).max(equality(
                &[p.sum()],
                &[total],
                total,
            ))
        }
        "upper_bounds" => {
            let rows = rng.random_range(1..=8);
            let x = rand_cmat(rng, rows * m, n * m, true);
            let pb = ops.pbar(&x, m);
            let n1 = pb.column_iter().map(|c| c.sum()).fold(0.0, f64::max);
            let ninf = linalg::inf_norm(&pb);
            let b1 = DMatrix::from_element(rows, n, n1);
            let binf = DMatrix::from_element(rows, n, ninf);
            violation(mat_slice(&pb), mat_slice(&b1), n1).max(violation(
                mat_slice(&pb),
                mat_slice(&binf),
                ninf,
            ))
        }
        "linear_transform" => {
            let k = rng.random_range(1..=8);
            let q = rand_cmat(rng, k * m, n * m, true);
            let x = rand_cvec(rng, n * m, true);
            let pq = ops.pbar(&q, m);
            let qn = linalg::inf_norm(&pq);
            let px = ops.p(&x, m);
            let lhs = ops.p(&(&q * &x), m);
            let mid = &pq * &px * qn;
            let ub = DVector::from_element(k, qn * qn * px.sum());
            violation(lhs.as_slice(), mid.as_slice(), mid.amax()).max(violation(
                mid.as_slice(),
                ub.as_slice(),
                ub.amax(),
            ))
        }
        "left_stochastic_contraction" => {
            let a = rand_left_stochastic(rng, n);
            let x = rand_cvec(rng, n * m, false);
            let big = linalg::to_complex(&kron_identity(&a.transpose(), m));
            let lhs = ops.p(&(&big * &x), m);
            let rhs = a.transpose() * ops.p(&x, m);
            violation(lhs.as_slice(), rhs.as_slice(), rhs.amax())
        }
        "update_operator" => {
            let rs: Vec<DMatrix<f64>> = (0..n).map(|_| rand_psd(rng, m)).collect();
            let lu = rs.iter().map(linalg::spectral_norm).fold(0.0, f64::max);
            let x = rand_cvec(rng, n * m, false);
            let y = rand_cvec(rng, n * m, false);
            let mut diff = CVector::zeros(n * m);
            for k in 0..n {
                let d: DVector<f64> = DVector::from_fn(m, |j, _| x[k * m + j].re - y[k * m + j].re);
                let s = &rs[k] * d;
                for j in 0..m {
                    diff[k * m + j] = Complex64::new(s[j], 0.0);
                }
            }
            let lhs = ops.p(&diff, m);
            let rhs = ops.p(&(&x - &y), m) * (lu * lu);
            violation(lhs.as_slice(), rhs.as_slice(), rhs.amax())
        }
        "centralized_sandwich" => {
            let rs: Vec<DMatrix<f64>> = (0..n)
                .map(|_| rand_psd(rng, m) + DMatrix::identity(m, m) * 0.05)
                .collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let p_l1: f64 = p.iter().sum::<f64>().max(1e-3);
            let h = rs
                .iter()
                .zip(&p)
                .fold(DMatrix::zeros(m, m), |acc, (r, pk)| acc + r * *pk);
            let lu = rs.iter().map(linalg::spectral_norm).fold(0.0, f64::max);
            let ll = linalg::symmetric_extremes(&h).0;
            let mu = rng.random::<f64>() * 2.0 * ll / (p_l1 * p_l1 * lu * lu);
            let gc = 1.0 - mu * ll + 0.5 * mu * mu * p_l1 * p_l1 * lu * lu;
            let d = DVector::from_fn(m, |_, _| normal(rng));
            // T_c(x) - T_c(y) = (I - mu H)(x - y) for affine updates
            let t = (DMatrix::identity(m, m) - &h * mu) * &d;
            let lhs = t.norm_squared();
            let ub = gc * gc * d.norm_squared();
            let lb = (1.0 - 2.0 * mu * p_l1 * lu) * d.norm_squared();
            violation(&[lhs], &[ub], ub).max(violation(&[lb], &[lhs], d.norm_squared()))
        }
        "stable_jordan" => jordan_check(rng, ops, n, 1),
        "stable_kronecker_jordan" => jordan_check(rng, ops, n, m),
        other => unreachable!("unknown property {other}"),
    }
}

fn jordan_check(rng: &mut ChaCha8Rng, ops: &Ops, l: usize, m: usize) -> f64 {
    let complex = rng.random_bool(0.5);
    let (d, d2) = rand_jordan(rng, l, complex);
    // occasionally use D_L = 0
    let (d, d2) = if rng.random_bool(0.1) {
        (CMatrix::zeros(l, l), 0.0)
    } else {
        (d, d2)
    };
    let big = if m == 1 { d } else { kron_c(&d, m) };
    let x = rand_cvec(rng, l * m, complex);
    let y = rand_cvec(rng, l * m, complex);
    let lhs = ops.p(&(&big * &x + &y), m);
    let ge = gamma_e(l, d2);
    let rhs = &ge * ops.p(&x, m) + ops.p(&y, m) * (2.0 / (1.0 - d2));
    violation(lhs.as_slice(), rhs.as_slice(), rhs.amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_contraction_is_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_cvec(&mut rng, 12, false);
        let a = DMatrix::<f64>::identity(4, 4);
        let big = linalg::to_complex(&kron_identity(&a, 3));
        let ops = Ops { fault: None };
        assert_eq!(ops.p(&(&big * &x), 3), ops.p(&x, 3));
    }

    #[test]
    fn zero_jordan_reduces_to_doubling() {
        let ops = Ops { fault: None };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = rand_cvec(&mut rng, 3, false);
        let lhs = ops.p(&y, 1);
        let rhs = ops.p(&y, 1) * 2.0;
        assert_eq!(violation(lhs.as_slice(), rhs.as_slice(), 1.0), 0.0);
    }

    #[test]
    fn small_suite_passes() {
        let r = operator_property_suite(&SuiteOptions {
            instances: 20,
            ..Default::default()
        });
        assert!(r.passed, "{:#?}", r.failures());
    }

    #[test]
    fn injected_fault_is_reported() {
        let r = operator_property_suite(&SuiteOptions {
            instances: 20,
            fault: Some(Fault::EnergyOperator),
            ..Default::default()
        });
        assert!(!r.passed);
        assert!(r.failures().iter().any(|p| p.name == "norm_relations"));
    }

    #[test]
    fn zero_instances_do_not_pass() {
        let r = operator_property_suite(&SuiteOptions {
            instances: 0,
            ..Default::default()
        });
        assert!(!r.passed);
    }
}
