use adaptnet::models::{
    default_probe_radius, estimate_noise_constants, hessian_bundle, lipschitz_constant,
    monotonicity_constant, regularity_constants, AgentModel, LmsAgent, ModelKind, NoiseOptions,
};
use adaptnet::Error;
use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn diag_lms(diags: &[&[f64]], minimizers: &[&[f64]], sigma2: f64) -> AgentModel {
    let agents = diags
        .iter()
        .zip(minimizers)
        .map(|(d, w)| LmsAgent {
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            minimizer: DVector::from_column_slice(w),
            noise_variance: sigma2,
        })
        .collect();
    AgentModel::quadratic_lms(agents).unwrap()
}

#[test]
fn lms_update_is_unbiased() {
    let model = diag_lms(&[&[2.0, 0.5]], &[&[1.0, -1.0]], 0.1);
    let w = DVector::from_vec(vec![0.3, 0.7]);
    let s = model.true_update(0, &w).unwrap();
    assert_relative_eq!(
        s,
        DVector::from_vec(vec![2.0 * (0.3 - 1.0), 0.5 * (0.7 + 1.0)]),
        epsilon = 1e-15
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    let mut mean = DVector::zeros(2);
    let mut sq = 0.0;
    for _ in 0..n {
        let g = model.stochastic_update(0, &w, &mut rng);
        sq += (&g - &s).norm_squared();
        mean += g;
    }
    mean /= n as f64;
    sq /= n as f64;
    // Standard error of each mean component is below 0.01 here.
    assert!((&mean - &s).amax() < 0.02, "mean {mean} vs {s}");
    let v = model.gaussian_conditional_variance(0, &w);
    assert!((sq - v).abs() / v < 0.03, "sampled {sq} vs closed form {v}");
}

#[test]
fn gaussian_variance_matches_fourth_moment_formula() {
    // For u ~ N(0, R) and e = w - w°: E‖u uᵀ e - R e‖² = tr(R) eᵀRe + ‖Re‖², plus σ² tr(R).
    let model = diag_lms(&[&[1.0, 3.0]], &[&[0.0, 0.0]], 0.2);
    let w = DVector::from_vec(vec![1.0, 2.0]);
    let r = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
    let re = &r * &w;
    let expected = r.trace() * w.dot(&re) + re.norm_squared() + 0.2 * r.trace();
    assert_relative_eq!(
        model.gaussian_conditional_variance(0, &w),
        expected,
        max_relative = 1e-12
    );
}

#[test]
fn regularity_constants_of_diagonal_model() {
    let model = diag_lms(
        &[&[1.0, 4.0], &[3.0, 2.0]],
        &[&[0.0, 0.0], &[1.0, 1.0]],
        0.01,
    );
    let p = DVector::from_vec(vec![0.5, 0.5]);
    assert_relative_eq!(lipschitz_constant(&model), 4.0);
    assert_relative_eq!(
        monotonicity_constant(&model, &p).unwrap(),
        2.0,
        epsilon = 1e-12
    );
    let c = regularity_constants(&model, &p).unwrap();
    assert_relative_eq!(c.lambda_u, 4.0);
    assert_relative_eq!(c.lambda_l, 2.0, epsilon = 1e-12);
    assert!(c.alpha > 0.0 && c.sigma_v2 > 0.0);
    assert_eq!(c.lambda_h, 0.0);

    let h = hessian_bundle(&model, &p, &DVector::zeros(2)).unwrap();
    assert_relative_eq!(
        h.h_c,
        DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
        epsilon = 1e-15
    );
}

#[test]
fn global_observability_is_required() {
    // Each agent sees one coordinate only; the weighted sum is still positive definite.
    let model = diag_lms(
        &[&[1.0, 0.0], &[0.0, 1.0]],
        &[&[0.0, 0.0], &[0.0, 0.0]],
        0.01,
    );
    let p = DVector::from_vec(vec![0.5, 0.5]);
    assert_relative_eq!(
        monotonicity_constant(&model, &p).unwrap(),
        0.5,
        epsilon = 1e-12
    );
    let p_one = DVector::from_vec(vec![1.0, 0.0]);
    assert!(matches!(
        regularity_constants(&model, &p_one),
        Err(Error::NotObservable { .. })
    ));
}

#[test]
fn noise_envelope_dominates_closed_form_variance() {
    let model = diag_lms(
        &[&[1.0, 2.0], &[0.5, 0.5]],
        &[&[1.0, 0.0], &[0.0, -1.0]],
        0.05,
    );
    let est = estimate_noise_constants(&model, &NoiseOptions::default()).unwrap();
    assert_relative_eq!(est.probe_radius, default_probe_radius(&model));
    assert_relative_eq!(default_probe_radius(&model), 11.0);
    for r in [0.0, 1.0, 5.0, 11.0] {
        for k in 0..2 {
            for dir in [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]] {
                let w = DVector::from_vec(vec![r * dir[0], r * dir[1]]);
                let v = model.gaussian_conditional_variance(k, &w);
                assert!(
                    v <= est.alpha * r * r + est.sigma_v2,
                    "agent {k} at {w}: {v}"
                );
            }
        }
    }
    let small = NoiseOptions {
        sample_budget: 1,
        ..NoiseOptions::default()
    };
    assert!(estimate_noise_constants(&model, &small).is_err());
}

#[test]
fn deterministic_model_has_no_noise() {
    let h = vec![DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2)];
    let c = vec![
        DVector::from_vec(vec![1.0, 0.0]),
        DVector::from_vec(vec![0.0, 1.0]),
    ];
    let model = AgentModel::custom_deterministic(h, c).unwrap();
    assert_eq!(model.kind(), ModelKind::CustomDeterministic);
    let w = DVector::from_vec(vec![0.5, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 0..2 {
        assert_eq!(
            model.stochastic_update(k, &w, &mut rng),
            model.true_update(k, &w).unwrap()
        );
        assert_eq!(model.gaussian_conditional_variance(k, &w), 0.0);
    }
}

#[test]
fn invalid_models_are_rejected() {
    let not_spd = LmsAgent {
        covariance: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        minimizer: DVector::zeros(2),
        noise_variance: 0.1,
    };
    assert!(AgentModel::quadratic_lms(vec![not_spd]).is_err());
    let negative_noise = LmsAgent {
        covariance: DMatrix::identity(1, 1),
        minimizer: DVector::zeros(1),
        noise_variance: -1.0,
    };
    assert!(AgentModel::quadratic_lms(vec![negative_noise]).is_err());
    let model = diag_lms(&[&[1.0]], &[&[0.0]], 0.1);
    assert!(matches!(
        model.true_update(3, &DVector::zeros(1)),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        model.true_update(0, &DVector::zeros(2)),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        model.true_update(0, &DVector::from_element(1, f64::NAN)),
        Err(Error::Domain(_))
    ));
}
