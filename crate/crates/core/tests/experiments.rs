use adaptnet::experiments::{
    compare_to_theory, curve_envelopes, curves_csv, detect_phases, fmt_f64, run_experiment,
    ComparisonOptions, ExperimentConfig, ExperimentReport, Init, Prepared, Status, CURVES_HEADER,
    SCHEMA,
};
use adaptnet::models::{AgentModel, LmsAgent};
use adaptnet::network::{make_policy, PolicyRule, StepSizeProfile, Topology};
use adaptnet::strategies::StrategyKind;
use adaptnet::Error;
use nalgebra::{DMatrix, DVector};

/// Nearly common minimizers keep the squared O(mu) bias far below the O(mu)
/// noise floor, so the steady-state MSE scales linearly in `mu`.
fn ring_config(mu: f64, trials: usize) -> ExperimentConfig {
    let n = 8;
    let topo =
        adaptnet::network::build_topology(&adaptnet::network::TopologyKind::Ring, n, 0).unwrap();
    let a = make_policy(&topo, &PolicyRule::Metropolis).unwrap();
    let agents = (0..n)
        .map(|k| LmsAgent {
            covariance: DMatrix::identity(2, 2) * (1.0 + 0.1 * k as f64),
            minimizer: DVector::from_vec(vec![1.0 + 0.01 * k as f64, -1.0]),
            noise_variance: 0.01,
        })
        .collect();
    let model = AgentModel::quadratic_lms(agents).unwrap();
    let mut cfg = ExperimentConfig::new(
        StrategyKind::Atc,
        a,
        StepSizeProfile::uniform(mu, n).unwrap(),
        model,
    );
    cfg.trials = trials;
    cfg.seed = 17;
    cfg.init = Init::Dispersed {
        spread: 3.0,
        seed: 2,
    };
    cfg
}

#[cfg(feature = "parallel")]
#[test]
fn results_do_not_depend_on_thread_count() {
    let mut cfg = ring_config(0.02, 70);
    cfg.horizon = Some(300);
    cfg.execution = adaptnet::Execution::Sequential;
    let reference = run_experiment(&cfg).unwrap();
    cfg.execution = adaptnet::Execution::Parallel;
    for threads in [1, 2, 5] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let curves = pool.install(|| run_experiment(&cfg).unwrap());
        assert_eq!(
            curves_csv(&curves, None),
            curves_csv(&reference, None),
            "{threads} threads"
        );
    }
    cfg.seed += 1;
    assert_ne!(
        curves_csv(&run_experiment(&cfg).unwrap(), None),
        curves_csv(&reference, None)
    );
}

#[test]
fn csv_and_report_formats() {
    let mut cfg = ring_config(0.02, 8);
    cfg.horizon = Some(20);
    let prep = Prepared::new(cfg).unwrap();
    let curves = prep.run().unwrap();
    let bundle = prep.bundle().unwrap();
    let env = curve_envelopes(&curves, &bundle).unwrap();
    let csv = curves_csv(&curves, Some(&env));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVES_HEADER));
    assert_eq!(csv.lines().count(), 1 + 21 * 8);
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9);
        for c in &cols[2..] {
            let v: f64 = c.parse().unwrap();
            assert_eq!(fmt_f64(v), *c);
        }
    }
    assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    assert_eq!(fmt_f64(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);

    let without = curves_csv(&curves, None);
    assert!(without.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn pareto_point_is_reached_by_every_agent() {
    // Star network, relative-degree weights: the hub carries more weight in w°,
    // which is not the mean of the individual minimizers.
    let n = 5;
    let adjacency: Vec<Vec<bool>> = (0..n)
        .map(|k| (0..n).map(|l| k == 0 || l == 0).collect())
        .collect();
    let topo = Topology::from_adjacency(&adjacency).unwrap();
    let a = make_policy(&topo, &PolicyRule::RelativeDegree).unwrap();
    let agents = (0..n)
        .map(|k| LmsAgent {
            covariance: DMatrix::identity(1, 1),
            minimizer: DVector::from_element(1, k as f64),
            noise_variance: 0.01,
        })
        .collect();
    let model = AgentModel::quadratic_lms(agents).unwrap();
    let mut cfg = ExperimentConfig::new(
        StrategyKind::Atc,
        a,
        StepSizeProfile::uniform(0.01, n).unwrap(),
        model,
    );
    cfg.trials = 300;
    cfg.seed = 9;
    let prep = Prepared::new(cfg).unwrap();
    // theta_k ∝ n_k sum_{m in N_k} n_m: hub 5*(5+4*2) = 65, leaves 2*(5+2) = 14.
    let w_o_expected = (14.0 * (1.0 + 2.0 + 3.0 + 4.0)) / (65.0 + 4.0 * 14.0);
    assert!((prep.w_o[0] - w_o_expected).abs() < 1e-12);
    assert!((prep.w_o[0] - 2.0).abs() > 0.5);
    let curves = prep.run().unwrap();
    for k in 0..n {
        let mean = curves.steady_mean_of(k)[0];
        let se = curves.steady_mean_se_of(k)[0];
        // O(mu) bias plus Monte Carlo error.
        assert!(
            (mean - w_o_expected).abs() < 0.05 + 4.0 * se,
            "agent {k}: {mean} vs {w_o_expected}"
        );
    }
}

#[test]
fn well_posed_experiment_passes_rate_verdicts() {
    let prep = Prepared::new(ring_config(0.02, 400)).unwrap();
    let bundle = prep.bundle().unwrap();
    let curves = prep.run().unwrap();
    let report = detect_phases(&curves, &bundle).unwrap();
    assert!(report.phase1_end < report.phase2_end, "{report:?}");
    assert!(report.fitted_rate_phase1.is_some());
    let fit2 = report.fitted_rate_phase2.expect("phase II window");
    let rel = (fit2.ratio - bundle.rate_phase2).abs() / bundle.rate_phase2;
    assert!(
        rel < 0.05,
        "phase II ratio {} vs {}",
        fit2.ratio,
        bundle.rate_phase2
    );

    let half = {
        let mut cfg = ring_config(0.01, 400);
        cfg.seed = 18;
        let p = Prepared::new(cfg).unwrap();
        let b = p.bundle().unwrap();
        detect_phases(&p.run().unwrap(), &b).unwrap()
    };
    let table = compare_to_theory(
        &report,
        &curves,
        &bundle,
        Some(&half),
        &ComparisonOptions::default(),
    )
    .unwrap();
    for id in ["a", "b", "e"] {
        assert_eq!(
            table.row(id).unwrap().status,
            Status::Pass,
            "{:?}",
            table.row(id)
        );
    }
    let ratio = table.row("e").unwrap().measured.unwrap();
    assert!((1.6..=2.4).contains(&ratio));

    let json = ExperimentReport::new("atc", 17, &curves, report, table).to_json();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["schema"], SCHEMA);
    assert_eq!(parsed["n_agents"], 8);
}

#[test]
fn short_horizon_is_reported() {
    let mut cfg = ring_config(0.02, 20);
    cfg.horizon = Some(100);
    let prep = Prepared::new(cfg).unwrap();
    let curves = prep.run().unwrap();
    let bundle = prep.bundle().unwrap();
    assert!(matches!(
        detect_phases(&curves, &bundle),
        Err(Error::HorizonInsufficient(_))
    ));
}

#[test]
fn common_zero_start_has_no_residual_energy() {
    let mut cfg = ring_config(0.02, 5);
    cfg.init = Init::CommonZero;
    cfg.horizon = Some(10);
    let curves = run_experiment(&cfg).unwrap();
    assert_eq!(curves.residual_sum[0], 0.0);
    assert!(curves.residual_sum[1] > 0.0);
    cfg.init = Init::Dispersed {
        spread: 1.0,
        seed: 0,
    };
    assert!(run_experiment(&cfg).unwrap().residual_sum[0] > 0.0);
}
