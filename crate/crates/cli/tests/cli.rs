use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adaptnet"));
    c.env_remove("ADAPTNET_THREADS");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to launch adaptnet")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg("simulate").arg(config(cfg)).arg("--out").arg(out);
    for s in extra {
        c.arg(s);
    }
    run(&mut c)
}

fn analyze_json(cfg: &str, extra: &[&str]) -> Value {
    let mut c = bin();
    c.arg("analyze").arg(config(cfg));
    for s in extra {
        c.arg(s);
    }
    let o = run(&mut c);
    assert!(o.status.success(), "analyze failed: {}", stderr(&o));
    serde_json::from_slice(&o.stdout).expect("analyze prints JSON")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate("two_agents.toml", dir.path(), &["--set", "trials=20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["curves.csv", "report.json", "plot.svg", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }

    let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,agent,mse,stderr,ref_mse,centroid_gap_energy,residual_energy_sum,bound_wc,bound_we"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 9);
    let mantissa = row[2].split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(
        mantissa.chars().filter(|c| c.is_ascii_digit()).count(),
        17,
        "{}",
        row[2]
    );

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema"], "adaptnet/1");
    assert_eq!(report["trials"], 20);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["schema"], "adaptnet/1");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["--set", "trials=40", "--seed", "11"];
    let oa = simulate(
        "atc_ring.toml",
        a.path(),
        &[&args[..], &["--threads", "1"]].concat(),
    );
    let ob = simulate(
        "atc_ring.toml",
        b.path(),
        &[&args[..], &["--threads", "4"]].concat(),
    );
    let mut cmd = bin();
    cmd.arg("simulate")
        .arg(config("atc_ring.toml"))
        .arg("--out")
        .arg(c.path())
        .args(args);
    cmd.env("ADAPTNET_THREADS", "3");
    let oc = run(&mut cmd);
    for o in [&oa, &ob, &oc] {
        assert!(
            o.status.code() == Some(0) || o.status.code() == Some(2),
            "{}",
            stderr(o)
        );
    }
    for f in ["curves.csv", "report.json", "plot.svg"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(
            x,
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs between 1 and 4 threads"
        );
        assert_eq!(
            x,
            std::fs::read(c.path().join(f)).unwrap(),
            "{f} differs with ADAPTNET_THREADS"
        );
    }
}

#[test]
fn different_seeds_give_different_curves() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(
        "two_agents.toml",
        a.path(),
        &["--set", "trials=10", "--seed", "1"],
    );
    simulate(
        "two_agents.toml",
        b.path(),
        &["--set", "trials=10", "--seed", "2"],
    );
    assert_ne!(
        std::fs::read(a.path().join("curves.csv")).unwrap(),
        std::fs::read(b.path().join("curves.csv")).unwrap()
    );
}

#[test]
fn divergent_step_size_names_stability_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        "two_agents.toml",
        dir.path(),
        &["--set", "mu_max=10", "--set", "horizon=2000"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("mu_stab"), "{err}");
}

#[test]
fn failing_verdict_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(
        "two_agents.toml",
        dir.path(),
        &[
            "--set",
            "mu_max=0.3",
            "--set",
            "companion=true",
            "--set",
            "trials=100",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("(e) FAIL"), "{}", stdout(&o));
    assert!(dir.path().join("report.json").is_file());
}

#[test]
fn uniform_ring_has_uniform_perron_vector() {
    let v = analyze_json("atc_ring.toml", &[]);
    assert_eq!(v["schema"], "adaptnet/1");
    let theta = floats(&v["theta"]);
    assert_eq!(theta.len(), 10);
    for t in theta {
        assert!((t - 0.1).abs() < 1e-12, "{t}");
    }
}

#[test]
fn consensus_and_atc_share_limit_point() {
    let c = analyze_json("consensus_ring.toml", &[]);
    let a = analyze_json("atc_ring.toml", &[]);
    assert_eq!(c["strategy"], "consensus");
    assert_eq!(a["strategy"], "atc");
    for (x, y) in floats(&c["theta"]).iter().zip(floats(&a["theta"])) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in floats(&c["w_o"]).iter().zip(floats(&a["w_o"])) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn two_agent_limit_point_is_weighted_by_perron_vector() {
    let v = analyze_json("two_agents.toml", &[]);
    let w = floats(&v["w_o"]);
    assert_eq!(w.len(), 1);
    assert!((w[0] - 0.75).abs() < 1e-12);
    let theta = floats(&v["theta"]);
    assert!((theta[0] - 0.25).abs() < 1e-12 && (theta[1] - 0.75).abs() < 1e-12);
    assert_eq!(v["gamma_stable"], true);
}

#[test]
fn analyze_writes_json_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("analyze")
        .arg(config("general_factors.toml"))
        .arg("--out")
        .arg(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("analysis.json")).unwrap())
            .unwrap();
    assert_eq!(written["strategy"], "general");
}

#[test]
fn proptest_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["proptest", "--instances", "60", "--out"])
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
    assert!(!stdout(&o).contains("FAIL"));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("proptest.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn proptest_detects_injected_fault() {
    for fault in ["energy", "norm"] {
        let o = run(bin().args(["proptest", "--instances", "30", "--inject-fault", fault]));
        assert_eq!(o.status.code(), Some(2), "{fault}: {}", stdout(&o));
        assert!(
            stderr(&o).contains("property violations:"),
            "{}",
            stderr(&o)
        );
        assert!(stdout(&o).contains("FAIL"));
    }
}

#[test]
fn proptest_with_no_instances_is_an_error() {
    let o = run(bin().args(["proptest", "--instances", "0"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nothing tested"), "{}", stderr(&o));
}

#[test]
fn invalid_config_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("two_agents.toml"))
        .unwrap()
        .replace("mu_max = 0.01", "mu_max = -0.5");
    std::fs::write(&path, &text).unwrap();
    let line = text.lines().position(|l| l.starts_with("mu_max")).unwrap() + 1;
    let o = run(bin()
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains(&format!("bad.toml:{line}:")), "{err}");
    assert!(err.contains("mu_max"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    let text = std::fs::read_to_string(config("two_agents.toml"))
        .unwrap()
        .replace("trials = 100", "trails = 100");
    std::fs::write(&path, text).unwrap();
    let o = run(bin().arg("analyze").arg(&path));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trails"), "{}", stderr(&o));

    let o = run(bin()
        .arg("analyze")
        .arg(config("two_agents.toml"))
        .args(["--set", "no_such_key=1"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_thread_env_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = bin();
    c.arg("simulate")
        .arg(config("two_agents.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--set", "trials=5"]);
    c.env("ADAPTNET_THREADS", "many");
    let o = run(&mut c);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ADAPTNET_THREADS"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_error() {
    let o = run(bin().args(["analyze", "/nonexistent/adaptnet.toml"]));
    assert_eq!(o.status.code(), Some(1));
}
