//! `adaptnet` command-line front end: `simulate`, `analyze`, and `proptest`.

mod config;
mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use adaptnet::analysis::{operator_property_suite, Fault, SuiteOptions, TheoryBundle};
use adaptnet::experiments::{
    compare_to_theory, curve_envelopes, curves_csv, detect_phases, ComparisonOptions,
    ExperimentConfig, ExperimentReport, LearningCurves, Prepared, Status, SCHEMA,
};
use adaptnet::Execution;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::plot::{log_plot, Series};

const EXIT_VERDICT_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "adaptnet",
    version,
    about = "Simulate and analyze diffusion and consensus adaptive networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment and compare it against the theory.
    Simulate(RunArgs),
    /// Print the theoretical quantities of a configuration without simulating.
    Analyze(RunArgs),
    /// Run the randomized operator property suite.
    Proptest(ProptestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (same as --config).
    #[arg(value_name = "CONFIG")]
    config_file: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "config_file")]
    config: Option<PathBuf>,
    /// Override a configuration key, `section.key=value` or a unique `key=value`.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed, overriding `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); falls back to ADAPTNET_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ProptestArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = adaptnet::analysis::DEFAULT_INSTANCES)]
    instances: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Corrupt an operator to check that the suite detects it (`energy` or `norm`).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

impl RunArgs {
    fn load(&self) -> Result<LoadedConfig> {
        let path = self
            .config
            .as_ref()
            .or(self.config_file.as_ref())
            .ok_or_else(|| anyhow!("no configuration given; pass CONFIG or --config PATH"))?;
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("experiment.seed={seed}"));
        }
        config::load(path, &overrides)
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    match flag {
        Some(n) => Ok(n),
        None => match std::env::var("ADAPTNET_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("ADAPTNET_THREADS must be an integer, got `{v}`")),
            Err(_) => Ok(0),
        },
    }
}

fn with_threads<T: Send>(flag: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = resolve_threads(flag)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("cannot start the worker pool")?;
    Ok(pool.install(f))
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    written.push(name.to_string());
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    schema: &'static str,
    command: &'static str,
    tool_version: &'static str,
    config_path: String,
    config_digest: String,
    seed: u64,
    threads: usize,
    outputs: Vec<String>,
    timings_ms: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct AnalyzeReport<'a> {
    schema: &'static str,
    strategy: &'a str,
    config_digest: String,
    rho_gamma: f64,
    gamma_stable: bool,
    #[serde(flatten)]
    bundle: &'a TheoryBundle,
}

struct Stopwatch {
    last: Instant,
    timings: BTreeMap<&'static str, f64>,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            last: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings
            .insert(stage, (now - self.last).as_secs_f64() * 1e3);
        self.last = now;
    }
}

/// Step-size bound of the configuration, independent of its own `mu_max`.
fn stability_bound(cfg: &ExperimentConfig) -> Result<f64> {
    let mut probe = cfg.clone();
    probe.steps = cfg.steps.with_mu_max(1e-9)?;
    probe.horizon = Some(1);
    probe.trials = 1;
    Ok(Prepared::new(probe)?.bundle()?.mu_stab)
}

/// Adds the stability bound to divergence and step-size errors.
fn explain(err: adaptnet::Error, cfg: &ExperimentConfig) -> anyhow::Error {
    if matches!(
        err,
        adaptnet::Error::Divergence { .. } | adaptnet::Error::StepSizeTooLarge { .. }
    ) {
        let mu = cfg.steps.mu_max();
        return match stability_bound(cfg) {
            Ok(bound) => anyhow!(
                "{err}: mu_max = {mu} exceeds the sufficient step-size stability bound mu_stab = {bound:.6e} by a factor {:.3e}",
                mu / bound
            ),
            Err(e) => anyhow!("{err}: mu_max = {mu}; the step-size stability bound could not be evaluated ({e})"),
        };
    }
    anyhow!(err)
}

fn plot_curves(
    curves: &LearningCurves,
    env: &adaptnet::analysis::Envelopes,
    title: &str,
) -> String {
    let gap = curves.centroid_gap_series();
    let series = [
        Series {
            label: "network MSE",
            values: &curves.network_mse,
            color: "#1f77b4",
            width: 1.5,
            dashed: false,
        },
        Series {
            label: "reference MSE",
            values: &curves.ref_mse,
            color: "black",
            width: 2.0,
            dashed: false,
        },
        Series {
            label: "centroid gap",
            values: &gap,
            color: "#2ca02c",
            width: 1.0,
            dashed: false,
        },
        Series {
            label: "residual energy",
            values: &curves.residual_sum,
            color: "#ff7f0e",
            width: 1.0,
            dashed: false,
        },
        Series {
            label: "gap envelope",
            values: &env.wc,
            color: "#2ca02c",
            width: 1.0,
            dashed: true,
        },
        Series {
            label: "residual envelope",
            values: &env.we_sum,
            color: "#ff7f0e",
            width: 1.0,
            dashed: true,
        },
    ];
    log_plot(title, &series, 2)
}

fn simulate(args: &RunArgs) -> Result<ExitCode> {
    let mut watch = Stopwatch::new();
    let loaded = args.load()?;
    let cfg = config::build_experiment(&loaded)?;
    let threads = resolve_threads(args.threads)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let strategy = cfg.strategy.name();

    let prep = Prepared::new(cfg.clone()).map_err(|e| explain(e, &cfg))?;
    watch.lap("prepare");
    let curves = with_threads(args.threads, || prep.run())?.map_err(|e| explain(e, &cfg))?;
    watch.lap("simulate");
    let bundle = prep.bundle().map_err(|e| explain(e, &cfg))?;
    watch.lap("theory");
    let phases = detect_phases(&curves, &bundle)?;
    watch.lap("phases");
    let companion = if loaded.config.experiment.companion {
        let mut half = cfg.clone();
        half.steps = cfg.steps.with_mu_max(cfg.steps.mu_max() / 2.0)?;
        half.horizon = cfg.horizon.map(|h| 2 * h);
        let prep_half = Prepared::new(half.clone()).map_err(|e| explain(e, &half))?;
        let bundle_half = prep_half.bundle()?;
        let curves_half =
            with_threads(args.threads, || prep_half.run())?.map_err(|e| explain(e, &half))?;
        let report = detect_phases(&curves_half, &bundle_half)?;
        watch.lap("companion");
        Some(report)
    } else {
        None
    };
    let verdicts = compare_to_theory(
        &phases,
        &curves,
        &bundle,
        companion.as_ref(),
        &ComparisonOptions::default(),
    )?;
    let env = curve_envelopes(&curves, &bundle)?;
    let report = ExperimentReport::new(strategy, cfg.seed, &curves, phases, verdicts);
    watch.lap("verdicts");

    let mut written = Vec::new();
    write_file(
        &out,
        "curves.csv",
        &curves_csv(&curves, Some(&env)),
        &mut written,
    )?;
    write_file(
        &out,
        "report.json",
        &(report.to_json() + "\n"),
        &mut written,
    )?;
    let title = format!(
        "{strategy}: N={}, mu={}, {} trials",
        curves.n_agents,
        cfg.steps.mu_max(),
        curves.trials
    );
    write_file(
        &out,
        "plot.svg",
        &plot_curves(&curves, &env, &title),
        &mut written,
    )?;
    watch.lap("write");
    written.push("manifest.json".into());
    let manifest = Manifest {
        schema: SCHEMA,
        command: "simulate",
        tool_version: env!("CARGO_PKG_VERSION"),
        config_path: loaded.path.display().to_string(),
        config_digest: loaded.digest(),
        seed: cfg.seed,
        threads,
        outputs: written,
        timings_ms: watch.timings,
    };
    let mut ignored = Vec::new();
    write_file(
        &out,
        "manifest.json",
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
        &mut ignored,
    )?;

    println!(
        "{strategy}: N={} M={} T={} trials={} phase I ends at {}, phase II ends at {}",
        curves.n_agents,
        curves.dim,
        curves.horizon,
        curves.trials,
        report.phases.phase1_end,
        report.phases.phase2_end
    );
    for row in &report.verdicts.rows {
        let status = match row.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        println!("  ({}) {status} {}: {}", row.id, row.name, row.detail);
    }
    println!("outputs written to {}", out.display());
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERDICT_FAILED)
    })
}

fn analyze(args: &RunArgs) -> Result<ExitCode> {
    let loaded = args.load()?;
    let mut cfg = config::build_experiment(&loaded)?;
    cfg.trials = 1;
    cfg.horizon = Some(1);
    let prep = Prepared::new(cfg.clone())?;
    let bundle = prep.bundle()?;
    let rho = adaptnet::linalg::spectral_radius(&bundle.gamma)?;
    let report = AnalyzeReport {
        schema: SCHEMA,
        strategy: cfg.strategy.name(),
        config_digest: loaded.digest(),
        rho_gamma: rho,
        gamma_stable: bundle.gamma_stable(),
        bundle: &bundle,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        write_file(out, "analysis.json", &json, &mut Vec::new())?;
    }
    print!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn proptest(args: &ProptestArgs) -> Result<ExitCode> {
    if args.instances == 0 {
        bail!("nothing tested: instance count is 0");
    }
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("energy") => Some(Fault::EnergyOperator),
        Some("norm") => Some(Fault::NormOperator),
        Some(other) => bail!("unknown fault `{other}`; expected energy or norm"),
    };
    let opts = SuiteOptions {
        seed: args.seed,
        instances: args.instances,
        execution: Execution::Parallel,
        fault,
    };
    let report = with_threads(args.threads, || operator_property_suite(&opts))?;
    for p in &report.properties {
        println!(
            "{} {:<28} max violation {:.3e} (worst instance seed {})",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.max_violation,
            p.worst_instance_seed
        );
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        write_file(
            out,
            "proptest.json",
            &(serde_json::to_string_pretty(&report)? + "\n"),
            &mut Vec::new(),
        )?;
    }
    if report.passed {
        println!(
            "all {} properties hold over {} instances",
            report.properties.len(),
            report.instances
        );
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|p| p.name.as_str()).collect();
        eprintln!("property violations: {}", names.join(", "));
        Ok(ExitCode::from(EXIT_VERDICT_FAILED))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Proptest(a) => proptest(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
