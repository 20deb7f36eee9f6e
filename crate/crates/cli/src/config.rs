//! TOML run configuration: parsing, `--set` overrides, digest, and conversion
//! into an experiment configuration.

use std::path::{Path, PathBuf};

use adaptnet::experiments::{ExperimentConfig, Init};
use adaptnet::models::{AgentModel, LmsAgent, NoiseOptions};
use adaptnet::nalgebra::{DMatrix, DVector};
use adaptnet::network::{
    build_topology, make_policy, CombinationMatrices, PolicyRule, StepSizeProfile, TopologyKind,
};
use adaptnet::strategies::StrategyKind;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub topology: TopologySection,
    pub policy: PolicySection,
    pub strategy: StrategySection,
    pub model: ModelSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: String,
    pub n_agents: usize,
    pub radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub adjacency: Option<Vec<Vec<bool>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub rule: String,
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// A factor of the general strategy: `"policy"`, `"identity"`, or a matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: String,
    pub mu_max: f64,
    pub beta: Option<Vec<f64>>,
    pub a1: Option<FactorSpec>,
    pub a0: Option<FactorSpec>,
    pub a2: Option<FactorSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            OneOrMany::One(x) => Ok(vec![*x; n]),
            OneOrMany::Many(v) if v.len() == n => Ok(v.clone()),
            OneOrMany::Many(v) => bail!("{what} has {} entries but there are {n} agents", v.len()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"lms"` or `"deterministic"`.
    pub kind: String,
    pub dim: usize,
    /// `R_k = s_k I`; ignored when `covariances` is given.
    pub covariance_scale: Option<OneOrMany>,
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
    /// Per-agent minimizers; `minimizer` gives one shared by all agents.
    pub minimizers: Option<Vec<Vec<f64>>>,
    pub minimizer: Option<Vec<f64>>,
    pub noise_variance: Option<OneOrMany>,
    pub noise_samples: Option<usize>,
    pub noise_probe_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub init_seed: u64,
    /// Also run at `mu_max / 2` to evaluate the steady-state scaling verdict.
    #[serde(default)]
    pub companion: bool,
}

fn default_trials() -> usize {
    100
}

fn default_init() -> String {
    "common_zero".into()
}

fn default_spread() -> f64 {
    1.0
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            trials: default_trials(),
            horizon: None,
            seed: 0,
            init: default_init(),
            spread: default_spread(),
            init_seed: 0,
            companion: false,
        }
    }
}

/// A configuration file after overrides, with its canonical text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub source: String,
    pub canonical: String,
    pub config: FileConfig,
}

impl LoadedConfig {
    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `path:line: message` when `section.key` can be found in the source.
    pub fn anchored(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
        match locate(&self.source, section, key) {
            Some(line) => anyhow!("{}:{line}: {section}.{key}: {msg}", self.path.display()),
            None => anyhow!("{}: {section}.{key}: {msg}", self.path.display()),
        }
    }
}

/// 1-based line of `key` inside `[section]`.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// Section that owns each key, for undotted overrides of keys absent from the file.
const SCHEMA_KEYS: &[(&str, &str)] = &[
    ("n_agents", "topology"),
    ("radius", "topology"),
    ("adjacency", "topology"),
    ("rule", "policy"),
    ("matrix", "policy"),
    ("mu_max", "strategy"),
    ("beta", "strategy"),
    ("a1", "strategy"),
    ("a0", "strategy"),
    ("a2", "strategy"),
    ("dim", "model"),
    ("covariance_scale", "model"),
    ("covariances", "model"),
    ("minimizers", "model"),
    ("minimizer", "model"),
    ("noise_variance", "model"),
    ("noise_samples", "model"),
    ("noise_probe_radius", "model"),
    ("trials", "experiment"),
    ("horizon", "experiment"),
    ("seed", "experiment"),
    ("init", "experiment"),
    ("spread", "experiment"),
    ("init_seed", "experiment"),
    ("companion", "experiment"),
];

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `key=value`; an undotted key must name a unique existing key, with
/// `[experiment]` taking precedence.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s.to_string(), f.to_string()),
        None => {
            let owners: Vec<String> = table
                .iter()
                .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
                .map(|(k, _)| k.clone())
                .collect();
            let section = match owners.as_slice() {
                [one] => one.clone(),
                [] => match SCHEMA_KEYS.iter().find(|(k, _)| *k == key) {
                    Some((_, section)) => section.to_string(),
                    None => bail!(
                        "override `{key}` does not match any configuration key; use section.{key}"
                    ),
                },
                many if many.iter().any(|s| s == "experiment") => "experiment".to_string(),
                many => bail!("override `{key}` is ambiguous between sections {many:?}"),
            };
            (section, key.to_string())
        }
    };
    if field.contains('.') {
        bail!("override `{key}` is nested deeper than section.key");
    }
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| Value::Table(Table::new()));
    let t = entry
        .as_table_mut()
        .ok_or_else(|| anyhow!("`{section}` is not a section"))?;
    let value = match (t.get(&field), value) {
        (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    t.insert(field, value);
    Ok(())
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let source =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut table: Table =
        toml::from_str(&source).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    // Schema errors in the file itself are reported against its own lines.
    let _: FileConfig = toml::from_str(&source).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let canonical = toml::to_string(&table).context("cannot serialize the resolved config")?;
    let config: FileConfig =
        toml::from_str(&canonical).map_err(|e| anyhow!("after --set overrides: {e}"))?;
    Ok(LoadedConfig {
        path: path.to_path_buf(),
        source,
        canonical,
        config,
    })
}

fn matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        bail!("matrix must be {n}x{n}");
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// Policy matrix and strategy, including the general factors.
pub struct Network {
    pub policy: DMatrix<f64>,
    pub strategy: StrategyKind,
}

pub fn build_network(lc: &LoadedConfig) -> Result<Network> {
    let cfg = &lc.config;
    let t = &cfg.topology;
    let kind = match t.kind.as_str() {
        "ring" => TopologyKind::Ring,
        "complete" => TopologyKind::Complete,
        "random_geometric" => TopologyKind::RandomGeometric {
            radius: t.radius.ok_or_else(|| {
                lc.anchored("topology", "kind", "random_geometric requires radius")
            })?,
        },
        "explicit" => TopologyKind::Explicit {
            adjacency: t.adjacency.clone().ok_or_else(|| {
                lc.anchored("topology", "kind", "explicit topology requires adjacency")
            })?,
        },
        other => {
            return Err(lc.anchored(
                "topology",
                "kind",
                format!("unknown topology kind `{other}`"),
            ))
        }
    };
    let topology = build_topology(&kind, t.n_agents, t.seed)
        .map_err(|e| lc.anchored("topology", "kind", e))?;
    let rule =
        match cfg.policy.rule.as_str() {
            "uniform_averaging" => PolicyRule::UniformAveraging,
            "metropolis" => PolicyRule::Metropolis,
            "relative_degree" => PolicyRule::RelativeDegree,
            "identity" => PolicyRule::Identity,
            "explicit" => PolicyRule::Explicit {
                matrix: cfg.policy.matrix.clone().ok_or_else(|| {
                    lc.anchored("policy", "rule", "explicit policy requires matrix")
                })?,
            },
            other => {
                return Err(lc.anchored("policy", "rule", format!("unknown policy rule `{other}`")))
            }
        };
    let policy = make_policy(&topology, &rule).map_err(|e| lc.anchored("policy", "rule", e))?;
    let n = t.n_agents;
    let strategy = match cfg.strategy.kind.as_str() {
        "consensus" => StrategyKind::Consensus,
        "cta" => StrategyKind::Cta,
        "atc" => StrategyKind::Atc,
        "general" => {
            let s = &cfg.strategy;
            let factor = |name: &str, spec: &Option<FactorSpec>| -> Result<DMatrix<f64>> {
                match spec {
                    None => Ok(DMatrix::identity(n, n)),
                    Some(FactorSpec::Named(x)) if x == "identity" => Ok(DMatrix::identity(n, n)),
                    Some(FactorSpec::Named(x)) if x == "policy" => Ok(policy.clone()),
                    Some(FactorSpec::Named(x)) => Err(lc.anchored(
                        "strategy",
                        name,
                        format!("expected \"policy\", \"identity\" or a matrix, got `{x}`"),
                    )),
                    Some(FactorSpec::Matrix(rows)) => {
                        matrix(rows, n).map_err(|e| lc.anchored("strategy", name, e))
                    }
                }
            };
            let factors = CombinationMatrices::with_topology(
                factor("a1", &s.a1)?,
                factor("a0", &s.a0)?,
                factor("a2", &s.a2)?,
                &topology,
            )
            .map_err(|e| lc.anchored("strategy", "kind", e))?;
            StrategyKind::General(factors)
        }
        other => {
            return Err(lc.anchored("strategy", "kind", format!("unknown strategy `{other}`")))
        }
    };
    Ok(Network { policy, strategy })
}

pub fn build_model(lc: &LoadedConfig) -> Result<AgentModel> {
    let n = lc.config.topology.n_agents;
    let m = &lc.config.model;
    let dim = m.dim;
    if dim == 0 {
        return Err(lc.anchored("model", "dim", "dimension must be >= 1"));
    }
    let matrices: Vec<DMatrix<f64>> = match (&m.covariances, &m.covariance_scale) {
        (Some(list), _) => {
            if list.len() != n {
                return Err(lc.anchored(
                    "model",
                    "covariances",
                    format!("{} matrices for {n} agents", list.len()),
                ));
            }
            list.iter()
                .map(|rows| {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        Err(lc.anchored(
                            "model",
                            "covariances",
                            format!("every matrix must be {dim}x{dim}"),
                        ))
                    } else {
                        Ok(DMatrix::from_fn(dim, dim, |r, c| rows[r][c]))
                    }
                })
                .collect::<Result<_>>()?
        }
        (None, scale) => {
            let scales = scale
                .clone()
                .unwrap_or(OneOrMany::One(1.0))
                .expand(n, "covariance_scale")
                .map_err(|e| lc.anchored("model", "covariance_scale", e))?;
            scales
                .iter()
                .map(|&s| DMatrix::identity(dim, dim) * s)
                .collect()
        }
    };
    let centers: Vec<DVector<f64>> = match (&m.minimizers, &m.minimizer) {
        (Some(list), _) => {
            if list.len() != n {
                return Err(lc.anchored(
                    "model",
                    "minimizers",
                    format!("{} minimizers for {n} agents", list.len()),
                ));
            }
            if list.iter().any(|w| w.len() != dim) {
                return Err(lc.anchored(
                    "model",
                    "minimizers",
                    format!("every minimizer must have {dim} entries"),
                ));
            }
            list.iter().map(|w| DVector::from_column_slice(w)).collect()
        }
        (None, Some(w)) => {
            if w.len() != dim {
                return Err(lc.anchored("model", "minimizer", format!("expected {dim} entries")));
            }
            vec![DVector::from_column_slice(w); n]
        }
        (None, None) => vec![DVector::zeros(dim); n],
    };
    match m.kind.as_str() {
        "lms" => {
            let noise = m
                .noise_variance
                .clone()
                .unwrap_or(OneOrMany::One(0.0))
                .expand(n, "noise_variance")
                .map_err(|e| lc.anchored("model", "noise_variance", e))?;
            let agents = matrices
                .into_iter()
                .zip(centers)
                .zip(noise)
                .map(|((covariance, minimizer), noise_variance)| LmsAgent {
                    covariance,
                    minimizer,
                    noise_variance,
                })
                .collect();
            AgentModel::quadratic_lms(agents).map_err(|e| lc.anchored("model", "kind", e))
        }
        "deterministic" => AgentModel::custom_deterministic(matrices, centers)
            .map_err(|e| lc.anchored("model", "kind", e)),
        other => Err(lc.anchored("model", "kind", format!("unknown model kind `{other}`"))),
    }
}

pub fn build_experiment(lc: &LoadedConfig) -> Result<ExperimentConfig> {
    let net = build_network(lc)?;
    let model = build_model(lc)?;
    let n = lc.config.topology.n_agents;
    let s = &lc.config.strategy;
    let steps = match &s.beta {
        None => StepSizeProfile::uniform(s.mu_max, n),
        Some(beta) if beta.len() != n => {
            return Err(lc.anchored(
                "strategy",
                "beta",
                format!("{} entries for {n} agents", beta.len()),
            ))
        }
        Some(beta) => StepSizeProfile::new(s.mu_max, beta.clone()),
    }
    .map_err(|e| lc.anchored("strategy", "mu_max", e))?;
    let e = &lc.config.experiment;
    let init = match e.init.as_str() {
        "common_zero" => Init::CommonZero,
        "dispersed" => Init::Dispersed {
            spread: e.spread,
            seed: e.init_seed,
        },
        other => return Err(lc.anchored("experiment", "init", format!("unknown init `{other}`"))),
    };
    let mut cfg = ExperimentConfig::new(net.strategy, net.policy, steps, model);
    cfg.trials = e.trials;
    cfg.horizon = e.horizon;
    cfg.seed = e.seed;
    cfg.init = init;
    let m = &lc.config.model;
    cfg.noise = NoiseOptions {
        sample_budget: m
            .noise_samples
            .unwrap_or(NoiseOptions::default().sample_budget),
        probe_radius: m.noise_probe_radius,
        ..NoiseOptions::default()
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn undotted_override_prefers_experiment() {
        let mut t =
            table("[topology]\nseed = 1\n[experiment]\nseed = 2\n[strategy]\nmu_max = 0.1\n");
        apply_override(&mut t, "seed=9").unwrap();
        apply_override(&mut t, "mu_max=10").unwrap();
        assert_eq!(t["experiment"]["seed"].as_integer(), Some(9));
        assert_eq!(t["topology"]["seed"].as_integer(), Some(1));
        assert_eq!(t["strategy"]["mu_max"].as_float(), Some(10.0));
    }

    #[test]
    fn dotted_override_and_bare_strings() {
        let mut t = table("[topology]\nkind = \"ring\"\n");
        apply_override(&mut t, "topology.kind=complete").unwrap();
        apply_override(&mut t, "experiment.horizon=50").unwrap();
        assert_eq!(t["topology"]["kind"].as_str(), Some("complete"));
        assert_eq!(t["experiment"]["horizon"].as_integer(), Some(50));
        assert!(apply_override(&mut t, "nonsense=1").is_err());
        apply_override(&mut t, "trials=7").unwrap();
        assert_eq!(t["experiment"]["trials"].as_integer(), Some(7));
        assert!(apply_override(&mut t, "missing_equals").is_err());
    }

    #[test]
    fn locate_finds_section_keys() {
        let src = "[a]\nx = 1\n\n[b]\nx = 2\n";
        assert_eq!(locate(src, "b", "x"), Some(5));
        assert_eq!(locate(src, "a", "x"), Some(2));
        assert_eq!(locate(src, "c", "x"), None);
    }
}
