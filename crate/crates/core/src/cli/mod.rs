//! The `fiadd` command surface.
//!
//! Every command reads a [`RunConfig`] assembled from an optional TOML file
//! plus `--key value` overrides. A key is either a dotted path
//! (`train.objective.gamma`) or a bare field name, which resolves against the
//! command's own section first and then against every other section.
//!
//! Reports go to the report directory as aligned text (`<name>.txt`) and
//! line-delimited JSON (`<name>.jsonl`).

mod commands;
mod gradcheck;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_analyze, cmd_eval, cmd_synth, cmd_sweep, cmd_train, cmd_validate, AnalyzeOutcome, EvalOutcome, SeedSummary,
    SweepOutcome, SweepRow, TrainSummary,
};
pub use gradcheck::{cmd_gradcheck, gradcheck_rows, GradCheckRow, GRADCHECK_TOLERANCE};
pub use report::Report;

use crate::dataset::SyntheticSpec;
use crate::model::TrainConfig;

/// Environment variable naming the report directory.
pub const REPORT_DIR_ENV: &str = "FIADD_REPORT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    /// 2 for validation errors, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<crate::dataset::DatasetError> for CliError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        use crate::dataset::DatasetError as E;
        match e {
            E::Io(_) => CliError::Runtime(e.into()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Validate,
    Train,
    Eval,
    Analyze,
    Sweep,
    GradCheck,
}

impl Command {
    /// Config section searched first for bare override keys.
    pub fn section(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Validate => "paths",
            Command::Train | Command::Sweep => "train",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
            Command::GradCheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    /// Checkpoints and training histories.
    pub output: PathBuf,
    /// Checkpoint read by `eval` and `analyze`; defaults to the best one
    /// written by `train`.
    pub checkpoint: Option<PathBuf>,
    /// Falls back to `$FIADD_REPORT_DIR`, then `reports`.
    pub reports: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/synthetic.jsonl".into(),
            output: "runs".into(),
            checkpoint: None,
            reports: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    /// Replaces every class's sample count.
    pub count: Option<i64>,
    pub spec: SyntheticSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            seed: 1,
            count: None,
            spec: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { ratio: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    Classifier,
    NearestCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    #[default]
    Best,
    Final,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub split: EvalSplit,
    /// Ignored in nearest-cluster mode, whose centroids belong to the final
    /// weights.
    pub weights: Weights,
    /// Class name to coarse class name, for two-way scoring.
    pub merge: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Metric of the linkage-distance table.
    pub metric: crate::analysis::Metric,
    pub center: crate::analysis::Center,
    pub silhouette_metric: crate::analysis::Metric,
    pub k: usize,
    pub weights: Weights,
    pub non_hate: String,
    pub explicit: String,
    pub implicit: String,
    pub latent_dump: bool,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            metric: crate::analysis::Metric::L1,
            center: crate::analysis::Center::Mean,
            silhouette_metric: crate::analysis::Metric::L2,
            k: 3,
            weights: Weights::Final,
            non_hate: "N-Hate".into(),
            explicit: "EXP".into(),
            implicit: "IMP".into(),
            latent_dump: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Any override key, e.g. `gamma` or `k`.
    pub param: String,
    pub values: Vec<toml::Value>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            param: "gamma".into(),
            values: (1..=5).map(toml::Value::Integer).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub batches: usize,
    pub seed: u64,
    pub step: f64,
    /// Operation whose analytic gradient is deliberately perturbed.
    pub corrupt: Option<String>,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            batches: 20,
            seed: 1,
            step: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One split and one training run per seed.
    pub seeds: Vec<u64>,
    pub paths: Paths,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub analyze: AnalyzeSection,
    pub sweep: SweepSection,
    pub gradcheck: GradCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 4, 7],
            paths: Paths::default(),
            synth: SynthSection::default(),
            split: SplitSection::default(),
            train: TrainConfig {
                minority_class: 2,
                ..TrainConfig::default()
            },
            eval: EvalSection::default(),
            analyze: AnalyzeSection::default(),
            sweep: SweepSection::default(),
            gradcheck: GradCheckSection::default(),
        }
    }
}

/// Optional fields absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &[
    "paths.checkpoint",
    "paths.reports",
    "synth.count",
    "train.warmup_epochs",
    "train.objective.class_weights",
    "gradcheck.corrupt",
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self, CliError> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)], command: Command) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            apply_override(&mut table, key, raw, command)?;
        }
        Self::from_table(table)
    }

    /// This config with one more override applied.
    pub fn with_override(&self, key: &str, raw: &str, command: Command) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(self).map_err(|e| CliError::Runtime(e.into()))?;
        apply_override(&mut table, key, raw, command)?;
        Self::from_table(table)
    }
}

fn leaf_paths(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let toml::Value::Table(t) = v {
            // `points_per_cluster` and covariances are values, not sections.
            if !matches!(k.as_str(), "points_per_cluster" | "spec" | "merge") {
                leaf_paths(&path, t, out);
                continue;
            }
        }
        out.push(path);
    }
}

fn defaults_table() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Resolves a bare or dotted key to a full dotted path.
pub fn resolve_key(key: &str, command: Command) -> Result<String, CliError> {
    let key = key.trim_start_matches('-').replace('-', "_");
    let mut known = Vec::new();
    leaf_paths("", &defaults_table(), &mut known);
    known.extend(OPTIONAL_KEYS.iter().map(|s| s.to_string()));
    known.extend(["synth.spec".to_string(), "eval.merge".to_string()]);
    if key.contains('.') {
        return Ok(key);
    }
    let candidates: Vec<&String> = known
        .iter()
        .filter(|p| p.rsplit('.').next() == Some(key.as_str()))
        .collect();
    let section = command.section();
    if let Some(p) = candidates.iter().find(|p| p.starts_with(&format!("{section}."))) {
        return Ok((*p).clone());
    }
    match candidates.as_slice() {
        [] => Err(CliError::Validation(format!("unknown option --{key}"))),
        [one] => Ok((*one).clone()),
        many => {
            let mut names: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
            names.sort();
            Err(CliError::Validation(format!(
                "ambiguous option --{key}: use one of {}",
                names.join(", ")
            )))
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn lookup<'a>(table: &'a toml::Table, path: &[&str]) -> Option<&'a toml::Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get(*p)?.as_table()?;
    }
    t.get(*last)
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str, command: Command) -> Result<(), CliError> {
    let path = resolve_key(key, command)?;
    let parts: Vec<&str> = path.split('.').collect();
    let mut value = parse_value(raw);
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (lookup(&defaults_table(), &parts), &value) {
        value = toml::Value::Float(*i as f64);
    }
    let (last, parents) = parts.split_last().expect("non-empty path");
    let mut t = table;
    for p in parents {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("{path}: {p} is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Splits `--key value` and `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Validation(format!("expected --key value, got {arg:?}")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let value = iter
                    .next()
                    .ok_or_else(|| CliError::Validation(format!("--{key} needs a value")))?;
                out.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(out)
}

/// Settings shared by every command invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub timestamp: bool,
    pub report_dir: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, timestamp: bool) -> Self {
        let report_dir = config
            .paths
            .reports
            .clone()
            .or_else(|| std::env::var_os(REPORT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("reports"));
        Self {
            config,
            timestamp,
            report_dir,
        }
    }

    pub fn write_report(&self, report: &Report) -> Result<(), CliError> {
        report.write(&self.report_dir, self.timestamp).map_err(|e| CliError::Runtime(e.into()))
    }
}

/// Runs one command, printing its text report to stdout.
pub fn run(command: Command, ctx: &Context) -> Result<(), CliError> {
    let text = match command {
        Command::Synth => cmd_synth(ctx)?.render(false),
        Command::Validate => cmd_validate(ctx)?.render(false),
        Command::Train => cmd_train(ctx)?.report.render(false),
        Command::Eval => cmd_eval(ctx)?.report.render(false),
        Command::Analyze => cmd_analyze(ctx)?.report.render(false),
        Command::Sweep => cmd_sweep(ctx)?.report.render(false),
        Command::GradCheck => cmd_gradcheck(ctx)?.render(false),
    };
    print!("{text}");
    Ok(())
}
