use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::report::{fmt4, Report};
use super::{CliError, Command, Context, EvalMode, EvalSplit, RunConfig, Weights};
use crate::analysis::{
    self, dump_latent, error_analysis, implied_silhouette, motivation_report, subcluster_silhouettes,
    EmbeddingSource, ErrorAnalysisRow, MotivationReport, Roles,
};
use crate::cluster::{build_index, ClusterIndex};
use crate::dataset::{generate_synthetic, load_dataset, split, write_dataset, Dataset, Violation};
use crate::model::{
    classification_metrics, evaluate, predict_nearest_cluster, read_checkpoint, train, write_checkpoint,
    Checkpoint, Heads, LabelMerge, Metrics, ModelError, TrainedModel,
};
use crate::rng;

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::InvalidConfig(_) | ModelError::DimensionMismatch { .. } => CliError::Validation(e.to_string()),
        ModelError::Diverged { epoch, .. } => CliError::Diverged(format!("non-finite loss at epoch {epoch}")),
        other => runtime(other),
    }
}

fn analysis_error(e: analysis::AnalysisError) -> CliError {
    match e {
        analysis::AnalysisError::MissingClass(_) | analysis::AnalysisError::Dimension { .. } => {
            CliError::Validation(e.to_string())
        }
        other => runtime(other),
    }
}

fn class_rows(names: &[String], m: &Metrics) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "Macro".to_string(),
        String::new(),
        String::new(),
        fmt4(m.macro_f1),
        m.per_class.iter().map(|c| c.support).sum::<usize>().to_string(),
    ]];
    for (name, c) in names.iter().zip(&m.per_class) {
        rows.push(vec![
            name.clone(),
            fmt4(c.precision),
            fmt4(c.recall),
            fmt4(c.f1),
            c.support.to_string(),
        ]);
    }
    rows
}

const SCORE_HEADER: [&str; 5] = ["class", "precision", "recall", "f1", "support"];

pub fn cmd_synth(ctx: &Context) -> Result<Report, CliError> {
    let synth = &ctx.config.synth;
    let mut spec = synth.spec.clone();
    if let Some(count) = synth.count {
        if count <= 0 {
            return Err(CliError::Validation(format!("count must be positive, got {count}")));
        }
        spec.classes.iter_mut().for_each(|c| c.count = count);
    }
    let ds = generate_synthetic(&spec, synth.seed)?;
    let path = &ctx.config.paths.dataset;
    let mut w = create(path)?;
    write_dataset(&ds, &mut w)?;
    w.flush().map_err(runtime)?;

    let mut report = Report::new("synth");
    let counts = ds.class_counts();
    report.table(
        format!("{} ({} records, d_in {})", path.display(), ds.len(), ds.d_in),
        &["class", "count", "implicit"],
        ds.class_names
            .iter()
            .enumerate()
            .map(|(c, n)| vec![n.clone(), counts[c].to_string(), ds.is_implicit(c).to_string()])
            .collect(),
    );
    ctx.write_report(&report)?;
    Ok(report)
}

/// Reports every invariant violation; fails with a validation error when
/// there is at least one.
pub fn cmd_validate(ctx: &Context) -> Result<Report, CliError> {
    let path = &ctx.config.paths.dataset;
    require_file(path, "dataset")?;
    let ds = load_dataset(path, None)?;
    let violations: Vec<Violation> = ds.validate();
    let mut report = Report::new("validate");
    report.table(
        format!("{} ({} records)", path.display(), ds.len()),
        &["sample", "violation"],
        violations
            .iter()
            .map(|v| vec![v.sample_id().unwrap_or("-").to_string(), v.to_string()])
            .collect(),
    );
    for v in &violations {
        report.record(&serde_json::json!({"id": v.sample_id(), "violation": v.to_string()}));
    }
    ctx.write_report(&report)?;
    if violations.is_empty() {
        Ok(report)
    } else {
        print!("{}", report.render(false));
        Err(CliError::Validation(format!("{} invariant violation(s)", violations.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_macro_f1: f64,
    pub final_macro_f1: f64,
    pub highest_minority_f1: f64,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: Report,
    pub seeds: Vec<SeedSummary>,
    /// Index into `seeds` of the highest best-checkpoint macro-F1.
    pub winner: usize,
}

fn write_run(out: &Path, seed: u64, model: &TrainedModel) -> Result<PathBuf, CliError> {
    let ckpt = out.join(format!("seed-{seed}.checkpoint.jsonl"));
    let mut w = create(&ckpt)?;
    write_checkpoint(model, &mut w).map_err(model_error)?;
    w.flush().map_err(runtime)?;
    let mut w = create(&out.join(format!("seed-{seed}.history.jsonl")))?;
    for rec in &model.history {
        writeln!(w, "{}", serde_json::to_string(rec).map_err(runtime)?).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(ckpt)
}

/// Splits and trains once per configured seed, writing checkpoints and
/// histories under `paths.output`.
fn train_seeds(config: &RunConfig) -> Result<(Vec<SeedSummary>, usize), CliError> {
    if config.seeds.is_empty() {
        return Err(CliError::Validation("seeds must not be empty".into()));
    }
    let path = &config.paths.dataset;
    require_file(path, "dataset")?;
    let ds = load_dataset(path, None)?;
    let out = &config.paths.output;
    let results: Vec<Result<SeedSummary, CliError>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = split(&ds, config.split.ratio, seed)?;
            let cfg = crate::model::TrainConfig {
                seed,
                ..config.train.clone()
            };
            let model = match train(&data, &cfg) {
                Ok(m) => m,
                Err(ModelError::Diverged { epoch, last_finite }) => {
                    let ckpt = write_run(out, seed, &last_finite)?;
                    return Err(CliError::Diverged(format!(
                        "seed {seed} diverged at epoch {epoch}; last finite weights in {}",
                        ckpt.display()
                    )));
                }
                Err(e) => return Err(model_error(e)),
            };
            let checkpoint = write_run(out, seed, &model)?;
            Ok(SeedSummary {
                seed,
                best_epoch: model.best_checkpoint.epoch,
                best_macro_f1: model.best_checkpoint.macro_f1,
                final_macro_f1: model.history.last().map_or(0.0, |r| r.macro_f1),
                highest_minority_f1: model.highest_minority_f1,
                checkpoint,
            })
        })
        .collect();
    let seeds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut winner = 0;
    for (i, s) in seeds.iter().enumerate() {
        if s.best_macro_f1 > seeds[winner].best_macro_f1 {
            winner = i;
        }
    }
    std::fs::copy(&seeds[winner].checkpoint, out.join("best.checkpoint.jsonl")).map_err(runtime)?;
    Ok((seeds, winner))
}

pub fn cmd_train(ctx: &Context) -> Result<TrainSummary, CliError> {
    let (seeds, winner) = train_seeds(&ctx.config)?;
    let mut report = Report::new("train");
    report.table(
        format!("{} epochs, variant {}", ctx.config.train.epochs, ctx.config.train.objective.variant.as_str()),
        &["seed", "best_epoch", "best_macro_f1", "final_macro_f1", "minority_f1", ""],
        seeds
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    s.seed.to_string(),
                    s.best_epoch.to_string(),
                    fmt4(s.best_macro_f1),
                    fmt4(s.final_macro_f1),
                    fmt4(s.highest_minority_f1),
                    if i == winner { "*".into() } else { String::new() },
                ]
            })
            .collect(),
    );
    report.note(format!("best seed: {}", seeds[winner].seed));
    for s in &seeds {
        report.record(s);
    }
    report.record(&serde_json::json!({"best_seed": seeds[winner].seed}));
    ctx.write_report(&report)?;
    Ok(TrainSummary { report, seeds, winner })
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    config
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.paths.output.join("best.checkpoint.jsonl"))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "checkpoint")?;
    let f = File::open(path).map_err(runtime)?;
    read_checkpoint(BufReader::new(f)).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_for(ckpt: &Checkpoint, config: &RunConfig) -> Result<Dataset, CliError> {
    let path = &config.paths.dataset;
    require_file(path, "dataset")?;
    let ds = load_dataset(path, Some(ckpt.header.d_in))?;
    if ds.class_names != ckpt.header.class_names {
        return Err(CliError::Validation(format!(
            "dataset classes {:?} differ from checkpoint classes {:?}",
            ds.class_names, ckpt.header.class_names
        )));
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: Report,
    pub metrics: Metrics,
    pub merged: Option<(Vec<String>, Metrics)>,
}

pub fn cmd_eval(ctx: &Context) -> Result<EvalOutcome, CliError> {
    let cfg = &ctx.config;
    let ckpt = load_checkpoint(&checkpoint_path(cfg))?;
    let full = load_for(&ckpt, cfg)?;
    let ds = match cfg.eval.split {
        EvalSplit::All => full,
        EvalSplit::Test => split(&full, cfg.split.ratio, ckpt.header.config.seed)?.test,
    };
    let merge = if cfg.eval.merge.is_empty() {
        None
    } else {
        Some(LabelMerge::from_names(&ds.class_names, &cfg.eval.merge).map_err(CliError::Validation)?)
    };
    let evaluation = match cfg.eval.mode {
        EvalMode::Classifier => {
            let heads = match cfg.eval.weights {
                Weights::Best => &ckpt.best,
                Weights::Final => &ckpt.heads,
            };
            evaluate(heads, &ds, merge.as_ref())
        }
        EvalMode::NearestCluster => {
            let predictions = ds
                .samples
                .iter()
                .map(|s| predict_nearest_cluster(&ckpt.heads, &ckpt.index, &s.vector))
                .collect::<Result<Vec<_>, _>>()
                .map_err(model_error)?;
            let labels = ds.labels();
            let metrics = classification_metrics(&labels, &predictions, ds.num_classes());
            let merged = merge.as_ref().map(|m| {
                classification_metrics(&m.apply(&labels), &m.apply(&predictions), m.names.len())
            });
            crate::model::Evaluation {
                predictions,
                metrics,
                merged,
            }
        }
    };

    let mut report = Report::new("eval");
    let scope = match cfg.eval.split {
        EvalSplit::Test => "test split",
        EvalSplit::All => "all samples",
    };
    report.table(
        format!("{scope}, {} classes", ds.num_classes()),
        &SCORE_HEADER,
        class_rows(&ds.class_names, &evaluation.metrics),
    );
    let merged = match (merge, evaluation.merged) {
        (Some(m), Some(metrics)) => {
            report.table(format!("{scope}, merged"), &SCORE_HEADER, class_rows(&m.names, &metrics));
            Some((m.names, metrics))
        }
        _ => None,
    };
    let mut record = |name: &str, classes: &[String], m: &Metrics| {
        report.record(&serde_json::json!({
            "scope": name,
            "macro_f1": m.macro_f1,
            "accuracy": m.accuracy,
            "classes": classes,
            "per_class": m.per_class,
        }));
    };
    record("classes", &ds.class_names, &evaluation.metrics);
    if let Some((names, m)) = &merged {
        record("merged", names, m);
    }
    ctx.write_report(&report)?;
    Ok(EvalOutcome {
        report,
        metrics: evaluation.metrics,
        merged,
    })
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub report: Report,
    pub raw: MotivationReport,
    pub projected: Option<MotivationReport>,
    pub subclusters: Vec<(usize, Option<f64>)>,
    pub implied_silhouette: Option<f64>,
    pub errors: Vec<ErrorAnalysisRow>,
}

fn motivation_rows(label: &str, m: &MotivationReport) -> Vec<String> {
    std::iter::once(label.to_string()).chain(m.values().iter().map(|v| fmt4(*v))).collect()
}

/// Motivation distances on the raw data and, when a checkpoint is
/// available, the projected-space diagnostics.
pub fn cmd_analyze(ctx: &Context) -> Result<AnalyzeOutcome, CliError> {
    let cfg = &ctx.config;
    let an = &cfg.analyze;
    let ckpt_path = checkpoint_path(cfg);
    let ckpt = if cfg.paths.checkpoint.is_some() || ckpt_path.is_file() {
        Some(load_checkpoint(&ckpt_path)?)
    } else {
        None
    };
    let ds = match &ckpt {
        Some(c) => load_for(c, cfg)?,
        None => {
            require_file(&cfg.paths.dataset, "dataset")?;
            load_dataset(&cfg.paths.dataset, None)?
        }
    };
    let roles = Roles::from_names(&ds, &an.non_hate, &an.explicit, &an.implicit).map_err(analysis_error)?;
    let raw = motivation_report(&ds, EmbeddingSource::Raw, roles, an.metric, an.center).map_err(analysis_error)?;

    let mut report = Report::new("analyze");
    let mut header = vec!["embedding"];
    header.extend(MotivationReport::COLUMNS);
    let mut rows = vec![motivation_rows("raw", &raw)];
    report.record(&serde_json::json!({"section": "motivation", "embedding": "raw", "values": raw}));

    let Some(ckpt) = ckpt else {
        report.table("linkage distances", &header, rows);
        report.note("no checkpoint: projected analyses skipped");
        ctx.write_report(&report)?;
        return Ok(AnalyzeOutcome {
            report,
            raw,
            projected: None,
            subclusters: Vec::new(),
            implied_silhouette: None,
            errors: Vec::new(),
        });
    };
    let heads: &Heads = match an.weights {
        Weights::Best => &ckpt.best,
        Weights::Final => &ckpt.heads,
    };
    let projected = motivation_report(&ds, EmbeddingSource::Projected(heads), roles, an.metric, an.center)
        .map_err(analysis_error)?;
    rows.push(motivation_rows("projected", &projected));
    report.record(&serde_json::json!({"section": "motivation", "embedding": "projected", "values": projected}));
    report.table("linkage distances", &header, rows);

    let index = full_index(heads, &ds, an.k, ckpt.header.config.kmeans_max_iter, ckpt.header.config.seed)?;
    let subclusters = subcluster_silhouettes(heads, &index, &ds, an.silhouette_metric).map_err(analysis_error)?;
    report.table(
        "subcluster silhouette",
        &["class", "silhouette"],
        subclusters
            .iter()
            .map(|(c, s)| vec![ds.class_names[*c].clone(), s.map_or("n/a".into(), fmt4)])
            .collect(),
    );
    for (c, s) in &subclusters {
        report.record(&serde_json::json!({"section": "subcluster_silhouette", "class": ds.class_names[*c], "silhouette": s}));
    }

    let implied = implied_silhouette(heads, &ds, an.silhouette_metric).map_err(analysis_error)?;
    match implied {
        Some(s) => {
            report.table("implicit vs implied", &["silhouette"], vec![vec![fmt4(s)]]);
            report.record(&serde_json::json!({"section": "implied_silhouette", "silhouette": s}));
        }
        None => report.note("no implied vectors: implicit-vs-implied silhouette skipped"),
    }

    let errors = error_analysis(
        heads,
        &ds,
        roles,
        an.k,
        ckpt.header.config.kmeans_max_iter,
        rng::derive(ckpt.header.config.seed, &[rng::stream::ANALYSIS]),
    )
    .map_err(analysis_error)?;
    report.table(
        "relative explicit distance",
        &["id", "predicted", "score"],
        errors
            .iter()
            .map(|r| vec![r.id.clone(), ds.class_names[r.predicted].clone(), fmt4(r.score)])
            .collect(),
    );
    for r in &errors {
        report.record(&serde_json::json!({"section": "error_analysis", "row": r}));
    }

    if an.latent_dump {
        let path = ctx.report_dir.join("latent.jsonl");
        let n = dump_latent(heads, &index, &ds, create(&path)?).map_err(analysis_error)?;
        report.note(format!("latent dump: {n} records in {}", path.display()));
    }
    ctx.write_report(&report)?;
    Ok(AnalyzeOutcome {
        report,
        raw,
        projected: Some(projected),
        subclusters,
        implied_silhouette: implied,
        errors,
    })
}

fn full_index(heads: &Heads, ds: &Dataset, k: usize, max_iter: usize, seed: u64) -> Result<ClusterIndex, CliError> {
    let ids: Vec<String> = ds.samples.iter().map(|s| s.id.clone()).collect();
    let projected = ds
        .samples
        .iter()
        .map(|s| heads.project(&s.vector))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_error)?;
    build_index(
        &ids,
        &projected,
        &ds.labels(),
        ds.num_classes(),
        k,
        max_iter,
        rng::derive(seed, &[rng::stream::KMEANS, rng::stream::ANALYSIS]),
    )
    .map_err(|e| CliError::Validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub macro_f1: f64,
    pub best_seed: u64,
    pub argmax: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: Report,
    pub rows: Vec<SweepRow>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Trains every seed at each grid value of `sweep.param` and tabulates the
/// best macro-F1 across seeds.
pub fn cmd_sweep(ctx: &Context) -> Result<SweepOutcome, CliError> {
    let sweep = &ctx.config.sweep;
    if sweep.values.is_empty() {
        return Err(CliError::Validation("sweep grid is empty".into()));
    }
    let base_out = ctx.config.paths.output.clone();
    let configs = sweep
        .values
        .iter()
        .map(|v| {
            let label = value_label(v);
            let mut cfg = ctx.config.with_override(&sweep.param, &v.to_string(), Command::Sweep)?;
            cfg.paths.output = base_out.join(format!("sweep-{}-{label}", sweep.param));
            Ok((label, cfg))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let results = configs
        .par_iter()
        .map(|(label, cfg)| {
            let (seeds, winner) = train_seeds(cfg)?;
            Ok(SweepRow {
                value: label.clone(),
                macro_f1: seeds[winner].best_macro_f1,
                best_seed: seeds[winner].seed,
                argmax: false,
            })
        })
        .collect::<Vec<Result<SweepRow, CliError>>>();
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = (0..rows.len())
        .reduce(|a, b| if rows[b].macro_f1 > rows[a].macro_f1 { b } else { a })
        .expect("non-empty grid");
    rows[best].argmax = true;

    let mut report = Report::new("sweep");
    report.table(
        format!("sweep over {}", sweep.param),
        &[sweep.param.as_str(), "macro_f1", "best_seed", ""],
        rows.iter()
            .map(|r| {
                vec![
                    r.value.clone(),
                    fmt4(r.macro_f1),
                    r.best_seed.to_string(),
                    if r.argmax { "*".into() } else { String::new() },
                ]
            })
            .collect(),
    );
    for r in &rows {
        report.record(r);
    }
    ctx.write_report(&report)?;
    Ok(SweepOutcome { report, rows })
}
