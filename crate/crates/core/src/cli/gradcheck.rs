use rand::RngExt;
use serde::Serialize;

use super::report::Report;
use super::{CliError, Context, GradCheckSection};
use crate::model::{batch_loss, Activation, Heads, InputBatch, InputCluster};
use crate::objective::{
    ace_loss, add_loss, batch_stats, combined_loss, grad_check, random_batch, GradCheck, ObjectiveConfig,
    ProjectedBatch, Variant,
};
use crate::rng;

/// Largest relative error a check may report and still pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const OPS: [&str; 6] = [
    "ace_loss",
    "add_loss[ADD]",
    "add_loss[ADD_FOC]",
    "add_loss[ADD_INF_FOC]",
    "combined_loss",
    "end_to_end",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub op: String,
    pub batches: usize,
    pub max_rel_error: f64,
    pub worst_batch: usize,
    pub passed: bool,
}

fn flatten(b: &ProjectedBatch) -> Vec<f64> {
    let mut out = Vec::new();
    for c in &b.clusters {
        out.extend(c.points.iter().flatten());
        out.extend(c.implied.iter().flatten().flatten());
    }
    out
}

fn unflatten(template: &ProjectedBatch, flat: &[f64]) -> ProjectedBatch {
    let mut it = flat.iter().copied();
    let mut b = template.clone();
    for c in &mut b.clusters {
        for p in &mut c.points {
            p.iter_mut().for_each(|v| *v = it.next().expect("flat length"));
        }
        for p in c.implied.iter_mut().flatten() {
            p.iter_mut().for_each(|v| *v = it.next().expect("flat length"));
        }
    }
    b
}

fn flatten_point_grads(points: &[Vec<Vec<f64>>], implied: &[Vec<Option<Vec<f64>>>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (p, i) in points.iter().zip(implied) {
        out.extend(p.iter().flatten());
        out.extend(i.iter().flatten().flatten());
    }
    out
}

fn objective(variant: Variant) -> ObjectiveConfig {
    ObjectiveConfig {
        variant,
        ..ObjectiveConfig::default()
    }
}

fn check_ace(seed: u64, step: f64, corrupt: bool) -> GradCheck {
    let mut r = rng::seeded(seed, rng::stream::GRADCHECK);
    let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let weights = [0.5, 2.0, 1.0];
    let x: Vec<f64> = (0..24).map(|_| r.random_range(-2.0..2.0)).collect();
    let rows = |v: &[f64]| v.chunks(3).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let mut g: Vec<f64> = ace_loss(&rows(&x), &labels, &weights).grad.concat();
    if corrupt {
        g[0] += 0.01;
    }
    grad_check(|v| ace_loss(&rows(v), &labels, &weights).loss, &x, &g, step)
}

fn check_add(seed: u64, variant: Variant, step: f64, corrupt: bool) -> GradCheck {
    let b = random_batch(seed, 3, 4, 3, variant == Variant::AddInfFoc);
    let cfg = objective(variant);
    let out = add_loss(&b, &batch_stats(&b), &cfg);
    let mut g = flatten_point_grads(&out.point_grads, &out.implied_grads);
    if corrupt {
        g[0] += 0.01;
    }
    let f = |v: &[f64]| {
        let p = unflatten(&b, v);
        add_loss(&p, &batch_stats(&p), &cfg).loss
    };
    grad_check(f, &flatten(&b), &g, step)
}

fn check_combined(seed: u64, step: f64, corrupt: bool) -> GradCheck {
    let b = random_batch(seed, 3, 4, 3, true);
    let labels: Vec<usize> = b.clusters.iter().flat_map(|c| vec![c.class; c.points.len()]).collect();
    let mut r = rng::seeded(seed, rng::stream::GRADCHECK ^ 0xff);
    let logits: Vec<f64> = (0..labels.len() * 2).map(|_| r.random_range(-2.0..2.0)).collect();
    let weights = [1.0, 3.0];
    let cfg = objective(Variant::AddInfFoc);
    let n_logits = logits.len();
    let eval = |z: &[f64], p: &ProjectedBatch| {
        let rows: Vec<Vec<f64>> = z.chunks(2).map(<[f64]>::to_vec).collect();
        combined_loss(&ace_loss(&rows, &labels, &weights), &add_loss(p, &batch_stats(p), &cfg), cfg.beta)
    };
    let out = eval(&logits, &b);
    let mut x = logits.clone();
    x.extend(flatten(&b));
    let mut g = out.logit_grads.concat();
    g.extend(flatten_point_grads(&out.point_grads, &out.implied_grads));
    if corrupt {
        g[0] += 0.01;
    }
    grad_check(|v| eval(&v[..n_logits], &unflatten(&b, &v[n_logits..])).loss, &x, &g, step)
}

fn check_end_to_end(seed: u64, index: usize, step: f64, corrupt: bool) -> GradCheck {
    let variant = Variant::ALL[index % Variant::ALL.len()];
    let activation = if index.is_multiple_of(2) { Activation::Identity } else { Activation::Tanh };
    let pb = random_batch(seed, 3, 4, 5, true);
    let batch = InputBatch {
        clusters: pb
            .clusters
            .into_iter()
            .map(|c| InputCluster {
                class: c.class,
                inputs: c.points,
                implied: c.implied,
            })
            .collect(),
    };
    let heads = Heads::init(5, 3, 2, activation, seed);
    let cfg = objective(variant);
    let weights = [1.0, 2.0];
    let mut g = batch_loss(&heads, &batch, &cfg, &weights).grads.to_flat();
    if corrupt {
        g[0] += 0.01;
    }
    let mut probe = heads.clone();
    grad_check(
        |flat| {
            probe.set_flat(flat);
            batch_loss(&probe, &batch, &cfg, &weights).loss
        },
        &heads.to_flat(),
        &g,
        step,
    )
}

/// Checks every operation on `section.batches` seeded batches.
pub fn gradcheck_rows(section: &GradCheckSection) -> Vec<GradCheckRow> {
    OPS.iter()
        .enumerate()
        .map(|(op_index, &op)| {
            let corrupt = section.corrupt.as_deref() == Some(op);
            let mut worst = (0.0_f64, 0);
            for b in 0..section.batches {
                let seed = rng::derive(section.seed, &[op_index as u64, b as u64]);
                let step = section.step;
                let check = match op_index {
                    0 => check_ace(seed, step, corrupt),
                    1 => check_add(seed, Variant::Add, step, corrupt),
                    2 => check_add(seed, Variant::AddFoc, step, corrupt),
                    3 => check_add(seed, Variant::AddInfFoc, step, corrupt),
                    4 => check_combined(seed, step, corrupt),
                    _ => check_end_to_end(seed, b, step, corrupt),
                };
                if !(check.max_rel_error <= worst.0) {
                    worst = (check.max_rel_error, b);
                }
            }
            GradCheckRow {
                op: op.to_string(),
                batches: section.batches,
                max_rel_error: worst.0,
                worst_batch: worst.1,
                passed: worst.0 < GRADCHECK_TOLERANCE,
            }
        })
        .collect()
}

/// Runs the checks and writes the `gradcheck` report. Fails naming every
/// operation whose error reaches [`GRADCHECK_TOLERANCE`].
pub fn cmd_gradcheck(ctx: &Context) -> Result<Report, CliError> {
    let section = &ctx.config.gradcheck;
    if section.batches == 0 || !(section.step > 0.0) {
        return Err(CliError::Validation("gradcheck needs batches > 0 and step > 0".into()));
    }
    if let Some(op) = &section.corrupt {
        if !OPS.contains(&op.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown gradcheck operation {op:?} (expected one of {})",
                OPS.join(", ")
            )));
        }
    }
    let rows = gradcheck_rows(section);
    let mut report = Report::new("gradcheck");
    report.table(
        "gradient check",
        &["op", "batches", "max_rel_error", "worst_batch", "status"],
        rows.iter()
            .map(|r| {
                vec![
                    r.op.clone(),
                    r.batches.to_string(),
                    format!("{:.3e}", r.max_rel_error),
                    r.worst_batch.to_string(),
                    if r.passed { "PASS" } else { "FAIL" }.to_string(),
                ]
            })
            .collect(),
    );
    for r in &rows {
        report.record(r);
    }
    ctx.write_report(&report)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        print!("{}", report.render(false));
        Err(CliError::Runtime(anyhow::anyhow!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
