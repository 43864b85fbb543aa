//! Acceptance gate. Runs every primary criterion, prints one PASS/FAIL line
//! each, and exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use fiadd::analysis::{
    acld, ald, implied_silhouette, motivation_report, relative_explicit_distance, relative_score, silhouette,
    Center, EmbeddingSource, LabeledPointSet, Metric, Roles,
};
use fiadd::cli::{cmd_sweep, cmd_train, gradcheck_rows, Command, Context, GradCheckSection, RunConfig, GRADCHECK_TOLERANCE};
use fiadd::dataset::{generate_synthetic, split, write_dataset, SyntheticSpec};
use fiadd::model::{classification_metrics, evaluate, train, TrainConfig};
use fiadd::objective::{
    ace_loss, add_loss, batch_stats, combined_loss, p_add, p_add_inf, ObjectiveConfig, ProjectedBatch, ProjectedCluster,
    Variant,
};
use rand::{Rng, RngExt, SeedableRng};
use rayon::prelude::*;

const ORACLE_TOL: f64 = 1e-9;
const GRADCHECK_BUDGET_SECS: f64 = 30.0;
const BENCH_SEEDS: [u64; 3] = [1, 4, 7];
const BENCH_EPOCHS: usize = 300;
const F1_GAIN: f64 = 0.02;
const SILHOUETTE_DROP: f64 = 0.05;
const IMPLICIT: usize = 2;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let section = GradCheckSection::default();
    let rows = gradcheck_rows(&section);
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.2e}", r.op, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        section.batches >= 20 && worst < GRADCHECK_TOLERANCE && secs < GRADCHECK_BUDGET_SECS,
        format!("{} batches/op, {secs:.2}s, {detail}", section.batches),
    )
}

mod oracle {
    pub fn sq(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s
    }

    pub fn dist(a: &[f64], b: &[f64], l1: bool) -> f64 {
        if l1 {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (a[i] - b[i]).abs();
            }
            s
        } else {
            sq(a, b).sqrt()
        }
    }

    pub fn centroid(pts: &[Vec<f64>]) -> Vec<f64> {
        let mut c = vec![0.0; pts[0].len()];
        for p in pts {
            for i in 0..c.len() {
                c[i] += p[i];
            }
        }
        for v in &mut c {
            *v /= pts.len() as f64;
        }
        c
    }

    /// Plain ratio of exponentials.
    pub fn p(r: &[f64], own: &[f64], implied: Option<(&[f64], f64)>, s2: f64, imposters: &[Vec<f64>], alpha: f64) -> f64 {
        let mut num = (-sq(r, own) / (2.0 * s2) - alpha).exp();
        if let Some((m, s2t)) = implied {
            num += (-sq(r, m) / (2.0 * s2t) - alpha).exp();
        }
        let mut den = 0.0;
        for m in imposters {
            den += (-sq(r, m) / (2.0 * s2)).exp();
        }
        num / den
    }

    pub struct Stats {
        pub mu: Vec<Vec<f64>>,
        pub mu_tilde: Vec<Option<Vec<f64>>>,
        pub s2: f64,
        pub s2t: f64,
    }

    pub fn stats(clusters: &[(usize, Vec<Vec<f64>>, Vec<Option<Vec<f64>>>)]) -> Stats {
        let mu: Vec<Vec<f64>> = clusters.iter().map(|c| centroid(&c.1)).collect();
        let mut ss = 0.0;
        let mut t = 0;
        for (c, m) in clusters.iter().zip(&mu) {
            for p in &c.1 {
                ss += sq(p, m);
                t += 1;
            }
        }
        let s2 = (ss / (t as f64 - 1.0)).max(1e-12);
        let mut mu_tilde = Vec::new();
        let mut ss_t = 0.0;
        let mut n_t = 0;
        for c in clusters {
            let imp: Vec<Vec<f64>> = c.2.iter().flatten().cloned().collect();
            if imp.is_empty() {
                mu_tilde.push(None);
                continue;
            }
            let m = centroid(&imp);
            for p in &imp {
                ss_t += sq(p, &m);
                n_t += 1;
            }
            mu_tilde.push(Some(m));
        }
        let s2t = if n_t < 2 { s2 } else { (ss_t / (n_t as f64 - 1.0)).max(1e-12) };
        Stats { mu, mu_tilde, s2, s2t }
    }

    pub fn add_loss(
        clusters: &[(usize, Vec<Vec<f64>>, Vec<Option<Vec<f64>>>)],
        inferential: bool,
        alpha: f64,
        gamma: f64,
        eps: f64,
    ) -> f64 {
        let st = stats(clusters);
        let mut total = 0.0;
        let mut n = 0;
        for (ci, c) in clusters.iter().enumerate() {
            let imposters: Vec<Vec<f64>> = (0..clusters.len())
                .filter(|&o| clusters[o].0 != c.0)
                .map(|o| st.mu[o].clone())
                .collect();
            let implied = match (&st.mu_tilde[ci], inferential) {
                (Some(m), true) => Some((m.as_slice(), st.s2t)),
                _ => None,
            };
            for r in &c.1 {
                let mut ph = p(r, &st.mu[ci], implied, st.s2, &imposters, alpha);
                if ph < eps {
                    ph = eps;
                }
                if ph > 1.0 - eps {
                    ph = 1.0 - eps;
                }
                total += -(1.0 - ph).powf(gamma) * ph.ln();
                n += 1;
            }
        }
        total / n as f64
    }

    pub fn ald(a: &[Vec<f64>], b: &[Vec<f64>], l1: bool) -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += dist(x, y, l1);
            }
        }
        s / (a.len() * b.len()) as f64
    }

    pub fn silhouette(pts: &[(usize, Vec<f64>)], l1: bool) -> f64 {
        let mut total = 0.0;
        for (i, (g, x)) in pts.iter().enumerate() {
            let own: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, (h, _))| *j != i && h == g)
                .map(|(_, (_, y))| dist(x, y, l1))
                .collect();
            if own.is_empty() {
                continue;
            }
            let a = own.iter().sum::<f64>() / own.len() as f64;
            let mut b = f64::INFINITY;
            let mut others: Vec<usize> = pts.iter().map(|(h, _)| *h).filter(|h| h != g).collect();
            others.sort();
            others.dedup();
            for h in others {
                let d: Vec<f64> = pts.iter().filter(|(k, _)| *k == h).map(|(_, y)| dist(x, y, l1)).collect();
                b = b.min(d.iter().sum::<f64>() / d.len() as f64);
            }
            total += (b - a) / a.max(b);
        }
        total / pts.len() as f64
    }

    pub fn macro_f1(labels: &[usize], preds: &[usize], classes: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..classes {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fneg = 0.0;
            for (l, p) in labels.iter().zip(preds) {
                if *l == c && *p == c {
                    tp += 1.0;
                } else if *p == c {
                    fp += 1.0;
                } else if *l == c {
                    fneg += 1.0;
                }
            }
            let denom = 2.0 * tp + fp + fneg;
            s += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        }
        s / classes as f64
    }
}

type Clusters = Vec<(usize, Vec<Vec<f64>>, Vec<Option<Vec<f64>>>)>;

/// Two or three clusters of 3 or 4 points drawn from one shared box, at
/// least two classes. Fully overlapping clusters keep `p` within a few orders
/// of magnitude of 1, where an absolute tolerance is meaningful.
fn micro_instance(rng: &mut impl Rng) -> Clusters {
    let n_clusters = rng.random_range(2..=3);
    let dim = rng.random_range(1..=3);
    (0..n_clusters)
        .map(|c| {
            let class = if c == 2 { rng.random_range(0..2) } else { c };
            let n = rng.random_range(3..=4);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let implied = (0..n)
                .map(|_| {
                    (rng.random::<f64>() < 0.5).then(|| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                })
                .collect();
            (class, points, implied)
        })
        .collect()
}

fn to_batch(c: &Clusters) -> ProjectedBatch {
    ProjectedBatch {
        clusters: c
            .iter()
            .map(|(class, points, implied)| ProjectedCluster {
                class: *class,
                points: points.clone(),
                implied: implied.clone(),
            })
            .collect(),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = rand_pcg::Pcg64::seed_from_u64(20);
    let mut worst = [0.0_f64; 8];
    let mut largest_p = 0.0_f64;
    let names = ["p_add", "p_add_inf", "sigma2", "add_loss", "ALD", "ACLD", "silhouette", "macro-F1"];
    let instances = 200;
    for _ in 0..instances {
        let c = micro_instance(&mut rng);
        let batch = to_batch(&c);
        let st = batch_stats(&batch);
        let os = oracle::stats(&c);
        let mut note = |k: usize, a: f64, b: f64| {
            worst[k] = worst[k].max((a - b).abs());
            if k < 2 {
                largest_p = largest_p.max(b);
            }
        };
        note(2, st.sigma2, os.s2);
        note(2, st.sigma2_tilde, os.s2t);
        for (ci, (class, points, _)) in c.iter().enumerate() {
            let imposters: Vec<Vec<f64>> = (0..c.len()).filter(|&o| c[o].0 != *class).map(|o| os.mu[o].clone()).collect();
            let imp_refs: Vec<&[f64]> = (0..c.len()).filter(|&o| c[o].0 != *class).map(|o| st.mu[o].as_slice()).collect();
            for r in points {
                note(
                    0,
                    p_add(r, &st.mu[ci], &imp_refs, st.sigma2, 1.0),
                    oracle::p(r, &os.mu[ci], None, os.s2, &imposters, 1.0),
                );
                note(
                    1,
                    p_add_inf(r, &st.mu[ci], st.mu_tilde[ci].as_deref(), st.sigma2, st.sigma2_tilde, &imp_refs, 1.0),
                    oracle::p(
                        r,
                        &os.mu[ci],
                        os.mu_tilde[ci].as_deref().map(|m| (m, os.s2t)),
                        os.s2,
                        &imposters,
                        1.0,
                    ),
                );
            }
        }
        for variant in [Variant::Add, Variant::AddFoc, Variant::AddInfFoc] {
            let cfg = ObjectiveConfig {
                variant,
                gamma: 2.0,
                ..ObjectiveConfig::default()
            };
            let gamma = if variant == Variant::Add { 0.0 } else { 2.0 };
            note(
                3,
                add_loss(&batch, &st, &cfg).loss,
                oracle::add_loss(&c, variant == Variant::AddInfFoc, cfg.alpha, gamma, cfg.epsilon),
            );
        }

        // Distances and silhouette over the instance's points grouped by cluster.
        let groups: Vec<(usize, &[Vec<f64>])> = c.iter().enumerate().map(|(i, cl)| (i, cl.1.as_slice())).collect();
        let flat: Vec<(usize, Vec<f64>)> = c
            .iter()
            .enumerate()
            .flat_map(|(i, cl)| cl.1.iter().map(move |p| (i, p.clone())))
            .collect();
        for (metric, l1) in [(Metric::L1, true), (Metric::L2, false)] {
            let set = LabeledPointSet::from_groups(metric, &groups).unwrap();
            note(4, ald(&set, 0, 1).unwrap(), oracle::ald(&c[0].1, &c[1].1, l1));
            note(
                5,
                acld(&set, 0, 1, Center::Mean).unwrap(),
                oracle::dist(&oracle::centroid(&c[0].1), &oracle::centroid(&c[1].1), l1),
            );
            note(6, silhouette(&set).unwrap(), oracle::silhouette(&flat, l1));
        }

        let n = rng.random_range(1..=12);
        let classes = rng.random_range(2..=3);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        worst[7] = worst[7].max(
            (classification_metrics(&labels, &preds, classes).macro_f1 - oracle::macro_f1(&labels, &preds, classes)).abs(),
        );
    }
    let passed = worst.iter().all(|w| *w <= ORACLE_TOL);
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(passed, format!("{instances} instances, largest p {largest_p:.3e}, max abs diff: {detail}"))
}

fn reduction_identities() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = rand_pcg::Pcg64::seed_from_u64(21);
    let cases = 100;
    for case in 0..cases {
        let c = micro_instance(&mut rng);
        let batch = to_batch(&c);
        let st = batch_stats(&batch);
        let gamma = rng.random_range(0.0..5.0);
        let cfg = |variant, gamma| ObjectiveConfig {
            variant,
            gamma,
            ..ObjectiveConfig::default()
        };

        let foc0 = add_loss(&batch, &st, &cfg(Variant::AddFoc, 0.0));
        let plain = add_loss(&batch, &st, &cfg(Variant::Add, gamma));
        if foc0 != plain {
            failures.push(format!("case {case}: gamma=0 focal differs from unfocused"));
        }

        let bare = batch.without_implied();
        let bare_st = batch_stats(&bare);
        if add_loss(&bare, &bare_st, &cfg(Variant::AddInfFoc, gamma))
            != add_loss(&bare, &bare_st, &cfg(Variant::AddFoc, gamma))
        {
            failures.push(format!("case {case}: no implied vectors but ADD_INF_FOC differs from ADD_FOC"));
        }

        let labels: Vec<usize> = c.iter().flat_map(|cl| vec![cl.0; cl.1.len()]).collect();
        let logits: Vec<Vec<f64>> = labels.iter().map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let ce = ace_loss(&logits, &labels, &[1.0, 2.5]);
        let add = add_loss(&batch, &st, &cfg(Variant::AddInfFoc, gamma));
        let b1 = combined_loss(&ce, &add, 1.0);
        if b1.loss != ce.loss || b1.logit_grads != ce.grad || b1.point_grads.iter().flatten().flatten().any(|g| *g != 0.0) {
            failures.push(format!("case {case}: beta=1 differs from ACE"));
        }
        let half = combined_loss(&ce, &add, 0.5);
        if half.loss != (ce.loss + add.loss) / 2.0 {
            failures.push(format!("case {case}: beta=0.5 is not the mean of the two losses"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{cases} random batches, all four identities bit-exact")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

struct BenchRun {
    implicit_f1: f64,
    silhouette: f64,
}

fn bench_run(variant: Variant, seed: u64) -> BenchRun {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let data = split(&ds, 0.8, seed).unwrap();
    let cfg = TrainConfig {
        epochs: BENCH_EPOCHS,
        seed,
        minority_class: IMPLICIT,
        objective: ObjectiveConfig {
            variant,
            ..ObjectiveConfig::default()
        },
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg).unwrap();
    let eval = evaluate(&model.best_checkpoint.heads, &data.test, None);
    BenchRun {
        implicit_f1: eval.metrics.per_class[IMPLICIT].f1,
        silhouette: implied_silhouette(&model.heads, &ds, Metric::L2).unwrap().unwrap(),
    }
}

fn synthetic_benchmark() -> [Outcome; 3] {
    let start = Instant::now();
    let runs: Vec<(Variant, BenchRun)> = [Variant::AceOnly, Variant::AddInfFoc]
        .into_par_iter()
        .flat_map(|v| BENCH_SEEDS.into_par_iter().map(move |s| (v, bench_run(v, s))))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let mean = |v: Variant, f: fn(&BenchRun) -> f64| {
        let xs: Vec<f64> = runs.iter().filter(|(w, _)| *w == v).map(|(_, r)| f(r)).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let per_seed = |v: Variant, f: fn(&BenchRun) -> f64| {
        runs.iter()
            .filter(|(w, _)| *w == v)
            .map(|(_, r)| format!("{:.3}", f(r)))
            .collect::<Vec<_>>()
            .join("/")
    };
    let f1 = |r: &BenchRun| r.implicit_f1;
    let sil = |r: &BenchRun| r.silhouette;
    let (f1_ace, f1_add) = (mean(Variant::AceOnly, f1), mean(Variant::AddInfFoc, f1));
    let (sil_ace, sil_add) = (mean(Variant::AceOnly, sil), mean(Variant::AddInfFoc, sil));

    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    let raw = motivation_report(&ds, EmbeddingSource::Raw, Roles::default(), Metric::L1, Center::Mean).unwrap();
    [
        outcome(
            f1_add - f1_ace >= F1_GAIN,
            format!(
                "implicit F1 ADD_INF_FOC {f1_add:.4} ({}) vs ACE_ONLY {f1_ace:.4} ({}), gain {:+.4}, need >= {F1_GAIN} [{secs:.0}s]",
                per_seed(Variant::AddInfFoc, f1),
                per_seed(Variant::AceOnly, f1),
                f1_add - f1_ace
            ),
        ),
        outcome(
            sil_ace - sil_add >= SILHOUETTE_DROP,
            format!(
                "implicit-vs-implied silhouette ADD_INF_FOC {sil_add:.4} ({}) vs ACE_ONLY {sil_ace:.4} ({}), drop {:+.4}, need >= {SILHOUETTE_DROP}",
                per_seed(Variant::AddInfFoc, sil),
                per_seed(Variant::AceOnly, sil),
                sil_ace - sil_add
            ),
        ),
        outcome(
            raw.acld_ni < raw.acld_ne,
            format!("raw L1 ACLD(N,I) {:.4} < ACLD(N,E) {:.4}", raw.acld_ni, raw.acld_ne),
        ),
    ]
}

fn error_analysis_scoring() -> Outcome {
    let direct = relative_score(3.0, 6.0);
    // L1 distance 3 to the explicit center and 6 to the non-hate one.
    let via_centers = relative_explicit_distance(&[vec![0.0, 0.0]], &[vec![2.0, -4.0]], &[vec![0.0, -3.0]]).unwrap()[0];
    outcome(
        (direct - 0.33).abs() < 0.005 && direct == via_centers,
        format!("3/(3+6) = {direct:.4}, from centers {via_centers:.4}"),
    )
}

fn write_default_dataset(path: &Path) {
    let ds = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
    write_dataset(&ds, std::fs::File::create(path).unwrap()).unwrap();
}

fn small_config(dir: &Path, overrides: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.dataset = dir.join("data.jsonl");
    cfg.paths.output = dir.join("runs");
    cfg.paths.reports = Some(dir.join("reports"));
    cfg.train.epochs = 40;
    cfg.train.eval_every = 10;
    cfg.train.d_proj = 16;
    for (k, v) in overrides {
        cfg = cfg.with_override(k, v, Command::Train).unwrap();
    }
    cfg
}

fn determinism() -> Outcome {
    let files = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["runs", "reports"] {
            let mut entries: Vec<_> = std::fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            for p in entries {
                out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
            }
        }
        out
    };
    let dir = tempfile::tempdir().unwrap();
    write_default_dataset(&dir.path().join("data.jsonl"));
    let ctx = Context::new(small_config(dir.path(), &[("seeds", "[4]")]), false);
    let run = || {
        cmd_train(&ctx).unwrap();
        files(dir.path())
    };
    let (a, b) = (run(), run());
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    outcome(
        a == b && names.iter().any(|n| n.ends_with("history.jsonl")) && names.iter().any(|n| n.ends_with("checkpoint.jsonl")),
        format!("{} files byte-identical across reruns: {}", a.len(), names.join(", ")),
    )
}

fn gamma_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_default_dataset(&dir.path().join("data.jsonl"));
    let mut cfg = small_config(dir.path(), &[]);
    cfg.sweep.param = "gamma".into();
    cfg.sweep.values = (0..=5).map(toml::Value::Integer).collect();
    let out = cmd_sweep(&Context::new(cfg, false)).unwrap();
    let flagged: Vec<&str> = out.rows.iter().filter(|r| r.argmax).map(|r| r.value.as_str()).collect();
    let max = out.rows.iter().map(|r| r.macro_f1).fold(f64::NEG_INFINITY, f64::max);
    let flagged_is_max = out.rows.iter().filter(|r| r.argmax).all(|r| r.macro_f1 == max);
    let text = out.report.render(false);
    outcome(
        out.rows.len() == 6 && flagged.len() == 1 && flagged_is_max && text.lines().filter(|l| l.ends_with('*')).count() == 1,
        format!(
            "{} rows ({}), argmax gamma={}",
            out.rows.len(),
            out.rows.iter().map(|r| format!("{}:{:.3}", r.value, r.macro_f1)).collect::<Vec<_>>().join(" "),
            flagged.join(",")
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradient_correctness()),
        ("oracle equivalence", oracle_equivalence()),
        ("reduction identities", reduction_identities()),
    ];
    let [a, b, c] = synthetic_benchmark();
    results.push(("synthetic benchmark (a) implicit F1 gain", a));
    results.push(("synthetic benchmark (b) implied silhouette drop", b));
    results.push(("synthetic benchmark (c) raw ACLD ordering", c));
    results.push(("error-analysis scoring", error_analysis_scoring()));
    results.push(("determinism", determinism()));
    results.push(("gamma sweep shape", gamma_sweep()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
