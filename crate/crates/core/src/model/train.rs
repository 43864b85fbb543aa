use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, Activation, Heads, ModelError, Optimizer, OptimizerKind};
use crate::cluster::{self, ClusterIndex, PointsPerCluster};
use crate::dataset::{ClassId, Dataset, SplitPair};
use crate::objective::{self, ObjectiveConfig, ProjectedBatch, ProjectedCluster};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Subclusters per class.
    pub k: usize,
    /// Imposter subclusters per batch.
    pub m: usize,
    pub points_per_cluster: PointsPerCluster,
    pub kmeans_max_iter: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Epochs of uniform seed selection; `None` means a tenth of `epochs`.
    pub warmup_epochs: Option<usize>,
    pub d_proj: usize,
    pub activation: Activation,
    /// Class whose best F1 is tracked separately.
    pub minority_class: ClassId,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            k: 3,
            m: 2,
            points_per_cluster: PointsPerCluster::default(),
            kmeans_max_iter: 100,
            learning_rate: 0.01,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            seed: 1,
            eval_every: 25,
            warmup_epochs: None,
            d_proj: 128,
            activation: Activation::Identity,
            minority_class: 0,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), String> {
        if self.k == 0 || self.d_proj == 0 || self.eval_every == 0 || self.kmeans_max_iter == 0 {
            return Err("k, d_proj, eval_every and kmeans_max_iter must be positive".into());
        }
        if self.m == 0 {
            return Err("m must be positive".into());
        }
        if self.points_per_cluster.nominal() == 0 {
            return Err("points per cluster must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.minority_class >= num_classes {
            return Err(format!(
                "minority_class {} out of range for {num_classes} classes",
                self.minority_class
            ));
        }
        if self.objective.variant.uses_clusters() && self.m + 1 > num_classes * self.k {
            return Err(format!("m = {} needs more than {} subclusters", self.m, num_classes * self.k));
        }
        self.objective.validate(Some(num_classes))
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 10)
    }

    /// Points drawn per optimizer step.
    pub fn batch_size(&self) -> usize {
        (self.m + 1) * self.points_per_cluster.nominal()
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        (n_train / self.batch_size()).max(1)
    }
}

/// One test-split evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// Mean training losses over the epoch's steps; absent before training.
    pub ce_loss: Option<f64>,
    pub add_loss: Option<f64>,
    pub total_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub macro_f1: f64,
    pub heads: Heads,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub heads: Heads,
    pub final_index: ClusterIndex,
    pub history: Vec<EvalRecord>,
    pub best_checkpoint: BestCheckpoint,
    pub highest_minority_f1: f64,
    pub highest_minority_epoch: usize,
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    /// Neighborhood batches drawn through the cluster module.
    pub sampled_batches: usize,
}

/// One cluster of raw encoder inputs for a step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCluster {
    pub class: ClassId,
    pub inputs: Vec<Vec<f64>>,
    pub implied: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub clusters: Vec<InputCluster>,
}

#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss: f64,
    pub ce: f64,
    pub add: Option<f64>,
    /// Mean ADD loss per cluster, in batch order.
    pub cluster_add: Vec<f64>,
    pub grads: Heads,
}

/// Combined loss of one batch and its gradient with respect to both heads.
/// `class_weights` are the raw alpha-CE weights.
pub fn batch_loss(heads: &Heads, batch: &InputBatch, objective: &ObjectiveConfig, class_weights: &[f64]) -> StepLoss {
    let proj = &heads.projection;
    let cls = &heads.classifier;
    let inferential = objective.variant.uses_inferential();

    let mut projected = ProjectedBatch { clusters: Vec::new() };
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for c in &batch.clusters {
        let points: Vec<Vec<f64>> = c.inputs.iter().map(|x| proj.forward(x)).collect();
        for r in &points {
            logits.push(cls.forward(r));
            labels.push(c.class);
        }
        let implied = c
            .implied
            .iter()
            .map(|x| x.as_ref().filter(|_| inferential).map(|x| proj.forward(x)))
            .collect();
        projected.clusters.push(ProjectedCluster {
            class: c.class,
            points,
            implied,
        });
    }

    let ce = objective::ace_loss(&logits, &labels, class_weights);
    let (loss, add, cluster_add, logit_grads, point_grads, implied_grads) = if objective.variant.uses_clusters() {
        let stats = objective::batch_stats(&projected);
        let add = objective::add_loss(&projected, &stats, objective);
        let comb = objective::combined_loss(&ce, &add, objective.beta);
        (
            comb.loss,
            Some(add.loss),
            add.cluster_means(),
            comb.logit_grads,
            Some(comb.point_grads),
            Some(comb.implied_grads),
        )
    } else {
        (ce.loss, None, Vec::new(), ce.grad, None, None)
    };

    let mut grads = heads.clone();
    grads.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
    let d_proj = proj.d_proj;
    let classes = cls.classes;

    let mut row = 0;
    for (ci, (c, pc)) in batch.clusters.iter().zip(&projected.clusters).enumerate() {
        for (pi, (x, r)) in c.inputs.iter().zip(&pc.points).enumerate() {
            let gz = &logit_grads[row];
            row += 1;
            let mut gr = match &point_grads {
                Some(g) => g[ci][pi].clone(),
                None => vec![0.0; d_proj],
            };
            for j in 0..d_proj {
                let wrow = &cls.weight[j * classes..(j + 1) * classes];
                let grow = &mut grads.classifier.weight[j * classes..(j + 1) * classes];
                for k in 0..classes {
                    grow[k] += r[j] * gz[k];
                    gr[j] += wrow[k] * gz[k];
                }
            }
            for (b, g) in grads.classifier.bias.iter_mut().zip(gz) {
                *b += g;
            }
            backprop_projection(&mut grads, proj.activation, x, r, &gr);
        }
        if let Some(ig) = &implied_grads {
            for ((x, r), g) in c.implied.iter().zip(&pc.implied).zip(&ig[ci]) {
                if let (Some(x), Some(r), Some(g)) = (x, r, g) {
                    backprop_projection(&mut grads, proj.activation, x, r, g);
                }
            }
        }
    }

    StepLoss {
        loss,
        ce: ce.loss,
        add,
        cluster_add,
        grads,
    }
}

fn backprop_projection(grads: &mut Heads, activation: Activation, x: &[f64], r: &[f64], gr: &[f64]) {
    let d_proj = gr.len();
    let pre: Vec<f64> = gr
        .iter()
        .zip(r)
        .map(|(g, y)| g * activation.derivative_from_output(*y))
        .collect();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let wrow = &mut grads.projection.weight[i * d_proj..(i + 1) * d_proj];
        for (w, p) in wrow.iter_mut().zip(&pre) {
            *w += xi * p;
        }
    }
    for (b, p) in grads.projection.bias.iter_mut().zip(&pre) {
        *b += p;
    }
}

struct Trainer<'a> {
    train: &'a Dataset,
    test: &'a Dataset,
    cfg: &'a TrainConfig,
    class_weights: Vec<f64>,
    labels: Vec<ClassId>,
    ids: Vec<String>,
    heads: Heads,
    optimizer: Optimizer,
    index: Option<ClusterIndex>,
    history: Vec<EvalRecord>,
    best: Option<BestCheckpoint>,
    minority: (f64, usize),
    sampled_batches: usize,
}

impl Trainer<'_> {
    fn project_all(&self) -> Vec<Vec<f64>> {
        let proj = &self.heads.projection;
        self.train.samples.par_iter().map(|s| proj.forward(&s.vector)).collect()
    }

    fn rebuild_index(&mut self, epoch: usize) -> Result<(), ModelError> {
        let projected = self.project_all();
        let seed = rng::derive(self.cfg.seed, &[rng::stream::KMEANS, epoch as u64]);
        let num_classes = self.train.num_classes();
        let next = match &self.index {
            Some(prev) => {
                let mut next = prev.rebuild(&projected, &self.labels, num_classes, self.cfg.kmeans_max_iter, seed)?;
                next.inherit_loss_stats(prev);
                next
            }
            None => cluster::build_index(
                &self.ids,
                &projected,
                &self.labels,
                num_classes,
                self.cfg.k,
                self.cfg.kmeans_max_iter,
                seed,
            )?,
        };
        self.index = Some(next);
        Ok(())
    }

    fn input_cluster(&self, class: ClassId, positions: &[usize]) -> InputCluster {
        let inferential = self.cfg.objective.variant.uses_inferential();
        let samples = &self.train.samples;
        InputCluster {
            class,
            inputs: positions.iter().map(|&p| samples[p].vector.clone()).collect(),
            implied: positions
                .iter()
                .map(|&p| {
                    let s = &samples[p];
                    (inferential && self.train.is_implicit(s.label))
                        .then(|| s.implied_vector.clone())
                        .flatten()
                })
                .collect(),
        }
    }

    fn evaluate(&mut self, epoch: usize, losses: Option<(f64, Option<f64>, f64)>) {
        let eval = evaluate(&self.heads, self.test, None);
        let per_class_f1: Vec<f64> = eval.metrics.per_class.iter().map(|c| c.f1).collect();
        let macro_f1 = eval.metrics.macro_f1;
        let minority = per_class_f1[self.cfg.minority_class];
        if self.best.as_ref().is_none_or(|b| macro_f1 > b.macro_f1) {
            self.best = Some(BestCheckpoint {
                epoch,
                macro_f1,
                heads: self.heads.clone(),
            });
        }
        if self.history.is_empty() || minority > self.minority.0 {
            self.minority = (minority, epoch);
        }
        log::debug!("epoch {epoch}: macro-F1 {macro_f1:.4}");
        self.history.push(EvalRecord {
            epoch,
            per_class_f1,
            macro_f1,
            ce_loss: losses.map(|l| l.0),
            add_loss: losses.and_then(|l| l.1),
            total_loss: losses.map(|l| l.2),
        });
    }

    fn snapshot(&self) -> Result<TrainedModel, ModelError> {
        let projected = self.project_all();
        let final_index = cluster::build_index(
            &self.ids,
            &projected,
            &self.labels,
            self.train.num_classes(),
            self.cfg.k,
            self.cfg.kmeans_max_iter,
            rng::derive(self.cfg.seed, &[rng::stream::KMEANS, u64::MAX]),
        )?;
        Ok(TrainedModel {
            heads: self.heads.clone(),
            final_index,
            history: self.history.clone(),
            best_checkpoint: self.best.clone().expect("evaluated at least once"),
            highest_minority_f1: self.minority.0,
            highest_minority_epoch: self.minority.1,
            config: self.cfg.clone(),
            class_names: self.train.class_names.clone(),
            sampled_batches: self.sampled_batches,
        })
    }

    /// Returns the epoch's mean (ce, add, total) losses.
    fn run_epoch(&mut self, epoch: usize, rng: &mut rng::Rng) -> Result<(f64, Option<f64>, f64), ModelError> {
        let cfg = self.cfg;
        let variant = cfg.objective.variant;
        let steps = cfg.steps_per_epoch(self.train.len());
        let mut sums = (0.0, 0.0, 0.0);

        let mut order: Vec<usize> = Vec::new();
        if variant.uses_clusters() {
            self.rebuild_index(epoch)?;
        } else {
            order = (0..self.train.len()).collect();
            order.shuffle(rng);
        }

        for step in 0..steps {
            let (batch, ids) = if variant.uses_clusters() {
                let index = self.index.as_ref().expect("index built");
                let seed = cluster::select_seed(index, epoch, cfg.warmup(), rng);
                let imposters = cluster::select_imposters(index, seed, cfg.m)?;
                let nb = cluster::sample_batch(index, seed, &imposters, cfg.points_per_cluster, rng, self.train)?;
                self.sampled_batches += 1;
                let clusters = nb
                    .clusters
                    .iter()
                    .map(|c| self.input_cluster(c.id.class, &c.members))
                    .collect();
                (InputBatch { clusters }, nb.clusters.iter().map(|c| c.id).collect())
            } else {
                let size = cfg.batch_size().min(order.len());
                let chunk = &order[step * size..(step + 1) * size];
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.train.num_classes()];
                for &p in chunk {
                    by_class[self.labels[p]].push(p);
                }
                let clusters = by_class
                    .iter()
                    .enumerate()
                    .filter(|(_, ps)| !ps.is_empty())
                    .map(|(c, ps)| self.input_cluster(c, ps))
                    .collect();
                (InputBatch { clusters }, Vec::new())
            };

            let out = batch_loss(&self.heads, &batch, &cfg.objective, &self.class_weights);
            if !out.loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    last_finite: Box::new(self.snapshot()?),
                });
            }
            let before = self.heads.clone();
            self.optimizer.step(&mut self.heads, &out.grads);
            if !self.heads.is_finite() {
                self.heads = before;
                return Err(ModelError::Diverged {
                    epoch,
                    last_finite: Box::new(self.snapshot()?),
                });
            }
            if let Some(index) = self.index.as_mut() {
                for (id, loss) in ids.iter().zip(&out.cluster_add) {
                    index.record_loss(*id, *loss)?;
                }
            }
            sums.0 += out.ce;
            sums.1 += out.add.unwrap_or(0.0);
            sums.2 += out.loss;
        }
        let n = steps as f64;
        Ok((sums.0 / n, variant.uses_clusters().then_some(sums.1 / n), sums.2 / n))
    }
}

/// Trains both heads on `data.train`, evaluating on `data.test` at epoch 0,
/// every `eval_every` epochs, and after the last epoch.
pub fn train(data: &SplitPair, cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    train_with_hook(data, cfg, |_| {})
}

/// [`train`] with a callback invoked on every new evaluation record.
pub fn train_with_hook<F>(data: &SplitPair, cfg: &TrainConfig, mut on_eval: F) -> Result<TrainedModel, ModelError>
where
    F: FnMut(&EvalRecord),
{
    let train = &data.train;
    let num_classes = train.num_classes();
    cfg.validate(num_classes).map_err(ModelError::InvalidConfig)?;
    let counts = train.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(ModelError::InvalidConfig(format!(
            "class {c} ({}) has no training samples",
            train.class_names[c]
        )));
    }
    if data.test.d_in != train.d_in {
        return Err(ModelError::DimensionMismatch {
            expected: train.d_in,
            found: data.test.d_in,
        });
    }

    let class_weights = cfg
        .objective
        .class_weights
        .clone()
        .unwrap_or_else(|| objective::inverse_frequency_weights(&counts));
    let mut trainer = Trainer {
        train,
        test: &data.test,
        cfg,
        class_weights,
        labels: train.labels(),
        ids: train.samples.iter().map(|s| s.id.clone()).collect(),
        heads: Heads::init(train.d_in, cfg.d_proj, num_classes, cfg.activation, cfg.seed),
        optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum),
        index: None,
        history: Vec::new(),
        best: None,
        minority: (0.0, 0),
        sampled_batches: 0,
    };
    let mut rng = rng::seeded(cfg.seed, rng::stream::TRAIN);

    trainer.evaluate(0, None);
    on_eval(trainer.history.last().expect("just pushed"));
    for epoch in 1..=cfg.epochs {
        let losses = trainer.run_epoch(epoch - 1, &mut rng)?;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            trainer.evaluate(epoch, Some(losses));
            on_eval(trainer.history.last().expect("just pushed"));
        }
    }
    trainer.snapshot()
}
