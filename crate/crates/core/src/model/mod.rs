//! Projection head, classification head, training, and inference.
//!
//! The frozen encoder output `x` is projected to `r = act(Wᵀx + b)`, which
//! both feeds the density-discrimination objective and is classified by an
//! affine head. Inference never sees implied-meaning vectors: a label is the
//! classifier's argmax, or alternatively the class of the nearest subcluster
//! centroid.

mod checkpoint;
mod metrics;
mod optim;
mod train;

use rand::RngExt;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use metrics::{classification_metrics, evaluate, ClassScores, Evaluation, LabelMerge, Metrics};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    batch_loss, train, train_with_hook, BestCheckpoint, EvalRecord, InputBatch, InputCluster, StepLoss, TrainConfig,
    TrainedModel,
};

use crate::cluster::ClusterIndex;
use crate::dataset::ClassId;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        /// The model as of the last finite step.
        last_finite: Box<TrainedModel>,
    },
    #[error(transparent)]
    Cluster(#[from] crate::cluster::ClusterError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `r = act(Wᵀx + b)` with `W` stored row-major as `d_in × d_proj`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub d_in: usize,
    pub d_proj: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ProjectionHead {
    pub fn zeros(d_in: usize, d_proj: usize, activation: Activation) -> Self {
        Self {
            d_in,
            d_proj,
            weight: vec![0.0; d_in * d_proj],
            bias: vec![0.0; d_proj],
            activation,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut head = Self::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            head.weight[i * dim + i] = 1.0;
        }
        head
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(d_in: usize, d_proj: usize, activation: Activation, rng: &mut rng::Rng) -> Self {
        let mut head = Self::zeros(d_in, d_proj, activation);
        xavier_fill(&mut head.weight, d_in, d_proj, rng);
        head
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.d_in {
            return Err(ModelError::DimensionMismatch {
                expected: self.d_in,
                found: x.len(),
            });
        }
        Ok(self.forward(x))
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.d_proj)) {
            if *xi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
        }
        if self.activation != Activation::Identity {
            out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        out
    }
}

/// Affine logits `z = Vᵀr + c`, `V` row-major `d_proj × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub d_proj: usize,
    pub classes: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassificationHead {
    pub fn zeros(d_proj: usize, classes: usize) -> Self {
        Self {
            d_proj,
            classes,
            weight: vec![0.0; d_proj * classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn xavier(d_proj: usize, classes: usize, rng: &mut rng::Rng) -> Self {
        let mut head = Self::zeros(d_proj, classes);
        xavier_fill(&mut head.weight, d_proj, classes, rng);
        head
    }

    pub fn classify(&self, r: &[f64]) -> Result<Vec<f64>, ModelError> {
        if r.len() != self.d_proj {
            return Err(ModelError::DimensionMismatch {
                expected: self.d_proj,
                found: r.len(),
            });
        }
        Ok(self.forward(r))
    }

    pub(crate) fn forward(&self, r: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (ri, row) in r.iter().zip(self.weight.chunks_exact(self.classes)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += ri * w;
            }
        }
        out
    }
}

fn xavier_fill(weight: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut rng::Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weight {
        *w = rng.random_range(-limit..limit);
    }
}

/// Both trainable heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub projection: ProjectionHead,
    pub classifier: ClassificationHead,
}

impl Heads {
    pub fn init(d_in: usize, d_proj: usize, classes: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = rng::seeded(seed, rng::stream::INIT);
        let projection = ProjectionHead::xavier(d_in, d_proj, activation, &mut rng);
        let classifier = ClassificationHead::xavier(d_proj, classes, &mut rng);
        Self { projection, classifier }
    }

    pub fn d_in(&self) -> usize {
        self.projection.d_in
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.classes
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.projection.project(x)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let r = self.projection.project(x)?;
        self.classifier.classify(&r)
    }

    /// Parameter blocks in a fixed order: projection weight, projection bias,
    /// classifier weight, classifier bias.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            &self.projection.weight,
            &self.projection.bias,
            &self.classifier.weight,
            &self.classifier.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.projection.weight,
            &mut self.projection.bias,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

fn argmax(logits: &[f64]) -> ClassId {
    let mut best = 0;
    for (c, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = c;
        }
    }
    best
}

/// Classifier argmax; ties go to the lowest class id.
pub fn predict(heads: &Heads, x: &[f64]) -> Result<ClassId, ModelError> {
    Ok(argmax(&heads.logits(x)?))
}

pub fn predict_batch(heads: &Heads, xs: &[Vec<f64>]) -> Result<Vec<ClassId>, ModelError> {
    xs.iter().map(|x| predict(heads, x)).collect()
}

/// Class of the centroid nearest to the projection of `x`; ties go to the
/// lowest `(class, subcluster)`.
pub fn predict_nearest_cluster(heads: &Heads, index: &ClusterIndex, x: &[f64]) -> Result<ClassId, ModelError> {
    let r = heads.project(x)?;
    index
        .nearest(&r)
        .map(|id| id.class)
        .ok_or_else(|| ModelError::InvalidConfig("empty cluster index".into()))
}
