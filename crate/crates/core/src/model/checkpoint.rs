//! Line-delimited JSON checkpoints.
//!
//! Line 1 is a [`CheckpointHeader`]. Each further line is either a tensor
//! `{"tensor": "<slot>.<name>", "shape": [..], "data": [..]}` with row-major
//! data, or a centroid `{"centroid": [class, sub], "data": [..]}`. Slots are
//! `final` and `best`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Activation, ClassificationHead, Heads, ModelError, ProjectionHead, TrainConfig, TrainedModel};
use crate::cluster::{ClusterId, ClusterIndex};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "fiadd-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub d_in: usize,
    pub d_proj: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub class_names: Vec<String>,
    pub best_epoch: usize,
    pub best_macro_f1: f64,
    pub highest_minority_f1: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Tensor { tensor: String, shape: Vec<usize>, data: Vec<f64> },
    Centroid { centroid: (usize, usize), data: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub heads: Heads,
    pub best: Heads,
    pub index: ClusterIndex,
}

fn tensor_lines(slot: &str, h: &Heads) -> [Line; 4] {
    let p = &h.projection;
    let c = &h.classifier;
    let t = |name: &str, shape: Vec<usize>, data: &[f64]| Line::Tensor {
        tensor: format!("{slot}.{name}"),
        shape,
        data: data.to_vec(),
    };
    [
        t("projection.weight", vec![p.d_in, p.d_proj], &p.weight),
        t("projection.bias", vec![p.d_proj], &p.bias),
        t("classifier.weight", vec![c.d_proj, c.classes], &c.weight),
        t("classifier.bias", vec![c.classes], &c.bias),
    ]
}

pub fn write_checkpoint<W: Write>(model: &TrainedModel, mut w: W) -> Result<(), ModelError> {
    let h = &model.heads;
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        d_in: h.projection.d_in,
        d_proj: h.projection.d_proj,
        num_classes: h.classifier.classes,
        activation: h.projection.activation,
        class_names: model.class_names.clone(),
        best_epoch: model.best_checkpoint.epoch,
        best_macro_f1: model.best_checkpoint.macro_f1,
        highest_minority_f1: model.highest_minority_f1,
        config: model.config.clone(),
    };
    let json = |e: serde_json::Error| ModelError::Checkpoint(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(json)?)?;
    for line in tensor_lines("final", h)
        .into_iter()
        .chain(tensor_lines("best", &model.best_checkpoint.heads))
    {
        writeln!(w, "{}", serde_json::to_string(&line).map_err(json)?)?;
    }
    for c in model.final_index.clusters() {
        let line = Line::Centroid {
            centroid: (c.id.class, c.id.sub),
            data: c.centroid.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).map_err(json)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Checkpoint, ModelError> {
    let mut lines = r.lines();
    let bad = |n: usize, m: String| ModelError::Checkpoint(format!("line {n}: {m}"));
    let first = lines.next().ok_or_else(|| bad(1, "empty checkpoint".into()))??;
    let header: CheckpointHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.format != FORMAT {
        return Err(bad(1, format!("not a checkpoint (format {:?})", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(1, format!("unsupported version {}", header.version)));
    }

    let empty = || Heads {
        projection: ProjectionHead::zeros(header.d_in, header.d_proj, header.activation),
        classifier: ClassificationHead::zeros(header.d_proj, header.num_classes),
    };
    let mut heads = empty();
    let mut best = empty();
    let mut seen = Vec::new();
    let mut centroids = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| bad(n, e.to_string()))? {
            Line::Tensor { tensor, shape, data } => {
                let (slot, name) = tensor
                    .split_once('.')
                    .ok_or_else(|| bad(n, format!("bad tensor name {tensor:?}")))?;
                let target = match slot {
                    "final" => &mut heads,
                    "best" => &mut best,
                    _ => return Err(bad(n, format!("unknown slot {slot:?}"))),
                };
                let (dest, want) = match name {
                    "projection.weight" => (&mut target.projection.weight, vec![header.d_in, header.d_proj]),
                    "projection.bias" => (&mut target.projection.bias, vec![header.d_proj]),
                    "classifier.weight" => (&mut target.classifier.weight, vec![header.d_proj, header.num_classes]),
                    "classifier.bias" => (&mut target.classifier.bias, vec![header.num_classes]),
                    _ => return Err(bad(n, format!("unknown tensor {name:?}"))),
                };
                if shape != want || data.len() != want.iter().product::<usize>() {
                    return Err(bad(n, format!("tensor {tensor} has shape {shape:?}, expected {want:?}")));
                }
                *dest = data;
                seen.push(tensor);
            }
            Line::Centroid { centroid, data } => {
                if data.len() != header.d_proj {
                    return Err(bad(n, format!("centroid of dimension {}", data.len())));
                }
                centroids.push((ClusterId::new(centroid.0, centroid.1), data));
            }
        }
    }
    if seen.len() != 8 {
        return Err(ModelError::Checkpoint(format!("expected 8 tensors, found {}", seen.len())));
    }
    let index = ClusterIndex::from_centroids(header.config.k, centroids);
    Ok(Checkpoint {
        header,
        heads,
        best,
        index,
    })
}
