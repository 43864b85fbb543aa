use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{predict, Heads};
use crate::dataset::{ClassId, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Classes absent from both labels and predictions; their F1 is 0.
    pub undefined: Vec<ClassId>,
}

/// Per-class precision, recall, and F1 (`2·tp / (2·tp + fp + fn)`), with
/// the unweighted mean F1 over all `num_classes` classes.
pub fn classification_metrics(labels: &[ClassId], predictions: &[ClassId], num_classes: usize) -> Metrics {
    assert_eq!(labels.len(), predictions.len(), "one prediction per label");
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut undefined = Vec::new();
    let per_class: Vec<ClassScores> = (0..num_classes)
        .map(|c| {
            if tp[c] + fp[c] + fneg[c] == 0 {
                undefined.push(c);
            }
            ClassScores {
                precision: ratio(tp[c], tp[c] + fp[c]),
                recall: ratio(tp[c], tp[c] + fneg[c]),
                f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fneg[c]),
                support: tp[c] + fneg[c],
            }
        })
        .collect();
    let macro_f1 = if num_classes == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64
    };
    let correct: usize = tp.iter().sum();
    Metrics {
        per_class,
        macro_f1,
        accuracy: ratio(correct, labels.len()),
        undefined,
    }
}

/// Collapses fine-grained classes into coarser ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMerge {
    pub names: Vec<String>,
    /// Coarse class of every original class.
    pub map: Vec<ClassId>,
}

impl LabelMerge {
    /// `mapping` sends original class names to coarse names; unmapped classes
    /// keep their own name. Coarse ids follow first appearance in class order.
    pub fn from_names(class_names: &[String], mapping: &BTreeMap<String, String>) -> Result<Self, String> {
        if let Some(unknown) = mapping.keys().find(|k| !class_names.contains(k)) {
            return Err(format!("unknown class {unknown:?} in label merge"));
        }
        let mut names: Vec<String> = Vec::new();
        let map = class_names
            .iter()
            .map(|c| {
                let target = mapping.get(c).unwrap_or(c);
                match names.iter().position(|n| n == target) {
                    Some(i) => i,
                    None => {
                        names.push(target.clone());
                        names.len() - 1
                    }
                }
            })
            .collect();
        Ok(Self { names, map })
    }

    pub fn apply(&self, labels: &[ClassId]) -> Vec<ClassId> {
        labels.iter().map(|&l| self.map[l]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<ClassId>,
    pub metrics: Metrics,
    pub merged: Option<Metrics>,
}

/// Classifier predictions on `ds` scored against its labels.
pub fn evaluate(heads: &Heads, ds: &Dataset, merge: Option<&LabelMerge>) -> Evaluation {
    let predictions: Vec<ClassId> = ds
        .samples
        .par_iter()
        .map(|s| predict(heads, &s.vector).expect("dataset dimension matches the model"))
        .collect();
    score(&ds.labels(), predictions, heads.num_classes(), merge)
}

pub(crate) fn score(
    labels: &[ClassId],
    predictions: Vec<ClassId>,
    num_classes: usize,
    merge: Option<&LabelMerge>,
) -> Evaluation {
    let metrics = classification_metrics(labels, &predictions, num_classes);
    let merged = merge.map(|m| classification_metrics(&m.apply(labels), &m.apply(&predictions), m.names.len()));
    Evaluation {
        predictions,
        metrics,
        merged,
    }
}
