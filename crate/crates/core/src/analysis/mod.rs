//! Latent-space diagnostics: linkage distances, silhouettes, relative
//! distance scoring of implicit samples, and latent dumps.

mod latent;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use latent::{dump_latent, load_latent, LatentRecord};

use crate::cluster::{kmeans, ClusterError, ClusterIndex};
use crate::dataset::{ClassId, Dataset};
use crate::model::Heads;
use crate::vector;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("unknown group {0}")]
    UnknownGroup(usize),
    #[error("silhouette needs at least two groups, found {0}")]
    TooFewGroups(usize),
    #[error("empty point set: {0}")]
    Empty(&'static str),
    #[error("inconsistent dimensionality: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("dataset has no class {0:?}")]
    MissingClass(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed latent record on line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    L1,
    #[default]
    L2,
    SquaredL2,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => vector::l1(a, b),
            Metric::L2 => vector::l2(a, b),
            Metric::SquaredL2 => vector::squared_l2(a, b),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "l1" | "manhattan" => Ok(Metric::L1),
            "l2" | "euclidean" => Ok(Metric::L2),
            "squaredl2" | "sql2" => Ok(Metric::SquaredL2),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

/// Central tendency used for group centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub id: String,
    pub vector: Vec<f64>,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    pub points: Vec<LabeledPoint>,
    pub metric: Metric,
}

impl LabeledPointSet {
    pub fn new(metric: Metric) -> Self {
        Self {
            points: Vec::new(),
            metric,
        }
    }

    pub fn from_groups(metric: Metric, groups: &[(usize, &[Vec<f64>])]) -> Result<Self, AnalysisError> {
        let mut set = Self::new(metric);
        for (g, pts) in groups {
            for (i, p) in pts.iter().enumerate() {
                set.push(format!("{g}-{i}"), p.clone(), *g)?;
            }
        }
        Ok(set)
    }

    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f64>, group: usize) -> Result<(), AnalysisError> {
        if let Some(first) = self.points.first() {
            if first.vector.len() != vector.len() {
                return Err(AnalysisError::Dimension {
                    expected: first.vector.len(),
                    found: vector.len(),
                });
            }
        }
        self.points.push(LabeledPoint {
            id: id.into(),
            vector,
            group,
        });
        Ok(())
    }

    /// Distinct group ids, ascending.
    pub fn groups(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.points.iter().map(|p| p.group).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn group(&self, g: usize) -> Result<Vec<&[f64]>, AnalysisError> {
        let pts: Vec<&[f64]> = self
            .points
            .iter()
            .filter(|p| p.group == g)
            .map(|p| p.vector.as_slice())
            .collect();
        if pts.is_empty() {
            return Err(AnalysisError::UnknownGroup(g));
        }
        Ok(pts)
    }
}

fn center_of(points: &[&[f64]], center: Center) -> Vec<f64> {
    match center {
        Center::Mean => vector::mean(points.iter().copied()),
        Center::Median => vector::median(points.iter().copied()),
    }
}

/// Distance between the centers of groups `a` and `b`.
pub fn acld(set: &LabeledPointSet, a: usize, b: usize, center: Center) -> Result<f64, AnalysisError> {
    let ca = center_of(&set.group(a)?, center);
    let cb = center_of(&set.group(b)?, center);
    Ok(set.metric.distance(&ca, &cb))
}

/// Mean distance over all cross pairs of groups `a` and `b`.
pub fn ald(set: &LabeledPointSet, a: usize, b: usize) -> Result<f64, AnalysisError> {
    let ga = set.group(a)?;
    let gb = set.group(b)?;
    let metric = set.metric;
    let total: f64 = ga
        .par_iter()
        .map(|p| gb.iter().map(|q| metric.distance(p, q)).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / (ga.len() * gb.len()) as f64)
}

/// Mean silhouette `(q - p) / max(p, q)` over all points, where `p` is the
/// mean distance to the rest of the point's group and `q` the smallest mean
/// distance to another group. Points in singleton groups score 0.
pub fn silhouette(set: &LabeledPointSet) -> Result<f64, AnalysisError> {
    let groups = set.groups();
    if groups.len() < 2 {
        return Err(AnalysisError::TooFewGroups(groups.len()));
    }
    let slot: BTreeMap<usize, usize> = groups.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let mut sizes = vec![0usize; groups.len()];
    for p in &set.points {
        sizes[slot[&p.group]] += 1;
    }
    let metric = set.metric;
    let scores: Vec<f64> = set
        .points
        .par_iter()
        .map(|p| {
            let own = slot[&p.group];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; groups.len()];
            for q in &set.points {
                sums[slot[&q.group]] += metric.distance(&p.vector, &q.vector);
            }
            let intra = sums[own] / (sizes[own] - 1) as f64;
            let inter = (0..groups.len())
                .filter(|&g| g != own)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = intra.max(inter);
            if denom > 0.0 {
                (inter - intra) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per implicit point, `d_exp / (d_exp + d_non)` where each term is the mean
/// L1 distance to the given centers. Below 0.5 means closer to explicit.
pub fn relative_explicit_distance(
    implicit_points: &[Vec<f64>],
    nonhate_centers: &[Vec<f64>],
    explicit_centers: &[Vec<f64>],
) -> Result<Vec<f64>, AnalysisError> {
    if nonhate_centers.is_empty() || explicit_centers.is_empty() {
        return Err(AnalysisError::Empty("center set"));
    }
    let mean_l1 = |p: &[f64], cs: &[Vec<f64>]| cs.iter().map(|c| vector::l1(p, c)).sum::<f64>() / cs.len() as f64;
    Ok(implicit_points
        .iter()
        .map(|p| {
            let d_exp = mean_l1(p, explicit_centers);
            let d_non = mean_l1(p, nonhate_centers);
            relative_score(d_exp, d_non)
        })
        .collect())
}

/// `d_exp / (d_exp + d_non)`, or 0.5 when both are zero.
pub fn relative_score(d_exp: f64, d_non: f64) -> f64 {
    let sum = d_exp + d_non;
    if sum == 0.0 {
        0.5
    } else {
        d_exp / sum
    }
}

/// Which classes play the non-hate, explicit, and implicit roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub non_hate: ClassId,
    pub explicit: ClassId,
    pub implicit: ClassId,
}

impl Default for Roles {
    fn default() -> Self {
        Self {
            non_hate: 0,
            explicit: 1,
            implicit: 2,
        }
    }
}

impl Roles {
    /// Resolves roles by class name.
    pub fn from_names(ds: &Dataset, non_hate: &str, explicit: &str, implicit: &str) -> Result<Self, AnalysisError> {
        let id = |n: &str| ds.class_id(n).ok_or_else(|| AnalysisError::MissingClass(n.to_string()));
        Ok(Self {
            non_hate: id(non_hate)?,
            explicit: id(explicit)?,
            implicit: id(implicit)?,
        })
    }
}

/// Where the motivation report takes its vectors from.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Raw,
    Projected(&'a Heads),
}

impl EmbeddingSource<'_> {
    fn embed(&self, x: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        match self {
            EmbeddingSource::Raw => Ok(x.to_vec()),
            EmbeddingSource::Projected(h) => Ok(h.project(x)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotivationReport {
    #[serde(rename = "ALD N-E")]
    pub ald_ne: f64,
    #[serde(rename = "ALD N-I")]
    pub ald_ni: f64,
    #[serde(rename = "ACLD N-E")]
    pub acld_ne: f64,
    #[serde(rename = "ACLD N-I")]
    pub acld_ni: f64,
}

impl MotivationReport {
    pub const COLUMNS: [&'static str; 4] = ["ALD N-E", "ALD N-I", "ACLD N-E", "ACLD N-I"];

    pub fn values(&self) -> [f64; 4] {
        [self.ald_ne, self.ald_ni, self.acld_ne, self.acld_ni]
    }
}

impl fmt::Display for MotivationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in Self::COLUMNS {
            write!(f, "{c:>12}")?;
        }
        writeln!(f)?;
        for v in self.values() {
            write!(f, "{v:>12.4}")?;
        }
        writeln!(f)
    }
}

/// ALD and ACLD between non-hate and each hate class.
pub fn motivation_report(
    ds: &Dataset,
    source: EmbeddingSource<'_>,
    roles: Roles,
    metric: Metric,
    center: Center,
) -> Result<MotivationReport, AnalysisError> {
    let mut set = LabeledPointSet::new(metric);
    for s in &ds.samples {
        if [roles.non_hate, roles.explicit, roles.implicit].contains(&s.label) {
            set.push(s.id.clone(), source.embed(&s.vector)?, s.label)?;
        }
    }
    for class in [roles.non_hate, roles.explicit, roles.implicit] {
        if set.group(class).is_err() {
            let name = ds.class_names.get(class).cloned().unwrap_or_else(|| class.to_string());
            return Err(AnalysisError::MissingClass(name));
        }
    }
    Ok(MotivationReport {
        ald_ne: ald(&set, roles.non_hate, roles.explicit)?,
        ald_ni: ald(&set, roles.non_hate, roles.implicit)?,
        acld_ne: acld(&set, roles.non_hate, roles.explicit, center)?,
        acld_ni: acld(&set, roles.non_hate, roles.implicit, center)?,
    })
}

/// Silhouette of each class's subclusters in projected space, with points
/// assigned to their nearest same-class centroid. `None` when a class has
/// fewer than two populated subclusters.
pub fn subcluster_silhouettes(
    heads: &Heads,
    index: &ClusterIndex,
    ds: &Dataset,
    metric: Metric,
) -> Result<Vec<(ClassId, Option<f64>)>, AnalysisError> {
    let mut out = Vec::new();
    for class in 0..ds.num_classes() {
        let mut set = LabeledPointSet::new(metric);
        for s in ds.samples.iter().filter(|s| s.label == class) {
            let r = heads.project(&s.vector)?;
            if let Some(id) = index.nearest_in_class(&r, class) {
                set.push(s.id.clone(), r, id.sub)?;
            }
        }
        let score = match silhouette(&set) {
            Ok(v) => Some(v),
            Err(AnalysisError::TooFewGroups(_)) => None,
            Err(e) => return Err(e),
        };
        out.push((class, score));
    }
    Ok(out)
}

/// Silhouette between projected implicit samples (group 0) and their
/// projected implied meanings (group 1). `None` when no sample has an
/// implied vector.
pub fn implied_silhouette(heads: &Heads, ds: &Dataset, metric: Metric) -> Result<Option<f64>, AnalysisError> {
    let mut set = LabeledPointSet::new(metric);
    for s in &ds.samples {
        if let (true, Some(implied)) = (ds.is_implicit(s.label), &s.implied_vector) {
            set.push(s.id.clone(), heads.project(&s.vector)?, 0)?;
            set.push(format!("{}~", s.id), heads.project(implied)?, 1)?;
        }
    }
    if set.points.is_empty() {
        return Ok(None);
    }
    Ok(Some(silhouette(&set)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorAnalysisRow {
    pub id: String,
    pub label: ClassId,
    pub predicted: ClassId,
    pub score: f64,
}

/// Relative explicit distance of every implicit sample, with centers from
/// k-means over the projected non-hate and explicit samples.
pub fn error_analysis(
    heads: &Heads,
    ds: &Dataset,
    roles: Roles,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<ErrorAnalysisRow>, AnalysisError> {
    let centers = |class: ClassId| -> Result<Vec<Vec<f64>>, AnalysisError> {
        let pts = ds
            .samples
            .iter()
            .filter(|s| s.label == class)
            .map(|s| heads.project(&s.vector))
            .collect::<Result<Vec<_>, _>>()?;
        if pts.is_empty() {
            let name = ds.class_names.get(class).cloned().unwrap_or_else(|| class.to_string());
            return Err(AnalysisError::MissingClass(name));
        }
        Ok(kmeans(&pts, k, max_iter, crate::rng::derive(seed, &[class as u64]))?.centroids)
    };
    let non = centers(roles.non_hate)?;
    let exp = centers(roles.explicit)?;
    let implicit: Vec<_> = ds.samples.iter().filter(|s| s.label == roles.implicit).collect();
    let projected = implicit
        .iter()
        .map(|s| heads.project(&s.vector))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = relative_explicit_distance(&projected, &non, &exp)?;
    implicit
        .iter()
        .zip(scores)
        .map(|(s, score)| {
            Ok(ErrorAnalysisRow {
                id: s.id.clone(),
                label: s.label,
                predicted: crate::model::predict(heads, &s.vector)?,
                score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
