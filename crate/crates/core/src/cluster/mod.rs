//! Per-class subclustering of projected training points and neighborhood
//! sampling for the density-discrimination objective.
//!
//! Every class is split into at most `K` subclusters by k-means. A training
//! step picks a seed subcluster, the `M` nearest subclusters of other classes
//! (the imposters), and samples `D` points from each.

mod kmeans;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::RngExt;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeans};

use crate::dataset::{ClassId, Dataset};
use crate::rng;
use crate::vector::squared_l2;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class {0} has no training samples")]
    EmptyClass(ClassId),
    #[error("need {needed} imposter clusters outside class {class}, only {available} exist")]
    InsufficientImposters {
        class: ClassId,
        needed: usize,
        available: usize,
    },
    #[error("unknown cluster {0:?}")]
    UnknownCluster(ClusterId),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// `(class, subcluster)`; ordering is the global tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId {
    pub class: ClassId,
    pub sub: usize,
}

impl ClusterId {
    pub fn new(class: ClassId, sub: usize) -> Self {
        Self { class, sub }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subcluster {
    pub id: ClusterId,
    pub centroid: Vec<f64>,
    /// Positions into the training set the index was built from.
    pub members: Vec<usize>,
    /// Running mean of recent per-sample losses of this subcluster.
    pub loss_stat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    generation: u64,
    k: usize,
    clusters: Vec<Subcluster>,
    assignments: Vec<ClusterId>,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

/// Decay of the exponential running mean kept in `Subcluster::loss_stat`.
pub const LOSS_STAT_DECAY: f64 = 0.9;

/// Runs k-means independently within every class. Loss statistics start
/// uniform at 1.0.
pub fn build_index(
    ids: &[String],
    projected: &[Vec<f64>],
    labels: &[ClassId],
    num_classes: usize,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterIndex, ClusterError> {
    if ids.len() != projected.len() || labels.len() != projected.len() {
        return Err(ClusterError::InvalidParameter(
            "ids, points and labels must have equal length".into(),
        ));
    }
    if k == 0 {
        return Err(ClusterError::InvalidParameter("k must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| ClusterError::InvalidParameter(format!("label {l} >= {num_classes}")))?
            .push(i);
    }

    let mut clusters = Vec::new();
    let mut assignments = vec![ClusterId::new(0, 0); projected.len()];
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(ClusterError::EmptyClass(class));
        }
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| projected[i].clone()).collect();
        let km = kmeans(&pts, k, max_iter, rng::derive(seed, &[class as u64]))?;
        let mut subs: Vec<Subcluster> = km
            .centroids
            .into_iter()
            .enumerate()
            .map(|(sub, centroid)| Subcluster {
                id: ClusterId::new(class, sub),
                centroid,
                members: Vec::new(),
                loss_stat: 1.0,
            })
            .collect();
        for (local, &a) in km.assignments.iter().enumerate() {
            subs[a].members.push(members[local]);
            assignments[members[local]] = ClusterId::new(class, a);
        }
        clusters.extend(subs);
    }

    let positions = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    Ok(ClusterIndex {
        generation: 0,
        k,
        clusters,
        assignments,
        ids: ids.to_vec(),
        positions,
    })
}

impl ClusterIndex {
    /// Re-clusters new projections of the same training set; the generation
    /// counter advances.
    pub fn rebuild(
        &self,
        projected: &[Vec<f64>],
        labels: &[ClassId],
        num_classes: usize,
        max_iter: usize,
        seed: u64,
    ) -> Result<ClusterIndex, ClusterError> {
        let mut next = build_index(&self.ids, projected, labels, num_classes, self.k, max_iter, seed)?;
        next.generation = self.generation + 1;
        Ok(next)
    }

    /// Rebuilt only from stored centroids, for inference from a checkpoint.
    pub fn from_centroids(k: usize, centroids: Vec<(ClusterId, Vec<f64>)>) -> Self {
        let mut clusters: Vec<Subcluster> = centroids
            .into_iter()
            .map(|(id, centroid)| Subcluster {
                id,
                centroid,
                members: Vec::new(),
                loss_stat: 1.0,
            })
            .collect();
        clusters.sort_by_key(|c| c.id);
        Self {
            generation: 0,
            k,
            clusters,
            assignments: Vec::new(),
            ids: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Subclusters in ascending `(class, sub)` order.
    pub fn clusters(&self) -> &[Subcluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&Subcluster> {
        self.clusters
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.clusters[i])
    }

    fn cluster_mut(&mut self, id: ClusterId) -> Option<&mut Subcluster> {
        self.clusters
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(move |i| &mut self.clusters[i])
    }

    /// Assignment per training position.
    pub fn assignments(&self) -> &[ClusterId] {
        &self.assignments
    }

    pub fn assignment_of(&self, sample_id: &str) -> Option<ClusterId> {
        self.positions.get(sample_id).map(|&i| self.assignments[i])
    }

    pub fn sizes(&self) -> Vec<(ClusterId, usize)> {
        self.clusters.iter().map(|c| (c.id, c.members.len())).collect()
    }

    pub fn classes(&self) -> Vec<ClassId> {
        let mut out: Vec<ClassId> = self.clusters.iter().map(|c| c.id.class).collect();
        out.dedup();
        out
    }

    /// Nearest centroid by squared L2; ties go to the lowest `(class, sub)`.
    pub fn nearest(&self, point: &[f64]) -> Option<ClusterId> {
        self.nearest_where(point, |_| true)
    }

    pub fn nearest_in_class(&self, point: &[f64], class: ClassId) -> Option<ClusterId> {
        self.nearest_where(point, |c| c.id.class == class)
    }

    fn nearest_where(&self, point: &[f64], keep: impl Fn(&Subcluster) -> bool) -> Option<ClusterId> {
        let mut best: Option<(f64, ClusterId)> = None;
        for c in self.clusters.iter().filter(|c| keep(c)) {
            let d = squared_l2(point, &c.centroid);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c.id));
            }
        }
        best.map(|(_, id)| id)
    }

    pub fn class_mean_loss(&self, class: ClassId) -> Option<f64> {
        let stats: Vec<f64> = self
            .clusters
            .iter()
            .filter(|c| c.id.class == class)
            .map(|c| c.loss_stat)
            .collect();
        (!stats.is_empty()).then(|| stats.iter().sum::<f64>() / stats.len() as f64)
    }

    /// Folds one batch's mean loss for a subcluster into its running mean.
    pub fn record_loss(&mut self, id: ClusterId, loss: f64) -> Result<(), ClusterError> {
        let c = self.cluster_mut(id).ok_or(ClusterError::UnknownCluster(id))?;
        c.loss_stat = LOSS_STAT_DECAY * c.loss_stat + (1.0 - LOSS_STAT_DECAY) * loss;
        Ok(())
    }

    pub fn set_loss_stat(&mut self, id: ClusterId, value: f64) -> Result<(), ClusterError> {
        let c = self.cluster_mut(id).ok_or(ClusterError::UnknownCluster(id))?;
        c.loss_stat = value;
        Ok(())
    }

    /// Subcluster identities do not survive re-clustering, so each new
    /// subcluster starts from its class's mean statistic in `previous`.
    pub fn inherit_loss_stats(&mut self, previous: &ClusterIndex) {
        for c in &mut self.clusters {
            if let Some(m) = previous.class_mean_loss(c.id.class) {
                c.loss_stat = m;
            }
        }
    }

    /// Line-delimited dump: one record per subcluster, then one per sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ClusterError> {
        #[derive(Serialize)]
        struct ClusterRecord<'a> {
            class: ClassId,
            subcluster: usize,
            size: usize,
            loss_stat: f64,
            centroid: &'a [f64],
        }
        #[derive(Serialize)]
        struct AssignmentRecord<'a> {
            id: &'a str,
            class: ClassId,
            subcluster: usize,
        }
        writeln!(w, "{}", serde_json::json!({"generation": self.generation, "k": self.k}))?;
        for c in &self.clusters {
            let rec = ClusterRecord {
                class: c.id.class,
                subcluster: c.id.sub,
                size: c.members.len(),
                loss_stat: c.loss_stat,
                centroid: &c.centroid,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).map_err(std::io::Error::from)?)?;
        }
        for (id, a) in self.ids.iter().zip(&self.assignments) {
            let rec = AssignmentRecord {
                id,
                class: a.class,
                subcluster: a.sub,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).map_err(std::io::Error::from)?)?;
        }
        Ok(())
    }
}

/// Seed subcluster for one step.
///
/// During warmup the choice is uniform over all subclusters. Afterwards the
/// class with the highest mean loss statistic is chosen (lowest class id on
/// ties) and one of its subclusters is drawn with probability proportional to
/// its statistic.
pub fn select_seed(index: &ClusterIndex, epoch: usize, warmup_epochs: usize, rng: &mut rng::Rng) -> ClusterId {
    assert!(!index.is_empty(), "seed selection on an empty index");
    if epoch < warmup_epochs {
        return index.clusters[rng.random_range(0..index.clusters.len())].id;
    }
    let mut best: Option<(f64, ClassId)> = None;
    for class in index.classes() {
        let m = index.class_mean_loss(class).unwrap_or(0.0);
        if best.is_none_or(|(bm, _)| m > bm) {
            best = Some((m, class));
        }
    }
    let class = best.expect("non-empty index").1;
    let subs: Vec<&Subcluster> = index.clusters.iter().filter(|c| c.id.class == class).collect();
    let total: f64 = subs.iter().map(|c| c.loss_stat.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return subs[rng.random_range(0..subs.len())].id;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = subs[0].id;
    for c in &subs {
        let w = c.loss_stat.max(0.0);
        if w <= 0.0 {
            continue;
        }
        acc += w;
        pick = c.id;
        if acc > target {
            break;
        }
    }
    pick
}

/// The `m` subclusters of other classes whose centroids are nearest the
/// seed's (squared L2), nearest first; ties by ascending `(class, sub)`.
pub fn select_imposters(index: &ClusterIndex, seed: ClusterId, m: usize) -> Result<Vec<ClusterId>, ClusterError> {
    let seed_c = index.cluster(seed).ok_or(ClusterError::UnknownCluster(seed))?;
    let mut candidates: Vec<(f64, ClusterId)> = index
        .clusters
        .iter()
        .filter(|c| c.id.class != seed.class)
        .map(|c| (squared_l2(&seed_c.centroid, &c.centroid), c.id))
        .collect();
    if candidates.len() < m {
        return Err(ClusterError::InsufficientImposters {
            class: seed.class,
            needed: m,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(candidates.into_iter().take(m).map(|(_, id)| id).collect())
}

/// How many points to draw from each selected subcluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointsPerCluster {
    /// Exactly this many; smaller clusters are sampled with replacement.
    Fixed(usize),
    /// `min(cap, smallest selected cluster)`, so sampling never repeats.
    Auto { cap: usize },
}

impl Default for PointsPerCluster {
    fn default() -> Self {
        PointsPerCluster::Auto { cap: 8 }
    }
}

impl PointsPerCluster {
    /// Upper bound on points per cluster, used to size an epoch.
    pub fn nominal(&self) -> usize {
        match *self {
            PointsPerCluster::Fixed(d) | PointsPerCluster::Auto { cap: d } => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchCluster {
    pub id: ClusterId,
    /// Training positions, `d` of them; repeats only when sampled with replacement.
    pub members: Vec<usize>,
    /// Whether each sampled member carries an implied-meaning partner.
    pub has_implied: Vec<bool>,
}

/// One seed cluster followed by its imposters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodBatch {
    pub seed: ClusterId,
    pub imposters: Vec<ClusterId>,
    pub d: usize,
    pub clusters: Vec<BatchCluster>,
}

impl NeighborhoodBatch {
    pub fn len(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `D` training positions uniformly from each selected subcluster:
/// without replacement when the subcluster has at least `D` members,
/// otherwise with replacement. `train` must be the dataset the index was
/// built from.
pub fn sample_batch(
    index: &ClusterIndex,
    seed: ClusterId,
    imposters: &[ClusterId],
    per_cluster: PointsPerCluster,
    rng: &mut rng::Rng,
    train: &Dataset,
) -> Result<NeighborhoodBatch, ClusterError> {
    let ids: Vec<ClusterId> = std::iter::once(seed).chain(imposters.iter().copied()).collect();
    let selected = ids
        .iter()
        .map(|&id| index.cluster(id).ok_or(ClusterError::UnknownCluster(id)))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(empty) = selected.iter().find(|c| c.members.is_empty()) {
        return Err(ClusterError::InvalidParameter(format!("subcluster {:?} is empty", empty.id)));
    }
    let d = match per_cluster {
        PointsPerCluster::Fixed(d) => d,
        PointsPerCluster::Auto { cap } => selected.iter().map(|c| c.members.len()).min().unwrap_or(1).min(cap),
    };
    if d == 0 {
        return Err(ClusterError::InvalidParameter("D must be positive".into()));
    }

    let clusters = selected
        .iter()
        .map(|c| {
            let n = c.members.len();
            let members: Vec<usize> = if n >= d {
                sample_indices(rng, n, d).into_iter().map(|i| c.members[i]).collect()
            } else {
                (0..d).map(|_| c.members[rng.random_range(0..n)]).collect()
            };
            let has_implied = members
                .iter()
                .map(|&p| {
                    let s = &train.samples[p];
                    train.is_implicit(s.label) && s.implied_vector.is_some()
                })
                .collect();
            BatchCluster {
                id: c.id,
                members,
                has_implied,
            }
        })
        .collect();

    Ok(NeighborhoodBatch {
        seed,
        imposters: imposters.to_vec(),
        d,
        clusters,
    })
}
