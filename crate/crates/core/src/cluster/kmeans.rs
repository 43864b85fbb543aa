use rand::RngExt;
use rayon::prelude::*;

use super::ClusterError;
use crate::rng;
use crate::vector::squared_l2;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index per input point, in `[0, centroids.len())`.
    pub assignments: Vec<usize>,
    /// Only non-empty clusters are kept, so there may be fewer than `k`.
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster sum of squares after each centroid update.
    pub wcss_trace: Vec<f64>,
}

impl KMeans {
    pub fn wcss(&self, points: &[Vec<f64>]) -> f64 {
        wcss(points, &self.assignments, &self.centroids)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub(crate) fn wcss(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_l2(p, &centroids[a]))
        .sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_l2(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.par_iter().map(|p| nearest(p, centroids)).collect()
}

fn update(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|x| x / n as f64).collect();
        }
    }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_l2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // Every point coincides with a chosen centroid.
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_l2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops when an assignment pass changes nothing or after `max_iter` updates.
/// With fewer points than `k`, every point becomes its own cluster. Returned
/// centroids are always the means of their returned members.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KMeans, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if k == 0 || max_iter == 0 {
        return Err(ClusterError::InvalidParameter(format!(
            "k and max_iter must be positive (k={k}, max_iter={max_iter})"
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::InvalidParameter("inconsistent point dimensions".into()));
    }
    if points.len() < k {
        return Ok(KMeans {
            assignments: (0..points.len()).collect(),
            centroids: points.to_vec(),
            iterations: 0,
            converged: true,
            wcss_trace: vec![0.0],
        });
    }

    let mut rng = rng::seeded(seed, rng::stream::KMEANS);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = assign(points, &centroids);
    let mut wcss_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        update(points, &assignments, &mut centroids);
        wcss_trace.push(wcss(points, &assignments, &centroids));
        iterations += 1;
        let next = assign(points, &centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        update(points, &assignments, &mut centroids);
    }

    // Drop clusters that ended up empty and relabel densely.
    let mut used = vec![false; centroids.len()];
    for &a in &assignments {
        used[a] = true;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (j, c) in centroids.into_iter().enumerate() {
        if used[j] {
            remap[j] = kept.len();
            kept.push(c);
        }
    }
    let assignments = assignments.into_iter().map(|a| remap[a]).collect();

    Ok(KMeans {
        assignments,
        centroids: kept,
        iterations,
        converged,
        wcss_trace,
    })
}
