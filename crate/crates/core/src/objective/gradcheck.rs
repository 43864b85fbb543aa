use rand::RngExt;
use rand_distr::StandardNormal;

use super::{ProjectedBatch, ProjectedCluster};
use crate::rng;

/// Magnitude below which [`rel_error`] degrades to an absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `f` at `x`, one
/// coordinate at a time.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], step: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        let err = rel_error(analytic[i], numeric);
        if !(err <= worst.max_rel_error) {
            worst = GradCheck {
                max_rel_error: err,
                worst_coordinate: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    worst
}

/// A seeded batch of overlapping Gaussian clusters, one class per cluster
/// except that the last two share a class when there are more than two.
/// Implied partners (when requested) are attached to every point of the first
/// cluster.
pub fn random_batch(seed: u64, clusters: usize, per_cluster: usize, dim: usize, implied: bool) -> ProjectedBatch {
    let mut rng = rng::seeded(seed, rng::stream::GRADCHECK);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let clusters = (0..clusters)
        .map(|c| {
            let class = if clusters > 2 && c == clusters - 1 { c - 1 } else { c };
            let center: Vec<f64> = (0..dim).map(|_| 0.8 * normal()).collect();
            let shift: Vec<f64> = (0..dim).map(|_| 0.8 * normal()).collect();
            let points: Vec<Vec<f64>> = (0..per_cluster)
                .map(|_| center.iter().map(|m| m + normal()).collect())
                .collect();
            let implied = (0..per_cluster)
                .map(|_| {
                    (implied && c == 0).then(|| shift.iter().map(|m| m + normal()).collect())
                })
                .collect();
            ProjectedCluster { class, points, implied }
        })
        .collect();
    ProjectedBatch { clusters }
}
