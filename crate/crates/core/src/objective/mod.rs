//! Adaptive density discrimination losses.
//!
//! For a point `r` of batch cluster `m` with mean `μᵐ`,
//!
//! ```text
//!            exp(-‖r-μᵐ‖²/2σ² - α) [+ exp(-‖r-μ̃ᵐ‖²/2σ̃² - α)]
//! p(r) = ────────────────────────────────────────────────────
//!              Σ_{o : class(o) ≠ class(m)} exp(-‖r-μᵒ‖²/2σ²)
//! ```
//!
//! where the bracketed term is present only for the inferential variant on
//! clusters whose sampled points carry implied-meaning projections (`μ̃ᵐ` is
//! their mean). The per-point loss is `-(1-p̂)^γ log p̂` with
//! `p̂ = clamp(p, ε, 1-ε)`, averaged over every sampled point.
//!
//! Everything is evaluated in log space and differentiated analytically with
//! respect to every sampled point and implied point, through the batch means
//! and variances.

mod ace;
mod gradcheck;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ace::{ace_loss, inverse_frequency_weights, normalized_weights, AceLoss};
pub use gradcheck::{grad_check, random_batch, rel_error, GradCheck, REL_ERROR_FLOOR};

use crate::dataset::ClassId;
use crate::vector::squared_l2;

/// Lower bound applied to both batch variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Plain density discrimination (no focal factor).
    #[serde(rename = "ADD")]
    Add,
    /// Focal-weighted density discrimination.
    #[serde(rename = "ADD_FOC")]
    AddFoc,
    /// Focal-weighted with the inferential numerator term.
    #[serde(rename = "ADD_INF_FOC")]
    AddInfFoc,
    /// Alpha cross-entropy alone; no clustering.
    #[serde(rename = "ACE_ONLY")]
    AceOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Add, Variant::AddFoc, Variant::AddInfFoc, Variant::AceOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Add => "ADD",
            Variant::AddFoc => "ADD_FOC",
            Variant::AddInfFoc => "ADD_INF_FOC",
            Variant::AceOnly => "ACE_ONLY",
        }
    }

    pub fn uses_clusters(&self) -> bool {
        !matches!(self, Variant::AceOnly)
    }

    pub fn uses_inferential(&self) -> bool {
        matches!(self, Variant::AddInfFoc)
    }

    /// The focal exponent actually applied.
    pub fn effective_gamma(&self, gamma: f64) -> f64 {
        match self {
            Variant::Add => 0.0,
            _ => gamma,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '+'], "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| format!("unknown variant {s:?} (expected ADD, ADD_FOC, ADD_INF_FOC or ACE_ONLY)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Margin subtracted inside the numerator exponent(s).
    pub alpha: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Weight of cross-entropy in `β·CE + (1-β)·ADD`.
    pub beta: f64,
    /// Probability clamp `[ε, 1-ε]` before the log and the focal factor.
    pub epsilon: f64,
    pub variant: Variant,
    /// Per-class CE weights; inverse class frequency when absent.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            beta: 0.5,
            epsilon: 1e-7,
            variant: Variant::AddInfFoc,
            class_weights: None,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<(), String> {
        let finite = [self.alpha, self.gamma, self.beta, self.epsilon].iter().all(|x| x.is_finite());
        if !finite {
            return Err("objective parameters must be finite".into());
        }
        if self.alpha < 0.0 {
            return Err(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.gamma < 0.0 {
            return Err(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(format!("epsilon must be in (0, 0.5), got {}", self.epsilon));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err("class weights must be positive and finite".into());
            }
            if let Some(c) = num_classes {
                if w.len() != c {
                    return Err(format!("{} class weights for {c} classes", w.len()));
                }
            }
        }
        Ok(())
    }
}

/// One selected subcluster's sampled points in projection space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCluster {
    pub class: ClassId,
    pub points: Vec<Vec<f64>>,
    /// Implied-meaning projection paired with each point, if any.
    pub implied: Vec<Option<Vec<f64>>>,
}

/// Seed cluster first, then imposters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedBatch {
    pub clusters: Vec<ProjectedCluster>,
}

impl ProjectedBatch {
    pub fn num_points(&self) -> usize {
        self.clusters.iter().map(|c| c.points.len()).sum()
    }

    pub fn num_implied(&self) -> usize {
        self.clusters.iter().flat_map(|c| &c.implied).filter(|i| i.is_some()).count()
    }

    /// Same batch with every implied partner removed.
    pub fn without_implied(&self) -> Self {
        Self {
            clusters: self
                .clusters
                .iter()
                .map(|c| ProjectedCluster {
                    class: c.class,
                    points: c.points.clone(),
                    implied: vec![None; c.points.len()],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Mean of each cluster's sampled points.
    pub mu: Vec<Vec<f64>>,
    /// Mean of each cluster's implied points, when it has any.
    pub mu_tilde: Vec<Option<Vec<f64>>>,
    pub sigma2: f64,
    pub sigma2_tilde: f64,
    pub sigma2_floored: bool,
    pub sigma2_tilde_floored: bool,
    /// Fewer than two implied points in the batch: `σ̃² = σ²`.
    pub sigma2_tilde_fallback: bool,
}

/// Cluster means and pooled variances of a batch.
///
/// `σ² = Σ_m Σ_d ‖r_dᵐ - μᵐ‖² / (T - 1)` over all `T` sampled points, and
/// `σ̃²` the same over implied points around their cluster's `μ̃ᵐ`.
pub fn batch_stats(batch: &ProjectedBatch) -> BatchStats {
    let mu: Vec<Vec<f64>> = batch
        .clusters
        .iter()
        .map(|c| crate::vector::mean(c.points.iter().map(Vec::as_slice)))
        .collect();
    let mu_tilde: Vec<Option<Vec<f64>>> = batch
        .clusters
        .iter()
        .map(|c| {
            let implied: Vec<&[f64]> = c.implied.iter().flatten().map(Vec::as_slice).collect();
            (!implied.is_empty()).then(|| crate::vector::mean(implied))
        })
        .collect();

    let total = batch.num_points();
    let ss: f64 = batch
        .clusters
        .iter()
        .zip(&mu)
        .map(|(c, m)| c.points.iter().map(|p| squared_l2(p, m)).sum::<f64>())
        .sum();
    let raw = if total >= 2 { ss / (total - 1) as f64 } else { 0.0 };
    let sigma2_floored = !(raw >= VARIANCE_FLOOR);
    let sigma2 = if sigma2_floored { VARIANCE_FLOOR } else { raw };

    let implied_total = batch.num_implied();
    let (sigma2_tilde, sigma2_tilde_floored, sigma2_tilde_fallback) = if implied_total < 2 {
        (sigma2, sigma2_floored, true)
    } else {
        let ss: f64 = batch
            .clusters
            .iter()
            .zip(&mu_tilde)
            .filter_map(|(c, m)| m.as_ref().map(|m| (c, m)))
            .map(|(c, m)| c.implied.iter().flatten().map(|p| squared_l2(p, m)).sum::<f64>())
            .sum();
        let raw = ss / (implied_total - 1) as f64;
        let floored = !(raw >= VARIANCE_FLOOR);
        (if floored { VARIANCE_FLOOR } else { raw }, floored, false)
    };

    BatchStats {
        mu,
        mu_tilde,
        sigma2,
        sigma2_tilde,
        sigma2_floored,
        sigma2_tilde_floored,
        sigma2_tilde_fallback,
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_p(
    r: &[f64],
    own_mean: &[f64],
    implied_mean: Option<&[f64]>,
    sigma2: f64,
    sigma2_tilde: f64,
    imposter_means: &[&[f64]],
    alpha: f64,
) -> f64 {
    let a = -squared_l2(r, own_mean) / (2.0 * sigma2) - alpha;
    let log_num = match implied_mean {
        Some(m) => log_sum_exp(&[a, -squared_l2(r, m) / (2.0 * sigma2_tilde) - alpha]),
        None => a,
    };
    let den: Vec<f64> = imposter_means.iter().map(|m| -squared_l2(r, m) / (2.0 * sigma2)).collect();
    log_num - log_sum_exp(&den)
}

/// Unclamped discrimination probability of `r` against imposter-class means.
/// May exceed 1, since the point's own cluster is not in the denominator.
pub fn p_add(r: &[f64], own_mean: &[f64], imposter_means: &[&[f64]], sigma2: f64, alpha: f64) -> f64 {
    log_p(r, own_mean, None, sigma2, sigma2, imposter_means, alpha).exp()
}

/// [`p_add`] with the inferential numerator term; identical to it when
/// `implied_mean` is `None`.
pub fn p_add_inf(
    r: &[f64],
    own_mean: &[f64],
    implied_mean: Option<&[f64]>,
    sigma2: f64,
    sigma2_tilde: f64,
    imposter_means: &[&[f64]],
    alpha: f64,
) -> f64 {
    log_p(r, own_mean, implied_mean, sigma2, sigma2_tilde, imposter_means, alpha).exp()
}

/// Loss value, per-point breakdown, and gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AddLoss {
    pub loss: f64,
    /// Unclamped `p` per point, indexed like the batch.
    pub probabilities: Vec<Vec<f64>>,
    pub per_point: Vec<Vec<f64>>,
    pub point_grads: Vec<Vec<Vec<f64>>>,
    /// `Some` exactly where the batch has an implied point.
    pub implied_grads: Vec<Vec<Option<Vec<f64>>>>,
}

impl AddLoss {
    /// Mean per-point loss of each batch cluster.
    pub fn cluster_means(&self) -> Vec<f64> {
        self.per_point
            .iter()
            .map(|l| if l.is_empty() { 0.0 } else { l.iter().sum::<f64>() / l.len() as f64 })
            .collect()
    }
}

/// Focal density-discrimination loss `mean_points[-(1-p̂)^γ log p̂]`.
///
/// `stats` must be `batch_stats(batch)`. The variant selects the inferential
/// term ([`Variant::AddInfFoc`]) and whether `γ` applies ([`Variant::Add`]
/// is unfocused). Gradients flow through `p`, the cluster means, and both
/// variances to every sampled and implied point; clamped points contribute
/// no gradient.
pub fn add_loss(batch: &ProjectedBatch, stats: &BatchStats, config: &ObjectiveConfig) -> AddLoss {
    let gamma = config.variant.effective_gamma(config.gamma);
    let inferential = config.variant.uses_inferential();
    let eps = config.epsilon;
    let alpha = config.alpha;
    let (s2, s2t) = (stats.sigma2, stats.sigma2_tilde);
    let total = batch.num_points();
    let inv_t = 1.0 / total as f64;
    let dim = batch.clusters.first().and_then(|c| c.points.first()).map_or(0, Vec::len);

    let mut probabilities = Vec::with_capacity(batch.clusters.len());
    let mut per_point = Vec::with_capacity(batch.clusters.len());
    let mut point_grads: Vec<Vec<Vec<f64>>> = batch
        .clusters
        .iter()
        .map(|c| vec![vec![0.0; dim]; c.points.len()])
        .collect();
    let mut implied_grads: Vec<Vec<Option<Vec<f64>>>> = batch
        .clusters
        .iter()
        .map(|c| c.implied.iter().map(|i| i.as_ref().map(|_| vec![0.0; dim])).collect())
        .collect();
    let mut g_mu = vec![vec![0.0; dim]; batch.clusters.len()];
    let mut g_mu_tilde = vec![vec![0.0; dim]; batch.clusters.len()];
    let mut g_s2 = 0.0;
    let mut g_s2t = 0.0;
    let mut loss_sum = 0.0;

    for (ci, cluster) in batch.clusters.iter().enumerate() {
        let own = &stats.mu[ci];
        let implied_mean = if inferential { stats.mu_tilde[ci].as_deref() } else { None };
        let imposters: Vec<usize> = (0..batch.clusters.len())
            .filter(|&o| batch.clusters[o].class != cluster.class)
            .collect();
        let mut probs = Vec::with_capacity(cluster.points.len());
        let mut losses = Vec::with_capacity(cluster.points.len());

        for (pi, r) in cluster.points.iter().enumerate() {
            let d_own = squared_l2(r, own);
            let a = -d_own / (2.0 * s2) - alpha;
            let (b, d_inf) = match implied_mean {
                Some(m) => {
                    let d = squared_l2(r, m);
                    (Some(-d / (2.0 * s2t) - alpha), d)
                }
                None => (None, 0.0),
            };
            let log_num = match b {
                Some(b) => log_sum_exp(&[a, b]),
                None => a,
            };
            let d_imp: Vec<f64> = imposters.iter().map(|&o| squared_l2(r, &stats.mu[o])).collect();
            let e: Vec<f64> = d_imp.iter().map(|d| -d / (2.0 * s2)).collect();
            let log_den = log_sum_exp(&e);
            let lp = log_num - log_den;
            let p = lp.exp();
            let clamped = !(p >= eps && p <= 1.0 - eps);
            let ph = p.clamp(eps, 1.0 - eps);
            let focal = (1.0 - ph).powf(gamma);
            let loss = -focal * ph.ln();
            probs.push(p);
            losses.push(loss);
            loss_sum += loss;

            if clamped {
                continue;
            }
            // dℓ/d(log p) = p·dℓ/dp
            let dl_dlogp = if gamma == 0.0 {
                -1.0
            } else {
                gamma * ph * (1.0 - ph).powf(gamma - 1.0) * ph.ln() - focal
            };
            let g = dl_dlogp * inv_t;

            let w_a = (a - log_num).exp();
            let w_b = b.map(|b| (b - log_num).exp());
            let v: Vec<f64> = e.iter().map(|e| (e - log_den).exp()).collect();

            let grad_r = &mut point_grads[ci][pi];
            for k in 0..dim {
                let diff = r[k] - own[k];
                grad_r[k] += g * (-w_a * diff / s2);
                g_mu[ci][k] += g * (w_a * diff / s2);
            }
            g_s2 += g * w_a * d_own / (2.0 * s2 * s2);
            if let (Some(w_b), Some(m)) = (w_b, implied_mean) {
                for k in 0..dim {
                    let diff = r[k] - m[k];
                    grad_r[k] += g * (-w_b * diff / s2t);
                    g_mu_tilde[ci][k] += g * (w_b * diff / s2t);
                }
                g_s2t += g * w_b * d_inf / (2.0 * s2t * s2t);
            }
            for ((&o, &vo), &d) in imposters.iter().zip(&v).zip(&d_imp) {
                let mo = &stats.mu[o];
                for k in 0..dim {
                    let diff = r[k] - mo[k];
                    grad_r[k] += g * (vo * diff / s2);
                    g_mu[o][k] += g * (-vo * diff / s2);
                }
                g_s2 -= g * vo * d / (2.0 * s2 * s2);
            }
        }
        probabilities.push(probs);
        per_point.push(losses);
    }

    // Back through σ̃², μ̃, σ², μ.
    if stats.sigma2_tilde_fallback {
        g_s2 += g_s2t;
    } else if !stats.sigma2_tilde_floored {
        let scale = 2.0 * g_s2t / (batch.num_implied() - 1) as f64;
        for (ci, cluster) in batch.clusters.iter().enumerate() {
            if let Some(m) = &stats.mu_tilde[ci] {
                for (imp, grad) in cluster.implied.iter().zip(implied_grads[ci].iter_mut()) {
                    if let (Some(x), Some(g)) = (imp, grad) {
                        for k in 0..dim {
                            g[k] += scale * (x[k] - m[k]);
                        }
                    }
                }
            }
        }
    }
    for (ci, cluster) in batch.clusters.iter().enumerate() {
        let n_imp = cluster.implied.iter().filter(|i| i.is_some()).count();
        if n_imp > 0 && stats.mu_tilde[ci].is_some() {
            for g in implied_grads[ci].iter_mut().flatten() {
                for k in 0..dim {
                    g[k] += g_mu_tilde[ci][k] / n_imp as f64;
                }
            }
        }
    }
    let var_scale = if stats.sigma2_floored || total < 2 {
        0.0
    } else {
        2.0 * g_s2 / (total - 1) as f64
    };
    for (ci, cluster) in batch.clusters.iter().enumerate() {
        let n = cluster.points.len() as f64;
        for (r, g) in cluster.points.iter().zip(point_grads[ci].iter_mut()) {
            for k in 0..dim {
                g[k] += g_mu[ci][k] / n + var_scale * (r[k] - stats.mu[ci][k]);
            }
        }
    }

    AddLoss {
        loss: loss_sum * inv_t,
        probabilities,
        per_point,
        point_grads,
        implied_grads,
    }
}

/// `β·CE + (1-β)·ADD` with both gradients scaled accordingly.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub loss: f64,
    pub ce: f64,
    pub add: f64,
    pub logit_grads: Vec<Vec<f64>>,
    pub point_grads: Vec<Vec<Vec<f64>>>,
    pub implied_grads: Vec<Vec<Option<Vec<f64>>>>,
}

pub fn combined_loss(ce: &AceLoss, add: &AddLoss, beta: f64) -> CombinedLoss {
    let wa = 1.0 - beta;
    let scale = |v: &Vec<f64>, w: f64| v.iter().map(|x| w * x).collect::<Vec<f64>>();
    CombinedLoss {
        loss: beta * ce.loss + wa * add.loss,
        ce: ce.loss,
        add: add.loss,
        logit_grads: ce.grad.iter().map(|g| scale(g, beta)).collect(),
        point_grads: add
            .point_grads
            .iter()
            .map(|c| c.iter().map(|g| scale(g, wa)).collect())
            .collect(),
        implied_grads: add
            .implied_grads
            .iter()
            .map(|c| c.iter().map(|g| g.as_ref().map(|g| scale(g, wa))).collect())
            .collect(),
    }
}
