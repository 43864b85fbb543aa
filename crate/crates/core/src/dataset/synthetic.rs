//! Gaussian stand-in datasets with the geometry of the hate-speech setting:
//! an implicit class overlapping non-hate, an explicit class far away, and
//! implied-meaning embeddings clustered near the explicit class.

use std::collections::BTreeSet;

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClassId, Dataset, DatasetError, EmbeddedSample};
use crate::rng;

/// Covariance given either as its diagonal or as a full symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    pub fn identity(dim: usize) -> Self {
        Covariance::Diagonal(vec![1.0; dim])
    }

    fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Full(m) => m.len(),
        }
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`. Zero pivots are allowed
    /// (degenerate but PSD); negative ones are not.
    fn cholesky(&self) -> Result<Vec<Vec<f64>>, String> {
        let n = self.dim();
        let full: Vec<Vec<f64>> = match self {
            Covariance::Diagonal(d) => (0..n)
                .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                .collect(),
            Covariance::Full(m) => {
                if m.iter().any(|row| row.len() != n) {
                    return Err("covariance matrix is not square".into());
                }
                for i in 0..n {
                    for j in 0..i {
                        if (m[i][j] - m[j][i]).abs() > 1e-9 * (1.0 + m[i][j].abs()) {
                            return Err("covariance matrix is not symmetric".into());
                        }
                    }
                }
                m.clone()
            }
        };
        if full.iter().flatten().any(|x| !x.is_finite()) {
            return Err("covariance has non-finite entries".into());
        }
        let tol = 1e-12 * full.iter().enumerate().map(|(i, r)| r[i].abs()).fold(1.0, f64::max);
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let pivot = full[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
            if pivot < -tol {
                return Err("covariance is not positive semi-definite".into());
            }
            let diag = pivot.max(0.0).sqrt();
            l[j][j] = diag;
            for i in (j + 1)..n {
                let off = full[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if diag > 0.0 {
                    l[i][j] = off / diag;
                } else if off.abs() > tol {
                    return Err("covariance is not positive semi-definite".into());
                }
            }
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub count: i64,
    pub mean: Vec<f64>,
    pub cov: Covariance,
}

/// Per-class Gaussians indexed by label, plus the implied-meaning Gaussian
/// used for every sample of an implicit class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub class_names: Vec<String>,
    pub implicit_labels: Vec<ClassId>,
    pub classes: Vec<ClassSpec>,
    pub implied_mean: Vec<f64>,
    pub implied_cov: Covariance,
}

impl Default for SyntheticSpec {
    /// Non-hate at (0,0), explicit at (8,0), implicit at (2,0) overlapping
    /// non-hate, implied meanings at (7,1) near explicit; 50 samples per
    /// class with unit isotropic covariance.
    fn default() -> Self {
        let class = |mean: [f64; 2]| ClassSpec {
            count: 50,
            mean: mean.to_vec(),
            cov: Covariance::identity(2),
        };
        Self {
            class_names: vec!["N-Hate".into(), "EXP".into(), "IMP".into()],
            implicit_labels: vec![2],
            classes: vec![class([0.0, 0.0]), class([8.0, 0.0]), class([2.0, 0.0])],
            implied_mean: vec![7.0, 1.0],
            implied_cov: Covariance::identity(2),
        }
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.implied_mean.len()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        let dim = self.dim();
        if dim == 0 {
            return bad("implied_mean must be non-empty".into());
        }
        if self.classes.len() != self.class_names.len() {
            return bad(format!(
                "{} class specs for {} class names",
                self.classes.len(),
                self.class_names.len()
            ));
        }
        if let Some(l) = self.implicit_labels.iter().find(|&&l| l >= self.classes.len()) {
            return bad(format!("implicit label {l} is not a declared class"));
        }
        for (label, c) in self.classes.iter().enumerate() {
            if c.count <= 0 {
                return bad(format!("class {label}: count must be positive, got {}", c.count));
            }
            if c.mean.len() != dim || c.cov.dim() != dim {
                return bad(format!("class {label}: mean/cov must have {dim} dims"));
            }
            c.cov
                .cholesky()
                .map_err(|e| DatasetError::InvalidSpec(format!("class {label}: {e}")))?;
        }
        if self.implied_cov.dim() != dim {
            return bad(format!("implied_cov must have {dim} dims"));
        }
        self.implied_cov
            .cholesky()
            .map_err(|e| DatasetError::InvalidSpec(format!("implied_cov: {e}")))?;
        Ok(())
    }
}

fn draw(mean: &[f64], chol: &[Vec<f64>], rng: &mut rng::Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    mean.iter()
        .enumerate()
        .map(|(i, m)| m + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
        .collect()
}

/// Samples a dataset class by class, in label order. Ids are
/// `syn-<label>-<index>`; each implicit-class sample draws its vector and then
/// its implied vector.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let implied_chol = spec.implied_cov.cholesky().map_err(DatasetError::InvalidSpec)?;
    let implicit: BTreeSet<ClassId> = spec.implicit_labels.iter().copied().collect();
    let mut rng = rng::seeded(seed, rng::stream::SYNTH);
    let mut samples = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        let chol = class.cov.cholesky().map_err(DatasetError::InvalidSpec)?;
        for i in 0..class.count as usize {
            let vector = draw(&class.mean, &chol, &mut rng);
            let implied_vector = implicit
                .contains(&label)
                .then(|| draw(&spec.implied_mean, &implied_chol, &mut rng));
            samples.push(EmbeddedSample {
                id: format!("syn-{label}-{i:04}"),
                label,
                vector,
                implied_vector,
            });
        }
    }
    Dataset::new(samples, spec.dim(), spec.class_names.clone(), implicit)
}
