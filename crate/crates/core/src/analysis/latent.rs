use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::cluster::ClusterIndex;
use crate::dataset::{ClassId, Dataset};
use crate::model::Heads;

/// One projected sample. `subcluster` is `(class, sub)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub id: String,
    pub label: ClassId,
    pub subcluster: Option<(ClassId, usize)>,
    pub r_d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_tilde_d: Option<Vec<f64>>,
}

/// Writes one record per sample. Samples the index was built from keep their
/// assignment; others get the nearest centroid of their own class.
pub fn dump_latent<W: Write>(heads: &Heads, index: &ClusterIndex, ds: &Dataset, mut w: W) -> Result<usize, AnalysisError> {
    for s in &ds.samples {
        let r_d = heads.project(&s.vector)?;
        let subcluster = index
            .assignment_of(&s.id)
            .or_else(|| index.nearest_in_class(&r_d, s.label))
            .map(|id| (id.class, id.sub));
        let r_tilde_d = match &s.implied_vector {
            Some(v) => Some(heads.project(v)?),
            None => None,
        };
        let rec = LatentRecord {
            id: s.id.clone(),
            label: s.label,
            subcluster,
            r_d,
            r_tilde_d,
        };
        let line = serde_json::to_string(&rec).map_err(|e| AnalysisError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(ds.len())
}

pub fn load_latent<R: BufRead>(r: R) -> Result<Vec<LatentRecord>, AnalysisError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AnalysisError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
