//! Line-delimited embedding dump.
//!
//! ```text
//! {"d_in": 2, "class_names": ["N-Hate", "EXP", "IMP"], "implicit_labels": [2]}
//! {"id": "a", "label": 2, "vector": [0.0, 1.0], "implied_vector": [1.0, 0.0]}
//! ```
//!
//! Floats are written in shortest round-trip form, so `load ∘ dump` is the
//! identity bit for bit.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, EmbeddedSample};
use crate::dataset::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d_in: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub implicit_labels: Vec<ClassId>,
}

pub fn load_dataset(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Dataset, DatasetError> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), expected_dim)
}

pub fn read_dataset<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<Dataset, DatasetError> {
    let mut header: Option<DatasetHeader> = None;
    let mut samples = Vec::new();
    let mut ids = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: DatasetHeader = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                message: format!("expected header: {e}"),
            })?;
            if h.d_in == 0 {
                return Err(DatasetError::Malformed {
                    line: line_no,
                    message: "d_in must be positive".into(),
                });
            }
            if let Some(expected) = expected_dim {
                if expected != h.d_in {
                    return Err(DatasetError::DimensionMismatch {
                        line: line_no,
                        expected,
                        found: h.d_in,
                    });
                }
            }
            if let Some(&bad) = h.implicit_labels.iter().find(|&&l| l >= h.class_names.len()) {
                return Err(DatasetError::Malformed {
                    line: line_no,
                    message: format!("implicit label {bad} is not a declared class"),
                });
            }
            header = Some(h);
            continue;
        };

        let sample: EmbeddedSample = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = expected_dim.unwrap_or(h.d_in);
        if sample.vector.len() != expected {
            return Err(DatasetError::DimensionMismatch {
                line: line_no,
                expected,
                found: sample.vector.len(),
            });
        }
        if let Some(implied) = &sample.implied_vector {
            if implied.len() != expected {
                return Err(DatasetError::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: implied.len(),
                });
            }
            if !h.implicit_labels.contains(&sample.label) {
                return Err(DatasetError::ImpliedOnNonImplicit {
                    line: line_no,
                    id: sample.id,
                    label: sample.label,
                });
            }
        }
        if sample.label >= h.class_names.len() {
            return Err(DatasetError::LabelOutOfRange {
                line: line_no,
                id: sample.id,
                label: sample.label,
                classes: h.class_names.len(),
            });
        }
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }

    let header = header.ok_or(DatasetError::Empty)?;
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let implicit: BTreeSet<ClassId> = header.implicit_labels.into_iter().collect();
    Dataset::new(samples, header.d_in, header.class_names, implicit)
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut writer: W) -> Result<(), DatasetError> {
    let header = DatasetHeader {
        d_in: ds.d_in,
        class_names: ds.class_names.clone(),
        implicit_labels: ds.implicit_labels.iter().copied().collect(),
    };
    serde_json::to_writer(&mut writer, &header).map_err(std::io::Error::from)?;
    writer.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut writer, s).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn dump(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = File::create(path)?;
    write_dataset(ds, BufWriter::new(file))
}
