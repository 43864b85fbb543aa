//! Labeled embedding datasets.
//!
//! A dataset is a list of frozen encoder outputs, each with an integer class
//! label and, for samples of an implicit class, an optional embedding of the
//! sample's implied meaning. Storage is line-delimited JSON: a header line
//! declaring the input dimension and label taxonomy, followed by one record
//! per sample (see [`io`]).

mod io;
mod split;
mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{dump, load_dataset, read_dataset, write_dataset, DatasetHeader};
pub use split::{split, SplitPair};
pub use synthetic::{generate_synthetic, ClassSpec, Covariance, SyntheticSpec};

/// Small non-negative class identifier, indexing `Dataset::class_names`.
pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub id: String,
    pub label: ClassId,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implied_vector: Option<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: sample {id:?} has an implied vector but label {label} is not implicit")]
    ImpliedOnNonImplicit {
        line: usize,
        id: String,
        label: ClassId,
    },
    #[error("line {line}: sample {id:?} has label {label} outside [0, {classes})")]
    LabelOutOfRange {
        line: usize,
        id: String,
        label: ClassId,
        classes: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(Violation),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// One broken dataset invariant, as reported by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    ImpliedDimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    ImpliedOnNonImplicit {
        id: String,
        label: ClassId,
    },
    LabelOutOfRange {
        id: String,
        label: ClassId,
        classes: usize,
    },
    DuplicateId {
        id: String,
    },
    NonFinite {
        id: String,
    },
    ImplicitLabelOutOfRange {
        label: ClassId,
    },
    ZeroDimension,
}

impl Violation {
    /// The offending sample id, when the violation is tied to one.
    pub fn sample_id(&self) -> Option<&str> {
        match self {
            Violation::DimensionMismatch { id, .. }
            | Violation::ImpliedDimensionMismatch { id, .. }
            | Violation::ImpliedOnNonImplicit { id, .. }
            | Violation::LabelOutOfRange { id, .. }
            | Violation::DuplicateId { id }
            | Violation::NonFinite { id } => Some(id),
            Violation::ImplicitLabelOutOfRange { .. } | Violation::ZeroDimension => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                id,
                expected,
                found,
            } => write!(f, "{id}: vector has {found} dims, expected {expected}"),
            Violation::ImpliedDimensionMismatch {
                id,
                expected,
                found,
            } => write!(f, "{id}: implied_vector has {found} dims, expected {expected}"),
            Violation::ImpliedOnNonImplicit { id, label } => {
                write!(f, "{id}: implied_vector on non-implicit label {label}")
            }
            Violation::LabelOutOfRange { id, label, classes } => {
                write!(f, "{id}: label {label} outside [0, {classes})")
            }
            Violation::DuplicateId { id } => write!(f, "{id}: duplicate id"),
            Violation::NonFinite { id } => write!(f, "{id}: non-finite coordinate"),
            Violation::ImplicitLabelOutOfRange { label } => {
                write!(f, "implicit label {label} is not a declared class")
            }
            Violation::ZeroDimension => write!(f, "d_in must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<EmbeddedSample>,
    pub d_in: usize,
    pub class_names: Vec<String>,
    pub implicit_labels: BTreeSet<ClassId>,
}

impl Dataset {
    /// Builds a dataset, rejecting it if any invariant is violated.
    pub fn new(
        samples: Vec<EmbeddedSample>,
        d_in: usize,
        class_names: Vec<String>,
        implicit_labels: BTreeSet<ClassId>,
    ) -> Result<Self, DatasetError> {
        let ds = Self::new_unchecked(samples, d_in, class_names, implicit_labels);
        match ds.validate().into_iter().next() {
            Some(v) => Err(DatasetError::Invalid(v)),
            None => Ok(ds),
        }
    }

    pub fn new_unchecked(
        samples: Vec<EmbeddedSample>,
        d_in: usize,
        class_names: Vec<String>,
        implicit_labels: BTreeSet<ClassId>,
    ) -> Self {
        Self {
            samples,
            d_in,
            class_names,
            implicit_labels,
        }
    }

    /// Same taxonomy, different samples.
    pub fn with_samples(&self, samples: Vec<EmbeddedSample>) -> Self {
        Self::new_unchecked(
            samples,
            self.d_in,
            self.class_names.clone(),
            self.implicit_labels.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_implicit(&self, label: ClassId) -> bool {
        self.implicit_labels.contains(&label)
    }

    pub fn labels(&self) -> Vec<ClassId> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.label) {
                *c += 1;
            }
        }
        counts
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Lists every invariant violation; empty iff the dataset is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.d_in == 0 {
            out.push(Violation::ZeroDimension);
        }
        let classes = self.num_classes();
        for &label in &self.implicit_labels {
            if label >= classes {
                out.push(Violation::ImplicitLabelOutOfRange { label });
            }
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                out.push(Violation::DuplicateId { id: s.id.clone() });
            }
            if s.label >= classes {
                out.push(Violation::LabelOutOfRange {
                    id: s.id.clone(),
                    label: s.label,
                    classes,
                });
            }
            if s.vector.len() != self.d_in {
                out.push(Violation::DimensionMismatch {
                    id: s.id.clone(),
                    expected: self.d_in,
                    found: s.vector.len(),
                });
            }
            let mut finite = s.vector.iter().all(|x| x.is_finite());
            if let Some(implied) = &s.implied_vector {
                if !self.is_implicit(s.label) {
                    out.push(Violation::ImpliedOnNonImplicit {
                        id: s.id.clone(),
                        label: s.label,
                    });
                }
                if implied.len() != s.vector.len() {
                    out.push(Violation::ImpliedDimensionMismatch {
                        id: s.id.clone(),
                        expected: s.vector.len(),
                        found: implied.len(),
                    });
                }
                finite &= implied.iter().all(|x| x.is_finite());
            }
            if !finite {
                out.push(Violation::NonFinite { id: s.id.clone() });
            }
        }
        out
    }
}
