use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 0-based class index. Names only matter at I/O boundaries.
pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelSpaceError {
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {index} has an empty name")]
    EmptyName { index: usize },
    #[error("duplicate class name {name:?} at index {index}")]
    DuplicateName { name: String, index: usize },
    #[error("{names} names but {counts} counts")]
    LengthMismatch { names: usize, counts: usize },
}

/// The ordered set of classes together with their training sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRepr", into = "LabelSpaceRepr")]
pub struct LabelSpace {
    names: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, ClassId>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceRepr {
    names: Vec<String>,
    counts: Vec<u64>,
}

impl TryFrom<LabelSpaceRepr> for LabelSpace {
    type Error = LabelSpaceError;

    fn try_from(r: LabelSpaceRepr) -> Result<Self, Self::Error> {
        LabelSpace::new(r.names, r.counts)
    }
}

impl From<LabelSpace> for LabelSpaceRepr {
    fn from(s: LabelSpace) -> Self {
        LabelSpaceRepr {
            names: s.names,
            counts: s.counts,
        }
    }
}

impl LabelSpace {
    pub fn new(names: Vec<String>, counts: Vec<u64>) -> Result<Self, LabelSpaceError> {
        if names.len() != counts.len() {
            return Err(LabelSpaceError::LengthMismatch {
                names: names.len(),
                counts: counts.len(),
            });
        }
        if names.len() < 2 {
            return Err(LabelSpaceError::TooFewClasses(names.len()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(LabelSpaceError::EmptyName { index: i });
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(LabelSpaceError::DuplicateName {
                    name: name.clone(),
                    index: i,
                });
            }
        }
        Ok(Self {
            names,
            counts,
            index,
        })
    }

    /// Classes named `c0`, `c1`, ... with the given counts.
    pub fn numbered(counts: Vec<u64>) -> Result<Self, LabelSpaceError> {
        let names = (0..counts.len()).map(|i| format!("c{i}")).collect();
        Self::new(names, counts)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn name(&self, class: ClassId) -> &str {
        &self.names[class]
    }

    pub fn count(&self, class: ClassId) -> u64 {
        self.counts[class]
    }

    pub fn index_of(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    /// Same names, different counts.
    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self, LabelSpaceError> {
        Self::new(self.names.clone(), counts)
    }
}

/// Raw per-class scores for one sample (pre-softmax logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    /// Returns `None` unless every entry is finite and the length matches.
    pub fn new(values: Vec<f64>, num_classes: usize) -> Option<Self> {
        (values.len() == num_classes && values.iter().all(|v| v.is_finite()))
            .then_some(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// (ground truth, predicted) pairs produced by running a model over a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionLog {
    rows: Vec<(ClassId, ClassId)>,
}

impl PredictionLog {
    /// Fails with the offending row index if any class is out of range.
    pub fn new(rows: Vec<(ClassId, ClassId)>, num_classes: usize) -> Result<Self, usize> {
        if let Some(pos) = rows
            .iter()
            .position(|&(t, p)| t >= num_classes || p >= num_classes)
        {
            return Err(pos);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(ClassId, ClassId)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// SHA-256 over the rows, used to tag trees with the log they came from.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for &(t, p) in &self.rows {
            h.update((t as u64).to_le_bytes());
            h.update((p as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}', expected train, val or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("sample {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} has label {label}, but the label space has {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("sample {index} has a non-finite feature")]
    NonFinite { index: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
}

/// Feature vectors with class labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<ClassId>,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<ClassId>,
        split: Split,
    ) -> Result<Self, DatasetError> {
        let ds = Self {
            features,
            labels,
            split,
        };
        ds.check_structure()?;
        Ok(ds)
    }

    fn check_structure(&self) -> Result<(), DatasetError> {
        if self.features.len() != self.labels.len() {
            return Err(DatasetError::LengthMismatch {
                features: self.features.len(),
                labels: self.labels.len(),
            });
        }
        let first = self.features.first().ok_or(DatasetError::Empty)?;
        let dim = first.len();
        for (index, row) in self.features.iter().enumerate() {
            if row.len() != dim {
                return Err(DatasetError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { index });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], ClassId) {
        (&self.features[i], self.labels[i])
    }

    /// Number of samples per class.
    pub fn class_histogram(&self, num_classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; num_classes];
        for &l in &self.labels {
            if l < num_classes {
                h[l] += 1;
            }
        }
        h
    }
}

/// Checks every dataset invariant against `space`, naming the first offending sample.
pub fn validate_dataset(dataset: &Dataset, space: &LabelSpace) -> Result<(), DatasetError> {
    dataset.check_structure()?;
    let num_classes = space.len();
    if let Some(index) = dataset.labels.iter().position(|&l| l >= num_classes) {
        return Err(DatasetError::LabelOutOfRange {
            index,
            label: dataset.labels[index],
            num_classes,
        });
    }
    Ok(())
}

/// Root seed for every random stream in a run.
///
/// Streams are ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output is fixed by
/// its specification and independent of platform or word size. Independent
/// consumers draw from distinct stream ids of the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_stream(stream);
        rng
    }
}

impl Default for Seed {
    fn default() -> Self {
        Seed(0x5eed)
    }
}
