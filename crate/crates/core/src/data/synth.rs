use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::types::{ClassId, Dataset, LabelSpace, Seed, Split};

/// Gaussian-mixture surrogate for a long-tailed label space.
///
/// Each concept has one frequent head class at the concept centroid and
/// `fine_per_concept` rare classes offset from it. `concept_sep` and
/// `fine_offset` are expected vector lengths: concept centroids are drawn
/// from `N(0, concept_sep²/d I)` and fine-class offsets from
/// `N(0, fine_offset²/d I)`. Samples add `N(0, noise² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_concepts: usize,
    pub fine_per_concept: usize,
    /// Samples per head class, before splitting.
    pub head_count: usize,
    /// Samples per fine class, before splitting.
    pub tail_count: usize,
    pub dim: usize,
    pub concept_sep: f64,
    pub fine_offset: f64,
    pub noise: f64,
    pub seed: Seed,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_concepts: 6,
            fine_per_concept: 4,
            head_count: 1000,
            tail_count: 20,
            dim: 16,
            concept_sep: 4.0,
            fine_offset: 1.0,
            noise: 1.0,
            seed: Seed::default(),
        }
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.num_concepts * (1 + self.fine_per_concept)
    }

    /// Samples across all splits.
    pub fn pool_size(&self) -> usize {
        self.num_concepts * (self.head_count + self.fine_per_concept * self.tail_count)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.num_classes() < 2 {
            return bad(format!("{} classes; need at least 2", self.num_classes()));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        // Three samples per class so that every split gets one.
        if self.tail_count < 3 {
            return bad(format!("tail_count {} < 3", self.tail_count));
        }
        if self.head_count <= self.tail_count {
            return bad(format!(
                "head_count {} must exceed tail_count {}",
                self.head_count, self.tail_count
            ));
        }
        if !(self.concept_sep > self.fine_offset && self.fine_offset > 0.0) {
            return bad(format!(
                "need concept_sep > fine_offset > 0, got {} and {}",
                self.concept_sep, self.fine_offset
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.concept_sep.is_finite()) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        Ok(())
    }

    /// Class index of concept `k`'s head class.
    pub fn head_of(&self, concept: usize) -> ClassId {
        concept * (1 + self.fine_per_concept)
    }
}

/// A generated dataset with its splits and planted structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Class names with their train-split counts.
    pub space: LabelSpace,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// For each class, the head class of the concept it was planted in.
    pub planted: Vec<ClassId>,
}

fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = ((n as f64 * 0.15).round() as usize).max(1);
    let test = val;
    (n - val - test, val, test)
}

/// Draws the mixture, then splits each class 70/15/15 with at least one
/// validation and one test sample per class.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData, DataError> {
    spec.validate()?;
    let per = 1 + spec.fine_per_concept;
    let mut rng = spec.seed.stream(10);
    let gauss = |sd: f64| Normal::new(0.0, sd).expect("validated standard deviation");

    let mut names = Vec::with_capacity(spec.num_classes());
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes());
    let mut planted = Vec::with_capacity(spec.num_classes());
    let root_d = (spec.dim as f64).sqrt();
    let sep = gauss(spec.concept_sep / root_d);
    let off = gauss(spec.fine_offset / root_d);
    for k in 0..spec.num_concepts {
        let centre: Vec<f64> = (0..spec.dim).map(|_| sep.sample(&mut rng)).collect();
        names.push(format!("k{k}_head"));
        centroids.push(centre.clone());
        planted.push(k * per);
        for f in 0..spec.fine_per_concept {
            names.push(format!("k{k}_f{f}"));
            centroids.push(centre.iter().map(|c| c + off.sample(&mut rng)).collect());
            planted.push(k * per);
        }
    }

    let noise = gauss(spec.noise.max(f64::MIN_POSITIVE));
    let mut splits: [(Vec<Vec<f64>>, Vec<ClassId>); 3] = Default::default();
    let mut train_counts = vec![0u64; spec.num_classes()];
    for (class, centre) in centroids.iter().enumerate() {
        let n = if class % per == 0 {
            spec.head_count
        } else {
            spec.tail_count
        };
        let (n_train, n_val, _) = split_sizes(n);
        train_counts[class] = n_train as u64;
        for i in 0..n {
            let x: Vec<f64> = centre
                .iter()
                .map(|c| {
                    if spec.noise == 0.0 {
                        *c
                    } else {
                        c + noise.sample(&mut rng)
                    }
                })
                .collect();
            let which = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            splits[which].0.push(x);
            splits[which].1.push(class);
        }
    }

    let mut finish = |(xs, ys): (Vec<Vec<f64>>, Vec<ClassId>), split| {
        let mut idx: Vec<usize> = (0..ys.len()).collect();
        idx.shuffle(&mut rng);
        let xs2 = idx.iter().map(|&i| xs[i].clone()).collect();
        let ys2 = idx.iter().map(|&i| ys[i]).collect();
        Dataset::new(xs2, ys2, split).map_err(DataError::from)
    };
    let [tr, va, te] = splits;
    let train = finish(tr, Split::Train)?;
    let val = finish(va, Split::Val)?;
    let test = finish(te, Split::Test)?;
    let space = LabelSpace::new(names, train_counts).map_err(DataError::from)?;
    Ok(SynthData {
        space,
        train,
        val,
        test,
        planted,
    })
}
