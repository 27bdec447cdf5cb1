use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, ModelError};
use crate::losses::{LossSpec, Objective};
use crate::tree::CogTree;
use crate::types::{validate_dataset, ClassId, Dataset, LabelSpace, PredictionLog, Seed};

/// Mini-batch SGD settings. No momentum, no schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: Seed,
    pub loss: LossSpec,
    /// Draw each epoch with class-balanced replacement sampling.
    pub resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1.0,
            seed: Seed::default(),
            loss: LossSpec::default(),
            resample: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, measured before each batch's update.
    pub mean_loss: f64,
    /// Fraction of the epoch's draws whose argmax was correct before the update.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Classifier,
    pub history: Vec<EpochStats>,
}

/// Argmax with ties going to the lowest index.
pub(crate) fn argmax(scores: &[f64]) -> ClassId {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Sample indices for one epoch, drawn with replacement so that every class
/// present in `labels` is equally likely. The schedule has `labels.len()` draws.
pub fn resample_balanced<R: Rng + ?Sized>(
    labels: &[ClassId],
    num_classes: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|v| !v.is_empty()).collect();
    (0..labels.len())
        .map(|_| {
            let members = present[rng.random_range(0..present.len())];
            members[rng.random_range(0..members.len())]
        })
        .collect()
}

/// Trains a copy of `model` by plain mini-batch SGD on `config.loss`.
///
/// The batch gradient is the mean of per-sample gradients. `space` supplies
/// the class counts used by balanced losses; `tree` is required by tree losses.
pub fn train(
    model: &Classifier,
    dataset: &Dataset,
    space: &LabelSpace,
    tree: Option<&CogTree>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    validate_dataset(dataset, space)?;
    if dataset.dim() != model.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: model.input_dim(),
            found: dataset.dim(),
        });
    }
    let objective = Objective::new(config.loss, tree, space.counts())?;

    let mut model = model.clone();
    let mut rng = config.seed.stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.resample {
            order = resample_balanced(dataset.labels(), space.len(), &mut rng);
        } else {
            order.shuffle(&mut rng);
        }
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, y) = dataset.sample(i);
                let scores = model.forward_one(x)?;
                if argmax(&scores) == y {
                    correct += 1;
                }
                let out = objective.eval(&scores, y)?;
                total_loss += out.loss;
                model.accumulate_grad(x, &out.grad, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            model.sgd_step(&grad, config.learning_rate);
        }
        history.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: total_loss / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Pairs each sample's ground truth with the model's argmax prediction.
pub fn predict_log(model: &Classifier, dataset: &Dataset) -> Result<PredictionLog, ModelError> {
    let rows = dataset
        .features()
        .iter()
        .zip(dataset.labels())
        .map(|(x, &y)| Ok((y, argmax(&model.forward_one(x)?))))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let n = model.num_classes();
    PredictionLog::new(rows, n).map_err(|index| {
        ModelError::Dataset(crate::types::DatasetError::LabelOutOfRange {
            index,
            label: dataset.labels()[index],
            num_classes: n,
        })
    })
}
