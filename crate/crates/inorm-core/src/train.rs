//! Mini-batch SGD training loop.

use rand::seq::SliceRandom;

use crate::data::{Dataset, Targets, Task};
use crate::error::{Error, Result};
use crate::forward::{backward, forward, MaskPolicy};
use crate::loss::{loss_eval, LossKind};
use crate::metrics;
use crate::model::{Mode, Model};
use crate::optim::{apply_sgd, SgdState};
use crate::rng::{RngStream, StreamPurpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch's batches.
    pub loss: f64,
    /// Deterministic-evaluation metric on the training set at epoch end:
    /// accuracy for classification, RMSE for regression.
    pub metric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

// Distinct from the data-module stream ids under the same purpose.
const STREAM_EPOCH_SHUFFLE: u64 = 3;

fn gather(ds: &Dataset, idx: &[usize]) -> (Tensor, Targets) {
    let d = ds.n_features();
    let mut inputs = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        inputs.extend_from_slice(ds.inputs.row(i));
    }
    let inputs = Tensor::matrix(idx.len(), d, inputs).expect("finite");
    let targets = match &ds.targets {
        Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        Targets::Values(t) => {
            let k = t.cols();
            let mut v = Vec::with_capacity(idx.len() * k);
            for &i in idx {
                v.extend_from_slice(t.row(i));
            }
            Targets::Values(Tensor::matrix(idx.len(), k, v).expect("finite"))
        }
    };
    (inputs, targets)
}

/// Deterministic metric (accuracy or RMSE) with all masks kept.
pub fn eval_metric(model: &Model, ds: &Dataset) -> Result<f64> {
    let pass = forward(model, &ds.inputs, &MaskPolicy::KeepAll)?;
    match (&ds.targets, ds.task) {
        (Targets::Labels(labels), Task::Classification) => {
            metrics::accuracy(&pass.output, labels)
        }
        (Targets::Values(t), Task::Regression) => metrics::rmse(&pass.output, t),
        _ => Err(Error::Data("target kind does not match task".into())),
    }
}

/// Train in place. Deterministic given the model's init seed and
/// `config.seed`; dropout masks resample every optimization step.
pub fn train(model: &mut Model, ds: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let loss_kind = match ds.task {
        Task::Classification => {
            if !model.is_classifier() {
                return Err(Error::Config(
                    "classification data needs a softmax output layer".into(),
                ));
            }
            LossKind::CrossEntropy
        }
        Task::Regression => LossKind::Mse,
    };

    let mut report = TrainReport::default();
    let mut state = SgdState::new();
    let mut step: u64 = 0;
    model.mode = Mode::Train;
    let result = (|| -> Result<()> {
        for epoch in 0..config.epochs {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            let mut shuffle_rng = RngStream::new(
                config.seed,
                StreamPurpose::DataShuffle,
                STREAM_EPOCH_SHUFFLE,
                epoch as u64,
            );
            idx.shuffle(&mut shuffle_rng);

            let mut loss_sum = 0.0;
            for batch in idx.chunks(config.batch_size) {
                let (inputs, targets) = gather(ds, batch);
                let policy = MaskPolicy::Sample {
                    root_seed: config.seed,
                    pass_index: step,
                };
                let pass = forward(model, &inputs, &policy)?;
                let (loss, grad) = loss_eval(loss_kind, &pass.output, &targets)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += loss * batch.len() as f64;
                let grads = backward(model, &pass, &grad)?;
                apply_sgd(
                    model,
                    &grads,
                    &mut state,
                    config.learning_rate,
                    config.momentum,
                    config.weight_decay,
                )?;
                step += 1;
            }

            model.mode = Mode::Eval;
            let metric = eval_metric(model, ds)?;
            model.mode = Mode::Train;
            report.history.push(EpochStats {
                epoch,
                loss: loss_sum / ds.len() as f64,
                metric,
            });
        }
        Ok(())
    })();
    model.mode = Mode::Eval;
    result?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_moons;
    use crate::model::{LayerSpec, Precision};
    use crate::norm::{AffineInit, Granularity, MaskMode, NormConfig, NormOrder, DEFAULT_EPS};

    fn classifier_layers(hidden: usize) -> Vec<LayerSpec> {
        let norm = |channels| {
            LayerSpec::Norm(NormConfig {
                channels,
                order: NormOrder::Inverted,
                p: 0.3,
                eps: DEFAULT_EPS,
                granularity: Granularity::Instance,
                mask_mode: MaskMode::VectorWise,
                init: AffineInit::Normal {
                    sigma_gamma: 0.3,
                    sigma_beta: 0.3,
                },
            })
        };
        vec![
            LayerSpec::Dense {
                input: 2,
                output: hidden,
                precision: Precision::Full,
            },
            norm(hidden),
            LayerSpec::Relu,
            LayerSpec::Dense {
                input: hidden,
                output: hidden,
                precision: Precision::Full,
            },
            norm(hidden),
            LayerSpec::Relu,
            LayerSpec::Dense {
                input: hidden,
                output: 2,
                precision: Precision::Full,
            },
            LayerSpec::Softmax,
        ]
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 17,
        }
    }

    #[test]
    fn zero_epochs_leaves_model_at_init() {
        let ds = two_moons(64, 0.1, 2).unwrap();
        let mut model = Model::new(classifier_layers(8), 5).unwrap();
        let reference = Model::new(classifier_layers(8), 5).unwrap();
        let report = train(&mut model, &ds, &quick_config(0)).unwrap();
        assert!(report.history.is_empty());
        for (a, b) in model.params.iter().zip(&reference.params) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ds = two_moons(64, 0.1, 2).unwrap();
        let mut a = Model::new(classifier_layers(8), 5).unwrap();
        let mut b = Model::new(classifier_layers(8), 5).unwrap();
        train(&mut a, &ds, &quick_config(5)).unwrap();
        train(&mut b, &ds, &quick_config(5)).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn history_length_matches_epochs() {
        let ds = two_moons(64, 0.1, 2).unwrap();
        let mut model = Model::new(classifier_layers(8), 5).unwrap();
        let report = train(&mut model, &ds, &quick_config(3)).unwrap();
        assert_eq!(report.history.len(), 3);
        assert_eq!(report.history[2].epoch, 2);
    }

    #[test]
    fn validates_config() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..quick_config(1)
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..quick_config(1)
        };
        assert!(bad.validate().is_err());
    }
}
