//! Training loops for the autoencoder and the classifier.
//!
//! Batches accumulate per-item losses on one tape in a fixed order, so a
//! given dataset, initialization seed, and shuffle seed always reproduce
//! the same parameters bit for bit. Training returns a frozen autoencoder;
//! downstream attack code only ever sees locked weights.

mod adam;
mod dataset;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{Dataset, DatasetConfig, SplitFractions};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{AEModel, ClassifierParams, ModelDims};
use crate::pointcloud::PointCloud;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimization settings shared by both training loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    /// Seed for epoch shuffling; kept separate so two models can share a
    /// data order while differing in initialization.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 25,
            learning_rate: 5e-4,
            init_seed: 1,
            shuffle_seed: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A trained, frozen autoencoder with its loss history.
#[derive(Debug, Clone)]
pub struct TrainedAE {
    pub model: AEModel,
    /// Mean validation reconstruction error before training and after each
    /// epoch (`epochs + 1` entries).
    pub val_loss: Vec<f64>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

/// Mean reconstruction error of a model over a set of clouds.
pub fn mean_reconstruction_cd(model: &AEModel, clouds: &[PointCloud]) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::InvalidInput(
            "cannot average reconstruction error over zero clouds".into(),
        ));
    }
    let mut sum = 0.0;
    for cloud in clouds {
        let recon = model.reconstruct(cloud)?;
        sum += metrics::chamfer(&recon, cloud)?;
    }
    Ok(sum / clouds.len() as f64)
}

fn ae_batch_step(
    model: &mut AEModel,
    adam: &mut AdamState,
    batch: &[usize],
    items: &[PointCloud],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind_on_tape(&mut tape, true)?;
    let mut total: Option<NodeId> = None;
    for &id in batch {
        let input = tape.constant(Tensor::from_points(items[id].points()))?;
        let recon = bound.reconstruct(&mut tape, input)?;
        let loss = tape.chamfer(recon, input)?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("batches are never empty");
    let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
    let value = tape.value(mean).scalar_value()?;
    let mut grads = tape.backward(mean)?;
    let grad_list: Vec<Option<Tensor>> = bound
        .param_nodes()
        .iter()
        .map(|&node| grads.take(node))
        .collect();
    let mut params = model.params_mut();
    adam.step(&mut params, &grad_list)?;
    Ok(value)
}

/// Trains an autoencoder on the dataset's train split and freezes it.
/// Divergence (a non-finite value anywhere in the pipeline) aborts with
/// the validation-loss history gathered so far.
pub fn train_ae(dataset: &Dataset, dims: ModelDims, config: &TrainConfig) -> Result<TrainedAE> {
    config.validate()?;
    let mut model = AEModel::new(dims, config.init_seed)?;
    let sizes: Vec<usize> = model.param_tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &sizes,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut val_loss = vec![mean_reconstruction_cd(&model, &dataset.val)?];
    let mut train_loss = Vec::with_capacity(config.epochs);
    let items = &dataset.train;
    let mut order: Vec<usize> = (0..items.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_loss = match ae_batch_step(&mut model, &mut adam, batch, items) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        trace: val_loss,
                    })
                }
                Err(e) => return Err(e),
            };
            epoch_sum += batch_loss * batch.len() as f64;
        }
        train_loss.push(epoch_sum / items.len() as f64);
        match mean_reconstruction_cd(&model, &dataset.val) {
            Ok(v) if v.is_finite() => val_loss.push(v),
            _ => {
                return Err(Error::Diverged {
                    epoch,
                    trace: val_loss,
                })
            }
        }
    }
    model.freeze();
    Ok(TrainedAE {
        model,
        val_loss,
        train_loss,
    })
}

/// Trains a surrogate autoencoder on the same data and shuffle order as
/// the victim, differing only in parameter initialization.
pub fn train_transfer_ae(
    dataset: &Dataset,
    dims: ModelDims,
    config: &TrainConfig,
    transfer_init_seed: u64,
) -> Result<TrainedAE> {
    if transfer_init_seed == config.init_seed {
        log::warn!(
            "transfer model uses the victim's initialization seed {}; the two models will be identical",
            transfer_init_seed
        );
    }
    let cfg = TrainConfig {
        init_seed: transfer_init_seed,
        ..*config
    };
    train_ae(dataset, dims, &cfg)
}

/// A trained classifier with its accuracy history.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: ClassifierParams,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Training accuracy after each epoch.
    pub train_accuracy: Vec<f64>,
    /// Validation accuracy before training and after each epoch; empty if
    /// no validation clouds were supplied.
    pub val_accuracy: Vec<f64>,
}

/// Fraction of clouds whose predicted index matches the label.
pub fn classification_accuracy(
    classifier: &ClassifierParams,
    clouds: &[PointCloud],
    labels: &[usize],
) -> Result<f64> {
    if clouds.is_empty() || clouds.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "accuracy needs equal non-zero counts, got {} clouds and {} labels",
            clouds.len(),
            labels.len()
        )));
    }
    let mut hits = 0usize;
    for (cloud, &label) in clouds.iter().zip(labels) {
        if classifier.predict_index(cloud)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / clouds.len() as f64)
}

fn classifier_batch_step(
    classifier: &mut ClassifierParams,
    adam: &mut AdamState,
    batch: &[usize],
    clouds: &[PointCloud],
    labels: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = classifier.bind_on_tape(&mut tape, true)?;
    let mut total: Option<NodeId> = None;
    for &id in batch {
        let input = tape.constant(Tensor::from_points(clouds[id].points()))?;
        let logits = bound.logits(&mut tape, input)?;
        let loss = tape.cross_entropy_logits(logits, labels[id])?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("batches are never empty");
    let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
    let value = tape.value(mean).scalar_value()?;
    let mut grads = tape.backward(mean)?;
    let grad_list: Vec<Option<Tensor>> = bound
        .param_nodes()
        .iter()
        .map(|&node| grads.take(node))
        .collect();
    let mut params = classifier.params_mut();
    adam.step(&mut params, &grad_list)?;
    Ok(value)
}

/// Trains a classifier on labeled clouds. Labels are class indices below
/// `num_classes`; for shape recognition they follow the palette order, and
/// a two-class instance doubles as a clean-versus-attacked detector.
pub fn train_classifier(
    train_clouds: &[PointCloud],
    train_labels: &[usize],
    val_clouds: &[PointCloud],
    val_labels: &[usize],
    num_classes: usize,
    width_factor: f64,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if train_clouds.is_empty() || train_clouds.len() != train_labels.len() {
        return Err(Error::InvalidInput(format!(
            "training needs equal non-zero counts, got {} clouds and {} labels",
            train_clouds.len(),
            train_labels.len()
        )));
    }
    if val_clouds.len() != val_labels.len() {
        return Err(Error::InvalidInput(format!(
            "validation counts differ: {} clouds, {} labels",
            val_clouds.len(),
            val_labels.len()
        )));
    }
    for &label in train_labels.iter().chain(val_labels) {
        if label >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label {label} outside 0..{num_classes}"
            )));
        }
    }
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        log::warn!("every training label is class {}; the classifier cannot learn a boundary", train_labels[0]);
    }

    let mut classifier = ClassifierParams::new(num_classes, width_factor, config.init_seed)?;
    let sizes: Vec<usize> = classifier.params_mut().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &sizes,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..train_clouds.len()).collect();
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut train_accuracy = Vec::with_capacity(config.epochs);
    let mut val_accuracy = Vec::new();
    if !val_clouds.is_empty() {
        val_accuracy.push(classification_accuracy(&classifier, val_clouds, val_labels)?);
    }

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_loss = match classifier_batch_step(
                &mut classifier,
                &mut adam,
                batch,
                train_clouds,
                train_labels,
            ) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        trace: train_loss,
                    })
                }
                Err(e) => return Err(e),
            };
            epoch_sum += batch_loss * batch.len() as f64;
        }
        train_loss.push(epoch_sum / train_clouds.len() as f64);
        train_accuracy.push(classification_accuracy(
            &classifier,
            train_clouds,
            train_labels,
        )?);
        if !val_clouds.is_empty() {
            val_accuracy.push(classification_accuracy(&classifier, val_clouds, val_labels)?);
        }
    }
    Ok(TrainedClassifier {
        classifier,
        train_loss,
        train_accuracy,
        val_accuracy,
    })
}
