//! Input-side defenses against adversarial point clouds, plus a decoder-side
//! attack detector.
//!
//! Both defenses filter points out of a suspect cloud before it reaches the
//! autoencoder. The surface filter removes points whose mean distance to
//! their nearest neighbors is large, on the premise that adversarial points
//! hover off the shape surface. The critical filter removes the points the
//! victim encoder itself pools features from, on the premise that an attack
//! concentrates its influence there. Kept points are passed through
//! unmodified, so a defended cloud is always a subset of the input.

use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{AEModel, ClassifierParams};
use crate::pointcloud::{NeighborIndex, PointCloud};
use crate::training::{classification_accuracy, train_classifier, SplitFractions, TrainConfig, TrainedClassifier};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which filtering rule a defense run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseKind {
    /// Remove points with distant nearest neighbors.
    Surface,
    /// Remove the encoder's critical points.
    Critical,
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DefenseKind::Surface => "surface",
            DefenseKind::Critical => "critical",
        })
    }
}

/// Parameters of a defense run. `k` and `delta` only affect the surface
/// filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    /// Filtering rule.
    pub kind: DefenseKind,
    /// Neighbors averaged per point by the surface filter.
    pub k: usize,
    /// Mean-distance threshold of the surface filter. Infinity is allowed
    /// and keeps everything.
    pub delta: f64,
}

impl Default for DefenseConfig {
    fn default() -> DefenseConfig {
        DefenseConfig {
            kind: DefenseKind::Surface,
            k: 2,
            delta: 0.04,
        }
    }
}

impl DefenseConfig {
    /// Check the numeric invariants.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("neighbor count must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!(
                "distance threshold must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Keep the points whose mean distance to their `k` nearest neighbors
/// (excluding themselves) is at most `delta`. Returns the filtered cloud and
/// the removed ids in ascending order.
pub fn surface_filter(
    cloud: &PointCloud,
    k: usize,
    delta: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    let config = DefenseConfig {
        kind: DefenseKind::Surface,
        k,
        delta,
    };
    config.validate()?;
    if cloud.len() <= k {
        return Err(Error::KOutOfRange {
            k,
            available: cloud.len() - 1,
        });
    }
    let index = NeighborIndex::new(cloud)?;
    let mut kept = Vec::with_capacity(cloud.len());
    let mut removed = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let neighbors = index.knn(*p, k, Some(i))?;
        let mean = neighbors.iter().map(|n| n.dist).sum::<f64>() / k as f64;
        if mean <= delta {
            kept.push(i);
        } else {
            removed.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::TotalRemoval);
    }
    Ok((cloud.subset(&kept)?, removed))
}

/// Remove the critical points: the ones the victim encoder's pooling step
/// selects for at least one latent feature. Returns the complement cloud and
/// the removed ids in ascending order.
pub fn critical_filter(cloud: &PointCloud, model: &AEModel) -> Result<(PointCloud, Vec<usize>)> {
    let (_, critical) = model.encode(cloud)?;
    let mut is_critical = vec![false; cloud.len()];
    for &i in &critical {
        is_critical[i] = true;
    }
    let kept: Vec<usize> = (0..cloud.len()).filter(|&i| !is_critical[i]).collect();
    if kept.is_empty() {
        return Err(Error::CriticalCoversCloud);
    }
    Ok((cloud.subset(&kept)?, critical))
}

/// Apply the configured filter.
pub fn defend(
    cloud: &PointCloud,
    model: &AEModel,
    config: &DefenseConfig,
) -> Result<(PointCloud, Vec<usize>)> {
    config.validate()?;
    match config.kind {
        DefenseKind::Surface => surface_filter(cloud, config.k, config.delta),
        DefenseKind::Critical => critical_filter(cloud, model),
    }
}

/// Per-example outcome of defending a cloud and re-reconstructing it.
#[derive(Debug, Clone)]
pub struct DefenseResult {
    /// The filtered cloud.
    pub defended: PointCloud,
    /// Ids removed from the input, ascending.
    pub removed: Vec<usize>,
    /// Victim reconstruction of the unfiltered input.
    pub reconstruction_before: PointCloud,
    /// Victim reconstruction of the defended cloud.
    pub reconstruction_after: PointCloud,
    /// Chamfer distance from `reconstruction_before` to the clean source.
    pub s_re_before: f64,
    /// Chamfer distance from `reconstruction_after` to the clean source.
    pub s_re_after: f64,
    /// `s_re_before` normalized by the model's error on the clean source.
    pub s_nre_before: f64,
    /// `s_re_after` normalized the same way.
    pub s_nre_after: f64,
    /// Classifier prediction for `reconstruction_before`, when classified.
    pub label_before: Option<usize>,
    /// Classifier prediction for `reconstruction_after`, when classified.
    pub label_after: Option<usize>,
}

/// Aggregates over a batch of [`DefenseResult`]s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseAggregate {
    /// Mean reconstruction error against the sources, unfiltered inputs.
    pub mean_s_re_before: f64,
    /// Mean reconstruction error against the sources, defended inputs.
    pub mean_s_re_after: f64,
    /// Mean normalized error, unfiltered inputs.
    pub mean_s_nre_before: f64,
    /// Mean normalized error, defended inputs.
    pub mean_s_nre_after: f64,
    /// Fraction of labeled sources whose unfiltered reconstruction is
    /// classified as the source class; `None` without a classifier.
    pub s_rca_before: Option<f64>,
    /// Same fraction for defended reconstructions.
    pub s_rca_after: Option<f64>,
}

/// Defend each suspect cloud and measure reconstruction quality against its
/// clean source, before and after filtering. When a classifier is supplied,
/// reconstructions are also labeled and source-class accuracy is aggregated
/// over the labeled sources.
pub fn evaluate_defense(
    model: &AEModel,
    suspects: &[PointCloud],
    sources: &[PointCloud],
    config: &DefenseConfig,
    classifier: Option<&ClassifierParams>,
) -> Result<(Vec<DefenseResult>, DefenseAggregate)> {
    if suspects.is_empty() || suspects.len() != sources.len() {
        return Err(Error::InvalidInput(format!(
            "defense evaluation needs equal non-zero counts, got {} suspects and {} sources",
            suspects.len(),
            sources.len()
        )));
    }
    let mut results = Vec::with_capacity(suspects.len());
    let mut sums = [0.0f64; 4];
    let mut rca_hits = [0usize; 2];
    let mut rca_total = 0usize;
    for (suspect, source) in suspects.iter().zip(sources) {
        let reconstruction_before = model.reconstruct(suspect)?;
        let (defended, removed) = defend(suspect, model, config)?;
        let reconstruction_after = model.reconstruct(&defended)?;
        let source_recon = model.reconstruct(source)?;
        let reference = metrics::chamfer(&source_recon, source)?;
        let s_re_before = metrics::chamfer(&reconstruction_before, source)?;
        let s_re_after = metrics::chamfer(&reconstruction_after, source)?;
        let s_nre_before = metrics::normalized_error(
            s_re_before,
            reference,
            "source normalized reconstruction error",
        )?;
        let s_nre_after = metrics::normalized_error(
            s_re_after,
            reference,
            "source normalized reconstruction error",
        )?;
        let (label_before, label_after) = match classifier {
            Some(c) => (
                Some(c.predict_index(&reconstruction_before)?),
                Some(c.predict_index(&reconstruction_after)?),
            ),
            None => (None, None),
        };
        if let (Some(class), Some(before), Some(after)) =
            (source.label(), label_before, label_after)
        {
            rca_total += 1;
            rca_hits[0] += usize::from(before == class.id());
            rca_hits[1] += usize::from(after == class.id());
        }
        sums[0] += s_re_before;
        sums[1] += s_re_after;
        sums[2] += s_nre_before;
        sums[3] += s_nre_after;
        results.push(DefenseResult {
            defended,
            removed,
            reconstruction_before,
            reconstruction_after,
            s_re_before,
            s_re_after,
            s_nre_before,
            s_nre_after,
            label_before,
            label_after,
        });
    }
    let count = results.len() as f64;
    let rca = |hits: usize| {
        if classifier.is_some() && rca_total > 0 {
            Some(hits as f64 / rca_total as f64)
        } else {
            None
        }
    };
    let aggregate = DefenseAggregate {
        mean_s_re_before: sums[0] / count,
        mean_s_re_after: sums[1] / count,
        mean_s_nre_before: sums[2] / count,
        mean_s_nre_after: sums[3] / count,
        s_rca_before: rca(rca_hits[0]),
        s_rca_after: rca(rca_hits[1]),
    };
    Ok((results, aggregate))
}

/// Outcome of training the decoder-side attack detector.
#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    /// The trained binary classifier (0 = clean, 1 = adversarial).
    pub trained: TrainedClassifier,
    /// Accuracy on the held-out test portion.
    pub test_accuracy: f64,
    /// Sizes of the train, validation and test portions.
    pub split_sizes: (usize, usize, usize),
}

/// Fractions used to split each detection population.
fn detection_split() -> SplitFractions {
    SplitFractions {
        train: 0.76,
        val: 0.08,
        test: 0.16,
    }
}

/// Training recipe for the attack detector. Detection populations are small
/// (one clean and one adversarial reconstruction per attacked pair), so the
/// detector needs smaller batches and more epochs than the shape classifier
/// to converge.
pub fn detector_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-3,
        init_seed: 105,
        shuffle_seed: 106,
    }
}

/// Train a binary detector that separates clean from adversarial
/// reconstructions. Each population is shuffled by a permutation seeded
/// from the training config's shuffle seed and split 76/8/16 into train,
/// validation and test; the reported accuracy is on the held-out test
/// portion. Equal-length populations receive the same permutation, so
/// pair-aligned inputs keep each pair's clean and adversarial members in
/// the same portion.
pub fn detect_attack(
    clean: &[PointCloud],
    adversarial: &[PointCloud],
    width_factor: f64,
    config: &TrainConfig,
) -> Result<DetectionOutcome> {
    if clean.is_empty() || adversarial.is_empty() {
        return Err(Error::InvalidInput(
            "detection needs clean and adversarial examples".into(),
        ));
    }
    let fractions = detection_split();
    let mut portions: [(Vec<PointCloud>, Vec<usize>); 3] = Default::default();
    for (label, population) in [(0usize, clean), (1usize, adversarial)] {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.shuffle_seed));
        let (n_train, n_val, _) = fractions.counts(population.len());
        for (rank, &i) in order.iter().enumerate() {
            let portion = if rank < n_train {
                0
            } else if rank < n_train + n_val {
                1
            } else {
                2
            };
            portions[portion].0.push(population[i].clone());
            portions[portion].1.push(label);
        }
    }
    for (name, portion) in [("train", &portions[0]), ("test", &portions[2])] {
        let ones = portion.1.iter().sum::<usize>();
        if ones == 0 || ones == portion.1.len() {
            return Err(Error::Config(format!(
                "detection {name} portion holds a single label; \
                 populations are too small for a 76/8/16 split"
            )));
        }
    }
    let trained = train_classifier(
        &portions[0].0,
        &portions[0].1,
        &portions[1].0,
        &portions[1].1,
        2,
        width_factor,
        config,
    )?;
    let test_accuracy =
        classification_accuracy(&trained.classifier, &portions[2].0, &portions[2].1)?;
    Ok(DetectionOutcome {
        test_accuracy,
        split_sizes: (portions[0].0.len(), portions[1].0.len(), portions[2].0.len()),
        trained,
    })
}
