//! Adversarial attacks on point-cloud autoencoders.
//!
//! An attack perturbs a source cloud `S` by an additive matrix `P` so that
//! the frozen victim autoencoder maps the adversarial cloud `Q = S + P`
//! toward a chosen target shape, while a weighted geometric term keeps `Q`
//! close to `S`. Two adversarial objectives are provided: pulling the latent
//! code of `Q` toward the target's code, and pulling the reconstruction of
//! `Q` toward the target cloud. Both share the same optimizer, candidate
//! selection and evaluation.

mod optimize;
mod targets;

pub use targets::select_targets;

use crate::error::{Error, Result};
use crate::metrics::{self, MetricRecord};
use crate::models::{AEModel, ClassifierParams};
use crate::pointcloud::{PointCloud, ShapeClass};
use serde::{Deserialize, Serialize};

/// Which model output the adversarial loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Match the latent code of the target.
    Latent,
    /// Match the reconstruction to the target cloud.
    Output,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Latent => "latent",
            AttackMode::Output => "output",
        })
    }
}

/// Geometric regularizer that keeps the adversarial cloud near its source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceLoss {
    /// Chamfer distance between adversarial cloud and source.
    Chamfer,
    /// Euclidean norm of the perturbation matrix itself.
    PerturbationL2,
}

impl std::fmt::Display for DistanceLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceLoss::Chamfer => "chamfer",
            DistanceLoss::PerturbationL2 => "perturbation-l2",
        })
    }
}

/// Strategy for picking candidate target clouds from a labeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSelection {
    /// Nearest members of the target class by Chamfer distance.
    Geometric,
    /// Geometric, restricted to members the classifier gets right.
    GeometricClassifier,
    /// Uniformly random members, seeded.
    Random,
    /// Nearest members by latent-code distance.
    LatentSpace,
}

impl std::fmt::Display for TargetSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetSelection::Geometric => "geometric",
            TargetSelection::GeometricClassifier => "geometric-classifier",
            TargetSelection::Random => "random",
            TargetSelection::LatentSpace => "latent-space",
        })
    }
}

/// Full parameterization of one attack run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Adversarial objective.
    pub mode: AttackMode,
    /// Weight of the geometric term; `None` selects the per-mode default
    /// and allows automatic rebalancing when the initial terms are wildly
    /// mismatched.
    pub lambda: Option<f64>,
    /// Number of optimizer updates.
    pub steps: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// First iteration (1-based update count) eligible for keep-best.
    pub keep_best_from: usize,
    /// Candidate targets tried per source and class.
    pub candidates: usize,
    /// Geometric regularizer variant.
    pub distance_loss: DistanceLoss,
    /// Weight of the off-surface penalty added to the geometric term;
    /// zero disables the term entirely.
    pub off_surface_beta: f64,
    /// Candidate selection strategy.
    pub target_selection: TargetSelection,
    /// Seed for randomized target selection.
    pub seed: u64,
}

impl AttackConfig {
    /// Standard configuration for a mode, everything else at defaults.
    pub fn new(mode: AttackMode) -> AttackConfig {
        AttackConfig {
            mode,
            lambda: None,
            steps: 500,
            learning_rate: 0.01,
            keep_best_from: 400,
            candidates: 5,
            distance_loss: DistanceLoss::Chamfer,
            off_surface_beta: 0.0,
            target_selection: TargetSelection::Geometric,
            seed: 0,
        }
    }

    /// Default geometric weight for a mode and distance-loss pairing.
    pub fn default_lambda(mode: AttackMode, loss: DistanceLoss) -> f64 {
        match (mode, loss) {
            (AttackMode::Latent, DistanceLoss::Chamfer) => 150.0,
            (AttackMode::Output, DistanceLoss::Chamfer) => 1.0,
            (AttackMode::Latent, DistanceLoss::PerturbationL2) => 0.15,
            (AttackMode::Output, DistanceLoss::PerturbationL2) => 0.002,
        }
    }

    /// The explicit weight if set, otherwise the default for this pairing.
    pub fn resolved_lambda(&self) -> f64 {
        self.lambda
            .unwrap_or_else(|| AttackConfig::default_lambda(self.mode, self.distance_loss))
    }

    /// Check the numeric invariants.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.keep_best_from == 0 || self.keep_best_from > self.steps {
            return Err(Error::Config(format!(
                "keep_best_from must be in 1..={}, got {}",
                self.steps, self.keep_best_from
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        if let Some(lambda) = self.lambda {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!(
                    "lambda must be non-negative and finite, got {lambda}"
                )));
            }
        }
        if !(self.off_surface_beta.is_finite() && self.off_surface_beta >= 0.0) {
            return Err(Error::Config(format!(
                "off-surface weight must be non-negative and finite, got {}",
                self.off_surface_beta
            )));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> AttackConfig {
        AttackConfig::new(AttackMode::Latent)
    }
}

/// Outcome of one attack run: the kept adversarial cloud with its traces
/// and evaluation. `source_id` and `target_id` index the caller's pools and
/// default to 0 for standalone runs.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Index of the source cloud in the caller's source set.
    pub source_id: usize,
    /// Index of the target cloud in the caller's pool.
    pub target_id: usize,
    /// Class label of the source cloud, when present.
    pub source_class: Option<ShapeClass>,
    /// Class label of the target cloud, when present.
    pub target_class: Option<ShapeClass>,
    /// Kept perturbation, one row per source point.
    pub perturbation: Vec<[f64; 3]>,
    /// Adversarial cloud; equals source plus perturbation bitwise.
    pub adversarial: PointCloud,
    /// Victim reconstruction of the adversarial cloud.
    pub reconstruction: PointCloud,
    /// Total loss at every iterate, including the initial one.
    pub loss_trace: Vec<f64>,
    /// Adversarial loss term at every iterate.
    pub adv_trace: Vec<f64>,
    /// Iterate the keep-best rule selected.
    pub keep_best_iteration: usize,
    /// Adversarial loss of the kept iterate; the minimum of `adv_trace`
    /// over the keep-best window.
    pub best_adversarial_loss: f64,
    /// Geometric weight actually used after any rebalancing.
    pub lambda_used: f64,
    /// Factor applied to the default weight; 1 when untouched.
    pub rebalance_factor: f64,
    /// Standard evaluation of the kept cloud.
    pub metrics: MetricRecord,
}

/// Standard evaluation of an adversarial cloud against its source and
/// target. Semantic fields are left unset; classify separately when a
/// classifier is available.
pub fn evaluate_attack(
    model: &AEModel,
    source: &PointCloud,
    target: &PointCloud,
    adversarial: &PointCloud,
    gamma: f64,
) -> Result<MetricRecord> {
    let reconstruction = model.reconstruct(adversarial)?;
    let (os_count, _) = metrics::os_count(adversarial, source, gamma)?;
    let s_cd = metrics::chamfer(adversarial, source)?;
    let t_re = metrics::chamfer(&reconstruction, target)?;
    let target_recon = model.reconstruct(target)?;
    let t_nre = metrics::normalized_error(
        t_re,
        metrics::chamfer(&target_recon, target)?,
        "target normalized reconstruction error",
    )?;
    let s_re = metrics::chamfer(&reconstruction, source)?;
    let source_recon = model.reconstruct(source)?;
    let s_nre = metrics::normalized_error(
        s_re,
        metrics::chamfer(&source_recon, source)?,
        "source normalized reconstruction error",
    )?;
    Ok(MetricRecord {
        os_count,
        s_cd,
        t_re,
        t_nre,
        s_re,
        s_nre,
        score: s_cd + t_re,
        hit_target: None,
        avoid_source: None,
    })
}

/// Run one attack with whatever mode the config selects.
pub fn attack_pair(
    model: &AEModel,
    source: &PointCloud,
    target: &PointCloud,
    config: &AttackConfig,
) -> Result<AttackResult> {
    optimize::run(model, source, target, config)
}

/// Run a latent-code attack. The config must select the latent mode.
pub fn latent_attack(
    model: &AEModel,
    source: &PointCloud,
    target: &PointCloud,
    config: &AttackConfig,
) -> Result<AttackResult> {
    if config.mode != AttackMode::Latent {
        return Err(Error::Config(format!(
            "latent attack called with mode {}",
            config.mode
        )));
    }
    optimize::run(model, source, target, config)
}

/// Run a reconstruction attack. The config must select the output mode.
pub fn output_attack(
    model: &AEModel,
    source: &PointCloud,
    target: &PointCloud,
    config: &AttackConfig,
) -> Result<AttackResult> {
    if config.mode != AttackMode::Output {
        return Err(Error::Config(format!(
            "output attack called with mode {}",
            config.mode
        )));
    }
    optimize::run(model, source, target, config)
}

/// Attacks on every candidate target for one source and class, plus which
/// candidate scored best.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    /// Index of the source in the caller's source set; 0 standalone.
    pub source_id: usize,
    /// Class the attack aimed for.
    pub target_class: ShapeClass,
    /// One result per candidate target, in selection rank order.
    pub candidates: Vec<AttackResult>,
    /// Index into `candidates` of the lowest-score result.
    pub best_index: usize,
}

impl PairOutcome {
    /// The kept result: lowest score across candidates.
    pub fn best(&self) -> &AttackResult {
        &self.candidates[self.best_index]
    }
}

/// Attack one source toward one class: select candidates from the pool, run
/// the configured attack on each, keep the one with the lowest score.
pub fn attack_toward_class(
    model: &AEModel,
    source: &PointCloud,
    pool: &[PointCloud],
    target_class: ShapeClass,
    config: &AttackConfig,
    classifier: Option<&ClassifierParams>,
) -> Result<PairOutcome> {
    let ids = select_targets(
        pool,
        source,
        target_class,
        config.candidates,
        config.target_selection,
        Some(model),
        classifier,
        config.seed,
    )?;
    let mut candidates = Vec::with_capacity(ids.len());
    for &target_id in &ids {
        let mut result = optimize::run(model, source, &pool[target_id], config)?;
        result.target_id = target_id;
        candidates.push(result);
    }
    let best_index = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.metrics.score.total_cmp(&b.1.metrics.score).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("candidate list is never empty");
    Ok(PairOutcome {
        source_id: 0,
        target_class,
        candidates,
        best_index,
    })
}

/// Attack every source toward every listed class except its own. Outcomes
/// are ordered by source index, then by the class order given.
pub fn targeted_sweep(
    model: &AEModel,
    sources: &[PointCloud],
    pool: &[PointCloud],
    classes: &[ShapeClass],
    config: &AttackConfig,
    classifier: Option<&ClassifierParams>,
) -> Result<Vec<PairOutcome>> {
    if classes.len() < 2 {
        return Err(Error::Config(
            "a targeted sweep needs at least two classes".into(),
        ));
    }
    let mut outcomes = Vec::new();
    for (source_id, source) in sources.iter().enumerate() {
        for &class in classes {
            if source.label() == Some(class) {
                continue;
            }
            let mut outcome =
                attack_toward_class(model, source, pool, class, config, classifier)?;
            outcome.source_id = source_id;
            for result in &mut outcome.candidates {
                result.source_id = source_id;
            }
            outcomes.push(outcome);
        }
    }
    Ok(outcomes)
}

/// Attack one source toward whichever eligible class yields the lowest
/// score. With a single eligible class this equals the targeted attack.
pub fn untargeted_attack(
    model: &AEModel,
    source: &PointCloud,
    pool: &[PointCloud],
    classes: &[ShapeClass],
    config: &AttackConfig,
    classifier: Option<&ClassifierParams>,
) -> Result<PairOutcome> {
    let eligible: Vec<ShapeClass> = classes
        .iter()
        .copied()
        .filter(|&c| source.label() != Some(c))
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidInput(
            "no class other than the source's own is available".into(),
        ));
    }
    let mut best: Option<PairOutcome> = None;
    for class in eligible {
        let outcome = attack_toward_class(model, source, pool, class, config, classifier)?;
        let better = match &best {
            Some(kept) => outcome.best().metrics.score < kept.best().metrics.score,
            None => true,
        };
        if better {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one eligible class was attacked"))
}

/// One step of a source-to-adversarial interpolation.
#[derive(Debug, Clone)]
pub struct InterpolationStep {
    /// Mixing weight; 0 is the source, 1 the adversarial cloud.
    pub alpha: f64,
    /// Interpolated cloud.
    pub cloud: PointCloud,
    /// Victim reconstruction of the interpolated cloud.
    pub reconstruction: PointCloud,
}

/// Reconstruct the linear interpolation between a source cloud and its
/// adversarial counterpart at each mixing weight. Weights must be sorted
/// ascending within `[0, 1]`; the endpoints reproduce the inputs exactly.
pub fn interpolate_evolution(
    model: &AEModel,
    source: &PointCloud,
    adversarial: &PointCloud,
    alphas: &[f64],
) -> Result<Vec<InterpolationStep>> {
    if source.len() != adversarial.len() {
        return Err(Error::InvalidInput(format!(
            "interpolation needs matching sizes, got {} and {}",
            source.len(),
            adversarial.len()
        )));
    }
    for alpha in alphas {
        if !(alpha.is_finite() && (0.0..=1.0).contains(alpha)) {
            return Err(Error::InvalidInput(format!(
                "interpolation weight {alpha} outside [0, 1]"
            )));
        }
    }
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "interpolation weights must be sorted ascending".into(),
        ));
    }

    let mut steps = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cloud = if alpha == 0.0 {
            source.clone()
        } else if alpha == 1.0 {
            adversarial.clone()
        } else {
            let points: Vec<[f64; 3]> = source
                .points()
                .iter()
                .zip(adversarial.points())
                .map(|(s, q)| {
                    [
                        (1.0 - alpha) * s[0] + alpha * q[0],
                        (1.0 - alpha) * s[1] + alpha * q[1],
                        (1.0 - alpha) * s[2] + alpha * q[2],
                    ]
                })
                .collect();
            let mut cloud = PointCloud::new(points)?;
            if let Some(label) = source.label() {
                cloud = cloud.with_label(label);
            }
            cloud
        };
        let reconstruction = model.reconstruct(&cloud)?;
        steps.push(InterpolationStep {
            alpha,
            cloud,
            reconstruction,
        });
    }
    Ok(steps)
}
