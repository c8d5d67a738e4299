//! Gradient-descent core shared by the latent-space and output-space attacks.
//!
//! The optimizer state is the perturbation matrix `P`; the adversarial cloud
//! is always materialized as `Q = S + P` in IEEE f64, and after every Adam
//! update each coordinate of `P` is snapped so that `s + p == q`,
//! `q - p == s` and `q - s == p` all hold bitwise. Coordinates for which no
//! such snap exists (the update dwarfs the source coordinate) keep their
//! previous value, so the invariant survives arbitrarily aggressive steps.

use super::{AttackConfig, AttackMode, AttackResult, DistanceLoss};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::AEModel;
use crate::pointcloud::PointCloud;
use crate::training::{AdamConfig, AdamState};

/// Bound on how far the initial loss-term ratio may drift from 1 before the
/// default weight is rescaled to pull it back to this boundary.
const REBALANCE_LIMIT: f64 = 100.0;

/// Maximum fixpoint iterations when snapping a perturbation coordinate.
const SNAP_ITERS: usize = 8;

/// Adjust a raw perturbation coordinate so the additive identities hold
/// bitwise. Returns the snapped `(p, q)` pair, or `None` when no nearby
/// representable pair exists.
pub(super) fn snap_exact(s: f64, p_raw: f64) -> Option<(f64, f64)> {
    let mut q = s + p_raw;
    for _ in 0..SNAP_ITERS {
        let p = q - s;
        let next = s + p;
        if next == q {
            if q - p == s {
                return Some((p, q));
            }
            return None;
        }
        q = next;
    }
    None
}

/// Re-map a non-finite forward or optimizer error into an attack abort that
/// carries the partial loss trace.
fn abort_on_non_finite(err: Error, iteration: usize, trace: &[f64]) -> Error {
    match err {
        Error::NonFinite { op } => Error::AttackAborted {
            iteration,
            reason: format!("non-finite value in {op}"),
            trace: trace.to_vec(),
        },
        other => other,
    }
}

/// One attack objective, fixed for the lifetime of a run.
struct Objective<'a> {
    model: &'a AEModel,
    mode: AttackMode,
    distance_loss: DistanceLoss,
    beta: f64,
    lambda: f64,
    source_points: Tensor,
    target_points: Tensor,
    /// Latent code of the target, precomputed once for the latent mode.
    target_latent: Option<Vec<f64>>,
}

impl Objective<'_> {
    /// Build one forward pass at the current perturbation. Returns the tape
    /// plus the total-loss, adversarial-loss and perturbation node ids.
    fn forward(&self, perturbation: &Tensor) -> Result<(Tape, NodeId, NodeId, NodeId)> {
        let mut tape = Tape::new();
        let bound = self.model.bind_on_tape(&mut tape, false)?;
        let p = tape.input(perturbation.clone(), true)?;
        let s = tape.constant(self.source_points.clone())?;
        let q = tape.add(s, p)?;

        let adversarial = match self.mode {
            AttackMode::Latent => {
                let z_q = bound.encode(&mut tape, q)?;
                let codes = self
                    .target_latent
                    .as_ref()
                    .expect("latent objective carries a target code");
                let z_t = tape.constant(Tensor::vector(codes.clone()))?;
                let diff = tape.sub(z_q, z_t)?;
                tape.l2_norm(diff)?
            }
            AttackMode::Output => {
                let recon = bound.reconstruct(&mut tape, q)?;
                let t = tape.constant(self.target_points.clone())?;
                tape.chamfer(recon, t)?
            }
        };

        let mut distance = match self.distance_loss {
            DistanceLoss::Chamfer => tape.chamfer(q, s)?,
            DistanceLoss::PerturbationL2 => tape.l2_norm(p)?,
        };
        if self.beta > 0.0 {
            let off_surface = tape.max_min_sqdist(q, s)?;
            let scaled = tape.scale(off_surface, self.beta)?;
            distance = tape.add(distance, scaled)?;
        }

        let weighted = tape.scale(distance, self.lambda)?;
        let total = tape.add(adversarial, weighted)?;
        Ok((tape, total, adversarial, p))
    }
}

/// Initial value of the adversarial loss term at zero perturbation.
fn initial_adversarial_loss(
    model: &AEModel,
    mode: AttackMode,
    source: &PointCloud,
    target: &PointCloud,
) -> Result<f64> {
    match mode {
        AttackMode::Latent => {
            let (z_s, _) = model.encode(source)?;
            let (z_t, _) = model.encode(target)?;
            z_s.distance(&z_t)
        }
        AttackMode::Output => {
            let recon = model.reconstruct(source)?;
            metrics::chamfer(&recon, target)
        }
    }
}

/// Rescale a default loss weight when the initial adversarial term and the
/// weighted geometric reference are wildly mismatched in magnitude. Returns
/// the weight to use and the factor applied to the default.
fn rebalance_default_lambda(
    model: &AEModel,
    mode: AttackMode,
    source: &PointCloud,
    target: &PointCloud,
    lambda: f64,
) -> Result<(f64, f64)> {
    let adversarial = initial_adversarial_loss(model, mode, source, target)?;
    let reference = lambda * metrics::chamfer(source, target)?;
    if !(adversarial > 0.0) || !(reference > 0.0) {
        return Ok((lambda, 1.0));
    }
    let ratio = adversarial / reference;
    let factor = if ratio > REBALANCE_LIMIT {
        ratio / REBALANCE_LIMIT
    } else if ratio < 1.0 / REBALANCE_LIMIT {
        ratio * REBALANCE_LIMIT
    } else {
        1.0
    };
    if factor != 1.0 {
        log::info!(
            "rebalanced distance weight {lambda} by {factor:.6} \
             (initial term ratio {ratio:.3e})"
        );
    }
    Ok((lambda * factor, factor))
}

/// Run one attack on a frozen model and return the kept iterate with its
/// evaluation. `source_id` and `target_id` are recorded verbatim.
pub(super) fn run(
    model: &AEModel,
    source: &PointCloud,
    target: &PointCloud,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    if !model.frozen() {
        return Err(Error::NotFrozen);
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput(
            "attack requires non-empty source and target clouds".into(),
        ));
    }

    let default_lambda = config.resolved_lambda();
    let (lambda, rebalance_factor) = if config.lambda.is_none() {
        rebalance_default_lambda(model, config.mode, source, target, default_lambda)?
    } else {
        (default_lambda, 1.0)
    };

    let target_latent = match config.mode {
        AttackMode::Latent => {
            let (code, _) = model.encode(target)?;
            Some(code.values().to_vec())
        }
        AttackMode::Output => None,
    };
    let objective = Objective {
        model,
        mode: config.mode,
        distance_loss: config.distance_loss,
        beta: config.off_surface_beta,
        lambda,
        source_points: Tensor::from_points(source.points()),
        target_points: Tensor::from_points(target.points()),
        target_latent,
    };

    let n = source.len();
    let source_flat: Vec<f64> = source.points().iter().flatten().copied().collect();
    let mut perturbation = Tensor::zeros(crate::autodiff::Shape::Matrix(n, 3));
    let adam_config = AdamConfig::with_learning_rate(config.learning_rate);
    let mut adam = AdamState::new(adam_config, &[n * 3])?;

    let mut loss_trace = Vec::with_capacity(config.steps + 1);
    let mut adv_trace = Vec::with_capacity(config.steps + 1);
    let mut best: Option<(f64, Tensor, usize)> = None;

    for iteration in 0..=config.steps {
        let (tape, total, adversarial, p_node) = objective
            .forward(&perturbation)
            .map_err(|e| abort_on_non_finite(e, iteration, &loss_trace))?;
        let total_value = tape.value(total).scalar_value()?;
        let adv_value = tape.value(adversarial).scalar_value()?;
        loss_trace.push(total_value);
        adv_trace.push(adv_value);

        if iteration >= config.keep_best_from {
            let improved = match &best {
                Some((kept, _, _)) => adv_value < *kept,
                None => true,
            };
            if improved {
                best = Some((adv_value, perturbation.clone(), iteration));
            }
        }
        if iteration == config.steps {
            break;
        }

        let mut grads = tape
            .backward(total)
            .map_err(|e| abort_on_non_finite(e, iteration, &loss_trace))?;
        let grad = grads.take(p_node).ok_or_else(|| Error::InvalidInput(
            "attack objective does not depend on the perturbation".into(),
        ))?;
        adam
            .step(&mut [&mut perturbation], &[Some(grad)])
            .map_err(|e| abort_on_non_finite(e, iteration, &loss_trace))?;

        let data = perturbation.data_mut();
        for (i, value) in data.iter_mut().enumerate() {
            if let Some((p, _)) = snap_exact(source_flat[i], *value) {
                *value = p;
            }
            // No snap exists: keep the previous coordinate, which already
            // satisfies the identities. Adam applied the raw update to its
            // moments, so progress elsewhere is unaffected.
        }
    }

    let (best_adversarial_loss, best_p, keep_best_iteration) =
        best.expect("final iteration always reaches the keep-best window");
    let p_points = best_p.to_points()?;
    let mut q_points = Vec::with_capacity(n);
    for (s, p) in source.points().iter().zip(&p_points) {
        q_points.push([s[0] + p[0], s[1] + p[1], s[2] + p[2]]);
    }
    let mut adversarial = PointCloud::new(q_points)?;
    if let Some(label) = source.label() {
        adversarial = adversarial.with_label(label);
    }
    let reconstruction = model.reconstruct(&adversarial)?;
    let metrics = super::evaluate_attack(
        model,
        source,
        target,
        &adversarial,
        metrics::DEFAULT_OS_GAMMA,
    )?;

    Ok(AttackResult {
        source_id: 0,
        target_id: 0,
        source_class: source.label(),
        target_class: target.label(),
        perturbation: p_points,
        adversarial,
        reconstruction,
        loss_trace,
        adv_trace,
        keep_best_iteration,
        best_adversarial_loss,
        lambda_used: lambda,
        rebalance_factor,
        metrics,
    })
}
