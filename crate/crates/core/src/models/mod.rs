//! Point-cloud autoencoder and classifier with seeded initialization.
//!
//! The encoder is a shared per-point multilayer perceptron followed by a
//! feature-wise max pool, so the latent code is invariant to point order
//! and is determined entirely by the pooled (critical) points. The decoder
//! is a fully connected stack that emits a fixed-size cloud. Widths derive
//! from a base profile scaled by a width factor, which keeps desk-scale
//! models small without changing the architecture.
//!
//! Batch normalization is deliberately omitted: at these widths it buys
//! nothing and it would couple per-example forward passes.

mod ae;
mod checkpoint;
mod classifier;

pub use ae::{AEModel, BoundAE};
pub use classifier::{BoundClassifier, ClassifierParams};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const ENCODER_BASE: [usize; 4] = [64, 128, 128, 256];
const DECODER_BASE: [usize; 2] = [256, 256];
const CLASSIFIER_POINT_BASE: [usize; 3] = [64, 128, 256];
const CLASSIFIER_HEAD_BASE: [usize; 1] = [128];

/// Sizing of an autoencoder: output cloud size, latent width, and the
/// factor applied to the base layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of points the decoder emits.
    pub n: usize,
    /// Latent code width.
    pub m: usize,
    /// Multiplier on the base hidden-layer widths.
    pub width_factor: f64,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "model dims need positive sizes, got n={} m={}",
                self.n, self.m
            )));
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return Err(Error::Config(format!(
                "width factor must be positive and finite, got {}",
                self.width_factor
            )));
        }
        Ok(())
    }

    /// Per-point feature widths of the encoder, ending at the latent width.
    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut widths: Vec<usize> = ENCODER_BASE
            .iter()
            .map(|&w| scaled(w, self.width_factor))
            .collect();
        widths.push(self.m);
        widths
    }

    /// Layer widths of the decoder, ending at `3 n` output coordinates.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut widths: Vec<usize> = DECODER_BASE
            .iter()
            .map(|&w| scaled(w, self.width_factor))
            .collect();
        widths.push(self.n * 3);
        widths
    }
}

fn scaled(base: usize, factor: f64) -> usize {
    ((base as f64 * factor).round() as usize).max(1)
}

pub(crate) fn classifier_point_widths(width_factor: f64) -> Vec<usize> {
    CLASSIFIER_POINT_BASE
        .iter()
        .map(|&w| scaled(w, width_factor))
        .collect()
}

pub(crate) fn classifier_head_widths(width_factor: f64, num_classes: usize) -> Vec<usize> {
    let mut widths: Vec<usize> = CLASSIFIER_HEAD_BASE
        .iter()
        .map(|&w| scaled(w, width_factor))
        .collect();
    widths.push(num_classes);
    widths
}

/// One fully connected layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Layer {
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
/// Weight elements are drawn row-major so a given seed always produces the
/// same parameters.
pub(crate) fn glorot_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Layer {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut data = Vec::with_capacity(fan_in * fan_out);
    for _ in 0..fan_in * fan_out {
        data.push(rng.gen_range(-bound..bound));
    }
    Layer {
        w: Tensor::matrix(fan_in, fan_out, data).expect("sized by construction"),
        b: Tensor::vector(vec![0.0; fan_out]),
    }
}

pub(crate) fn glorot_chain(rng: &mut ChaCha8Rng, input: usize, widths: &[usize]) -> Vec<Layer> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for &fan_out in widths {
        layers.push(glorot_layer(rng, fan_in, fan_out));
        fan_in = fan_out;
    }
    layers
}

/// Latent representation of a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub(crate) fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Euclidean distance between two codes of equal width.
    pub fn distance(&self, other: &LatentCode) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch {
                op: "latent_distance",
                detail: format!("codes have widths {} and {}", self.len(), other.len()),
            });
        }
        let sum: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_scale_and_clamp() {
        let dims = ModelDims {
            n: 256,
            m: 32,
            width_factor: 0.25,
        };
        assert_eq!(dims.encoder_widths(), vec![16, 32, 32, 64, 32]);
        assert_eq!(dims.decoder_widths(), vec![64, 64, 768]);

        let tiny = ModelDims {
            n: 8,
            m: 4,
            width_factor: 0.001,
        };
        assert_eq!(tiny.encoder_widths(), vec![1, 1, 1, 1, 4]);
    }

    #[test]
    fn dims_validation_rejects_degenerate_settings() {
        assert!(ModelDims {
            n: 0,
            m: 4,
            width_factor: 1.0
        }
        .validate()
        .is_err());
        assert!(ModelDims {
            n: 8,
            m: 4,
            width_factor: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn glorot_layers_are_seeded_and_bounded() {
        use rand::SeedableRng;
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let la = glorot_layer(&mut a, 16, 32);
        let lb = glorot_layer(&mut b, 16, 32);
        assert_eq!(la.w.data(), lb.w.data());
        assert!(la.b.data().iter().all(|&v| v == 0.0));
        let bound = (6.0 / 48.0f64).sqrt();
        assert!(la.w.data().iter().all(|&v| v.abs() <= bound));
    }

    #[test]
    fn latent_distance_matches_hand_computation() {
        let a = LatentCode::new(vec![0.0, 3.0]);
        let b = LatentCode::new(vec![4.0, 0.0]);
        assert_eq!(a.distance(&b).unwrap(), 5.0);
        let c = LatentCode::new(vec![1.0]);
        assert!(a.distance(&c).is_err());
    }
}
