//! Shape classifier sharing the per-point architecture of the encoder.

use crate::autodiff::{eval, NodeId, Shape, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{
    classifier_head_widths, classifier_point_widths, glorot_chain, Layer,
};
use crate::pointcloud::PointCloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-point feature extractor with max pooling and a fully connected
/// head emitting one logit per class. Class indices follow the dataset's
/// class palette order.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub(super) num_classes: usize,
    pub(super) width_factor: f64,
    pub(super) point_layers: Vec<Layer>,
    pub(super) head_layers: Vec<Layer>,
}

impl ClassifierParams {
    pub fn new(num_classes: usize, width_factor: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least two classes, got {num_classes}"
            )));
        }
        if !(width_factor > 0.0 && width_factor.is_finite()) {
            return Err(Error::Config(format!(
                "width factor must be positive and finite, got {width_factor}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point_widths = classifier_point_widths(width_factor);
        let point_layers = glorot_chain(&mut rng, 3, &point_widths);
        let pooled = *point_widths.last().expect("non-empty profile");
        let head_layers = glorot_chain(
            &mut rng,
            pooled,
            &classifier_head_widths(width_factor, num_classes),
        );
        Ok(Self {
            num_classes,
            width_factor,
            point_layers,
            head_layers,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn width_factor(&self) -> f64 {
        self.width_factor
    }

    /// Raw class scores for a cloud.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut x = Tensor::from_points(cloud.points());
        for layer in &self.point_layers {
            x = eval::relu(&eval::affine(&x, &layer.w, &layer.b)?);
        }
        let (pooled, _) = eval::maxpool_points(&x)?;
        let mut h = Tensor::matrix(1, pooled.len(), pooled.data().to_vec())?;
        for (i, layer) in self.head_layers.iter().enumerate() {
            h = eval::affine(&h, &layer.w, &layer.b)?;
            if i + 1 < self.head_layers.len() {
                h = eval::relu(&h);
            }
        }
        Ok(h.data().to_vec())
    }

    /// Index of the highest logit; ties keep the lowest index.
    pub fn predict_index(&self, cloud: &PointCloud) -> Result<usize> {
        let logits = self.logits(cloud)?;
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Registers the parameters on a tape, trainable or constant.
    pub fn bind_on_tape(&self, tape: &mut Tape, trainable: bool) -> Result<BoundClassifier> {
        let mut bind = |layers: &[Layer]| -> Result<Vec<(NodeId, NodeId)>> {
            layers
                .iter()
                .map(|l| {
                    let w = tape.input(l.w.clone(), trainable)?;
                    let b = tape.input(l.b.clone(), trainable)?;
                    Ok((w, b))
                })
                .collect()
        };
        let point = bind(&self.point_layers)?;
        let head = bind(&self.head_layers)?;
        Ok(BoundClassifier {
            point,
            head,
            num_classes: self.num_classes,
        })
    }

    /// Mutable views of all parameters, in the order of
    /// [`BoundClassifier::param_nodes`].
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

/// Tape-registered classifier parameters.
pub struct BoundClassifier {
    point: Vec<(NodeId, NodeId)>,
    head: Vec<(NodeId, NodeId)>,
    num_classes: usize,
}

impl BoundClassifier {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Forward pass from a cloud node to a logits vector node.
    pub fn logits(&self, tape: &mut Tape, points: NodeId) -> Result<NodeId> {
        let mut x = points;
        for &(w, b) in &self.point {
            let pre = tape.affine(x, w, b)?;
            x = tape.relu(pre)?;
        }
        let pooled = tape.maxpool_points(x)?;
        let width = tape.value(pooled).len();
        let mut h = tape.reshape(pooled, Shape::Matrix(1, width))?;
        for (i, &(w, b)) in self.head.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i + 1 < self.head.len() {
                h = tape.relu(h)?;
            }
        }
        tape.reshape(h, Shape::Vector(self.num_classes))
    }

    /// Parameter nodes in the order of `ClassifierParams::params_mut`.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        self.point
            .iter()
            .chain(self.head.iter())
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}
