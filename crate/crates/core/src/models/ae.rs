//! The point-cloud autoencoder.

use crate::autodiff::{eval, NodeId, Shape, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{glorot_chain, Layer, LatentCode, ModelDims};
use crate::pointcloud::PointCloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Encoder-decoder pair over fixed-size point clouds.
///
/// Once frozen, the parameters can no longer be bound for training;
/// inference and gradient flow to inputs remain available.
#[derive(Debug, Clone)]
pub struct AEModel {
    pub(super) dims: ModelDims,
    pub(super) encoder: Vec<Layer>,
    pub(super) decoder: Vec<Layer>,
    pub(super) frozen: bool,
}

impl AEModel {
    /// Fresh model with Glorot-uniform weights drawn from `seed`.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = glorot_chain(&mut rng, 3, &dims.encoder_widths());
        let decoder = glorot_chain(&mut rng, dims.m, &dims.decoder_widths());
        Ok(Self {
            dims,
            encoder,
            decoder,
            frozen: false,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Points per decoded cloud.
    pub fn n(&self) -> usize {
        self.dims.n
    }

    /// Latent width.
    pub fn m(&self) -> usize {
        self.dims.m
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// Locks the parameters against further training.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn point_features(&self, cloud: &PointCloud) -> Result<(Tensor, Vec<usize>)> {
        let mut x = Tensor::from_points(cloud.points());
        for layer in &self.encoder {
            x = eval::relu(&eval::affine(&x, &layer.w, &layer.b)?);
        }
        eval::maxpool_points(&x)
    }

    /// Latent code plus the sorted ids of the critical points, the rows
    /// selected by at least one pooled feature. The code depends only on
    /// those rows.
    pub fn encode(&self, cloud: &PointCloud) -> Result<(LatentCode, Vec<usize>)> {
        let (pooled, argmax) = self.point_features(cloud)?;
        let mut ids = argmax;
        ids.sort_unstable();
        ids.dedup();
        Ok((LatentCode::new(pooled.data().to_vec()), ids))
    }

    /// Decodes a latent code into a cloud of exactly `n` points.
    pub fn decode(&self, latent: &LatentCode) -> Result<PointCloud> {
        if latent.len() != self.dims.m {
            return Err(Error::ShapeMismatch {
                op: "decode",
                detail: format!(
                    "latent has width {}, model expects {}",
                    latent.len(),
                    self.dims.m
                ),
            });
        }
        let mut x = Tensor::matrix(1, self.dims.m, latent.values().to_vec())?;
        for (i, layer) in self.decoder.iter().enumerate() {
            x = eval::affine(&x, &layer.w, &layer.b)?;
            if i + 1 < self.decoder.len() {
                x = eval::relu(&x);
            }
        }
        let points = eval::reshape(&x, Shape::Matrix(self.dims.n, 3))?;
        PointCloud::new(points.to_points()?)
    }

    /// Encode then decode.
    pub fn reconstruct(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let (latent, _) = self.encode(cloud)?;
        self.decode(&latent)
    }

    /// Registers the parameters on a tape. With `trainable` the weights
    /// receive gradients, which a frozen model refuses; without it they are
    /// constants and only tape inputs built later can carry gradients.
    pub fn bind_on_tape(&self, tape: &mut Tape, trainable: bool) -> Result<BoundAE> {
        if trainable && self.frozen {
            return Err(Error::Frozen);
        }
        let enc = bind_layers(tape, &self.encoder, trainable)?;
        let dec = bind_layers(tape, &self.decoder, trainable)?;
        Ok(BoundAE {
            enc,
            dec,
            n: self.dims.n,
            m: self.dims.m,
        })
    }

    /// Mutable views of all parameters, in the order of
    /// [`BoundAE::param_nodes`]: encoder then decoder, weight before bias.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Read-only views of all parameters, same order as `params_mut`.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(self.decoder.iter())
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }
}

fn bind_layers(tape: &mut Tape, layers: &[Layer], trainable: bool) -> Result<Vec<(NodeId, NodeId)>> {
    let mut bound = Vec::with_capacity(layers.len());
    for layer in layers {
        let w = tape.input(layer.w.clone(), trainable)?;
        let b = tape.input(layer.b.clone(), trainable)?;
        bound.push((w, b));
    }
    Ok(bound)
}

/// Tape-registered autoencoder parameters.
pub struct BoundAE {
    enc: Vec<(NodeId, NodeId)>,
    dec: Vec<(NodeId, NodeId)>,
    n: usize,
    m: usize,
}

impl BoundAE {
    /// Encoder forward pass; the returned node holds the latent vector and
    /// carries the pooling argmax for critical-point queries.
    pub fn encode(&self, tape: &mut Tape, points: NodeId) -> Result<NodeId> {
        let mut x = points;
        for &(w, b) in &self.enc {
            let pre = tape.affine(x, w, b)?;
            x = tape.relu(pre)?;
        }
        tape.maxpool_points(x)
    }

    /// Decoder forward pass from a latent vector node to an `n x 3` cloud.
    pub fn decode(&self, tape: &mut Tape, latent: NodeId) -> Result<NodeId> {
        let mut x = tape.reshape(latent, Shape::Matrix(1, self.m))?;
        for (i, &(w, b)) in self.dec.iter().enumerate() {
            x = tape.affine(x, w, b)?;
            if i + 1 < self.dec.len() {
                x = tape.relu(x)?;
            }
        }
        tape.reshape(x, Shape::Matrix(self.n, 3))
    }

    /// Encode then decode.
    pub fn reconstruct(&self, tape: &mut Tape, points: NodeId) -> Result<NodeId> {
        let latent = self.encode(tape, points)?;
        self.decode(tape, latent)
    }

    /// Parameter nodes in the order of [`AEModel::params_mut`].
    pub fn param_nodes(&self) -> Vec<NodeId> {
        self.enc
            .iter()
            .chain(self.dec.iter())
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{generate_shape, ShapeClass};

    fn small_dims() -> ModelDims {
        ModelDims {
            n: 32,
            m: 16,
            width_factor: 0.125,
        }
    }

    fn sample_cloud() -> PointCloud {
        generate_shape(ShapeClass::Sphere, 32, 40).unwrap()
    }

    #[test]
    fn latent_code_is_invariant_to_point_order() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let cloud = sample_cloud();
        let mut reversed: Vec<[f64; 3]> = cloud.points().to_vec();
        reversed.reverse();
        let permuted = PointCloud::new(reversed).unwrap();

        let (za, ids_a) = model.encode(&cloud).unwrap();
        let (zb, ids_b) = model.encode(&permuted).unwrap();
        for (a, b) in za.values().iter().zip(zb.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let n = cloud.len();
        let remapped: Vec<usize> = {
            let mut v: Vec<usize> = ids_b.iter().map(|&i| n - 1 - i).collect();
            v.sort_unstable();
            v
        };
        // Tied feature maxima may resolve to different points under a
        // permutation, so the id sets need not be equal. The transported set
        // must still be a valid critical set: pooling over it reproduces the
        // full latent code.
        let (z_sub, _) = model.encode(&cloud.subset(&remapped).unwrap()).unwrap();
        for (a, b) in za.values().iter().zip(z_sub.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn critical_subset_reproduces_the_latent_code_exactly() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let cloud = sample_cloud();
        let (full, ids) = model.encode(&cloud).unwrap();
        assert!(ids.len() < cloud.len(), "pooling must select a strict subset");
        let subset = cloud.subset(&ids).unwrap();
        let (sub, _) = model.encode(&subset).unwrap();
        for (a, b) in full.values().iter().zip(sub.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn single_point_cloud_has_critical_id_zero() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let cloud = PointCloud::new(vec![[0.1, -0.2, 0.3]]).unwrap();
        let (_, ids) = model.encode(&cloud).unwrap();
        assert_eq!(ids, vec![0]);
    }

    #[test]
    fn duplicated_points_do_not_change_the_latent_code() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let cloud = sample_cloud();
        let mut padded: Vec<[f64; 3]> = cloud.points().to_vec();
        padded.push(cloud.points()[0]);
        padded.push(cloud.points()[7]);
        let padded = PointCloud::new(padded).unwrap();
        let (za, _) = model.encode(&cloud).unwrap();
        let (zb, _) = model.encode(&padded).unwrap();
        for (a, b) in za.values().iter().zip(zb.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn decoder_always_emits_the_configured_size() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let recon = model.reconstruct(&sample_cloud()).unwrap();
        assert_eq!(recon.len(), 32);

        let short = LatentCode::new(vec![0.0; 5]);
        assert!(model.decode(&short).is_err());
    }

    #[test]
    fn frozen_models_refuse_trainable_binding() {
        let mut model = AEModel::new(small_dims(), 3).unwrap();
        model.freeze();
        let mut tape = Tape::new();
        assert!(matches!(
            model.bind_on_tape(&mut tape, true),
            Err(Error::Frozen)
        ));
        assert!(model.bind_on_tape(&mut tape, false).is_ok());
    }

    #[test]
    fn tape_reconstruction_matches_plain_inference_bitwise() {
        let model = AEModel::new(small_dims(), 3).unwrap();
        let cloud = sample_cloud();
        let plain = model.reconstruct(&cloud).unwrap();

        let mut tape = Tape::new();
        let bound = model.bind_on_tape(&mut tape, false).unwrap();
        let input = tape
            .constant(Tensor::from_points(cloud.points()))
            .unwrap();
        let recon = bound.reconstruct(&mut tape, input).unwrap();
        let taped = tape.value(recon).to_points().unwrap();

        assert_eq!(plain.len(), taped.len());
        for (a, b) in plain.points().iter().zip(&taped) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn seeds_control_initialization() {
        let a = AEModel::new(small_dims(), 3).unwrap();
        let b = AEModel::new(small_dims(), 3).unwrap();
        let c = AEModel::new(small_dims(), 4).unwrap();
        let flat = |m: &AEModel| -> Vec<u64> {
            m.param_tensors()
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }
}
