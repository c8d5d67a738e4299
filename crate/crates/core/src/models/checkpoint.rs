//! Checkpoint files for trained models.
//!
//! Checkpoints are JSON with an explicit format version and kind tag.
//! Loading validates the full layer-dimension chain against the stored
//! sizing, so a file from a differently configured run fails loudly
//! instead of producing garbage inference.

use crate::autodiff::Shape;
use crate::error::{Error, Result};
use crate::models::{
    classifier_head_widths, classifier_point_widths, AEModel, ClassifierParams, Layer, ModelDims,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const FORMAT_VERSION: u32 = 1;
const KIND_AUTOENCODER: &str = "autoencoder";
const KIND_CLASSIFIER: &str = "classifier";

#[derive(Serialize, Deserialize)]
struct AECheckpoint {
    format_version: u32,
    kind: String,
    dims: ModelDims,
    frozen: bool,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierCheckpoint {
    format_version: u32,
    kind: String,
    num_classes: usize,
    width_factor: f64,
    point_layers: Vec<Layer>,
    head_layers: Vec<Layer>,
}

fn check_header(version: u32, kind: &str, expected: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    if kind != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {kind}, expected a {expected}"
        )));
    }
    Ok(())
}

fn check_chain(layers: &[Layer], input: usize, widths: &[usize], what: &str) -> Result<()> {
    if layers.len() != widths.len() {
        return Err(Error::Checkpoint(format!(
            "{what} has {} layers, sizing requires {}",
            layers.len(),
            widths.len()
        )));
    }
    let mut fan_in = input;
    for (i, (layer, &fan_out)) in layers.iter().zip(widths).enumerate() {
        match layer.w.shape() {
            Shape::Matrix(r, c) if r == fan_in && c == fan_out => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "{what} layer {i} weight is {other}, expected matrix[{fan_in} x {fan_out}]"
                )))
            }
        }
        match layer.b.shape() {
            Shape::Vector(l) if l == fan_out => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "{what} layer {i} bias is {other}, expected vector[{fan_out}]"
                )))
            }
        }
        for t in [&layer.w, &layer.b] {
            if t.data().len() != t.shape().len() {
                return Err(Error::Checkpoint(format!(
                    "{what} layer {i} tensor holds {} values for shape {}",
                    t.data().len(),
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "{what} layer {i} contains non-finite values"
                )));
            }
        }
        fan_in = fan_out;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Checkpoint(format!("{} is not a valid checkpoint: {e}", path.display()))
    })
}

impl AEModel {
    /// Writes the model to a JSON checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let snapshot = AECheckpoint {
            format_version: FORMAT_VERSION,
            kind: KIND_AUTOENCODER.to_string(),
            dims: self.dims,
            frozen: self.frozen,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        };
        write_json(path.as_ref(), &snapshot)
    }

    /// Loads and validates a checkpoint written by [`AEModel::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let snapshot: AECheckpoint = read_json(path.as_ref())?;
        check_header(snapshot.format_version, &snapshot.kind, KIND_AUTOENCODER)?;
        snapshot.dims.validate().map_err(|e| {
            Error::Checkpoint(format!("checkpoint sizing is invalid: {e}"))
        })?;
        check_chain(
            &snapshot.encoder,
            3,
            &snapshot.dims.encoder_widths(),
            "encoder",
        )?;
        check_chain(
            &snapshot.decoder,
            snapshot.dims.m,
            &snapshot.dims.decoder_widths(),
            "decoder",
        )?;
        Ok(Self {
            dims: snapshot.dims,
            encoder: snapshot.encoder,
            decoder: snapshot.decoder,
            frozen: snapshot.frozen,
        })
    }
}

impl ClassifierParams {
    /// Writes the classifier to a JSON checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let snapshot = ClassifierCheckpoint {
            format_version: FORMAT_VERSION,
            kind: KIND_CLASSIFIER.to_string(),
            num_classes: self.num_classes,
            width_factor: self.width_factor,
            point_layers: self.point_layers.clone(),
            head_layers: self.head_layers.clone(),
        };
        write_json(path.as_ref(), &snapshot)
    }

    /// Loads and validates a checkpoint written by [`ClassifierParams::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let snapshot: ClassifierCheckpoint = read_json(path.as_ref())?;
        check_header(snapshot.format_version, &snapshot.kind, KIND_CLASSIFIER)?;
        if snapshot.num_classes < 2 {
            return Err(Error::Checkpoint(format!(
                "checkpoint declares {} classes, need at least two",
                snapshot.num_classes
            )));
        }
        if !(snapshot.width_factor > 0.0 && snapshot.width_factor.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint width factor {} is invalid",
                snapshot.width_factor
            )));
        }
        let point_widths = classifier_point_widths(snapshot.width_factor);
        check_chain(&snapshot.point_layers, 3, &point_widths, "point stack")?;
        let pooled = *point_widths.last().expect("non-empty profile");
        check_chain(
            &snapshot.head_layers,
            pooled,
            &classifier_head_widths(snapshot.width_factor, snapshot.num_classes),
            "head",
        )?;
        Ok(Self {
            num_classes: snapshot.num_classes,
            width_factor: snapshot.width_factor,
            point_layers: snapshot.point_layers,
            head_layers: snapshot.head_layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{generate_shape, ShapeClass};

    fn dims() -> ModelDims {
        ModelDims {
            n: 16,
            m: 8,
            width_factor: 0.0625,
        }
    }

    #[test]
    fn autoencoder_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.json");
        let mut model = AEModel::new(dims(), 21).unwrap();
        model.freeze();
        model.save(&path).unwrap();
        let loaded = AEModel::load(&path).unwrap();
        assert!(loaded.frozen());
        assert_eq!(loaded.dims(), model.dims());
        for (a, b) in model.param_tensors().iter().zip(loaded.param_tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let cloud = generate_shape(ShapeClass::Sphere, 16, 40).unwrap();
        let before = model.reconstruct(&cloud).unwrap();
        let after = loaded.reconstruct(&cloud).unwrap();
        for (a, b) in before.points().iter().zip(after.points()) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn classifier_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.json");
        let clf = ClassifierParams::new(3, 0.0625, 8).unwrap();
        clf.save(&path).unwrap();
        let loaded = ClassifierParams::load(&path).unwrap();
        assert_eq!(loaded.num_classes(), 3);
        let cloud = generate_shape(ShapeClass::Cone, 24, 1).unwrap();
        let a = clf.logits(&cloud).unwrap();
        let b = loaded.logits(&cloud).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.json");
        AEModel::new(dims(), 21).unwrap().save(&path).unwrap();
        let err = ClassifierParams::load(&path).unwrap_err();
        assert!(err.to_string().contains("checkpoint"));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.json");
        AEModel::new(dims(), 21).unwrap().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(AEModel::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn dimension_tampering_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.json");
        AEModel::new(dims(), 21).unwrap().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"n\":16", "\"n\":17", 1);
        assert_ne!(text, tampered, "tampering must hit the sizing field");
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(AEModel::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_files_surface_io_errors() {
        assert!(matches!(
            AEModel::load("/nonexistent/ae.json"),
            Err(Error::Io { .. })
        ));
    }
}
