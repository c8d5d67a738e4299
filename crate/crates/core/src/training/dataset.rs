//! Procedural dataset generation with per-class splits.

use crate::error::{Error, Result};
use crate::pointcloud::{generate_shape, PointCloud, ShapeClass};
use serde::{Deserialize, Serialize};

/// Fractions of each class assigned to the train, validation, and test
/// splits. Must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.85,
            val: 0.05,
            test: 0.10,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} fraction must be non-negative, got {f}"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Integer counts for `total` items by largest remainder, resolving
    /// remainder ties in train, val, test order.
    pub fn counts(&self, total: usize) -> (usize, usize, usize) {
        let targets = [
            self.train * total as f64,
            self.val * total as f64,
            self.test * total as f64,
        ];
        let mut counts = [0usize; 3];
        let mut assigned = 0usize;
        for (c, t) in counts.iter_mut().zip(&targets) {
            *c = t.floor() as usize;
            assigned += *c;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = targets[a] - targets[a].floor();
            let rb = targets[b] - targets[b].floor();
            rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
        (counts[0], counts[1], counts[2])
    }
}

/// Settings for [`Dataset::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Number of shape classes, taken from the front of the class palette.
    pub num_classes: usize,
    /// Clouds generated per class.
    pub per_class: usize,
    /// Points per cloud.
    pub points_per_cloud: usize,
    /// Base seed; every cloud derives its own stream from it.
    pub seed: u64,
    pub split: SplitFractions,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        ShapeClass::palette(self.num_classes)?;
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        if self.points_per_cloud < 8 {
            return Err(Error::Config(format!(
                "clouds need at least 8 points, got {}",
                self.points_per_cloud
            )));
        }
        self.split.validate()?;
        let (train, val, test) = self.split.counts(self.per_class);
        for (name, count) in [("train", train), ("val", val), ("test", test)] {
            if count == 0 {
                return Err(Error::Config(format!(
                    "the {name} split is empty: {} clouds per class under fractions {:?}",
                    self.per_class, self.split
                )));
            }
        }
        Ok(())
    }
}

/// Labeled clouds partitioned into train, validation, and test splits.
/// Within each split, clouds are grouped by class in palette order.
#[derive(Debug, Clone)]
pub struct Dataset {
    config: DatasetConfig,
    pub train: Vec<PointCloud>,
    pub val: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    /// Generates every cloud procedurally from the config seed.
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let classes = ShapeClass::palette(config.num_classes)?;
        let (n_train, n_val, _) = config.split.counts(config.per_class);
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for class in classes {
            for i in 0..config.per_class {
                let seed = config.seed.wrapping_add(i as u64);
                let cloud = generate_shape(class, config.points_per_cloud, seed)?;
                if i < n_train {
                    train.push(cloud);
                } else if i < n_train + n_val {
                    val.push(cloud);
                } else {
                    test.push(cloud);
                }
            }
        }
        Ok(Self {
            config: *config,
            train,
            val,
            test,
        })
    }

    /// Reassembles a dataset from clouds loaded elsewhere, checking that
    /// they match the config's sizes, ordering, and labeling.
    pub fn from_parts(
        config: &DatasetConfig,
        train: Vec<PointCloud>,
        val: Vec<PointCloud>,
        test: Vec<PointCloud>,
    ) -> Result<Self> {
        config.validate()?;
        let classes = ShapeClass::palette(config.num_classes)?;
        let (n_train, n_val, n_test) = config.split.counts(config.per_class);
        for (name, split, per_split_class) in [
            ("train", &train, n_train),
            ("val", &val, n_val),
            ("test", &test, n_test),
        ] {
            let expected = per_split_class * config.num_classes;
            if split.len() != expected {
                return Err(Error::InvalidInput(format!(
                    "{name} split holds {} clouds, config expects {expected}",
                    split.len()
                )));
            }
            for (i, cloud) in split.iter().enumerate() {
                if cloud.len() != config.points_per_cloud {
                    return Err(Error::InvalidInput(format!(
                        "{name} cloud {i} has {} points, config expects {}",
                        cloud.len(),
                        config.points_per_cloud
                    )));
                }
                let expected_class = classes[i / per_split_class];
                if cloud.label() != Some(expected_class) {
                    return Err(Error::InvalidInput(format!(
                        "{name} cloud {i} is labeled {:?}, expected {expected_class}",
                        cloud.label()
                    )));
                }
            }
        }
        Ok(Self {
            config: *config,
            train,
            val,
            test,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    /// The classes present, in palette order.
    pub fn classes(&self) -> Vec<ShapeClass> {
        ShapeClass::palette(self.config.num_classes).expect("validated at generation")
    }
}
