//! Artifact layout for one experiment run. Every run lives in its own
//! directory named by the config hash, so results from different configs
//! cannot mix. Subcommands that consume artifacts check for the files they
//! need and report which command produces them.

use anyhow::{bail, Context, Result};
use pcadv::pointcloud::{load_cloud, save_cloud, CloudFormat, PointCloud, ShapeClass};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

/// Root directory of one experiment run plus the cloud file format used for
/// everything written below it.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    format: CloudFormat,
}

impl RunDir {
    pub fn new(config: &ExperimentConfig, format: CloudFormat) -> Result<Self> {
        let hash = config.hash()?;
        Ok(Self {
            root: config.outputs.dir.join(hash),
            format,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn format(&self) -> CloudFormat {
        self.format
    }

    /// Extension matching the run's cloud format.
    pub fn cloud_ext(&self) -> &'static str {
        match self.format {
            CloudFormat::Xyz => "xyz",
            CloudFormat::PlyAscii => "ply",
        }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn victim_model(&self) -> PathBuf {
        self.models_dir().join("ae_victim.json")
    }

    pub fn transfer_model(&self) -> PathBuf {
        self.models_dir().join("ae_transfer.json")
    }

    pub fn classifier_model(&self) -> PathBuf {
        self.models_dir().join("classifier.json")
    }

    pub fn train_trace(&self, stem: &str) -> PathBuf {
        self.models_dir().join(format!("{stem}_trace.csv"))
    }

    pub fn classifier_eval(&self) -> PathBuf {
        self.models_dir().join("classifier_eval.json")
    }

    pub fn attacks_dir(&self) -> PathBuf {
        self.root.join("attacks")
    }

    pub fn attack_variant_dir(&self, variant: &str) -> PathBuf {
        self.attacks_dir().join(variant)
    }

    pub fn attack_pairs(&self, variant: &str) -> PathBuf {
        self.attack_variant_dir(variant).join("pairs.json")
    }

    pub fn defends_dir(&self) -> PathBuf {
        self.root.join("defends")
    }

    pub fn defend_combo_dir(&self, mode: &str, kind: &str) -> PathBuf {
        self.defends_dir().join(format!("{mode}_{kind}"))
    }

    pub fn transfer_dir(&self) -> PathBuf {
        self.root.join("transfer")
    }

    pub fn transfer_results(&self) -> PathBuf {
        self.transfer_dir().join("transfer.json")
    }

    pub fn calibration_dir(&self) -> PathBuf {
        self.root.join("calibration")
    }

    pub fn calibration_grid(&self) -> PathBuf {
        self.calibration_dir().join("calibration.csv")
    }

    pub fn calibration_best(&self) -> PathBuf {
        self.calibration_dir().join("best.json")
    }

    pub fn interp_dir(&self) -> PathBuf {
        self.root.join("interp")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Fails with a dependency error if `path` does not exist yet.
    pub fn require(&self, path: &Path, produced_by: &str) -> Result<()> {
        if !path.exists() {
            bail!(
                "missing artifact {}: run `pcadv {produced_by}` first",
                path.display()
            );
        }
        Ok(())
    }

    pub fn save_cloud(&self, path: &Path, cloud: &PointCloud) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
        save_cloud(path, cloud, self.format)
            .with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load_cloud(&self, path: &Path) -> Result<PointCloud> {
        load_cloud(path, self.format)
            .with_context(|| format!("cannot read {}", path.display()))
    }
}

/// Index of the generated dataset: which cloud file belongs to which split
/// and class, in generation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub classes: Vec<String>,
    pub points: usize,
    pub seed: u64,
    /// Split name to ordered file entries, relative to the data directory.
    pub splits: BTreeMap<String, Vec<CloudEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudEntry {
    pub file: String,
    pub class: String,
}

/// One attacked source-target pair, with enough stored state to recompute
/// every reported number from the cloud files next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    /// Directory name of this pair below the variant directory.
    pub pair: String,
    pub source_class: String,
    pub target_class: String,
    /// Index of the source in the test split.
    pub source_index: usize,
    /// Index of the chosen target in the test split.
    pub target_index: usize,
    pub mode: String,
    pub lambda: f64,
    pub rebalance_factor: f64,
    /// Which quantity the keep-best window minimized.
    pub keep_best_metric: String,
    pub keep_best_iteration: usize,
    pub best_adversarial_loss: f64,
    /// Attack score of every candidate target, in candidate order.
    pub candidate_scores: Vec<f64>,
    pub metrics: pcadv::metrics::MetricRecord,
    pub total_loss_trace: Vec<f64>,
    pub adversarial_loss_trace: Vec<f64>,
}

/// Defense outcome for one pair; clouds live in files next to the record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseRecord {
    pub pair: String,
    pub removed: Vec<usize>,
    pub s_re_before: f64,
    pub s_re_after: f64,
    pub s_nre_before: f64,
    pub s_nre_after: f64,
    pub label_before: Option<usize>,
    pub label_after: Option<usize>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let json = serde_json::to_string_pretty(value).context("serialization failed")?;
    std::fs::write(path, json).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Class for a manifest class name.
pub fn class_by_name(name: &str) -> Result<ShapeClass> {
    ShapeClass::palette(ShapeClass::COUNT)
        .expect("full palette always exists")
        .into_iter()
        .find(|c| c.to_string() == name)
        .with_context(|| format!("unknown shape class {name:?}"))
}

/// Subdirectories of `dir` in name order; empty when the directory is
/// missing.
pub fn sorted_subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(_) => return Ok(names),
    };
    for entry in entries {
        let entry = entry.with_context(|| format!("cannot list {}", dir.display()))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}
