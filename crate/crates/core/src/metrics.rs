//! Geometric and semantic evaluation quantities.
//!
//! Every accelerated metric here has a brute-force counterpart in [`brute`]
//! that scans all pairs; the two agree bit-for-bit because they compare the
//! same squared distances in the same order. Chamfer distance follows the
//! symmetric mean-of-squared-minimums form; off-surface counting uses
//! non-squared Euclidean distance against a threshold.

use crate::error::{Error, Result};
use crate::models::{AEModel, ClassifierParams};
use crate::pointcloud::{NeighborIndex, PointCloud, ShapeClass};
use serde::{Deserialize, Serialize};

/// Default off-surface distance threshold in unit-cube units.
pub const DEFAULT_OS_GAMMA: f64 = 0.05;

/// Per-example record of the standard attack evaluation quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Number of adversarial points farther than gamma from the source.
    pub os_count: usize,
    /// Chamfer distance between the adversarial input and its source.
    pub s_cd: f64,
    /// Chamfer distance between the adversarial reconstruction and the target.
    pub t_re: f64,
    /// `t_re` normalized by the model's own reconstruction error on the target.
    pub t_nre: f64,
    /// Chamfer distance between the adversarial reconstruction and the source.
    pub s_re: f64,
    /// `s_re` normalized by the model's reconstruction error on the source.
    pub s_nre: f64,
    /// Target-selection score `s_cd + t_re`; lower is a better attack.
    pub score: f64,
    /// Classifier assigned the target class to the reconstruction.
    pub hit_target: Option<bool>,
    /// Classifier assigned anything but the source class.
    pub avoid_source: Option<bool>,
}

/// Brute-force reference implementations used by tests and audits.
pub mod brute {
    use super::*;
    use crate::pointcloud::Neighbor;

    /// All-pairs k-nearest-neighbors with the same ordering contract as
    /// [`NeighborIndex::knn`].
    pub fn knn_brute(
        points: &[[f64; 3]],
        query: [f64; 3],
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        let available = points.len() - usize::from(exclude.is_some());
        if k == 0 || k > available {
            return Err(Error::KOutOfRange { k, available });
        }
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| exclude != Some(*i))
            .map(|(i, p)| (crate::pointcloud::dist_sq(query, *p), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(all
            .into_iter()
            .take(k)
            .map(|(sq, id)| Neighbor {
                id,
                dist: sq.sqrt(),
            })
            .collect())
    }

    /// All-pairs Chamfer distance.
    pub fn chamfer_brute(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<f64> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::InvalidInput("chamfer distance needs non-empty clouds".into()));
        }
        let mut sum_x = 0.0;
        for p in x {
            sum_x += min_sq_scan(*p, y).1;
        }
        let mut sum_y = 0.0;
        for q in y {
            sum_y += min_sq_scan(*q, x).1;
        }
        Ok(sum_x / x.len() as f64 + sum_y / y.len() as f64)
    }

    /// All-pairs off-surface count.
    pub fn os_count_brute(
        q: &[[f64; 3]],
        s: &[[f64; 3]],
        gamma: f64,
    ) -> Result<(usize, Vec<usize>)> {
        if q.is_empty() || s.is_empty() {
            return Err(Error::InvalidInput("off-surface count needs non-empty clouds".into()));
        }
        if !(gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be >= 0, got {gamma}")));
        }
        let mut ids = Vec::new();
        for (i, p) in q.iter().enumerate() {
            if min_sq_scan(*p, s).1 > gamma * gamma {
                ids.push(i);
            }
        }
        Ok((ids.len(), ids))
    }

    pub(crate) fn min_sq_scan(p: [f64; 3], reference: &[[f64; 3]]) -> (usize, f64) {
        let mut best = f64::INFINITY;
        let mut best_id = 0usize;
        for (j, r) in reference.iter().enumerate() {
            let sq = crate::pointcloud::dist_sq(p, *r);
            if sq < best {
                best = sq;
                best_id = j;
            }
        }
        (best_id, best)
    }
}

/// Below this many pairs a direct scan beats building a tree.
const CHAMFER_SCAN_LIMIT: usize = 2048;

fn min_sq(p: [f64; 3], reference: &[[f64; 3]], index: Option<&NeighborIndex>) -> (usize, f64) {
    match index {
        Some(ix) => ix.nearest_sq(p, None),
        None => brute::min_sq_scan(p, reference),
    }
}

/// Chamfer distance plus the nearest-neighbor assignment in each direction:
/// `nn_xy[i]` is the id in `y` closest to `x[i]`, and vice versa.
pub fn chamfer_with_assignments(
    x: &[[f64; 3]],
    y: &[[f64; 3]],
) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs non-empty clouds".into()));
    }
    let build_trees = x.len() * y.len() > CHAMFER_SCAN_LIMIT;
    let index_y = if build_trees {
        Some(NeighborIndex::from_points(y)?)
    } else {
        None
    };
    let index_x = if build_trees {
        Some(NeighborIndex::from_points(x)?)
    } else {
        None
    };
    let mut nn_xy = Vec::with_capacity(x.len());
    let mut sum_x = 0.0;
    for p in x {
        let (id, sq) = min_sq(*p, y, index_y.as_ref());
        nn_xy.push(id);
        sum_x += sq;
    }
    let mut nn_yx = Vec::with_capacity(y.len());
    let mut sum_y = 0.0;
    for q in y {
        let (id, sq) = min_sq(*q, x, index_x.as_ref());
        nn_yx.push(id);
        sum_y += sq;
    }
    let value = sum_x / x.len() as f64 + sum_y / y.len() as f64;
    Ok((value, nn_xy, nn_yx))
}

/// Symmetric Chamfer distance over raw point slices.
pub fn chamfer_points(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<f64> {
    chamfer_with_assignments(x, y).map(|(v, _, _)| v)
}

/// Symmetric Chamfer distance between two clouds.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    chamfer_points(x.points(), y.points())
}

/// Points of `q` farther than `gamma` (Euclidean) from every point of `s`.
/// Returns the count and the offending point ids in ascending order.
pub fn os_count(q: &PointCloud, s: &PointCloud, gamma: f64) -> Result<(usize, Vec<usize>)> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be >= 0, got {gamma}")));
    }
    let use_tree = q.len() * s.len() > CHAMFER_SCAN_LIMIT;
    let index = if use_tree { Some(NeighborIndex::new(s)?) } else { None };
    let mut ids = Vec::new();
    for (i, p) in q.points().iter().enumerate() {
        let (_, sq) = min_sq(*p, s.points(), index.as_ref());
        if sq > gamma * gamma {
            ids.push(i);
        }
    }
    Ok((ids.len(), ids))
}

/// Ratio of a reconstruction error to a reference reconstruction error.
pub fn normalized_error(numerator: f64, denominator: f64, context: &'static str) -> Result<f64> {
    if denominator == 0.0 {
        return Err(Error::ZeroDenominator { context });
    }
    Ok(numerator / denominator)
}

/// Target normalized reconstruction error: how close the reconstruction of
/// `q` gets to `t`, relative to how well the model reconstructs `t` itself.
pub fn t_nre(model: &AEModel, q: &PointCloud, t: &PointCloud) -> Result<f64> {
    let recon_q = model.reconstruct(q)?;
    let recon_t = model.reconstruct(t)?;
    let numerator = chamfer(&recon_q, t)?;
    let denominator = chamfer(&recon_t, t)?;
    normalized_error(numerator, denominator, "target normalized reconstruction error")
}

/// Source normalized reconstruction error of a (possibly defended) cloud `x`
/// against the clean source `s`.
pub fn s_nre(model: &AEModel, x: &PointCloud, s: &PointCloud) -> Result<f64> {
    let recon_x = model.reconstruct(x)?;
    let recon_s = model.reconstruct(s)?;
    let numerator = chamfer(&recon_x, s)?;
    let denominator = chamfer(&recon_s, s)?;
    normalized_error(numerator, denominator, "source normalized reconstruction error")
}

/// Output of [`semantic_eval`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticEval {
    /// Fraction of reconstructions classified as their target class.
    pub hit_target: f64,
    /// Fraction of reconstructions classified as anything but their source.
    pub avoid_source: f64,
    /// Row-normalized confusion matrix: rows are true (target) classes,
    /// columns are predicted classes.
    pub confusion: Vec<Vec<f64>>,
}

/// Classify reconstructions and score them against source and target labels.
pub fn semantic_eval(
    classifier: &ClassifierParams,
    clouds: &[PointCloud],
    source_labels: &[ShapeClass],
    target_labels: &[ShapeClass],
) -> Result<SemanticEval> {
    if clouds.is_empty() || clouds.len() != source_labels.len() || clouds.len() != target_labels.len() {
        return Err(Error::InvalidInput(format!(
            "semantic eval needs equal non-zero counts of clouds ({}), sources ({}), targets ({})",
            clouds.len(),
            source_labels.len(),
            target_labels.len()
        )));
    }
    let classes = classifier.num_classes();
    for label in source_labels.iter().chain(target_labels) {
        if label.id() >= classes {
            return Err(Error::InvalidInput(format!(
                "label {label} (id {}) outside classifier range 0..{classes}",
                label.id()
            )));
        }
    }
    let mut hits = 0usize;
    let mut avoids = 0usize;
    let mut counts = vec![vec![0usize; classes]; classes];
    for ((cloud, source), target) in clouds.iter().zip(source_labels).zip(target_labels) {
        let predicted = classifier.predict_index(cloud)?;
        if predicted == target.id() {
            hits += 1;
        }
        if predicted != source.id() {
            avoids += 1;
        }
        counts[target.id()][predicted] += 1;
    }
    let confusion = counts
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                vec![0.0; classes]
            } else {
                row.into_iter().map(|c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(SemanticEval {
        hit_target: hits as f64 / clouds.len() as f64,
        avoid_source: avoids as f64 / clouds.len() as f64,
        confusion,
    })
}

/// Spearman rank correlation with average ranks on ties. Returns 0 when
/// either input has no rank variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "spearman needs two equally long series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank for the tie group; ranks are 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}
