//! Point clouds, shape classes, and unit-cube normalization.
//!
//! A [`PointCloud`] is an ordered list of 3D points with an optional class
//! label. Point order matters: attacks perturb points in place, defenses
//! report removed point ids, and the encoder's critical ids index into this
//! order.

mod generate;
mod index;
mod io;

pub use generate::generate_shape;
pub use index::{NeighborIndex, Neighbor};
pub use io::{load_cloud, save_cloud, CloudFormat};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A synthetic shape category. Ids are dense in `0..ShapeClass::COUNT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Sphere,
    Box,
    Torus,
    Cylinder,
    PlaneCross,
    Cone,
}

impl ShapeClass {
    /// Number of available shape classes.
    pub const COUNT: usize = 6;

    const ALL: [ShapeClass; ShapeClass::COUNT] = [
        ShapeClass::Sphere,
        ShapeClass::Box,
        ShapeClass::Torus,
        ShapeClass::Cylinder,
        ShapeClass::PlaneCross,
        ShapeClass::Cone,
    ];

    /// Dense id of this class.
    pub fn id(self) -> usize {
        ShapeClass::ALL.iter().position(|c| *c == self).unwrap()
    }

    /// Human-readable name, also used in files and reports.
    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Torus => "torus",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::PlaneCross => "plane-cross",
            ShapeClass::Cone => "cone",
        }
    }

    /// Class for a dense id.
    pub fn from_id(id: usize) -> Result<ShapeClass> {
        ShapeClass::ALL.get(id).copied().ok_or_else(|| {
            Error::InvalidInput(format!(
                "shape class id {id} out of range 0..{}",
                ShapeClass::COUNT
            ))
        })
    }

    /// Class for a name as produced by [`ShapeClass::name`].
    pub fn from_name(name: &str) -> Result<ShapeClass> {
        ShapeClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown shape class {name:?}")))
    }

    /// The first `count` classes, the standard experiment palette.
    pub fn palette(count: usize) -> Result<Vec<ShapeClass>> {
        if count == 0 || count > ShapeClass::COUNT {
            return Err(Error::Config(format!(
                "class count must be in 1..={}, got {count}",
                ShapeClass::COUNT
            )));
        }
        Ok(ShapeClass::ALL[..count].to_vec())
    }
}

impl std::fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An ordered set of 3D points with an optional class label.
///
/// Invariants enforced at construction: at least one point, all coordinates
/// finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    label: Option<ShapeClass>,
}

impl PointCloud {
    /// Build a cloud, validating the type invariants.
    pub fn new(points: Vec<[f64; 3]>) -> Result<PointCloud> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud must not be empty".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "point {i} has a non-finite coordinate: {p:?}"
                )));
            }
        }
        Ok(PointCloud {
            points,
            label: None,
        })
    }

    /// Attach a class label.
    pub fn with_label(mut self, label: ShapeClass) -> PointCloud {
        self.label = Some(label);
        self
    }

    /// The points, in order.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Class label, if any.
    pub fn label(&self) -> Option<ShapeClass> {
        self.label
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for iterator-style call sites.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Translate the bounding-box center to the origin and scale uniformly so
    /// the longest axis-aligned extent is 1.
    ///
    /// A degenerate cloud (all points coincident) is translated to the origin
    /// and left unscaled. The label is preserved.
    pub fn normalize_unit_cube(&self) -> Result<PointCloud> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "point {i} has a non-finite coordinate: {p:?}"
                )));
            }
        }
        let (lo, hi) = self.bounding_box();
        let center = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let points = self
            .points
            .iter()
            .map(|p| {
                [
                    (p[0] - center[0]) * scale,
                    (p[1] - center[1]) * scale,
                    (p[2] - center[2]) * scale,
                ]
            })
            .collect();
        Ok(PointCloud {
            points,
            label: self.label,
        })
    }

    /// A copy restricted to the given point ids, preserving their order.
    pub fn subset(&self, ids: &[usize]) -> Result<PointCloud> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("subset must keep at least one point".into()));
        }
        let mut points = Vec::with_capacity(ids.len());
        for &i in ids {
            let p = self.points.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("point id {i} out of range 0..{}", self.len()))
            })?;
            points.push(*p);
        }
        Ok(PointCloud {
            points,
            label: self.label,
        })
    }
}

/// Squared Euclidean distance between two points.
pub(crate) fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
