//! Procedural surface sampling for the synthetic shape classes.
//!
//! Each generator picks per-seed shape parameters (radius, aspect,
//! thickness), lays points quasi-uniformly on the parametric surface with a
//! stratified grid plus in-cell jitter, and returns the cloud unit-cube
//! normalized with its class label attached. Same `(class, n, seed)` always
//! produces the identical cloud.

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, ShapeClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Sample `n` points on a procedurally parameterized instance of `class`.
pub fn generate_shape(class: ShapeClass, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::InvalidInput(format!(
            "shape sampling needs n >= 8 points, got {n}"
        )));
    }
    let mut rng = shape_rng(class, n, seed);
    let points = match class {
        ShapeClass::Sphere => sphere(n, &mut rng),
        ShapeClass::Box => cuboid(n, &mut rng),
        ShapeClass::Torus => torus(n, &mut rng),
        ShapeClass::Cylinder => cylinder(n, &mut rng),
        ShapeClass::PlaneCross => plane_cross(n, &mut rng),
        ShapeClass::Cone => cone(n, &mut rng),
    };
    Ok(PointCloud::new(points)?
        .normalize_unit_cube()?
        .with_label(class))
}

fn shape_rng(class: ShapeClass, n: usize, seed: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(class.id() as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&(n as u64).to_le_bytes());
    bytes[24..32].copy_from_slice(&0x70636c6f75647331u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Largest-remainder split of `n` points across surface components
/// proportionally to their areas.
fn allocate(n: usize, areas: &[f64]) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let mut counts = Vec::with_capacity(areas.len());
    let mut fractions = Vec::with_capacity(areas.len());
    let mut used = 0usize;
    for (j, a) in areas.iter().enumerate() {
        let quota = n as f64 * a / total;
        let floor = quota.floor() as usize;
        counts.push(floor);
        fractions.push((quota - floor as f64, j));
        used += floor;
    }
    fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, j) in fractions.into_iter().take(n.saturating_sub(used)) {
        counts[j] += 1;
    }
    counts
}

/// `count` jittered stratified samples of the unit square, with the grid
/// aspect matched to a `w : h` domain.
fn sample_unit_square(count: usize, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    if count == 0 {
        return Vec::new();
    }
    let gx = (count as f64 * w / h).sqrt().round().max(1.0) as usize;
    let gx = gx.min(count);
    let gy = count.div_ceil(gx);
    let cells = gx * gy;
    let mut ids: Vec<usize> = (0..cells).collect();
    for i in 0..count {
        let j = rng.gen_range(i..cells);
        ids.swap(i, j);
    }
    ids.truncate(count);
    ids.sort_unstable();
    ids.into_iter()
        .map(|idx| {
            let cx = idx % gx;
            let cy = idx / gx;
            let s = (cx as f64 + rng.gen::<f64>()) / gx as f64;
            let t = (cy as f64 + rng.gen::<f64>()) / gy as f64;
            (s, t)
        })
        .collect()
}

fn rotation_matrix(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Shoemake's uniform random rotation via a unit quaternion.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn rotate(m: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

fn sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let radius = 0.35 + 0.15 * rng.gen::<f64>();
    let rot = rotation_matrix(rng);
    let golden = PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let dir = rotate(&rot, [rho * phi.cos(), rho * phi.sin(), z]);
            [radius * dir[0], radius * dir[1], radius * dir[2]]
        })
        .collect()
}

fn cuboid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let half: [f64; 3] = [
        0.5 * (0.45 + 0.55 * rng.gen::<f64>()),
        0.5 * (0.45 + 0.55 * rng.gen::<f64>()),
        0.5 * (0.45 + 0.55 * rng.gen::<f64>()),
    ];
    // Six faces: two per axis, spanning the other two axes.
    let mut areas = Vec::with_capacity(6);
    for axis in 0..3 {
        let (b, c) = other_axes(axis);
        let area = 4.0 * half[b] * half[c];
        areas.push(area);
        areas.push(area);
    }
    let counts = allocate(n, &areas);
    let mut points = Vec::with_capacity(n);
    for (face, &count) in counts.iter().enumerate() {
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let (b, c) = other_axes(axis);
        for (s, t) in sample_unit_square(count, half[b], half[c], rng) {
            let mut p = [0.0; 3];
            p[axis] = sign * half[axis];
            p[b] = (s - 0.5) * 2.0 * half[b];
            p[c] = (t - 0.5) * 2.0 * half[c];
            points.push(p);
        }
    }
    points
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

fn torus(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let major = 0.35;
    let minor = major * (0.30 + 0.25 * rng.gen::<f64>());
    sample_unit_square(n, 2.0 * PI * major, 2.0 * PI * minor, rng)
        .into_iter()
        .map(|(s, t)| {
            let u = 2.0 * PI * s;
            let v = torus_tube_angle(t, major, minor);
            let ring = major + minor * v.cos();
            [ring * u.cos(), ring * u.sin(), minor * v.sin()]
        })
        .collect()
}

/// Invert the tube-angle CDF `F(v) = (R v + r sin v) / (2 pi R)` so samples
/// are uniform by surface area rather than by angle.
fn torus_tube_angle(t: f64, major: f64, minor: f64) -> f64 {
    let target = 2.0 * PI * major * t;
    let mut v = 2.0 * PI * t;
    for _ in 0..8 {
        let f = major * v + minor * v.sin() - target;
        let df = major + minor * v.cos();
        v -= f / df;
    }
    v
}

fn cylinder(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let radius = 0.5 * (0.50 + 0.50 * rng.gen::<f64>());
    let half_height = 0.5 * (0.60 + 0.40 * rng.gen::<f64>());
    let lateral = 2.0 * PI * radius * 2.0 * half_height;
    let cap = PI * radius * radius;
    let counts = allocate(n, &[lateral, cap, cap]);
    let mut points = Vec::with_capacity(n);
    for (s, t) in sample_unit_square(counts[0], 2.0 * PI * radius, 2.0 * half_height, rng) {
        let theta = 2.0 * PI * s;
        points.push([
            radius * theta.cos(),
            radius * theta.sin(),
            (t - 0.5) * 2.0 * half_height,
        ]);
    }
    for (cap_index, &count) in counts[1..].iter().enumerate() {
        let z = if cap_index == 0 { half_height } else { -half_height };
        for (s, t) in sample_unit_square(count, 2.0 * PI * radius, radius, rng) {
            let theta = 2.0 * PI * s;
            let rho = radius * t.sqrt();
            points.push([rho * theta.cos(), rho * theta.sin(), z]);
        }
    }
    points
}

fn plane_cross(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let wx = 0.5 * (0.60 + 0.40 * rng.gen::<f64>());
    let wy = 0.5 * (0.60 + 0.40 * rng.gen::<f64>());
    let hz = 0.5 * (0.60 + 0.40 * rng.gen::<f64>());
    let counts = allocate(n, &[4.0 * wx * hz, 4.0 * wy * hz]);
    let mut points = Vec::with_capacity(n);
    for (s, t) in sample_unit_square(counts[0], wx, hz, rng) {
        points.push([(s - 0.5) * 2.0 * wx, 0.0, (t - 0.5) * 2.0 * hz]);
    }
    for (s, t) in sample_unit_square(counts[1], wy, hz, rng) {
        points.push([0.0, (s - 0.5) * 2.0 * wy, (t - 0.5) * 2.0 * hz]);
    }
    points
}

fn cone(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let radius = 0.5 * (0.70 + 0.30 * rng.gen::<f64>());
    let height = 0.60 + 0.40 * rng.gen::<f64>();
    let slant = (height * height + radius * radius).sqrt();
    let counts = allocate(n, &[PI * radius * slant, PI * radius * radius]);
    let mut points = Vec::with_capacity(n);
    for (s, t) in sample_unit_square(counts[0], 2.0 * PI * radius * 0.5, slant, rng) {
        let theta = 2.0 * PI * s;
        // Area grows linearly with distance from the apex.
        let frac = t.sqrt();
        let rho = radius * frac;
        points.push([
            rho * theta.cos(),
            rho * theta.sin(),
            0.5 * height - frac * height,
        ]);
    }
    for (s, t) in sample_unit_square(counts[1], 2.0 * PI * radius, radius, rng) {
        let theta = 2.0 * PI * s;
        let rho = radius * t.sqrt();
        points.push([rho * theta.cos(), rho * theta.sin(), -0.5 * height]);
    }
    points
}
