//! Cloud file formats: plain `xyz` and vertex-only ascii PLY.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so save followed by load reproduces the cloud exactly.

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use std::fmt::Write as _;
use std::path::Path;

/// Supported cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One `x y z` triple per line.
    Xyz,
    /// Ascii PLY with a single vertex element.
    PlyAscii,
}

/// Save a cloud to `path` in the given format.
pub fn save_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let mut text = String::new();
    match format {
        CloudFormat::Xyz => {
            for p in cloud.points() {
                writeln!(text, "{} {} {}", p[0], p[1], p[2]).expect("string write");
            }
        }
        CloudFormat::PlyAscii => {
            writeln!(text, "ply").expect("string write");
            writeln!(text, "format ascii 1.0").expect("string write");
            writeln!(text, "element vertex {}", cloud.len()).expect("string write");
            writeln!(text, "property double x").expect("string write");
            writeln!(text, "property double y").expect("string write");
            writeln!(text, "property double z").expect("string write");
            writeln!(text, "end_header").expect("string write");
            for p in cloud.points() {
                writeln!(text, "{} {} {}", p[0], p[1], p[2]).expect("string write");
            }
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a cloud from `path` in the given format.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::Xyz => parse_xyz(path, &text),
        CloudFormat::PlyAscii => parse_ply(path, &text),
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_point(path: &Path, line_no: usize, line: &str) -> Result<[f64; 3]> {
    let mut coords = [0.0f64; 3];
    let mut count = 0;
    for token in line.split_whitespace() {
        if count == 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 coordinates, found more: {line:?}"),
            ));
        }
        coords[count] = token.parse::<f64>().map_err(|_| {
            parse_error(path, line_no, format!("non-numeric coordinate {token:?}"))
        })?;
        count += 1;
    }
    if count != 3 {
        return Err(parse_error(
            path,
            line_no,
            format!("expected 3 coordinates, found {count}: {line:?}"),
        ));
    }
    Ok(coords)
}

fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        points.push(parse_point(path, i + 1, line)?);
    }
    if points.is_empty() {
        return Err(parse_error(path, 1, "file contains no points"));
    }
    PointCloud::new(points)
}

fn parse_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let mut expect = |want: &str| -> Result<()> {
        match lines.next() {
            Some((i, got)) if got.trim() == want => {
                let _ = i;
                Ok(())
            }
            Some((i, got)) => Err(parse_error(
                path,
                i + 1,
                format!("expected {want:?}, found {got:?}"),
            )),
            None => Err(parse_error(path, 1, format!("missing header line {want:?}"))),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;

    let mut declared: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let body_start;
    loop {
        let Some((i, raw)) = lines.next() else {
            return Err(parse_error(path, 1, "header is not terminated by end_header"));
        };
        let line = raw.trim();
        let line_no = i + 1;
        if line == "end_header" {
            body_start = line_no;
            break;
        }
        if line.starts_with("comment") || line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut parts = rest.split_whitespace();
            let kind = parts.next().unwrap_or("");
            if kind != "vertex" {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("unsupported element {kind:?}; only vertex clouds are readable"),
                ));
            }
            if declared.is_some() {
                return Err(parse_error(path, line_no, "duplicate vertex element"));
            }
            let count = parts
                .next()
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| parse_error(path, line_no, "malformed vertex count"))?;
            declared = Some(count);
        } else if let Some(rest) = line.strip_prefix("property ") {
            let mut parts = rest.split_whitespace();
            let ty = parts.next().unwrap_or("");
            if ty != "float" && ty != "double" {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("unsupported property type {ty:?}"),
                ));
            }
            let name = parts
                .next()
                .ok_or_else(|| parse_error(path, line_no, "property without a name"))?;
            properties.push(name.to_string());
        } else {
            return Err(parse_error(
                path,
                line_no,
                format!("unrecognized header line {line:?}"),
            ));
        }
    }

    let declared = declared.ok_or_else(|| parse_error(path, body_start, "missing vertex element"))?;
    if properties != ["x", "y", "z"] {
        return Err(parse_error(
            path,
            body_start,
            format!("vertex properties must be exactly x, y, z; found {properties:?}"),
        ));
    }

    let mut points = Vec::with_capacity(declared);
    let mut last_line = body_start;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if points.len() == declared {
            return Err(parse_error(
                path,
                line_no,
                format!("more than the declared {declared} vertices"),
            ));
        }
        points.push(parse_point(path, line_no, line)?);
        last_line = line_no;
    }
    if points.len() != declared {
        return Err(parse_error(
            path,
            last_line,
            format!("declared {declared} vertices, found {}", points.len()),
        ));
    }
    PointCloud::new(points)
}
