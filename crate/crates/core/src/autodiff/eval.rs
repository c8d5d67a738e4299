//! Plain forward implementations of the tensor operations.
//!
//! Both the tape and the direct inference paths call these functions, so a
//! value computed under the tape is bit-identical to its non-tape
//! counterpart. Accumulation orders are fixed and must not be rearranged.

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::metrics;

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        Shape::Matrix(r, c) => Ok((r, c)),
        other => Err(Error::ShapeMismatch {
            op,
            detail: format!("expected a matrix, got {other}"),
        }),
    }
}

/// `x @ w + b` over rows of `x`: `x` is `n x d_in`, `w` is `d_in x d_out`,
/// `b` is a `d_out` vector broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d_in) = matrix_dims(x, "affine")?;
    let (wr, d_out) = matrix_dims(w, "affine")?;
    if wr != d_in {
        return Err(Error::ShapeMismatch {
            op: "affine",
            detail: format!("input has {d_in} features but weight expects {wr}"),
        });
    }
    match b.shape() {
        Shape::Vector(len) if len == d_out => {}
        other => {
            return Err(Error::ShapeMismatch {
                op: "affine",
                detail: format!("bias must be vector[{d_out}], got {other}"),
            })
        }
    }
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0f64; n * d_out];
    for i in 0..n {
        let row_in = &xd[i * d_in..(i + 1) * d_in];
        let row_out = &mut out[i * d_out..(i + 1) * d_out];
        row_out.copy_from_slice(bd);
        for (k, &xv) in row_in.iter().enumerate() {
            let w_row = &wd[k * d_out..(k + 1) * d_out];
            for j in 0..d_out {
                row_out[j] += xv * w_row[j];
            }
        }
    }
    Tensor::matrix(n, d_out, out)
}

/// Elementwise `max(v, 0)`. The derivative at exactly zero is taken as zero.
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Per-feature maximum over the rows of an `n x d` matrix, with the row id
/// of each maximum. Ties keep the first (lowest) row id.
pub fn maxpool_points(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, d) = matrix_dims(x, "maxpool_points")?;
    if n == 0 {
        return Err(Error::ShapeMismatch {
            op: "maxpool_points",
            detail: "cannot pool zero rows".into(),
        });
    }
    let xd = x.data();
    let mut values = xd[..d].to_vec();
    let mut argmax = vec![0usize; d];
    for i in 1..n {
        let row = &xd[i * d..(i + 1) * d];
        for j in 0..d {
            if row[j] > values[j] {
                values[j] = row[j];
                argmax[j] = i;
            }
        }
    }
    Ok((Tensor::vector(values), argmax))
}

fn zip_same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{} vs {}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape(a, b, "add")?;
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// Elementwise difference of two same-shape tensors.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same_shape(a, b, "sub")?;
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o -= v;
    }
    Ok(out)
}

/// Multiply every element by a constant.
pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v *= factor;
    }
    out
}

/// Euclidean norm of all elements (Frobenius norm for matrices).
pub fn l2_norm(x: &Tensor) -> f64 {
    x.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean of all elements.
pub fn mean(x: &Tensor) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "mean",
            detail: "cannot average zero elements".into(),
        });
    }
    Ok(x.data().iter().sum::<f64>() / x.len() as f64)
}

/// Reinterpret the elements under a new shape of the same length.
pub fn reshape(x: &Tensor, shape: Shape) -> Result<Tensor> {
    if shape.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            detail: format!("cannot reshape {} into {shape}", x.shape()),
        });
    }
    match shape {
        Shape::Scalar => Ok(Tensor::scalar(x.data()[0])),
        Shape::Vector(_) => Ok(Tensor::vector(x.data().to_vec())),
        Shape::Matrix(r, c) => Tensor::matrix(r, c, x.data().to_vec()),
    }
}

/// Chamfer distance between two `n x 3` matrices with nearest-neighbor
/// assignments in both directions.
pub fn chamfer(x: &Tensor, y: &Tensor) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    let xp = x.to_points()?;
    let yp = y.to_points()?;
    metrics::chamfer_with_assignments(&xp, &yp)
}

/// Numerically stable softmax cross-entropy of a logits vector against a
/// class index. Returns the loss and the softmax probabilities.
pub fn cross_entropy_logits(logits: &Tensor, target: usize) -> Result<(f64, Vec<f64>)> {
    let classes = match logits.shape() {
        Shape::Vector(c) => c,
        other => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_logits",
                detail: format!("expected a logits vector, got {other}"),
            })
        }
    };
    if target >= classes {
        return Err(Error::InvalidInput(format!(
            "target class {target} outside 0..{classes}"
        )));
    }
    let data = logits.data();
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut softmax = Vec::with_capacity(classes);
    for &v in data {
        let e = (v - max).exp();
        softmax.push(e);
        sum += e;
    }
    for p in &mut softmax {
        *p /= sum;
    }
    let loss = sum.ln() + max - data[target];
    Ok((loss, softmax))
}

/// Largest over `q` of the squared distance to the closest point of `s`,
/// with the maximizing row of `q` and its nearest row in `s`.
pub fn max_min_sqdist(q: &Tensor, s: &Tensor) -> Result<(f64, usize, usize)> {
    let qp = q.to_points()?;
    let sp = s.to_points()?;
    if qp.is_empty() || sp.is_empty() {
        return Err(Error::InvalidInput(
            "max-min squared distance needs non-empty clouds".into(),
        ));
    }
    let index = if qp.len() * sp.len() > 2048 {
        Some(crate::pointcloud::NeighborIndex::from_points(&sp)?)
    } else {
        None
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_q = 0usize;
    let mut best_s = 0usize;
    for (i, p) in qp.iter().enumerate() {
        let (j, sq) = match &index {
            Some(ix) => ix.nearest_sq(*p, None),
            None => crate::metrics::brute::min_sq_scan(*p, &sp),
        };
        if sq > best {
            best = sq;
            best_q = i;
            best_s = j;
        }
    }
    Ok((best, best_q, best_s))
}
