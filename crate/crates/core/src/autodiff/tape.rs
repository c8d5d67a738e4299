//! Reverse-mode differentiation on a linear tape.
//!
//! Each operation records the forward state its backward pass needs
//! (nearest-neighbor assignments, argmax rows, softmax outputs), so the
//! backward sweep is a pure replay with no re-evaluation. Forward values
//! come from the shared kernels in [`eval`], which keeps a tape forward
//! pass bit-identical to direct inference over the same parameters.

use crate::autodiff::{eval, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    MaxPoolPoints {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Mean {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    L2Norm {
        x: NodeId,
    },
    Chamfer {
        x: NodeId,
        y: NodeId,
        nn_xy: Vec<usize>,
        nn_yx: Vec<usize>,
    },
    CrossEntropyLogits {
        logits: NodeId,
        target: usize,
        softmax: Vec<f64>,
    },
    MaxMinSqDist {
        q: NodeId,
        s: NodeId,
        max_q: usize,
        min_s: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to tape inputs.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, if that input required one and was reached.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Remove and return the gradient for `id`.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// Records a computation as a sequence of operations for reverse-mode
/// differentiation. Build a fresh tape per optimization step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{name}#{}", self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Leaf node. Gradients are produced only for inputs with
    /// `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(value, Op::Input, requires_grad, "input")
    }

    /// Leaf node that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.input(value, false)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval::affine(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(&[x, w, b]);
        self.push(value, Op::Affine { x, w, b }, ng, "affine")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = eval::relu(self.value(x));
        let ng = self.needs(&[x]);
        self.push(value, Op::Relu { x }, ng, "relu")
    }

    pub fn maxpool_points(&mut self, x: NodeId) -> Result<NodeId> {
        let (value, argmax) = eval::maxpool_points(self.value(x))?;
        let ng = self.needs(&[x]);
        self.push(value, Op::MaxPoolPoints { x, argmax }, ng, "maxpool_points")
    }

    /// Row ids selected by the most recent max pool at `id`, which must be a
    /// node created by [`Tape::maxpool_points`].
    pub fn maxpool_argmax(&self, id: NodeId) -> Result<&[usize]> {
        match &self.nodes[id.0].op {
            Op::MaxPoolPoints { argmax, .. } => Ok(argmax),
            _ => Err(Error::InvalidInput(
                "node was not produced by maxpool_points".into(),
            )),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval::add(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        self.push(value, Op::Add { a, b }, ng, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval::sub(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        self.push(value, Op::Sub { a, b }, ng, "sub")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let value = eval::scale(self.value(x), factor);
        let ng = self.needs(&[x]);
        self.push(value, Op::Scale { x, factor }, ng, "scale")
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let value = eval::mean(self.value(x))?;
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(value), Op::Mean { x }, ng, "mean")
    }

    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        let value = eval::reshape(self.value(x), shape)?;
        let ng = self.needs(&[x]);
        self.push(value, Op::Reshape { x }, ng, "reshape")
    }

    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let value = eval::l2_norm(self.value(x));
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(value), Op::L2Norm { x }, ng, "l2_norm")
    }

    pub fn chamfer(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (value, nn_xy, nn_yx) = eval::chamfer(self.value(x), self.value(y))?;
        let ng = self.needs(&[x, y]);
        self.push(
            Tensor::scalar(value),
            Op::Chamfer { x, y, nn_xy, nn_yx },
            ng,
            "chamfer",
        )
    }

    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let (value, softmax) = eval::cross_entropy_logits(self.value(logits), target)?;
        let ng = self.needs(&[logits]);
        self.push(
            Tensor::scalar(value),
            Op::CrossEntropyLogits {
                logits,
                target,
                softmax,
            },
            ng,
            "cross_entropy_logits",
        )
    }

    pub fn max_min_sqdist(&mut self, q: NodeId, s: NodeId) -> Result<NodeId> {
        let (value, max_q, min_s) = eval::max_min_sqdist(self.value(q), self.value(s))?;
        let ng = self.needs(&[q, s]);
        self.push(
            Tensor::scalar(value),
            Op::MaxMinSqDist { q, s, max_q, min_s },
            ng,
            "max_min_sqdist",
        )
    }

    /// Discrete decisions taken during the forward pass: relu activation
    /// patterns, pooling argmax rows, and nearest-neighbor assignments.
    /// Two evaluations with equal signatures lie on the same smooth piece
    /// of the function.
    pub fn signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => pack_sign_bits(&mut sig, self.nodes[x.0].value.data()),
                Op::MaxPoolPoints { argmax, .. } => {
                    sig.extend(argmax.iter().map(|&i| i as u64));
                }
                Op::Chamfer { nn_xy, nn_yx, .. } => {
                    sig.extend(nn_xy.iter().map(|&i| i as u64));
                    sig.extend(nn_yx.iter().map(|&i| i as u64));
                }
                Op::MaxMinSqDist { max_q, min_s, .. } => {
                    sig.push(*max_q as u64);
                    sig.push(*min_s as u64);
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a scalar `root`. Returns gradients for every
    /// reachable input that was created with `requires_grad`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        match self.nodes[root.0].value.shape() {
            Shape::Scalar => {}
            other => {
                return Err(Error::ShapeMismatch {
                    op: "backward",
                    detail: format!("root must be a scalar loss, got {other}"),
                })
            }
        }
        let mut adjoints: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        adjoints.resize_with(self.nodes.len(), || None);
        adjoints[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                adjoints[idx] = None;
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Input) {
                continue;
            }
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut adjoints);
        }
        Ok(Gradients { grads: adjoints })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, idx: usize, grad: &Tensor, adjoints: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Affine { x, w, b } => {
                let (n, d_out) = matrix_dims(&self.nodes[idx].value);
                let d_in = matrix_dims(&self.nodes[x.0].value).1;
                let dy = grad.data();
                if self.wants(*x) {
                    let wd = self.nodes[w.0].value.data();
                    let mut dx = vec![0.0f64; n * d_in];
                    for i in 0..n {
                        let dy_row = &dy[i * d_out..(i + 1) * d_out];
                        for k in 0..d_in {
                            let w_row = &wd[k * d_out..(k + 1) * d_out];
                            let mut s = 0.0;
                            for j in 0..d_out {
                                s += dy_row[j] * w_row[j];
                            }
                            dx[i * d_in + k] = s;
                        }
                    }
                    accumulate(adjoints, *x, Tensor::matrix(n, d_in, dx).expect("shape"));
                }
                if self.wants(*w) {
                    let xd = self.nodes[x.0].value.data();
                    let mut dw = vec![0.0f64; d_in * d_out];
                    for i in 0..n {
                        let dy_row = &dy[i * d_out..(i + 1) * d_out];
                        for k in 0..d_in {
                            let xv = xd[i * d_in + k];
                            let dw_row = &mut dw[k * d_out..(k + 1) * d_out];
                            for j in 0..d_out {
                                dw_row[j] += xv * dy_row[j];
                            }
                        }
                    }
                    accumulate(adjoints, *w, Tensor::matrix(d_in, d_out, dw).expect("shape"));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0f64; d_out];
                    for i in 0..n {
                        let dy_row = &dy[i * d_out..(i + 1) * d_out];
                        for j in 0..d_out {
                            db[j] += dy_row[j];
                        }
                    }
                    accumulate(adjoints, *b, Tensor::vector(db));
                }
            }
            Op::Relu { x } => {
                if self.wants(*x) {
                    let mut dx = grad.clone();
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(adjoints, *x, dx);
                }
            }
            Op::MaxPoolPoints { x, argmax } => {
                if self.wants(*x) {
                    let shape = self.nodes[x.0].value.shape();
                    let d = matrix_dims(&self.nodes[x.0].value).1;
                    let mut dx = Tensor::zeros(shape);
                    for (j, &row) in argmax.iter().enumerate() {
                        dx.data_mut()[row * d + j] += grad.data()[j];
                    }
                    accumulate(adjoints, *x, dx);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(adjoints, *a, grad.clone());
                }
                if self.wants(*b) {
                    accumulate(adjoints, *b, grad.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(adjoints, *a, grad.clone());
                }
                if self.wants(*b) {
                    accumulate(adjoints, *b, eval::scale(grad, -1.0));
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    accumulate(adjoints, *x, eval::scale(grad, *factor));
                }
            }
            Op::Mean { x } => {
                if self.wants(*x) {
                    let len = self.nodes[x.0].value.len();
                    let g = grad.data()[0] / len as f64;
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.shape());
                    for v in dx.data_mut() {
                        *v = g;
                    }
                    accumulate(adjoints, *x, dx);
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    let back = eval::reshape(grad, self.nodes[x.0].value.shape())
                        .expect("reshape lengths match by construction");
                    accumulate(adjoints, *x, back);
                }
            }
            Op::L2Norm { x } => {
                if self.wants(*x) {
                    let norm = self.nodes[idx].value.data()[0];
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.shape());
                    if norm > 0.0 {
                        let g = grad.data()[0];
                        for (d, &v) in dx.data_mut().iter_mut().zip(self.nodes[x.0].value.data())
                        {
                            *d = g * v / norm;
                        }
                    }
                    accumulate(adjoints, *x, dx);
                }
            }
            Op::Chamfer { x, y, nn_xy, nn_yx } => {
                let g = grad.data()[0];
                let xd = self.nodes[x.0].value.data();
                let yd = self.nodes[y.0].value.data();
                let nx = nn_xy.len();
                let ny = nn_yx.len();
                let fx = 2.0 / nx as f64;
                let fy = 2.0 / ny as f64;
                if self.wants(*x) {
                    let mut dx = vec![0.0f64; nx * 3];
                    for (i, &j) in nn_xy.iter().enumerate() {
                        for c in 0..3 {
                            dx[i * 3 + c] += g * fx * (xd[i * 3 + c] - yd[j * 3 + c]);
                        }
                    }
                    for (j, &i) in nn_yx.iter().enumerate() {
                        for c in 0..3 {
                            dx[i * 3 + c] += g * fy * (xd[i * 3 + c] - yd[j * 3 + c]);
                        }
                    }
                    accumulate(adjoints, *x, Tensor::matrix(nx, 3, dx).expect("shape"));
                }
                if self.wants(*y) {
                    let mut dyt = vec![0.0f64; ny * 3];
                    for (j, &i) in nn_yx.iter().enumerate() {
                        for c in 0..3 {
                            dyt[j * 3 + c] += g * fy * (yd[j * 3 + c] - xd[i * 3 + c]);
                        }
                    }
                    for (i, &j) in nn_xy.iter().enumerate() {
                        for c in 0..3 {
                            dyt[j * 3 + c] += g * fx * (yd[j * 3 + c] - xd[i * 3 + c]);
                        }
                    }
                    accumulate(adjoints, *y, Tensor::matrix(ny, 3, dyt).expect("shape"));
                }
            }
            Op::CrossEntropyLogits {
                logits,
                target,
                softmax,
            } => {
                if self.wants(*logits) {
                    let g = grad.data()[0];
                    let mut dl = Vec::with_capacity(softmax.len());
                    for (c, &p) in softmax.iter().enumerate() {
                        let onehot = if c == *target { 1.0 } else { 0.0 };
                        dl.push(g * (p - onehot));
                    }
                    accumulate(adjoints, *logits, Tensor::vector(dl));
                }
            }
            Op::MaxMinSqDist { q, s, max_q, min_s } => {
                let g = grad.data()[0];
                let qd = self.nodes[q.0].value.data();
                let sd = self.nodes[s.0].value.data();
                let mut diff = [0.0f64; 3];
                for (c, d) in diff.iter_mut().enumerate() {
                    *d = qd[max_q * 3 + c] - sd[min_s * 3 + c];
                }
                if self.wants(*q) {
                    let mut dq = Tensor::zeros(self.nodes[q.0].value.shape());
                    for (c, &d) in diff.iter().enumerate() {
                        dq.data_mut()[max_q * 3 + c] = 2.0 * g * d;
                    }
                    accumulate(adjoints, *q, dq);
                }
                if self.wants(*s) {
                    let mut ds = Tensor::zeros(self.nodes[s.0].value.shape());
                    for (c, &d) in diff.iter().enumerate() {
                        ds.data_mut()[min_s * 3 + c] = -2.0 * g * d;
                    }
                    accumulate(adjoints, *s, ds);
                }
            }
        }
    }
}

fn matrix_dims(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        Shape::Matrix(r, c) => (r, c),
        _ => unreachable!("matrix operand enforced at construction"),
    }
}

fn accumulate(adjoints: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut adjoints[id.0] {
        Some(t) => {
            for (a, c) in t.data_mut().iter_mut().zip(contribution.data()) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn pack_sign_bits(sig: &mut Vec<u64>, values: &[f64]) {
    let mut word = 0u64;
    let mut filled = 0u32;
    for &v in values {
        word = (word << 1) | (v > 0.0) as u64;
        filled += 1;
        if filled == 64 {
            sig.push(word);
            word = 0;
            filled = 0;
        }
    }
    if filled > 0 {
        sig.push(word);
    }
}
