//! Dense f64 tensors and a define-by-run reverse-mode autodiff tape.
//!
//! A [`Tape`] records every operation applied during a forward pass into an
//! append-only arena; node ids only ever reference earlier nodes, so the
//! recorded graph is acyclic by construction. [`Tape::backward`] replays the
//! arena in reverse from a scalar root, accumulating gradients additively
//! across paths, and yields one gradient tensor per node.
//!
//! The tape is rebuilt for every forward pass; nothing is cached across
//! passes. All arithmetic is 64-bit and the backward sweep visits nodes in a
//! fixed order, so identical inputs produce bitwise-identical gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense real tensor: row-major f64 values plus a shape.
///
/// The invariant `data.len() == shape.iter().product()` holds for every
/// constructed tensor; a rank-0 tensor (empty shape) holds exactly one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from external data, validating shape and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                detail: format!(
                    "shape {shape:?} wants {expected} values, got {}",
                    data.len()
                ),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "tensor data",
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor from a slice (no finiteness check skipped: validates).
    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::from_vec(vec![values.len()], values.to_vec())
    }

    /// Rank-2 tensor from rows × cols data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    /// Internal constructor for op outputs; skips the finiteness check so
    /// saturating losses can round-trip infinities instead of panicking.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn scalar_value(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Number of rows when viewed as `[rows, ...]`; 1 for rank-0.
    pub fn outer_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// The same data under a new shape of equal length.
    pub fn with_shape(self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "with_shape",
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Copy of the rows at `indices` along the first axis.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                detail: format!("rank-0 tensor {:?} has no rows", self.shape),
            });
        }
        let rows = self.shape[0];
        let row_len: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            if i >= rows {
                return Err(Error::InvalidArgument {
                    arg: "indices",
                    reason: format!("row {i} out of range for {rows} rows"),
                });
            }
            data.extend_from_slice(&self.data[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor::from_raw(shape, data))
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One recorded operation. Variants carry the parent node ids plus whatever
/// constant data the backward rule needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    /// `x + b` with `b` broadcast over every axis of `x` but the last.
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        padding: usize,
    },
    Relu(NodeId),
    /// log Σ exp over the last axis, computed with max subtraction.
    LogSumExp(NodeId),
    /// `out[i] = input[i, indices[i]]` for a rank-2 input.
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    /// Elementwise `x^c` for a constant exponent.
    PowConst(NodeId, f64),
    Log(NodeId),
    Exp(NodeId),
    /// Same data, new shape of equal length.
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward sweep, indexed by [`NodeId`].
///
/// Every node of the tape has an entry with the node's shape; nodes the root
/// does not depend on hold all zeros.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }
}

/// Recorded-operation tape. See the module docs for the execution model.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Leaves receive gradients from [`backward`].
    ///
    /// [`backward`]: Tape::backward
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::from_raw(shape, data)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Sub(a, b), Tensor::from_raw(shape, data)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::from_raw(shape, data)))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::ScalarMul(a, c), Tensor::from_raw(shape, data))
    }

    /// `x + b` where `b` is rank-1 and matches the last axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let last = xs.last().copied().unwrap_or(0);
        if bs.len() != 1 || bs[0] != last {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias {bs:?} does not match last axis of {xs:?}"),
            });
        }
        let bv = self.value(b).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % last])
            .collect();
        Ok(self.push(Op::AddBias(x, b), Tensor::from_raw(xs, data)))
    }

    /// Rank-2 matrix product `[m,k] × [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.value(a).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} × {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), Tensor::from_raw(vec![m, n], out)))
    }

    /// 2-D convolution, stride 1, symmetric zero padding.
    ///
    /// Input is NHWC `[n,h,w,c_in]`, kernel `[kh,kw,c_in,c_out]`; output is
    /// `[n, h+2p-kh+1, w+2p-kw+1, c_out]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, padding: usize) -> Result<NodeId> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        if si.len() != 4 || sk.len() != 4 || si[3] != sk[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {si:?}, kernel {sk:?}"),
            });
        }
        let (n, h, w, ci) = (si[0], si[1], si[2], si[3]);
        let (kh, kw, _, co) = (sk[0], sk[1], sk[2], sk[3]);
        let (oh, ow) = (
            (h + 2 * padding).checked_sub(kh - 1),
            (w + 2 * padding).checked_sub(kw - 1),
        );
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!(
                        "kernel {sk:?} too large for input {si:?} with padding {padding}"
                    ),
                })
            }
        };
        let iv = self.value(input).data();
        let kv = self.value(kernel).data();
        let mut out = vec![0.0; n * oh * ow * co];
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    for dy in 0..kh {
                        let iy = (y + dy).checked_sub(padding);
                        let iy = match iy {
                            Some(iy) if iy < h => iy,
                            _ => continue,
                        };
                        for dx in 0..kw {
                            let ix = (x + dx).checked_sub(padding);
                            let ix = match ix {
                                Some(ix) if ix < w => ix,
                                _ => continue,
                            };
                            let ibase = ((b * h + iy) * w + ix) * ci;
                            let kbase = (dy * kw + dx) * ci;
                            let obase = ((b * oh + y) * ow + x) * co;
                            for c in 0..ci {
                                let xv = iv[ibase + c];
                                let krow = &kv[(kbase + c) * co..(kbase + c + 1) * co];
                                let orow = &mut out[obase..obase + co];
                                for f in 0..co {
                                    orow[f] += xv * krow[f];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                padding,
            },
            Tensor::from_raw(vec![n, oh, ow, co], out),
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Relu(a), Tensor::from_raw(shape, data))
    }

    /// log Σ exp over the last axis: `[d0,..,dn,K] -> [d0,..,dn]`.
    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let k = match shape.last() {
            Some(&k) if k > 0 => k,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "log_sum_exp",
                    detail: format!("needs a non-empty last axis, got {shape:?}"),
                })
            }
        };
        let out_shape = shape[..shape.len() - 1].to_vec();
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(v.len() / k);
        for row in v.chunks_exact(k) {
            out.push(lse_row(row));
        }
        Ok(self.push(Op::LogSumExp(a), Tensor::from_raw(out_shape, out)))
    }

    /// Per-row index selection: `out[i] = input[i, indices[i]]`.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather",
                detail: format!("needs a rank-2 input, got {shape:?}"),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if indices.len() != rows {
            return Err(Error::LengthMismatch {
                op: "gather",
                left: indices.len(),
                right: rows,
            });
        }
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(rows);
        for (i, &j) in indices.iter().enumerate() {
            if j >= cols {
                return Err(Error::LabelOutOfRange {
                    label: j,
                    num_classes: cols,
                });
            }
            out.push(v[i * cols + j]);
        }
        Ok(self.push(
            Op::Gather(a, indices.to_vec()),
            Tensor::from_raw(vec![rows], out),
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Empty { what: "mean input" });
        }
        let total: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Op::Mean(a), Tensor::scalar(total / n as f64)))
    }

    /// Elementwise `x^c` for constant `c`. `c = 0` is the constant 1 with
    /// zero gradient everywhere.
    pub fn pow_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| libm::pow(x, c))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::PowConst(a, c), Tensor::from_raw(shape, data))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| libm::log(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Log(a), Tensor::from_raw(shape, data))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| libm::exp(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Exp(a), Tensor::from_raw(shape, data))
    }

    /// View the same row-major data under a new shape of equal length.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        if len != self.value(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.value(a).shape()),
            });
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(Op::Reshape(a), Tensor::from_raw(shape, data)))
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Returns one gradient per node, each with the node's shape; gradients
    /// accumulate additively across paths, and nodes the root does not reach
    /// are all zeros. Visits nodes in fixed descending-id order, so the
    /// result is deterministic.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "root must be scalar, got shape {:?}",
                    self.value(root).shape()
                ),
            });
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        let mut reached = vec![false; self.nodes.len()];
        grads[root.0].data[0] = 1.0;
        reached[root.0] = true;

        for i in (0..=root.0).rev() {
            if !reached[i] {
                continue;
            }
            // Split off this node's gradient so parents can be borrowed mutably.
            let g = core::mem::replace(&mut grads[i], Tensor::zeros(Vec::new()));
            self.backward_op(i, &g, &mut grads, &mut reached);
            grads[i] = g;
        }
        Ok(Gradients { grads })
    }

    fn backward_op(&self, i: usize, g: &Tensor, grads: &mut [Tensor], reached: &mut [bool]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.data(), 1.0);
                accumulate(&mut grads[b.0], g.data(), 1.0);
                reached[a.0] = true;
                reached[b.0] = true;
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g.data(), 1.0);
                accumulate(&mut grads[b.0], g.data(), -1.0);
                reached[a.0] = true;
                reached[b.0] = true;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                for (slot, (gu, y)) in grads[a.0].data.iter_mut().zip(g.data().iter().zip(bv)) {
                    *slot += gu * y;
                }
                for (slot, (gu, x)) in grads[b.0].data.iter_mut().zip(g.data().iter().zip(av)) {
                    *slot += gu * x;
                }
                reached[a.0] = true;
                reached[b.0] = true;
            }
            Op::ScalarMul(a, c) => {
                accumulate(&mut grads[a.0], g.data(), *c);
                reached[a.0] = true;
            }
            Op::AddBias(x, b) => {
                accumulate(&mut grads[x.0], g.data(), 1.0);
                let last = self.value(*b).len();
                for (i, gu) in g.data().iter().enumerate() {
                    grads[b.0].data[i % last] += gu;
                }
                reached[x.0] = true;
                reached[b.0] = true;
            }
            Op::MatMul(a, b) => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let gv = g.data();
                // dA = G · Bᵀ
                let da = &mut grads[a.0].data;
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gv[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] += acc;
                    }
                }
                // dB = Aᵀ · G
                let db = &mut grads[b.0].data;
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += av[i * k + p] * gv[i * n + j];
                        }
                        db[p * n + j] += acc;
                    }
                }
                reached[a.0] = true;
                reached[b.0] = true;
            }
            Op::Conv2d {
                input,
                kernel,
                padding,
            } => {
                let si = self.value(*input).shape().to_vec();
                let sk = self.value(*kernel).shape().to_vec();
                let (n, h, w, ci) = (si[0], si[1], si[2], si[3]);
                let (kh, kw, co) = (sk[0], sk[1], sk[3]);
                let (oh, ow) = (h + 2 * padding - kh + 1, w + 2 * padding - kw + 1);
                let iv = self.value(*input).data();
                let kv = self.value(*kernel).data();
                let gv = g.data();
                let p = *padding;
                {
                    let dinput = &mut grads[input.0].data;
                    for b in 0..n {
                        for y in 0..oh {
                            for x in 0..ow {
                                for dy in 0..kh {
                                    let iy = match (y + dy).checked_sub(p) {
                                        Some(iy) if iy < h => iy,
                                        _ => continue,
                                    };
                                    for dx in 0..kw {
                                        let ix = match (x + dx).checked_sub(p) {
                                            Some(ix) if ix < w => ix,
                                            _ => continue,
                                        };
                                        let ibase = ((b * h + iy) * w + ix) * ci;
                                        let kbase = (dy * kw + dx) * ci;
                                        let obase = ((b * oh + y) * ow + x) * co;
                                        for c in 0..ci {
                                            let mut acc = 0.0;
                                            for f in 0..co {
                                                acc += gv[obase + f] * kv[(kbase + c) * co + f];
                                            }
                                            dinput[ibase + c] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let dkernel = &mut grads[kernel.0].data;
                    for b in 0..n {
                        for y in 0..oh {
                            for x in 0..ow {
                                for dy in 0..kh {
                                    let iy = match (y + dy).checked_sub(p) {
                                        Some(iy) if iy < h => iy,
                                        _ => continue,
                                    };
                                    for dx in 0..kw {
                                        let ix = match (x + dx).checked_sub(p) {
                                            Some(ix) if ix < w => ix,
                                            _ => continue,
                                        };
                                        let ibase = ((b * h + iy) * w + ix) * ci;
                                        let kbase = (dy * kw + dx) * ci;
                                        let obase = ((b * oh + y) * ow + x) * co;
                                        for c in 0..ci {
                                            let xv = iv[ibase + c];
                                            for f in 0..co {
                                                dkernel[(kbase + c) * co + f] += xv * gv[obase + f];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                reached[input.0] = true;
                reached[kernel.0] = true;
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                for (slot, (gu, x)) in grads[a.0].data.iter_mut().zip(g.data().iter().zip(av)) {
                    if *x > 0.0 {
                        *slot += gu;
                    }
                }
                reached[a.0] = true;
            }
            Op::LogSumExp(a) => {
                let k = *self.value(*a).shape().last().unwrap();
                let av = self.value(*a).data();
                let lse = node.value.data();
                let da = &mut grads[a.0].data;
                for (r, gu) in g.data().iter().enumerate() {
                    let row = &av[r * k..(r + 1) * k];
                    for (j, &x) in row.iter().enumerate() {
                        da[r * k + j] += gu * libm::exp(x - lse[r]);
                    }
                }
                reached[a.0] = true;
            }
            Op::Gather(a, indices) => {
                let cols = self.value(*a).shape()[1];
                let da = &mut grads[a.0].data;
                for (i, (&j, gu)) in indices.iter().zip(g.data()).enumerate() {
                    da[i * cols + j] += gu;
                }
                reached[a.0] = true;
            }
            Op::Sum(a) => {
                let gu = g.data()[0];
                for slot in grads[a.0].data.iter_mut() {
                    *slot += gu;
                }
                reached[a.0] = true;
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let gu = g.data()[0] / n;
                for slot in grads[a.0].data.iter_mut() {
                    *slot += gu;
                }
                reached[a.0] = true;
            }
            Op::PowConst(a, c) => {
                // c = 0 is the constant 1: zero slope. A zero base with c < 1
                // also takes zero slope, so focal at p = 1 stays finite.
                if *c != 0.0 {
                    let av = self.value(*a).data();
                    for (slot, (gu, &x)) in grads[a.0].data.iter_mut().zip(g.data().iter().zip(av))
                    {
                        if x == 0.0 && *c < 1.0 {
                            continue;
                        }
                        *slot += gu * c * libm::pow(x, c - 1.0);
                    }
                }
                reached[a.0] = true;
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                for (slot, (gu, x)) in grads[a.0].data.iter_mut().zip(g.data().iter().zip(av)) {
                    *slot += gu / x;
                }
                reached[a.0] = true;
            }
            Op::Exp(a) => {
                let ev = node.value.data();
                for (slot, (gu, y)) in grads[a.0].data.iter_mut().zip(g.data().iter().zip(ev)) {
                    *slot += gu * y;
                }
                reached[a.0] = true;
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], g.data(), 1.0);
                reached[a.0] = true;
            }
        }
    }
}

/// Numerically safe log Σ exp of one row via max subtraction.
fn lse_row(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = row.iter().map(|&x| libm::exp(x - m)).sum();
    m + libm::log(s)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn accumulate(dst: &mut Tensor, src: &[f64], scale: f64) {
    for (slot, v) in dst.data.iter_mut().zip(src) {
        *slot += v * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        tape.leaf(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).is_err());
        assert_eq!(Tensor::scalar(3.0).scalar_value(), Some(3.0));
        assert_eq!(Tensor::zeros(vec![3, 4]).len(), 12);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let eye = leaf(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let out = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![3], vec![-1.0, 0.0, 2.0]);
        let out = tape.relu(a);
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_sum_exp_uniform_logits() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![4], vec![0.0; 4]);
        let out = tape.log_sum_exp(a).unwrap();
        let got = tape.value(out).scalar_value().unwrap();
        assert!(
            (got - 4.0f64.ln()).abs() < 1e-12,
            "lse of uniform logits: {got}"
        );
    }

    #[test]
    fn log_sum_exp_survives_huge_logits() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2], vec![1000.0, 999.0]);
        let out = tape.log_sum_exp(a).unwrap();
        let got = tape.value(out).scalar_value().unwrap();
        assert!((got - (1000.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![1.0, 2.0, 3.0]);
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_constant_gives_zeros() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let c = leaf(&mut tape, vec![], vec![7.0]);
        let grads = tape.backward(c).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0]);
        assert_eq!(grads.get(x).shape(), &[2]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_accumulates_over_copies() {
        // d(sum of k copies of f(x))/dx = k · df/dx with f = x∘x.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.5, -0.5]);
        let k = 4;
        let mut total = None;
        for _ in 0..k {
            let sq = tape.mul(x, x).unwrap();
            let s = tape.sum(sq);
            total = Some(match total {
                None => s,
                Some(prev) => tape.add(prev, s).unwrap(),
            });
        }
        let grads = tape.backward(total.unwrap()).unwrap();
        assert_eq!(grads.get(x).data(), &[k as f64 * 3.0, -(k as f64)]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let b = leaf(&mut tape, vec![3], vec![1.0, 2.0, 3.0]);
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("add") && msg.contains('2') && msg.contains('3'),
            "{msg}"
        );
    }

    #[test]
    fn gather_selects_per_row() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = tape.gather(a, &[2, 0]).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 4.0]);
        let root = tape.sum(out);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(a).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(tape.gather(a, &[0, 3]).is_err());
        assert!(tape.gather(a, &[0]).is_err());
    }

    #[test]
    fn pow_zero_exponent_is_constant_one() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![0.0, 0.5, 2.0]);
        let p = tape.pow_const(x, 0.0);
        assert_eq!(tape.value(p).data(), &[1.0, 1.0, 1.0]);
        let root = tape.sum(p);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = leaf(&mut tape, vec![4], vec![0.3, -1.2, 2.2, 0.7]);
            let e = tape.exp(x);
            let r = tape.relu(x);
            let m = tape.mul(e, r).unwrap();
            let root = tape.mean(m).unwrap();
            let grads = tape.backward(root).unwrap();
            grads.get(x).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a, b,
            "identical inputs must give bitwise-identical gradients"
        );
    }

    #[test]
    fn select_rows_copies_subsets() {
        let t = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert!(t.select_rows(&[3]).is_err());
    }
}
