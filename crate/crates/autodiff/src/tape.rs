//! The recording tape and its operation set.
//!
//! A [`Tape`] owns every node created during one forward pass. Nodes are
//! appended in execution order, so inputs always precede the operations
//! that consume them and the reverse sweep in [`Tape::backward`] visits
//! each recorded operation exactly once, accumulating (never overwriting)
//! gradients. A tape is single-threaded by construction; run one tape per
//! worker for parallel evaluation.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Handle to a tensor stored on a tape.
///
/// The shape is cached in the handle so model code can do shape
/// arithmetic without borrowing the tape.
#[derive(Debug, Clone)]
pub struct Var {
    idx: usize,
    shape: Vec<usize>,
}

impl Var {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

enum OpRec {
    Matmul { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { a: usize, c: Real, out: usize },
    Concat { inputs: Vec<usize>, axis: usize, out: usize },
    Slice { a: usize, axis: usize, start: usize, out: usize },
    Reshape { a: usize, out: usize },
    Transpose { a: usize, out: usize },
    Sum { a: usize, axis: Option<usize>, out: usize },
    Mean { a: usize, axis: Option<usize>, out: usize },
    Sigmoid { a: usize, out: usize },
    Softplus { a: usize, out: usize },
    Tanh { a: usize, out: usize },
    Relu { a: usize, out: usize },
    Exp { a: usize, out: usize },
    Log { a: usize, out: usize },
    Softmax { a: usize, axis: usize, out: usize },
    GroupNorm { a: usize, gamma: usize, beta: usize, groups: usize, eps: Real, out: usize },
    SmoothL1 { pred: usize, target: usize, beta: Real, out: usize },
    GaussianSample { mu: usize, logvar: usize, noise: usize, out: usize },
}

struct TapeInner {
    shapes: Vec<Vec<usize>>,
    values: Vec<Arc<Vec<Real>>>,
    grads: Vec<Option<Vec<Real>>>,
    ops: Vec<OpRec>,
    done: bool,
}

/// Records a forward computation and replays it in reverse for gradients.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                shapes: Vec::new(),
                values: Vec::new(),
                grads: Vec::new(),
                ops: Vec::new(),
                done: false,
            }),
        }
    }

    /// Places a tensor on the tape as a leaf node.
    ///
    /// Leaves with `requires_grad` get a zero-initialized gradient buffer
    /// that [`Tape::backward`] accumulates into.
    pub fn leaf(&self, t: Tensor, requires_grad: bool) -> Var {
        let (shape, data) = t.into_shared_parts();
        let mut inner = self.inner.borrow_mut();
        let idx = inner.shapes.len();
        let grad = requires_grad.then(|| vec![0.0; data.len()]);
        inner.shapes.push(shape.clone());
        inner.values.push(data);
        inner.grads.push(grad);
        Var { idx, shape }
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// A node's current value (shared, no copy).
    pub fn value(&self, v: &Var) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_shared(inner.shapes[v.idx].clone(), inner.values[v.idx].clone())
    }

    /// Gradient accumulated at a node, if it required one.
    pub fn grad(&self, v: &Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        inner.grads[v.idx].as_ref().map(|g| {
            Tensor::from_vec(inner.shapes[v.idx].clone(), g.clone())
                .expect("grad buffer matches node shape")
        })
    }

    /// Adds a node's gradient into `out` without allocating. Returns
    /// false (leaving `out` untouched) when the node carries no
    /// gradient buffer.
    pub fn grad_into(&self, v: &Var, out: &mut [Real]) -> bool {
        let inner = self.inner.borrow();
        match inner.grads[v.idx].as_ref() {
            Some(g) => {
                for (d, s) in out.iter_mut().zip(g) {
                    *d += s;
                }
                true
            }
            None => false,
        }
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<Real>,
        requires_grad: bool,
        op: impl FnOnce(usize) -> OpRec,
    ) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        if inner.done {
            return Err(Error::TapeConsumed);
        }
        let idx = inner.shapes.len();
        let grad = requires_grad.then(|| vec![0.0; value.len()]);
        inner.shapes.push(shape.clone());
        inner.values.push(Arc::new(value));
        inner.grads.push(grad);
        if requires_grad {
            let rec = op(idx);
            inner.ops.push(rec);
        }
        Ok(Var { idx, shape })
    }

    fn requires(&self, v: &Var) -> bool {
        self.inner.borrow().grads[v.idx].is_some()
    }

    fn with_value<R>(&self, v: &Var, f: impl FnOnce(&[Real]) -> R) -> R {
        let inner = self.inner.borrow();
        f(&inner.values[v.idx])
    }

    // ---- primitive operations -------------------------------------------

    /// Dense 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let value = {
            let inner = self.inner.borrow();
            matmul_kernel(&inner.values[a.idx], &inner.values[b.idx], m, k, n)
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(vec![m, n], value, rg, |out| OpRec::Matmul { a: a.idx, b: b.idx, out })
    }

    fn binary(
        &self,
        op_name: &'static str,
        a: &Var,
        b: &Var,
        f: impl Fn(Real, Real) -> Real,
        rec: impl FnOnce(usize) -> OpRec,
    ) -> Result<Var> {
        if !suffix_broadcastable(&a.shape, &b.shape) {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let value = {
            let inner = self.inner.borrow();
            let av = &inner.values[a.idx];
            let bv = &inner.values[b.idx];
            let mut out = Vec::with_capacity(av.len());
            for chunk in av.chunks(bv.len()) {
                out.extend(chunk.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)));
            }
            out
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(a.shape.clone(), value, rg, rec)
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |out| OpRec::Add { a: a.idx, b: b.idx, out })
    }

    /// Elementwise difference; `b` may broadcast over leading axes of `a`.
    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |out| OpRec::Sub { a: a.idx, b: b.idx, out })
    }

    /// Elementwise (Hadamard) product; `b` may broadcast over leading axes.
    pub fn elementwise_mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("elementwise_mul", a, b, |x, y| x * y, |out| OpRec::Mul {
            a: a.idx,
            b: b.idx,
            out,
        })
    }

    /// Multiplies every element by a compile-time constant.
    pub fn scale(&self, a: &Var, c: Real) -> Result<Var> {
        let value = self.with_value(a, |av| av.iter().map(|&x| x * c).collect());
        let rg = self.requires(a);
        self.push(a.shape.clone(), value, rg, |out| OpRec::Scale { a: a.idx, c, out })
    }

    /// Concatenates tensors along `axis`; all other axes must agree.
    pub fn concat(&self, parts: &[&Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: "empty input list".into(),
            });
        }
        let first = parts[0];
        if axis >= first.ndim() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("axis {} out of range for shape {:?}", axis, first.shape),
            });
        }
        let mut axis_total = 0;
        for p in parts {
            if p.ndim() != first.ndim()
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner_len: usize = first.shape[axis + 1..].iter().product();

        let value = {
            let tape = self.inner.borrow();
            let mut out = vec![0.0; out_shape.iter().product()];
            let out_block = axis_total * inner_len;
            let mut offset = 0;
            for p in parts {
                let src = &tape.values[p.idx];
                let blk = p.shape[axis] * inner_len;
                for o in 0..outer {
                    let dst = o * out_block + offset;
                    out[dst..dst + blk].copy_from_slice(&src[o * blk..(o + 1) * blk]);
                }
                offset += blk;
            }
            out
        };
        let rg = parts.iter().any(|p| self.requires(p));
        let inputs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        self.push(out_shape, value, rg, |out| OpRec::Concat { inputs, axis, out })
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if axis >= a.ndim() || start + len > a.shape[axis] {
            return Err(Error::InvalidArgument {
                op: "slice",
                msg: format!(
                    "range {}..{} on axis {} of shape {:?}",
                    start,
                    start + len,
                    axis,
                    a.shape
                ),
            });
        }
        let mut out_shape = a.shape.clone();
        out_shape[axis] = len;
        let outer: usize = a.shape[..axis].iter().product();
        let inner_len: usize = a.shape[axis + 1..].iter().product();
        let src_block = a.shape[axis] * inner_len;
        let dst_block = len * inner_len;

        let value = self.with_value(a, |av| {
            let mut out = vec![0.0; outer * dst_block];
            for o in 0..outer {
                let src = o * src_block + start * inner_len;
                out[o * dst_block..(o + 1) * dst_block]
                    .copy_from_slice(&av[src..src + dst_block]);
            }
            out
        });
        let rg = self.requires(a);
        self.push(out_shape, value, rg, |out| OpRec::Slice { a: a.idx, axis, start, out })
    }

    /// Single row of a 2-D tensor as a `[1, n]` tensor.
    pub fn row(&self, a: &Var, i: usize) -> Result<Var> {
        self.slice(a, 0, i, 1)
    }

    /// Reinterprets the buffer under a new shape with equal element count.
    pub fn reshape(&self, a: &Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: a.shape.clone(),
                rhs: shape,
            });
        }
        let value = self.with_value(a, |av| av.to_vec());
        let rg = self.requires(a);
        self.push(shape, value, rg, |out| OpRec::Reshape { a: a.idx, out })
    }

    /// 2-D transpose.
    pub fn transpose(&self, a: &Var) -> Result<Var> {
        if a.ndim() != 2 {
            return Err(Error::InvalidArgument {
                op: "transpose",
                msg: format!("expected rank 2, got shape {:?}", a.shape),
            });
        }
        let (m, n) = (a.shape[0], a.shape[1]);
        let value = self.with_value(a, |av| transpose_kernel(av, m, n));
        let rg = self.requires(a);
        self.push(vec![n, m], value, rg, |out| OpRec::Transpose { a: a.idx, out })
    }

    fn reduce(
        &self,
        op_name: &'static str,
        a: &Var,
        axis: Option<usize>,
        mean: bool,
    ) -> Result<Var> {
        let (out_shape, value) = match axis {
            None => {
                let total: Real = self.with_value(a, |av| av.iter().sum());
                let v = if mean { total / a.numel() as Real } else { total };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= a.ndim() {
                    return Err(Error::InvalidArgument {
                        op: op_name,
                        msg: format!("axis {} out of range for shape {:?}", ax, a.shape),
                    });
                }
                let outer: usize = a.shape[..ax].iter().product();
                let axis_len = a.shape[ax];
                let inner_len: usize = a.shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner_len];
                self.with_value(a, |av| {
                    for o in 0..outer {
                        for k in 0..axis_len {
                            let src = (o * axis_len + k) * inner_len;
                            for i in 0..inner_len {
                                out[o * inner_len + i] += av[src + i];
                            }
                        }
                    }
                });
                if mean {
                    let inv = 1.0 / axis_len as Real;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut shape: Vec<usize> = a.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                (shape, out)
            }
        };
        let rg = self.requires(a);
        if mean {
            self.push(out_shape, value, rg, |out| OpRec::Mean { a: a.idx, axis, out })
        } else {
            self.push(out_shape, value, rg, |out| OpRec::Sum { a: a.idx, axis, out })
        }
    }

    /// Sum along one axis (the axis is removed from the shape).
    pub fn sum_axis(&self, a: &Var, axis: usize) -> Result<Var> {
        self.reduce("sum", a, Some(axis), false)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&self, a: &Var) -> Result<Var> {
        self.reduce("sum", a, None, false)
    }

    /// Mean along one axis (the axis is removed from the shape).
    pub fn mean_axis(&self, a: &Var, axis: usize) -> Result<Var> {
        self.reduce("mean", a, Some(axis), true)
    }

    /// Mean of every element, shape `[1]`.
    pub fn mean_all(&self, a: &Var) -> Result<Var> {
        self.reduce("mean", a, None, true)
    }

    fn unary(
        &self,
        a: &Var,
        f: impl Fn(Real) -> Real,
        rec: impl FnOnce(usize) -> OpRec,
    ) -> Result<Var> {
        let value = self.with_value(a, |av| av.iter().map(|&x| f(x)).collect());
        let rg = self.requires(a);
        self.push(a.shape.clone(), value, rg, rec)
    }

    pub fn sigmoid(&self, a: &Var) -> Result<Var> {
        self.unary(a, sigmoid_scalar, |out| OpRec::Sigmoid { a: a.idx, out })
    }

    pub fn softplus(&self, a: &Var) -> Result<Var> {
        self.unary(a, softplus_scalar, |out| OpRec::Softplus { a: a.idx, out })
    }

    pub fn tanh(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), |out| OpRec::Tanh { a: a.idx, out })
    }

    pub fn relu(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), |out| OpRec::Relu { a: a.idx, out })
    }

    pub fn exp(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), |out| OpRec::Exp { a: a.idx, out })
    }

    /// Natural logarithm.
    pub fn log(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| x.ln(), |out| OpRec::Log { a: a.idx, out })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, a: &Var, axis: usize) -> Result<Var> {
        if axis >= a.ndim() {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("axis {} out of range for shape {:?}", axis, a.shape),
            });
        }
        let lanes = LaneIter::new(&a.shape, axis);
        let value = self.with_value(a, |av| {
            let mut out = vec![0.0; av.len()];
            lanes.for_each(|lane| {
                let max = lane.iter().map(|&i| av[i]).fold(Real::NEG_INFINITY, Real::max);
                let mut denom = 0.0;
                for &i in &lane {
                    let e = (av[i] - max).exp();
                    out[i] = e;
                    denom += e;
                }
                for &i in &lane {
                    out[i] /= denom;
                }
            });
            out
        });
        let rg = self.requires(a);
        self.push(a.shape.clone(), value, rg, |out| OpRec::Softmax { a: a.idx, axis, out })
    }

    /// Group normalization over the last (channel) axis.
    ///
    /// Channels are split into `groups` equal groups; each group of each
    /// leading-index row is normalized to zero mean and unit variance, then
    /// scaled by `gamma` and shifted by `beta` (both shape `[channels]`).
    pub fn group_norm(
        &self,
        a: &Var,
        gamma: &Var,
        beta: &Var,
        groups: usize,
        eps: Real,
    ) -> Result<Var> {
        let channels = *a.shape.last().ok_or(Error::InvalidArgument {
            op: "group_norm",
            msg: "rank-0 input".into(),
        })?;
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidArgument {
                op: "group_norm",
                msg: format!("{} channels not divisible by {} groups", channels, groups),
            });
        }
        if gamma.shape != [channels] || beta.shape != [channels] {
            return Err(Error::ShapeMismatch {
                op: "group_norm",
                lhs: vec![channels],
                rhs: gamma.shape.clone(),
            });
        }
        let value = {
            let inner = self.inner.borrow();
            group_norm_forward(
                &inner.values[a.idx],
                &inner.values[gamma.idx],
                &inner.values[beta.idx],
                channels,
                groups,
                eps,
            )
        };
        let rg = self.requires(a) || self.requires(gamma) || self.requires(beta);
        self.push(a.shape.clone(), value, rg, |out| OpRec::GroupNorm {
            a: a.idx,
            gamma: gamma.idx,
            beta: beta.idx,
            groups,
            eps,
            out,
        })
    }

    /// Elementwise smooth-L1 (Huber) penalty of `pred - target`.
    ///
    /// `0.5 d^2 / beta` inside `|d| < beta`, `|d| - 0.5 beta` outside.
    pub fn smooth_l1(&self, pred: &Var, target: &Var, beta: Real) -> Result<Var> {
        if pred.shape != target.shape {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                lhs: pred.shape.clone(),
                rhs: target.shape.clone(),
            });
        }
        if beta <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "smooth_l1",
                msg: format!("beta must be positive, got {}", beta),
            });
        }
        let value = {
            let inner = self.inner.borrow();
            inner.values[pred.idx]
                .iter()
                .zip(inner.values[target.idx].iter())
                .map(|(&p, &t)| {
                    let d = p - t;
                    if d.abs() < beta {
                        0.5 * d * d / beta
                    } else {
                        d.abs() - 0.5 * beta
                    }
                })
                .collect()
        };
        let rg = self.requires(pred) || self.requires(target);
        self.push(pred.shape.clone(), value, rg, |out| OpRec::SmoothL1 {
            pred: pred.idx,
            target: target.idx,
            beta,
            out,
        })
    }

    /// Reparameterized Gaussian sample `mu + exp(logvar/2) * noise`.
    ///
    /// The noise tensor is an explicit input so sampling is deterministic
    /// under the caller's seed; gradients flow through `mu` and `logvar`
    /// only. With zero noise the output equals `mu` exactly.
    pub fn gaussian_sample(&self, mu: &Var, logvar: &Var, noise: &Var) -> Result<Var> {
        if mu.shape != logvar.shape || mu.shape != noise.shape {
            return Err(Error::ShapeMismatch {
                op: "gaussian_sample",
                lhs: mu.shape.clone(),
                rhs: if mu.shape != logvar.shape {
                    logvar.shape.clone()
                } else {
                    noise.shape.clone()
                },
            });
        }
        let value = {
            let inner = self.inner.borrow();
            let mv = &inner.values[mu.idx];
            let lv = &inner.values[logvar.idx];
            let nv = &inner.values[noise.idx];
            mv.iter()
                .zip(lv.iter())
                .zip(nv.iter())
                .map(|((&m, &l), &n)| m + (0.5 * l).exp() * n)
                .collect()
        };
        let rg = self.requires(mu) || self.requires(logvar);
        self.push(mu.shape.clone(), value, rg, |out| OpRec::GaussianSample {
            mu: mu.idx,
            logvar: logvar.idx,
            noise: noise.idx,
            out,
        })
    }

    // ---- backward --------------------------------------------------------

    /// Backpropagates from a scalar loss, accumulating into every leaf
    /// gradient buffer. The recorded operation list is consumed; further
    /// recording on this tape is an error.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.done {
            return Err(Error::TapeConsumed);
        }
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape.clone()));
        }
        inner.done = true;
        if let Some(g) = inner.grads[loss.idx].as_mut() {
            g[0] = 1.0;
        }
        let ops = std::mem::take(&mut inner.ops);
        let TapeInner { shapes, values, grads, .. } = &mut *inner;
        for op in ops.iter().rev() {
            apply_backward(op, shapes, values, grads);
        }
        Ok(())
    }
}

// ---- kernels ---------------------------------------------------------------

fn suffix_broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

pub(crate) fn sigmoid_scalar(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_scalar(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matmul_kernel(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

fn transpose_kernel(a: &[Real], m: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn group_norm_forward(
    x: &[Real],
    gamma: &[Real],
    beta: &[Real],
    channels: usize,
    groups: usize,
    eps: Real,
) -> Vec<Real> {
    let gs = channels / groups;
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks(channels).zip(out.chunks_mut(channels)) {
        for g in 0..groups {
            let xs = &row[g * gs..(g + 1) * gs];
            let mean = xs.iter().sum::<Real>() / gs as Real;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / gs as Real;
            let inv = 1.0 / (var + eps).sqrt();
            for (c, &v) in xs.iter().enumerate() {
                let ch = g * gs + c;
                orow[ch] = gamma[ch] * (v - mean) * inv + beta[ch];
            }
        }
    }
    out
}

/// Iterates index sets that vary along one axis with all others fixed.
struct LaneIter {
    outer: usize,
    axis_len: usize,
    inner: usize,
}

impl LaneIter {
    fn new(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            axis_len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    fn for_each(&self, mut f: impl FnMut(Vec<usize>)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                let lane: Vec<usize> = (0..self.axis_len)
                    .map(|k| (o * self.axis_len + k) * self.inner + i)
                    .collect();
                f(lane);
            }
        }
    }
}

/// Adds `g` into the gradient buffer of node `idx` if it requires grad.
fn accumulate(grads: &mut [Option<Vec<Real>>], idx: usize, g: &[Real]) {
    if let Some(buf) = grads[idx].as_mut() {
        for (d, &s) in buf.iter_mut().zip(g) {
            *d += s;
        }
    }
}

/// Adds a suffix-broadcast gradient back into the smaller operand.
fn accumulate_reduced(grads: &mut [Option<Vec<Real>>], idx: usize, g: &[Real], b_len: usize) {
    if let Some(buf) = grads[idx].as_mut() {
        for chunk in g.chunks(b_len) {
            for (d, &s) in buf.iter_mut().zip(chunk) {
                *d += s;
            }
        }
    }
}

fn apply_backward(
    op: &OpRec,
    shapes: &[Vec<usize>],
    values: &[Arc<Vec<Real>>],
    grads: &mut [Option<Vec<Real>>],
) {
    // An op is only recorded when some input requires grad, and outputs
    // always allocate a buffer in that case, so grads[out] is present.
    match *op {
        OpRec::Matmul { a, b, out } => {
            let g = grads[out].take().expect("output grad present");
            let (m, k) = (shapes[a][0], shapes[a][1]);
            let n = shapes[b][1];
            if let Some(ga) = grads[a].as_mut() {
                // dA[i,l] += sum_j g[i,j] * B[l,j]
                let bv = &values[b];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let garow = &mut ga[i * k..(i + 1) * k];
                    for (l, gav) in garow.iter_mut().enumerate() {
                        let brow = &bv[l * n..(l + 1) * n];
                        let mut acc = 0.0;
                        for (gv, bvv) in grow.iter().zip(brow) {
                            acc += gv * bvv;
                        }
                        *gav += acc;
                    }
                }
            }
            if let Some(gb) = grads[b].as_mut() {
                // dB[l,j] += sum_i A[i,l] * g[i,j]
                let av = &values[a];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &av[i * k..(i + 1) * k];
                    for (l, &avv) in arow.iter().enumerate() {
                        if avv != 0.0 {
                            let gbrow = &mut gb[l * n..(l + 1) * n];
                            for (gbv, &gv) in gbrow.iter_mut().zip(grow) {
                                *gbv += avv * gv;
                            }
                        }
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Add { a, b, out } => {
            let g = grads[out].take().expect("output grad present");
            accumulate(grads, a, &g);
            let b_len = values[b].len();
            accumulate_reduced(grads, b, &g, b_len);
            grads[out] = Some(g);
        }
        OpRec::Sub { a, b, out } => {
            let g = grads[out].take().expect("output grad present");
            accumulate(grads, a, &g);
            if let Some(buf) = grads[b].as_mut() {
                for (i, chunk) in g.chunks(values[b].len()).enumerate() {
                    let _ = i;
                    for (d, &s) in buf.iter_mut().zip(chunk) {
                        *d -= s;
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Mul { a, b, out } => {
            let g = grads[out].take().expect("output grad present");
            let bv = &values[b];
            if let Some(ga) = grads[a].as_mut() {
                for (chunk_i, chunk) in g.chunks(bv.len()).enumerate() {
                    let base = chunk_i * bv.len();
                    for (j, (&gv, &bvv)) in chunk.iter().zip(bv.iter()).enumerate() {
                        ga[base + j] += gv * bvv;
                    }
                }
            }
            if let Some(gb) = grads[b].as_mut() {
                let av = &values[a];
                for (chunk, achunk) in g.chunks(bv.len()).zip(av.chunks(bv.len())) {
                    for ((d, &gv), &avv) in gb.iter_mut().zip(chunk).zip(achunk) {
                        *d += gv * avv;
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Scale { a, c, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for (d, &s) in ga.iter_mut().zip(&g) {
                    *d += c * s;
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Concat { ref inputs, axis, out } => {
            let g = grads[out].take().expect("output grad present");
            let out_shape = &shapes[out];
            let outer: usize = out_shape[..axis].iter().product();
            let inner_len: usize = out_shape[axis + 1..].iter().product();
            let out_block = out_shape[axis] * inner_len;
            let mut offset = 0;
            for &inp in inputs {
                let blk = shapes[inp][axis] * inner_len;
                if let Some(gi) = grads[inp].as_mut() {
                    for o in 0..outer {
                        let src = o * out_block + offset;
                        for (d, &s) in gi[o * blk..(o + 1) * blk].iter_mut().zip(&g[src..src + blk])
                        {
                            *d += s;
                        }
                    }
                }
                offset += blk;
            }
            grads[out] = Some(g);
        }
        OpRec::Slice { a, axis, start, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                let a_shape = &shapes[a];
                let len = shapes[out][axis];
                let outer: usize = a_shape[..axis].iter().product();
                let inner_len: usize = a_shape[axis + 1..].iter().product();
                let src_block = a_shape[axis] * inner_len;
                let dst_block = len * inner_len;
                for o in 0..outer {
                    let dst = o * src_block + start * inner_len;
                    for (d, &s) in ga[dst..dst + dst_block]
                        .iter_mut()
                        .zip(&g[o * dst_block..(o + 1) * dst_block])
                    {
                        *d += s;
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Reshape { a, out } => {
            let g = grads[out].take().expect("output grad present");
            accumulate(grads, a, &g);
            grads[out] = Some(g);
        }
        OpRec::Transpose { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                let (n, m) = (shapes[out][0], shapes[out][1]);
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] += g[i * m + j];
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Sum { a, axis, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                match axis {
                    None => {
                        let gv = g[0];
                        ga.iter_mut().for_each(|d| *d += gv);
                    }
                    Some(ax) => {
                        let a_shape = &shapes[a];
                        let outer: usize = a_shape[..ax].iter().product();
                        let axis_len = a_shape[ax];
                        let inner_len: usize = a_shape[ax + 1..].iter().product();
                        for o in 0..outer {
                            for k in 0..axis_len {
                                let dst = (o * axis_len + k) * inner_len;
                                for i in 0..inner_len {
                                    ga[dst + i] += g[o * inner_len + i];
                                }
                            }
                        }
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Mean { a, axis, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                match axis {
                    None => {
                        let gv = g[0] / values[a].len() as Real;
                        ga.iter_mut().for_each(|d| *d += gv);
                    }
                    Some(ax) => {
                        let a_shape = &shapes[a];
                        let outer: usize = a_shape[..ax].iter().product();
                        let axis_len = a_shape[ax];
                        let inner_len: usize = a_shape[ax + 1..].iter().product();
                        let inv = 1.0 / axis_len as Real;
                        for o in 0..outer {
                            for k in 0..axis_len {
                                let dst = (o * axis_len + k) * inner_len;
                                for i in 0..inner_len {
                                    ga[dst + i] += g[o * inner_len + i] * inv;
                                }
                            }
                        }
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Sigmoid { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &y) in ga.iter_mut().zip(&g).zip(values[out].iter()) {
                    *d += gv * y * (1.0 - y);
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Softplus { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &x) in ga.iter_mut().zip(&g).zip(values[a].iter()) {
                    *d += gv * sigmoid_scalar(x);
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Tanh { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &y) in ga.iter_mut().zip(&g).zip(values[out].iter()) {
                    *d += gv * (1.0 - y * y);
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Relu { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &x) in ga.iter_mut().zip(&g).zip(values[a].iter()) {
                    if x > 0.0 {
                        *d += gv;
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Exp { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &y) in ga.iter_mut().zip(&g).zip(values[out].iter()) {
                    *d += gv * y;
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Log { a, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                for ((d, &gv), &x) in ga.iter_mut().zip(&g).zip(values[a].iter()) {
                    *d += gv / x;
                }
            }
            grads[out] = Some(g);
        }
        OpRec::Softmax { a, axis, out } => {
            let g = grads[out].take().expect("output grad present");
            if let Some(ga) = grads[a].as_mut() {
                let y = &values[out];
                LaneIter::new(&shapes[a], axis).for_each(|lane| {
                    let dot: Real = lane.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in &lane {
                        ga[i] += y[i] * (g[i] - dot);
                    }
                });
            }
            grads[out] = Some(g);
        }
        OpRec::GroupNorm { a, gamma, beta, groups, eps, out } => {
            let g = grads[out].take().expect("output grad present");
            let channels = *shapes[a].last().expect("group_norm input has channels");
            let gs = channels / groups;
            let x = &values[a];
            let gv = &values[gamma];
            let rows = x.len() / channels;
            // Recompute per-group statistics; cheaper than caching them.
            for r in 0..rows {
                let row = &x[r * channels..(r + 1) * channels];
                let grow = &g[r * channels..(r + 1) * channels];
                for grp in 0..groups {
                    let xs = &row[grp * gs..(grp + 1) * gs];
                    let mean = xs.iter().sum::<Real>() / gs as Real;
                    let var =
                        xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / gs as Real;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut mean_gh = 0.0;
                    let mut mean_ghy = 0.0;
                    for c in 0..gs {
                        let ch = grp * gs + c;
                        let yv = (xs[c] - mean) * inv;
                        let gh = grow[ch] * gv[ch];
                        mean_gh += gh;
                        mean_ghy += gh * yv;
                    }
                    mean_gh /= gs as Real;
                    mean_ghy /= gs as Real;
                    if let Some(ga) = grads[a].as_mut() {
                        for c in 0..gs {
                            let ch = grp * gs + c;
                            let yv = (xs[c] - mean) * inv;
                            let gh = grow[ch] * gv[ch];
                            ga[r * channels + ch] += inv * (gh - mean_gh - yv * mean_ghy);
                        }
                    }
                    if let Some(gg) = grads[gamma].as_mut() {
                        for c in 0..gs {
                            let ch = grp * gs + c;
                            let yv = (xs[c] - mean) * inv;
                            gg[ch] += grow[ch] * yv;
                        }
                    }
                    if let Some(gb) = grads[beta].as_mut() {
                        for c in 0..gs {
                            let ch = grp * gs + c;
                            gb[ch] += grow[ch];
                        }
                    }
                }
            }
            grads[out] = Some(g);
        }
        OpRec::SmoothL1 { pred, target, beta, out } => {
            let g = grads[out].take().expect("output grad present");
            let pv = &values[pred];
            let tv = &values[target];
            if let Some(gp) = grads[pred].as_mut() {
                for (i, (&p, &t)) in pv.iter().zip(tv.iter()).enumerate() {
                    let d = p - t;
                    let slope = if d.abs() < beta { d / beta } else { d.signum() };
                    gp[i] += g[i] * slope;
                }
            }
            if let Some(gt) = grads[target].as_mut() {
                for (i, (&p, &t)) in pv.iter().zip(tv.iter()).enumerate() {
                    let d = p - t;
                    let slope = if d.abs() < beta { d / beta } else { d.signum() };
                    gt[i] -= g[i] * slope;
                }
            }
            grads[out] = Some(g);
        }
        OpRec::GaussianSample { mu, logvar, noise, out } => {
            let g = grads[out].take().expect("output grad present");
            accumulate(grads, mu, &g);
            if let Some(gl) = grads[logvar].as_mut() {
                let lv = &values[logvar];
                let nv = &values[noise];
                for (i, (&l, &n)) in lv.iter().zip(nv.iter()).enumerate() {
                    gl[i] += g[i] * n * 0.5 * (0.5 * l).exp();
                }
            }
            grads[out] = Some(g);
        }
    }
}
