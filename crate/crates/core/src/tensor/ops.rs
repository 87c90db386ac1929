//! Differentiable primitive operations recorded on a [`Tape`].

use super::kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::tape::{Backward, Tape, Var};
use super::{strides_of, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Neg,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

// ---------------------------------------------------------------------------
// Broadcasting

/// Maps output flat indices to operand flat indices.
enum Bcast {
    Same,
    /// Operand shape is a suffix of the output shape.
    Suffix(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(out: &[usize], operand: &[usize]) -> Self {
        if out == operand {
            return Bcast::Same;
        }
        let pad = out.len() - operand.len();
        if out[pad..] == *operand {
            return Bcast::Suffix(operand.iter().product());
        }
        let mut padded = vec![1; pad];
        padded.extend_from_slice(operand);
        let op_strides = strides_of(&padded);
        let eff: Vec<usize> = padded
            .iter()
            .zip(&op_strides)
            .map(|(&d, &s)| if d == 1 { 0 } else { s })
            .collect();
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; out.len()];
        let mut off = 0usize;
        for _ in 0..total {
            map.push(off);
            for ax in (0..out.len()).rev() {
                idx[ax] += 1;
                off += eff[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                off -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline]
    fn idx(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(len) => i % len,
            Bcast::Map(m) => m[i],
        }
    }
}

/// Shape obtained by aligning dimensions from the right; size-1 dims stretch.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sums `g` (output-shaped) down to `shape` following the broadcast map.
fn unbroadcast<F: Scalar>(
    g: &Tensor<F>,
    shape: &[usize],
    scale: impl Fn(usize, F) -> F,
) -> Tensor<F> {
    let map = Bcast::new(g.shape(), shape);
    let n: usize = shape.iter().product();
    let mut out = vec![F::zero(); n];
    for (i, &gv) in g.data().iter().enumerate() {
        out[map.idx(i)] += scale(i, gv);
    }
    Tensor::from_parts(shape.to_vec(), out)
}

// ---------------------------------------------------------------------------
// Gradient rules

struct BinaryRule {
    kind: ElementwiseKind,
}

impl<F: Scalar> Backward<F> for BinaryRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ma = Bcast::new(g.shape(), a.shape());
        let mb = Bcast::new(g.shape(), b.shape());
        let (ad, bd) = (a.data(), b.data());
        let ga = needs[0].then(|| match self.kind {
            ElementwiseKind::Add | ElementwiseKind::Sub => unbroadcast(g, a.shape(), |_, gv| gv),
            ElementwiseKind::Mul => unbroadcast(g, a.shape(), |i, gv| gv * bd[mb.idx(i)]),
            ElementwiseKind::Div => unbroadcast(g, a.shape(), |i, gv| gv / bd[mb.idx(i)]),
            _ => unreachable!(),
        });
        let gb = needs[1].then(|| match self.kind {
            ElementwiseKind::Add => unbroadcast(g, b.shape(), |_, gv| gv),
            ElementwiseKind::Sub => unbroadcast(g, b.shape(), |_, gv| -gv),
            ElementwiseKind::Mul => unbroadcast(g, b.shape(), |i, gv| gv * ad[ma.idx(i)]),
            ElementwiseKind::Div => unbroadcast(g, b.shape(), |i, gv| {
                let bv = bd[mb.idx(i)];
                -gv * ad[ma.idx(i)] / (bv * bv)
            }),
            _ => unreachable!(),
        });
        vec![ga, gb]
    }
}

struct UnaryRule {
    kind: ElementwiseKind,
}

impl<F: Scalar> Backward<F> for UnaryRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let x = inputs[0].data();
        let y = out.data();
        let one = F::one();
        let data: Vec<F> = g
            .data()
            .iter()
            .enumerate()
            .map(|(i, &gv)| match self.kind {
                ElementwiseKind::Relu => {
                    if x[i] > F::zero() {
                        gv
                    } else {
                        F::zero()
                    }
                }
                ElementwiseKind::Sigmoid => gv * y[i] * (one - y[i]),
                ElementwiseKind::Tanh => gv * (one - y[i] * y[i]),
                ElementwiseKind::Exp => gv * y[i],
                ElementwiseKind::Log => gv / x[i],
                ElementwiseKind::Neg => -gv,
                _ => unreachable!(),
            })
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    }
}

struct AffineRule<F> {
    scale: F,
}

impl<F: Scalar> Backward<F> for AffineRule<F> {
    fn backward(
        &self,
        _inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        vec![Some(g.map(|v| v * self.scale))]
    }
}

struct MatmulRule {
    m: usize,
    k: usize,
    n: usize,
}

impl<F: Scalar> Backward<F> for MatmulRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = needs[0].then(|| {
            let mut d = vec![F::zero(); m * k];
            matmul_bt_acc(g.data(), inputs[1].data(), &mut d, m, k, n);
            Tensor::from_parts(vec![m, k], d)
        });
        let gb = needs[1].then(|| {
            let mut d = vec![F::zero(); k * n];
            matmul_at_acc(inputs[0].data(), g.data(), &mut d, m, k, n);
            Tensor::from_parts(vec![k, n], d)
        });
        vec![ga, gb]
    }
}

struct ReduceRule {
    kind: ReduceKind,
    outer: usize,
    dim: usize,
    inner: usize,
    argmax: Vec<usize>,
}

impl<F: Scalar> Backward<F> for ReduceRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (outer, dim, inner) = (self.outer, self.dim, self.inner);
        let mut d = vec![F::zero(); outer * dim * inner];
        let gd = g.data();
        match self.kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let scale = if self.kind == ReduceKind::Mean {
                    F::one() / F::lit(dim as f64)
                } else {
                    F::one()
                };
                for o in 0..outer {
                    for j in 0..dim {
                        for i in 0..inner {
                            d[(o * dim + j) * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
            }
            ReduceKind::Max => {
                for o in 0..outer {
                    for i in 0..inner {
                        let j = self.argmax[o * inner + i];
                        d[(o * dim + j) * inner + i] = gd[o * inner + i];
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), d))]
    }
}

struct ReshapeRule;

impl<F: Scalar> Backward<F> for ReshapeRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        vec![Some(
            g.reshape(inputs[0].shape()).expect("reshape gradient"),
        )]
    }
}

struct PermuteRule {
    inverse: Vec<usize>,
}

impl<F: Scalar> Backward<F> for PermuteRule {
    fn backward(
        &self,
        _inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        vec![Some(permute_data(g, &self.inverse))]
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl<F: Scalar> Backward<F> for SliceRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let shape = inputs[0].shape();
        let mut d = vec![F::zero(); inputs[0].len()];
        let mut dst_off = vec![0; shape.len()];
        dst_off[self.axis] = self.start;
        copy_region(
            g.data(),
            g.shape(),
            &vec![0; shape.len()],
            &mut d,
            shape,
            &dst_off,
            g.shape(),
        );
        vec![Some(Tensor::from_parts(shape.to_vec(), d))]
    }
}

struct ConcatRule {
    axis: usize,
}

impl<F: Scalar> Backward<F> for ConcatRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(t, &need)| {
                let mut src_off = vec![0; t.rank()];
                src_off[self.axis] = offset;
                offset += t.shape()[self.axis];
                need.then(|| {
                    let mut d = vec![F::zero(); t.len()];
                    copy_region(
                        g.data(),
                        g.shape(),
                        &src_off,
                        &mut d,
                        t.shape(),
                        &vec![0; t.rank()],
                        t.shape(),
                    );
                    Tensor::from_parts(t.shape().to_vec(), d)
                })
            })
            .collect()
    }
}

struct PadRule {
    before: Vec<usize>,
}

impl<F: Scalar> Backward<F> for PadRule {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let shape = inputs[0].shape();
        let mut d = vec![F::zero(); inputs[0].len()];
        copy_region(
            g.data(),
            g.shape(),
            &self.before,
            &mut d,
            shape,
            &vec![0; shape.len()],
            shape,
        );
        vec![Some(Tensor::from_parts(shape.to_vec(), d))]
    }
}

struct SoftmaxRule {
    outer: usize,
    dim: usize,
    inner: usize,
    log: bool,
}

impl<F: Scalar> Backward<F> for SoftmaxRule {
    fn backward(
        &self,
        _inputs: &[&Tensor<F>],
        out: &Tensor<F>,
        g: &Tensor<F>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<F>>> {
        let (outer, dim, inner) = (self.outer, self.dim, self.inner);
        let y = out.data();
        let gd = g.data();
        let mut d = vec![F::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * dim + j) * inner + i;
                if self.log {
                    let gsum: F = (0..dim).map(|j| gd[at(j)]).sum();
                    for j in 0..dim {
                        d[at(j)] = gd[at(j)] - y[at(j)].exp() * gsum;
                    }
                } else {
                    let dot: F = (0..dim).map(|j| gd[at(j)] * y[at(j)]).sum();
                    for j in 0..dim {
                        d[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(out.shape().to_vec(), d))]
    }
}

// ---------------------------------------------------------------------------
// Helpers

pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::AxisOutOfRange { axis, rank })
    } else {
        Ok(())
    }
}

fn permute_data<F: Scalar>(t: &Tensor<F>, axes: &[usize]) -> Tensor<F> {
    let in_strides = t.strides();
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = t.len();
    let src = t.data();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(src[off]);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

/// Copies a `region`-shaped block from `src` (starting at `src_off`) into
/// `dst` (starting at `dst_off`). Both buffers are row-major.
fn copy_region<F: Scalar>(
    src: &[F],
    src_shape: &[usize],
    src_off: &[usize],
    dst: &mut [F],
    dst_shape: &[usize],
    dst_off: &[usize],
    region: &[usize],
) {
    let rank = region.len();
    if rank == 0 {
        dst[0] = src[0];
        return;
    }
    let ss = strides_of(src_shape);
    let ds = strides_of(dst_shape);
    let row = region[rank - 1];
    let rows: usize = region[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    for _ in 0..rows {
        let mut s = src_off[rank - 1];
        let mut d = dst_off[rank - 1];
        for ax in 0..rank - 1 {
            s += (idx[ax] + src_off[ax]) * ss[ax];
            d += (idx[ax] + dst_off[ax]) * ds[ax];
        }
        dst[d..d + row].copy_from_slice(&src[s..s + row]);
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < region[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Tape API

impl<F: Scalar> Tape<F> {
    /// Applies an elementwise operation. Binary kinds require `b` and
    /// broadcast by aligning dimensions from the right.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        if kind.is_binary() {
            let b = b.ok_or(TensorError::ShapeMismatch {
                op: "elementwise",
                lhs: self.shape(a).to_vec(),
                rhs: Vec::new(),
            })?;
            self.binary(kind, a, b)
        } else {
            self.unary(kind, a)
        }
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape =
            broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| TensorError::ShapeMismatch {
                op: "elementwise",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })?;
        if kind == ElementwiseKind::Div && tb.data().iter().any(|&v| v == F::zero()) {
            return Err(TensorError::DomainError {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let ma = Bcast::new(&out_shape, ta.shape());
        let mb = Bcast::new(&out_shape, tb.shape());
        let (ad, bd) = (ta.data(), tb.data());
        let n: usize = out_shape.iter().product();
        let f: fn(F, F) -> F = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
            ElementwiseKind::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        let data: Vec<F> = match (&ma, &mb) {
            (Bcast::Same, Bcast::Same) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(ad[ma.idx(i)], bd[mb.idx(i)])).collect(),
        };
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.record(out, &[a, b], BinaryRule { kind }))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if kind == ElementwiseKind::Log && ta.data().iter().any(|&v| v <= F::zero()) {
            return Err(TensorError::DomainError {
                op: "log",
                detail: "logarithm of a non-positive value".into(),
            });
        }
        let f: fn(F) -> F = match kind {
            ElementwiseKind::Relu => |x| if x > F::zero() { x } else { F::zero() },
            ElementwiseKind::Sigmoid => sigmoid,
            ElementwiseKind::Tanh => |x| x.tanh(),
            ElementwiseKind::Exp => |x| x.exp(),
            ElementwiseKind::Log => |x| x.ln(),
            ElementwiseKind::Neg => |x| -x,
            _ => unreachable!(),
        };
        let out = ta.map(f);
        Ok(self.record(out, &[a], UnaryRule { kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Div, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Neg, a)
    }

    /// `scale * a + shift` with constant scalars.
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Result<Var> {
        let out = self.value(a).map(|x| scale * x + shift);
        Ok(self.record(out, &[a], AffineRule { scale }))
    }

    /// Rank-2 matrix product `(m×k)·(k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut d = vec![F::zero(); m * n];
        matmul_acc(ta.data(), tb.data(), &mut d, m, k, n);
        let out = Tensor::from_parts(vec![m, n], d);
        Ok(self.record(out, &[a, b], MatmulRule { m, k, n }))
    }

    /// Reduces along `axis` (removing it), or over every element when `axis` is `None`.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Option<usize>) -> Result<Var> {
        let ta = self.value(a);
        let (outer, dim, inner, out_shape) = match axis {
            None => (1, ta.len(), 1, Vec::new()),
            Some(ax) => {
                check_axis(ax, ta.rank())?;
                let (o, d, i) = split_axis(ta.shape(), ax);
                let mut s = ta.shape().to_vec();
                s.remove(ax);
                (o, d, i, s)
            }
        };
        let src = ta.data();
        let mut out = vec![F::zero(); outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for j in 0..dim {
                        let row = &src[(o * dim + j) * inner..(o * dim + j + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = F::lit(dim as f64);
                    out.iter_mut().for_each(|v| *v /= inv);
                }
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = src[o * dim * inner + i];
                        let mut best_j = 0;
                        for j in 1..dim {
                            let v = src[(o * dim + j) * inner + i];
                            if v > best {
                                best = v;
                                best_j = j;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = best_j;
                    }
                }
            }
        }
        let out = Tensor::from_parts(out_shape, out);
        Ok(self.record(
            out,
            &[a],
            ReduceRule {
                kind,
                outer,
                dim,
                inner,
                argmax,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    /// Argmax positions recorded by a `max` reduction along `axis` (recomputed
    /// from the input value; first occurrence wins).
    pub fn argmax(&self, a: Var, axis: usize) -> Result<Vec<usize>> {
        let ta = self.value(a);
        check_axis(axis, ta.rank())?;
        let (outer, dim, inner) = split_axis(ta.shape(), axis);
        let src = ta.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best_j = 0;
                for j in 1..dim {
                    if src[(o * dim + j) * inner + i] > src[(o * dim + best_j) * inner + i] {
                        best_j = j;
                    }
                }
                out.push(best_j);
            }
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.record(out, &[a], ReshapeRule))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let rank = ta.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                lhs: ta.shape().to_vec(),
                rhs: axes.to_vec(),
            });
        }
        for &ax in axes {
            check_axis(ax, rank)?;
            if std::mem::replace(&mut seen[ax], true) {
                return Err(TensorError::ShapeMismatch {
                    op: "permute",
                    lhs: ta.shape().to_vec(),
                    rhs: axes.to_vec(),
                });
            }
        }
        let mut inverse = vec![0; rank];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let out = permute_data(ta, axes);
        Ok(self.record(out, &[a], PermuteRule { inverse }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.value(a).rank();
        if rank < 2 {
            return Err(TensorError::AxisOutOfRange { axis: 1, rank });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    /// Keeps indices `start..end` of `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        check_axis(axis, ta.rank())?;
        if start >= end || end > ta.shape()[axis] {
            return Err(TensorError::BoundsError {
                op: "slice",
                detail: format!("range {start}..{end} on axis of size {}", ta.shape()[axis]),
            });
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = end - start;
        let mut off = vec![0; shape.len()];
        off[axis] = start;
        let mut d = vec![F::zero(); shape.iter().product()];
        copy_region(
            ta.data(),
            ta.shape(),
            &off,
            &mut d,
            &shape,
            &vec![0; shape.len()],
            &shape,
        );
        let out = Tensor::from_parts(shape, d);
        Ok(self.record(out, &[a], SliceRule { axis, start }))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::BoundsError {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.value(*first).shape().to_vec();
        check_axis(axis, base.len())?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let mut d = vec![F::zero(); shape.iter().product()];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let mut dst_off = vec![0; shape.len()];
            dst_off[axis] = offset;
            copy_region(
                t.data(),
                t.shape(),
                &vec![0; shape.len()],
                &mut d,
                &shape,
                &dst_off,
                t.shape(),
            );
            offset += t.shape()[axis];
        }
        let out = Tensor::from_parts(shape, d);
        Ok(self.record(out, parts, ConcatRule { axis }))
    }

    /// Zero-pads every axis by `(before, after)`.
    pub fn pad(&mut self, a: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let ta = self.value(a);
        if pads.len() != ta.rank() {
            return Err(TensorError::ShapeMismatch {
                op: "pad",
                lhs: ta.shape().to_vec(),
                rhs: vec![pads.len()],
            });
        }
        let shape: Vec<usize> = ta
            .shape()
            .iter()
            .zip(pads)
            .map(|(&d, &(b, e))| d + b + e)
            .collect();
        let before: Vec<usize> = pads.iter().map(|p| p.0).collect();
        let mut d = vec![F::zero(); shape.iter().product()];
        copy_region(
            ta.data(),
            ta.shape(),
            &vec![0; shape.len()],
            &mut d,
            &shape,
            &before,
            ta.shape(),
        );
        let out = Tensor::from_parts(shape, d);
        Ok(self.record(out, &[a], PadRule { before }))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, false)
    }

    /// `log(softmax(a))` along `axis` via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, true)
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, log: bool) -> Result<Var> {
        let ta = self.value(a);
        check_axis(axis, ta.rank())?;
        if !ta.is_finite() {
            return Err(TensorError::NonFiniteInput {
                op: if log { "log_softmax" } else { "softmax" },
            });
        }
        let (outer, dim, inner) = split_axis(ta.shape(), axis);
        let out = Tensor::from_parts(
            ta.shape().to_vec(),
            softmax_data(ta.data(), outer, dim, inner, log),
        );
        Ok(self.record(
            out,
            &[a],
            SoftmaxRule {
                outer,
                dim,
                inner,
                log,
            },
        ))
    }
}

pub(crate) fn softmax_data<F: Scalar>(
    src: &[F],
    outer: usize,
    dim: usize,
    inner: usize,
    log: bool,
) -> Vec<F> {
    let mut d = vec![F::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * dim + j) * inner + i;
            let max = (0..dim).map(|j| src[at(j)]).fold(F::neg_infinity(), F::max);
            let sum: F = (0..dim).map(|j| (src[at(j)] - max).exp()).sum();
            if log {
                let lse = sum.ln();
                for j in 0..dim {
                    d[at(j)] = src[at(j)] - max - lse;
                }
            } else {
                for j in 0..dim {
                    d[at(j)] = (src[at(j)] - max).exp() / sum;
                }
            }
        }
    }
    d
}
