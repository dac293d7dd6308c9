use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

use super::array::{matmul_raw, matmul_tn_raw, split_axis, transpose_raw, Tensor};
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// An operation with a hand-written backward rule, recorded on a tape like
/// any built-in op.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Vector-Jacobian product: one entry per input, `None` meaning "no
    /// gradient flows to this input".
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Silu,
    SiluDeriv,
    Sigmoid,
    Softplus,
    Exp,
    Reciprocal,
    Square,
    Abs,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Silu => "silu",
            Unary::SiluDeriv => "silu_deriv",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Reciprocal => "reciprocal",
            Unary::Square => "square",
            Unary::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Silu => x * sigmoid(x),
            Unary::SiluDeriv => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Reciprocal => 1.0 / x,
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
        }
    }

    /// Derivative evaluated at input `x` with forward output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::SiluDeriv => {
                let s = sigmoid(x);
                s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Reciprocal => -y * y,
            Unary::Square => 2.0 * x,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Gather(usize, Rc<[usize]>),
    Broadcast {
        input: usize,
        axis: usize,
        size: usize,
    },
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    MaxAxis(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    Unary(usize, Unary),
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
    },
    DwConv1d {
        input: usize,
        kernel: usize,
    },
    RowNorm(usize),
    Custom(Vec<usize>, Rc<dyn CustomOp>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather(..) => "gather",
            Op::Broadcast { .. } => "broadcast",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::Unary(_, u) => u.name(),
            Op::LayerNorm { .. } => "layer_norm",
            Op::DwConv1d { .. } => "dwconv1d",
            Op::RowNorm(..) => "row_norm",
            Op::Custom(_, op) => op.name(),
        }
    }

    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a, _)
            | Op::Gather(a, _)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::MaxAxis(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Unary(a, _)
            | Op::RowNorm(a) => vec![*a],
            Op::Slice { input, .. } | Op::Broadcast { input, .. } => vec![*input],
            Op::Concat(v, _) | Op::Custom(v, _) => v.clone(),
            Op::LayerNorm { input, gain, bias } => vec![*input, *gain, *bias],
            Op::DwConv1d { input, kernel } => vec![*input, *kernel],
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::AxisOutOfRange { axis, rank });
    }
    Ok(())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

/// Computes the forward value of `op` given the tensors it references.
pub(crate) fn forward<'a>(op: &Op, v: &dyn Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves have no forward rule"),
        Op::Add(a, b) => {
            let (a, b) = (v(*a), v(*b));
            same_shape("add", a, b)?;
            zip_with(a, b, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            let (a, b) = (v(*a), v(*b));
            same_shape("sub", a, b)?;
            zip_with(a, b, |x, y| x - y)
        }
        Op::Mul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            same_shape("mul", a, b)?;
            zip_with(a, b, |x, y| x * y)
        }
        Op::Scale(a, s) => v(*a).map(|x| x * s),
        Op::AddScalar(a, s) => v(*a).map(|x| x + s),
        Op::MatMul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Op::Transpose(a) => {
            let a = v(*a);
            if a.rank() < 2 {
                return Err(Error::AxisOutOfRange {
                    axis: 1,
                    rank: a.rank(),
                });
            }
            transpose_last2(a)
        }
        Op::Reshape(a, shape) => {
            let a = v(*a);
            let n: usize = shape.iter().product();
            if n != a.len() {
                return Err(Error::shape("reshape", a.shape(), shape));
            }
            Tensor::from_parts(shape.clone(), a.data().to_vec())
        }
        Op::Concat(inputs, axis) => {
            let ts: Vec<&Tensor> = inputs.iter().map(|&i| v(i)).collect();
            concat(&ts, *axis)?
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let a = v(*input);
            check_axis(*axis, a.rank())?;
            if start + len > a.dim(*axis) {
                return Err(Error::IndexOutOfRange {
                    index: start + len,
                    len: a.dim(*axis),
                });
            }
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * alen * inner + start * inner;
                data.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = *len;
            Tensor::from_parts(shape, data)
        }
        Op::Gather(a, idx) => {
            let a = v(*a);
            if a.rank() == 0 {
                return Err(Error::AxisOutOfRange { axis: 0, rank: 0 });
            }
            let rows = a.dim(0);
            let inner = a.len() / rows.max(1);
            let mut data = Vec::with_capacity(idx.len() * inner);
            for &i in idx.iter() {
                if i >= rows {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        len: rows,
                    });
                }
                data.extend_from_slice(&a.data()[i * inner..(i + 1) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_parts(shape, data)
        }
        Op::Broadcast { input, axis, size } => {
            let a = v(*input);
            if *axis > a.rank() {
                return Err(Error::AxisOutOfRange {
                    axis: *axis,
                    rank: a.rank() + 1,
                });
            }
            let outer: usize = a.shape()[..*axis].iter().product();
            let inner: usize = a.shape()[*axis..].iter().product();
            let mut data = Vec::with_capacity(a.len() * size);
            for o in 0..outer {
                let block = &a.data()[o * inner..(o + 1) * inner];
                for _ in 0..*size {
                    data.extend_from_slice(block);
                }
            }
            let mut shape = a.shape().to_vec();
            shape.insert(*axis, *size);
            Tensor::from_parts(shape, data)
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let a = v(*a);
            check_axis(*axis, a.rank())?;
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                let out = &mut data[o * inner..(o + 1) * inner];
                for k in 0..alen {
                    let src = &a.data()[(o * alen + k) * inner..(o * alen + k + 1) * inner];
                    for (d, s) in out.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            if matches!(op, Op::MeanAxis(..)) {
                let s = 1.0 / alen as f64;
                data.iter_mut().for_each(|d| *d *= s);
            }
            Tensor::from_parts(removed_axis(a.shape(), *axis), data)
        }
        Op::MaxAxis(a, axis) => {
            let a = v(*a);
            check_axis(*axis, a.rank())?;
            if a.dim(*axis) == 0 {
                return Err(Error::shape("max_axis", a.shape(), &[]));
            }
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let mut data = vec![f64::NEG_INFINITY; outer * inner];
            for o in 0..outer {
                for k in 0..alen {
                    for i in 0..inner {
                        let x = a.data()[(o * alen + k) * inner + i];
                        let d = &mut data[o * inner + i];
                        if x > *d {
                            *d = x;
                        }
                    }
                }
            }
            Tensor::from_parts(removed_axis(a.shape(), *axis), data)
        }
        Op::SumAll(a) => Tensor::scalar(v(*a).data().iter().sum()),
        Op::MeanAll(a) => {
            let a = v(*a);
            if a.is_empty() {
                return Err(Error::shape("mean_all", a.shape(), &[]));
            }
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        Op::Unary(a, u) => v(*a).map(|x| u.apply(x)),
        Op::LayerNorm { input, gain, bias } => {
            let (x, g, b) = (v(*input), v(*gain), v(*bias));
            let c = *x
                .shape()
                .last()
                .ok_or(Error::AxisOutOfRange { axis: 0, rank: 0 })?;
            if g.shape() != [c] || b.shape() != [c] {
                return Err(Error::shape("layer_norm", x.shape(), g.shape()));
            }
            let mut data = Vec::with_capacity(x.len());
            for row in x.data().chunks_exact(c.max(1)) {
                let (mean, rstd) = row_stats(row);
                for j in 0..c {
                    data.push((row[j] - mean) * rstd * g.data()[j] + b.data()[j]);
                }
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        Op::DwConv1d { input, kernel } => {
            let (x, k) = (v(*input), v(*kernel));
            if x.rank() != 2 || k.rank() != 2 || k.dim(0) != x.dim(1) {
                return Err(Error::shape("dwconv1d", x.shape(), k.shape()));
            }
            let (n, c, w) = (x.dim(0), x.dim(1), k.dim(1));
            let pad = (w.saturating_sub(1) / 2) as isize;
            let mut data = vec![0.0; n * c];
            for t in 0..n {
                for j in 0..w {
                    let src = t as isize + j as isize - pad;
                    if src < 0 || src >= n as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ch in 0..c {
                        data[t * c + ch] += k.data()[ch * w + j] * x.data()[src * c + ch];
                    }
                }
            }
            Tensor::from_parts(vec![n, c], data)
        }
        Op::RowNorm(a) => {
            let a = v(*a);
            let c = *a
                .shape()
                .last()
                .ok_or(Error::AxisOutOfRange { axis: 0, rank: 0 })?;
            let data = a
                .data()
                .chunks_exact(c.max(1))
                .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            Tensor::from_parts(a.shape()[..a.rank() - 1].to_vec(), data)
        }
        Op::Custom(inputs, op) => {
            let ts: Vec<&Tensor> = inputs.iter().map(|&i| v(i)).collect();
            op.forward(&ts)?
        }
    })
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn transpose_last2(a: &Tensor) -> Tensor {
    let r = a.rank();
    let (rows, cols) = (a.dim(r - 2), a.dim(r - 1));
    let batch = a.len() / (rows * cols).max(1);
    let mut data = Vec::with_capacity(a.len());
    for b in 0..batch {
        let block = &a.data()[b * rows * cols..(b + 1) * rows * cols];
        data.extend(transpose_raw(block, rows, cols));
    }
    let mut shape = a.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_parts(shape, data)
}

fn concat(ts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = ts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    check_axis(axis, first.rank())?;
    for t in ts {
        let ok = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), t.shape()));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = ts.iter().map(|t| t.dim(axis)).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in ts {
            let block = t.dim(axis) * inner;
            data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, data))
}

thread_local! {
    static BACKWARD_FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Flips the sign of the backward rule of the named op on the current thread.
/// Exists only so tests can confirm the gradient checks catch a broken rule.
pub fn inject_backward_fault(op: Option<&'static str>) {
    BACKWARD_FAULT.with(|f| f.set(op));
}

/// Vector-Jacobian product of `op`. Returns one optional gradient per input,
/// in the order of [`Op::inputs`].
pub(crate) fn backward<'a>(
    op: &Op,
    v: &dyn Fn(usize) -> &'a Tensor,
    out: &Tensor,
    g: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    let mut grads = backward_inner(op, v, out, g)?;
    if BACKWARD_FAULT.with(|f| f.get()) == Some(op.name()) {
        for t in grads.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(grads)
}

fn backward_inner<'a>(
    op: &Op,
    v: &dyn Fn(usize) -> &'a Tensor,
    out: &Tensor,
    g: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub(..) => vec![Some(g.clone()), Some(g.map(|x| -x))],
        Op::Mul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            vec![
                Some(zip_with(g, b, |x, y| x * y)),
                Some(zip_with(g, a, |x, y| x * y)),
            ]
        }
        Op::Scale(_, s) => vec![Some(g.map(|x| x * s))],
        Op::AddScalar(..) => vec![Some(g.clone())],
        Op::MatMul(a, b) => {
            let (a, b) = (v(*a), v(*b));
            let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
            let bt = transpose_raw(b.data(), k, n);
            let da = matmul_raw(g.data(), &bt, m, n, k);
            let db = matmul_tn_raw(a.data(), g.data(), m, k, n);
            vec![
                Some(Tensor::from_parts(vec![m, k], da)),
                Some(Tensor::from_parts(vec![k, n], db)),
            ]
        }
        Op::Transpose(_) => vec![Some(transpose_last2(g))],
        Op::Reshape(a, _) => vec![Some(Tensor::from_parts(
            v(*a).shape().to_vec(),
            g.data().to_vec(),
        ))],
        Op::Concat(inputs, axis) => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let total = out.dim(*axis);
            let mut offset = 0;
            let mut res = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let t = v(i);
                let len = t.dim(*axis);
                let mut data = Vec::with_capacity(t.len());
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    data.extend_from_slice(&g.data()[base..base + len * inner]);
                }
                offset += len;
                res.push(Some(Tensor::from_parts(t.shape().to_vec(), data)));
            }
            res
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let a = v(*input);
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let mut data = vec![0.0; a.len()];
            for o in 0..outer {
                let dst = o * alen * inner + start * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::Gather(a, idx) => {
            let a = v(*a);
            let inner = a.len() / a.dim(0).max(1);
            let mut data = vec![0.0; a.len()];
            for (r, &i) in idx.iter().enumerate() {
                let dst = &mut data[i * inner..(i + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&g.data()[r * inner..(r + 1) * inner]) {
                    *d += s;
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::Broadcast { input, axis, size } => {
            let a = v(*input);
            let outer: usize = a.shape()[..*axis].iter().product();
            let inner: usize = a.shape()[*axis..].iter().product();
            let mut data = vec![0.0; a.len()];
            for o in 0..outer {
                let dst = &mut data[o * inner..(o + 1) * inner];
                for s in 0..*size {
                    let base = (o * size + s) * inner;
                    for (d, x) in dst.iter_mut().zip(&g.data()[base..base + inner]) {
                        *d += x;
                    }
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let a = v(*a);
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let scale = if matches!(op, Op::MeanAxis(..)) {
                1.0 / alen as f64
            } else {
                1.0
            };
            let mut data = Vec::with_capacity(a.len());
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..alen {
                    data.extend(src.iter().map(|x| x * scale));
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::MaxAxis(a, axis) => {
            let a = v(*a);
            let (outer, alen, inner) = split_axis(a.shape(), *axis);
            let mut data = vec![0.0; a.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let target = out.data()[o * inner + i];
                    // First index attaining the maximum receives the gradient.
                    for k in 0..alen {
                        let pos = (o * alen + k) * inner + i;
                        if a.data()[pos] == target {
                            data[pos] = g.data()[o * inner + i];
                            break;
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::SumAll(a) => {
            let a = v(*a);
            vec![Some(Tensor::full(a.shape(), g.data()[0]))]
        }
        Op::MeanAll(a) => {
            let a = v(*a);
            vec![Some(Tensor::full(a.shape(), g.data()[0] / a.len() as f64))]
        }
        Op::Unary(a, u) => {
            let a = v(*a);
            let data = a
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &gv)| gv * u.deriv(x, y))
                .collect();
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::LayerNorm { input, gain, .. } => {
            let (x, gam) = (v(*input), v(*gain));
            let c = *x.shape().last().unwrap();
            let mut dx = Vec::with_capacity(x.len());
            let mut dg = vec![0.0; c];
            let mut db = vec![0.0; c];
            let mut xhat = vec![0.0; c];
            let mut dxhat = vec![0.0; c];
            for (row, grow) in x.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                let (mean, rstd) = row_stats(row);
                for j in 0..c {
                    xhat[j] = (row[j] - mean) * rstd;
                    dxhat[j] = grow[j] * gam.data()[j];
                    dg[j] += grow[j] * xhat[j];
                    db[j] += grow[j];
                }
                let m1 = dxhat.iter().sum::<f64>() / c as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    dx.push(rstd * (dxhat[j] - m1 - xhat[j] * m2));
                }
            }
            vec![
                Some(Tensor::from_parts(x.shape().to_vec(), dx)),
                Some(Tensor::vector(dg)),
                Some(Tensor::vector(db)),
            ]
        }
        Op::DwConv1d { input, kernel } => {
            let (x, k) = (v(*input), v(*kernel));
            let (n, c, w) = (x.dim(0), x.dim(1), k.dim(1));
            let pad = (w.saturating_sub(1) / 2) as isize;
            let mut dx = vec![0.0; n * c];
            let mut dk = vec![0.0; c * w];
            for t in 0..n {
                for j in 0..w {
                    let src = t as isize + j as isize - pad;
                    if src < 0 || src >= n as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ch in 0..c {
                        let gv = g.data()[t * c + ch];
                        dx[src * c + ch] += k.data()[ch * w + j] * gv;
                        dk[ch * w + j] += x.data()[src * c + ch] * gv;
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![n, c], dx)),
                Some(Tensor::from_parts(vec![c, w], dk)),
            ]
        }
        Op::RowNorm(a) => {
            let a = v(*a);
            let c = *a.shape().last().unwrap();
            let mut data = Vec::with_capacity(a.len());
            for ((row, &nrm), &gv) in a
                .data()
                .chunks_exact(c.max(1))
                .zip(out.data())
                .zip(g.data())
            {
                if nrm > 0.0 {
                    data.extend(row.iter().map(|x| gv * x / nrm));
                } else {
                    data.extend(std::iter::repeat_n(0.0, c));
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), data))]
        }
        Op::Custom(inputs, op) => {
            let ts: Vec<&Tensor> = inputs.iter().map(|&i| v(i)).collect();
            op.backward(&ts, out, g)?
        }
    })
}
