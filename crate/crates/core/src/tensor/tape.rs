use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::array::Tensor;
use super::ops::{self, CustomOp, Op, Unary};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` was unreachable from the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when unreachable.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes.get(v.idx).map(Vec::as_slice).unwrap_or(&[])),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.len()
    }

    /// Records an input (parameter, constant or differentiation variable).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if self.contains(v) {
            Ok(v.idx)
        } else {
            Err(Error::NotOnTape)
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let nodes = &self.nodes;
        let value = ops::forward(&op, &|i| &nodes[i].value)?;
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let op = Op::Scale(self.idx(a)?, s);
        self.push(op)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let op = Op::AddScalar(self.idx(a)?, s);
        self.push(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMul(self.idx(a)?, self.idx(b)?);
        self.push(op)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let op = Op::Transpose(self.idx(a)?);
        self.push(op)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let op = Op::Reshape(self.idx(a)?, shape.to_vec());
        self.push(op)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>>>()?;
        self.push(Op::Concat(idx, axis))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let op = Op::Slice {
            input: self.idx(a)?,
            axis,
            start,
            len,
        };
        self.push(op)
    }

    /// Selects entries along axis 0; indices may repeat.
    pub fn gather(&mut self, a: Var, indices: impl Into<Rc<[usize]>>) -> Result<Var> {
        let op = Op::Gather(self.idx(a)?, indices.into());
        self.push(op)
    }

    /// Inserts a new axis of length `size` at position `axis`, repeating the
    /// input along it.
    pub fn broadcast(&mut self, a: Var, axis: usize, size: usize) -> Result<Var> {
        let op = Op::Broadcast {
            input: self.idx(a)?,
            axis,
            size,
        };
        self.push(op)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let op = Op::SumAxis(self.idx(a)?, axis);
        self.push(op)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let op = Op::MeanAxis(self.idx(a)?, axis);
        self.push(op)
    }

    /// Max over `axis`; backward routes to the first argmax.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let op = Op::MaxAxis(self.idx(a)?, axis);
        self.push(op)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let op = Op::SumAll(self.idx(a)?);
        self.push(op)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let op = Op::MeanAll(self.idx(a)?);
        self.push(op)
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let op = Op::Unary(self.idx(a)?, u);
        self.push(op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Silu)
    }

    /// Elementwise derivative of SiLU, itself differentiable.
    pub fn silu_deriv(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::SiluDeriv)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Reciprocal)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    /// Layer normalization over the last axis with affine gain and bias
    /// (epsilon 1e-5 inside the square root).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let op = Op::LayerNorm {
            input: self.idx(x)?,
            gain: self.idx(gain)?,
            bias: self.idx(bias)?,
        };
        self.push(op)
    }

    /// Depthwise 1D convolution of an `n x c` sequence with a `c x w`
    /// kernel, zero padded to keep length `n` (left pad `(w-1)/2`).
    pub fn dwconv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let op = Op::DwConv1d {
            input: self.idx(x)?,
            kernel: self.idx(kernel)?,
        };
        self.push(op)
    }

    /// Euclidean norm over the last axis.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let op = Op::RowNorm(self.idx(a)?);
        self.push(op)
    }

    pub fn custom(&mut self, op: Rc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.idx(v))
            .collect::<Result<Vec<_>>>()?;
        self.push(Op::Custom(idx, op))
    }

    /// Re-evaluates every recorded op from its recorded inputs and reports
    /// whether all outputs are bit-identical to the stored values.
    pub fn replay_matches(&self) -> Result<bool> {
        let nodes = &self.nodes;
        for node in nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let again = ops::forward(&node.op, &|i| &nodes[i].value)?;
            let same = again.shape() == node.value.shape()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Reverse-mode gradient of the scalar `output` with respect to every
    /// leaf. Gradients of intermediate values are released as soon as they
    /// have been propagated.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.idx(output)?;
        let value = &self.nodes[out].value;
        if value.len() != 1 {
            return Err(Error::NonScalarOutput(value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Tensor::full(value.shape(), 1.0));
        let nodes = &self.nodes;
        for i in (0..=out).rev() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs = nodes[i].op.inputs();
            let local = ops::backward(&nodes[i].op, &|j| &nodes[j].value, &nodes[i].value, &g)?;
            for (j, lg) in inputs.into_iter().zip(local) {
                let Some(lg) = lg else { continue };
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(lg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(lg),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_var(t: &mut Tape, v: &[f64]) -> Var {
        t.leaf(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn add_forward() {
        let mut t = Tape::new();
        let a = vec_var(&mut t, &[1.0, 2.0]);
        let b = vec_var(&mut t, &[3.0, 4.0]);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = vec_var(&mut t, &[1.0, 2.0]);
        let b = vec_var(&mut t, &[3.0, 4.0, 5.0]);
        match t.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn axis_out_of_range() {
        let mut t = Tape::new();
        let a = vec_var(&mut t, &[1.0, 2.0]);
        assert!(matches!(
            t.sum_axis(a, 1),
            Err(Error::AxisOutOfRange { axis: 1, rank: 1 })
        ));
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 4, vec![3.0; 4]).unwrap());
        let g = t.leaf(Tensor::full(&[4], 1.0));
        let b = t.leaf(Tensor::zeros(&[4]));
        let y = t.layer_norm(x, g, b).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = vec_var(&mut t, &[1.0, 2.0, 3.0]);
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let mut t = Tape::new();
        let x = vec_var(&mut t, &[3.0, 1.0, 3.0]);
        let m = t.max_axis(x, 0).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = vec_var(&mut t, &[0.0, 1.0, -1.0]);
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        assert_eq!(t.backward(s).unwrap().wrt(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = vec_var(&mut t, &[1.0, 2.0]);
        let y = vec_var(&mut t, &[5.0]);
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(y).data(), &[0.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = vec_var(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NonScalarOutput(_))));
        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(t.backward(y), Err(Error::NotOnTape)));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut t = Tape::new();
        let av = t.leaf(Tensor::matrix(2, 3, a.clone()).unwrap());
        let bv = t.leaf(Tensor::matrix(3, 2, b.clone()).unwrap());
        let c = t.matmul(av, bv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * b[k * 2 + j];
                }
                assert!((t.value(c).data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dwconv_same_padding() {
        // width 3: left pad 1, so y[t] = k0 x[t-1] + k1 x[t] + k2 x[t+1]
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let k = t.leaf(Tensor::matrix(1, 3, vec![1.0, 10.0, 100.0]).unwrap());
        let y = t.dwconv1d(x, k).unwrap();
        assert_eq!(t.value(y).data(), &[210.0, 321.0, 32.0]);
    }

    #[test]
    fn broadcast_and_sum_axis_shapes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap());
        let b = t.broadcast(x, 1, 4).unwrap();
        assert_eq!(t.shape(b), &[2, 4, 3]);
        let s = t.sum_axis(b, 1).unwrap();
        assert_eq!(t.value(s).data(), &[0.0, 4.0, 8.0, 12.0, 16.0, 20.0]);
    }

    #[test]
    fn replay_is_exact() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 2, vec![0.1, -0.4, 2.0, 0.3]).unwrap());
        let y = t.silu(x).unwrap();
        let z = t.matmul(y, x).unwrap();
        let _ = t.softplus(z).unwrap();
        assert!(t.replay_matches().unwrap());
    }
}
