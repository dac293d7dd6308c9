//! Named parameter storage and the dense layer shared by every network part.
//!
//! A network is described by plain config structs plus a name prefix; its
//! weights live in a [`ParamSet`] keyed by dotted names such as
//! `extractor.block1.mixer2.mamba.in_proj.w`. Forward passes bind the whole
//! set onto a tape once and look tensors up by name.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{GradCheck, GradCheckReport, Gradients, Tape, Tensor, Var};

/// Name-ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Same names and shapes as `other`.
    pub fn aligned_with(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Records every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Gradients for every bound tensor, zero where unreachable.
    pub fn grads(&self, vars: &ParamVars, g: &Gradients) -> ParamSet {
        ParamSet {
            tensors: vars
                .vars
                .iter()
                .map(|(k, &v)| (k.clone(), g.wrt(v)))
                .collect(),
        }
    }

    /// `self += s * other`, names must align.
    pub fn axpy(&mut self, s: f64, other: &ParamSet) -> Result<()> {
        if !self.aligned_with(other) {
            return Err(Error::MisalignedParams("axpy".into()));
        }
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Points `name` at a different tape variable.
    pub fn replace(mut self, name: &str, v: Var) -> Self {
        self.vars.insert(name.to_string(), v);
        self
    }
}

/// Finite-difference check of `loss` with respect to every named parameter,
/// probing at most `max_coords` evenly spaced coordinates per tensor.
pub fn check_param_grads<F>(
    params: &ParamSet,
    loss: F,
    h: f64,
    max_coords: usize,
) -> Result<Vec<(String, GradCheckReport)>>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut out = Vec::new();
    for (name, value) in params.iter() {
        let f = |t: &mut Tape, v: Var| {
            let vars = params.bind(t).replace(name, v);
            loss(t, &vars)
        };
        let report = GradCheck::new(h)
            .subsample(value.len(), max_coords)
            .run(f, value)?;
        out.push((name.to_string(), report));
    }
    Ok(out)
}

/// Joins name segments with dots, skipping an empty prefix.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Dense layer `y = x W + b` with `W: in x out`, stored as `{prefix}.w` and
/// `{prefix}.b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.prefix, "w")
    }

    pub fn bias_name(&self) -> String {
        join(&self.prefix, "b")
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        params.insert(
            self.weight_name(),
            uniform_init(&[self.input, self.output], self.input, rng),
        );
        if self.bias {
            params.insert(
                self.bias_name(),
                uniform_init(&[self.output], self.input, rng),
            );
        }
    }

    /// `x: n x input -> n x output`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Var> {
        let w = vars.get(&self.weight_name())?;
        let y = tape.matmul(x, w)?;
        if !self.bias {
            return Ok(y);
        }
        let b = vars.get(&self.bias_name())?;
        add_row_bias(tape, y, b)
    }
}

/// Adds a length-`c` vector to every row of an `n x c` matrix.
pub fn add_row_bias(tape: &mut Tape, x: Var, b: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let bb = tape.broadcast(b, 0, n)?;
    tape.add(x, bb)
}

/// Multiplies every row `i` of an `n x c` matrix by `s[i]` (`s: [n]`).
pub fn scale_rows(tape: &mut Tape, x: Var, s: Var) -> Result<Var> {
    let c = tape.shape(x)[1];
    let sb = tape.broadcast(s, 1, c)?;
    tape.mul(x, sb)
}

/// Row-wise dot product of two `n x c` matrices, returning `[n]`.
pub fn row_dot(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let p = tape.mul(a, b)?;
    tape.sum_axis(p, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::SeedableRng;

    #[test]
    fn linear_matches_manual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new("l", 3, 2);
        let mut p = ParamSet::new();
        lin.init(&mut p, &mut rng);
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let xv = t.leaf(x.clone());
        let y = lin.forward(&mut t, &v, xv).unwrap();
        let w = p.get("l.w").unwrap();
        let b = p.get("l.b").unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = b.data()[j];
                for k in 0..3 {
                    s += x.data()[i * 3 + k] * w.data()[k * 2 + j];
                }
                assert!((t.value(y).data()[i * 2 + j] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let ta = uniform_init(&[16, 4], 16, &mut a);
        let tb = uniform_init(&[16, 4], 16, &mut b);
        assert_eq!(ta, tb);
        assert!(ta.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn missing_param_is_named() {
        let p = ParamSet::new();
        match p.get("x.w") {
            Err(Error::MissingParam(n)) => assert_eq!(n, "x.w"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn row_helpers_gradients() {
        let s = Tensor::vector(vec![0.3, -0.7]);
        let m = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]).unwrap();
        let err = finite_diff_check(
            |t, v| {
                let mv = t.leaf(m.clone());
                let x = scale_rows(t, mv, v)?;
                let d = row_dot(t, x, mv)?;
                let d = t.square(d)?;
                t.sum(d)
            },
            &s,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
