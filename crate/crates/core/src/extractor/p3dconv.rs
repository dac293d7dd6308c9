use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{knn, Neighbors, PointCloud};
use crate::nn::{add_row_bias, join, uniform_init, ParamSet, ParamVars};
use crate::tensor::{Tape, Tensor, Var};

/// Point convolution
///
/// `out_i = max_{j in N(i)} SiLU(W [f_j - f_i, p_j - p_i] + b)`
///
/// with `W: (c + 3) x c'` stored as `{prefix}.w` (feature rows first, then
/// the three coordinate rows) and `b: c'` as `{prefix}.b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct P3DConv {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl P3DConv {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let fan_in = self.input + 3;
        params.insert(
            join(&self.prefix, "w"),
            uniform_init(&[fan_in, self.output], fan_in, rng),
        );
        params.insert(
            join(&self.prefix, "b"),
            uniform_init(&[self.output], fan_in, rng),
        );
    }

    /// `feat: n x c -> n x c'`. Row `i` of `neighbors` lists the neighbors of
    /// point `i`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        feat: Var,
        coords: &PointCloud,
        neighbors: &Neighbors,
    ) -> Result<Var> {
        let n = coords.len();
        let k = neighbors.k();
        if tape.shape(feat) != [n, self.input] {
            return Err(Error::shape("p3dconv", tape.shape(feat), &[n, self.input]));
        }
        if neighbors.rows() != n {
            return Err(Error::shape("p3dconv", &[neighbors.rows(), k], &[n, k]));
        }
        if let Some(&bad) = neighbors.as_flat().iter().find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let w = vars.get(&join(&self.prefix, "w"))?;
        let b = vars.get(&join(&self.prefix, "b"))?;
        let w_feat = tape.slice(w, 0, 0, self.input)?;
        let w_pos = tape.slice(w, 0, self.input, 3)?;

        // W_f (f_j - f_i) = (F W_f)_j - (F W_f)_i: project once, then gather
        let proj = tape.matmul(feat, w_feat)?;
        let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let pj = tape.gather(proj, neighbors.as_flat().to_vec())?;
        let pi = tape.gather(proj, centers)?;
        let diff = tape.sub(pj, pi)?;

        let pts = coords.points();
        let mut rel = Vec::with_capacity(n * k * 3);
        for (i, row) in neighbors.iter_rows().enumerate() {
            for &j in row {
                for a in 0..3 {
                    rel.push(pts[j][a] - pts[i][a]);
                }
            }
        }
        let rel = tape.leaf(Tensor::new(vec![n * k, 3], rel)?);
        let pos = tape.matmul(rel, w_pos)?;
        let z = tape.add(diff, pos)?;
        let z = add_row_bias(tape, z, b)?;
        let a = tape.silu(z)?;
        let a = tape.reshape(a, &[n, k, self.output])?;
        tape.max_axis(a, 1)
    }
}

/// Neighborhoods for point convolution: the `k` nearest other points,
/// shrinking `k` for tiny clouds and falling back to the point itself for a
/// single point.
pub fn conv_neighbors(coords: &PointCloud, k: usize) -> Result<Neighbors> {
    match coords.len() {
        0 => Err(Error::EmptyCloud),
        1 => Neighbors::from_flat(1, vec![0]),
        n => knn(coords, coords, k.min(n - 1), true),
    }
}
