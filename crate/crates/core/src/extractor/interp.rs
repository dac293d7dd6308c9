use crate::error::{Error, Result};
use crate::geometry::{dist2, knn, Neighbors, PointCloud};
use crate::nn::scale_rows;
use crate::tensor::{Tape, Tensor, Var};

use super::FeatureSet;

/// Seeds blended per query point.
pub const INTERP_NEIGHBORS: usize = 3;
/// Added to squared distances before inversion.
pub const INTERP_EPS: f64 = 1e-8;

/// Inverse-squared-distance blending of the nearest seeds.
///
/// A query that coincides bitwise with one of its seeds takes that seed's
/// weight 1 and every other weight 0; `exact` marks those rows.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpWeights {
    pub neighbors: Neighbors,
    /// Row-major `n x k` normalized weights.
    pub weights: Vec<f64>,
    /// Per query, the neighbor column of an exact hit.
    pub exact: Vec<Option<usize>>,
}

impl InterpWeights {
    pub fn compute(query: &PointCloud, seeds: &PointCloud) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let k = INTERP_NEIGHBORS.min(seeds.len());
        let neighbors = knn(seeds, query, k, false)?;
        let mut weights = Vec::with_capacity(query.len() * k);
        let mut exact = Vec::with_capacity(query.len());
        for (q, row) in query.iter().zip(neighbors.iter_rows()) {
            let d2: Vec<f64> = row.iter().map(|&j| dist2(q, &seeds.points()[j])).collect();
            let hit = d2.iter().position(|&d| d == 0.0);
            exact.push(hit);
            match hit {
                Some(h) => weights.extend((0..k).map(|c| if c == h { 1.0 } else { 0.0 })),
                None => {
                    let raw: Vec<f64> = d2.iter().map(|d| 1.0 / (d + INTERP_EPS)).collect();
                    let total: f64 = raw.iter().sum();
                    weights.extend(raw.iter().map(|w| w / total));
                }
            }
        }
        Ok(Self {
            neighbors,
            weights,
            exact,
        })
    }

    pub fn k(&self) -> usize {
        self.neighbors.k()
    }

    /// Seed indices of neighbor column `col`, one per query.
    pub fn column(&self, col: usize) -> Vec<usize> {
        self.neighbors.iter_rows().map(|r| r[col]).collect()
    }

    /// Constant row mask `R` (0 on exact-hit rows) and per-column one-hot
    /// `M_j`, so that `w_j R + M_j` applies the exact-hit rule to weights
    /// computed smoothly on a tape.
    pub fn masks(&self) -> (Tensor, Vec<Tensor>) {
        let n = self.exact.len();
        let keep = Tensor::vector(
            self.exact
                .iter()
                .map(|e| if e.is_some() { 0.0 } else { 1.0 })
                .collect(),
        );
        let hits = (0..self.k())
            .map(|col| {
                Tensor::vector(
                    self.exact
                        .iter()
                        .map(|e| if *e == Some(col) { 1.0 } else { 0.0 })
                        .collect(),
                )
            })
            .collect();
        debug_assert_eq!(keep.len(), n);
        (keep, hits)
    }
}

/// Smooth weights `w_j` as tape values of the query positions
/// (`query: n x 3`), with the exact-hit masks applied.
pub fn weights_on_tape(
    tape: &mut Tape,
    query: Var,
    seeds: &PointCloud,
    iw: &InterpWeights,
) -> Result<Vec<Var>> {
    let n = iw.exact.len();
    let mut raw = Vec::with_capacity(iw.k());
    for col in 0..iw.k() {
        let idx = iw.column(col);
        let s: Vec<f64> = idx.iter().flat_map(|&j| seeds.points()[j]).collect();
        let s = tape.leaf(Tensor::new(vec![n, 3], s)?);
        let diff = tape.sub(query, s)?;
        let sq = tape.square(diff)?;
        let d2 = tape.sum_axis(sq, 1)?;
        let d2 = tape.add_scalar(d2, INTERP_EPS)?;
        raw.push(tape.reciprocal(d2)?);
    }
    let mut total = raw[0];
    for &r in &raw[1..] {
        total = tape.add(total, r)?;
    }
    let inv = tape.reciprocal(total)?;
    let (keep, hits) = iw.masks();
    let keep = tape.leaf(keep);
    raw.into_iter()
        .zip(hits)
        .map(|(r, hit)| {
            let w = tape.mul(r, inv)?;
            let w = tape.mul(w, keep)?;
            let hit = tape.leaf(hit);
            tape.add(w, hit)
        })
        .collect()
}

/// Per-query regressor input: the blended concatenated local features of
/// the nearest seeds, then the query coordinates, the global feature and
/// the fed-back distance (`n x 1`).
///
/// `query` is an `n x 3` tape value so the result is differentiable with
/// respect to query positions.
pub fn interpolate_features(
    tape: &mut Tape,
    query: Var,
    seeds: &PointCloud,
    fs: &FeatureSet,
    fed_back_distance: Var,
) -> Result<Var> {
    let q = PointCloud::new(tape.value(query).to_points()?)?;
    let n = q.len();
    if tape.shape(fed_back_distance) != [n, 1] {
        return Err(Error::shape(
            "interpolate_features",
            tape.shape(fed_back_distance),
            &[n, 1],
        ));
    }
    let iw = InterpWeights::compute(&q, seeds)?;
    let weights = weights_on_tape(tape, query, seeds, &iw)?;
    let local = tape.concat(&fs.local, 1)?;
    let mut blended = None;
    for (col, w) in weights.into_iter().enumerate() {
        let rows = tape.gather(local, iw.column(col))?;
        let term = scale_rows(tape, rows, w)?;
        blended = Some(match blended {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let blended = blended.expect("at least one neighbor");
    let g = tape.broadcast(fs.global, 0, n)?;
    tape.concat(&[blended, query, g, fed_back_distance], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradCheck;

    fn features(tape: &mut Tape, seeds: usize) -> FeatureSet {
        let l0: Vec<f64> = (0..seeds * 2).map(|i| (i as f64 * 0.7).sin()).collect();
        let l1: Vec<f64> = (0..seeds * 3).map(|i| (i as f64 * 1.3).cos()).collect();
        FeatureSet {
            local: vec![
                tape.leaf(Tensor::new(vec![seeds, 2], l0).unwrap()),
                tape.leaf(Tensor::new(vec![seeds, 3], l1).unwrap()),
            ],
            global: tape.leaf(Tensor::vector(vec![0.5, -0.5])),
        }
    }

    fn seeds() -> PointCloud {
        PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 5.0],
            [0.3, 0.4, 0.1],
        ])
        .unwrap()
    }

    #[test]
    fn exact_hit_copies_the_seed() {
        let s = seeds();
        let mut t = Tape::new();
        let fs = features(&mut t, 4);
        let q = t.leaf(Tensor::from_points(&[[0.3, 0.4, 0.1]]));
        let fed = t.leaf(Tensor::zeros(&[1, 1]));
        let x = interpolate_features(&mut t, q, &s, &fs, fed).unwrap();
        let l0 = t.value(fs.local[0]).row(3).to_vec();
        let l1 = t.value(fs.local[1]).row(3).to_vec();
        let row = t.value(x).row(0);
        assert_eq!(&row[0..2], &l0[..]);
        assert_eq!(&row[2..5], &l1[..]);
        assert_eq!(&row[5..8], &[0.3, 0.4, 0.1]);
        assert_eq!(&row[8..10], &[0.5, -0.5]);
        assert_eq!(row[10], 0.0);
    }

    #[test]
    fn equidistant_seeds_blend_evenly() {
        let s = PointCloud::new(vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 50.0, 0.0]]).unwrap();
        let q = PointCloud::new(vec![[0.0, 0.0, 0.3]]).unwrap();
        let iw = InterpWeights::compute(&q, &s).unwrap();
        // hand weights: 1/(1.09 + eps) for both near seeds, 1/(2500.09 + eps)
        // for the far one, normalized
        let near = 1.0 / (1.09 + INTERP_EPS);
        let far = 1.0 / (2500.09 + INTERP_EPS);
        let total = 2.0 * near + far;
        assert!((iw.weights[0] - iw.weights[1]).abs() < 1e-9);
        assert!((iw.weights[0] - near / total).abs() < 1e-12);
        assert!((iw.weights[2] - far / total).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let s = seeds();
        let q = PointCloud::new(vec![[0.1, 0.2, 0.3], [0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]).unwrap();
        let iw = InterpWeights::compute(&q, &s).unwrap();
        for row in iw.weights.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_feedback_gives_zero_last_column() {
        let s = seeds();
        let mut t = Tape::new();
        let fs = features(&mut t, 4);
        let q = t.leaf(Tensor::from_points(&[[0.1, 0.2, 0.3], [0.9, 0.1, 0.0]]));
        let fed = t.leaf(Tensor::zeros(&[2, 1]));
        let x = interpolate_features(&mut t, q, &s, &fs, fed).unwrap();
        assert_eq!(t.shape(x), &[2, 11]);
        assert!((0..2).all(|i| t.value(x).row(i)[10] == 0.0));
    }

    #[test]
    fn empty_seeds_error() {
        let mut t = Tape::new();
        let fs = features(&mut t, 0);
        let q = t.leaf(Tensor::from_points(&[[0.1, 0.2, 0.3]]));
        let fed = t.leaf(Tensor::zeros(&[1, 1]));
        assert!(matches!(
            interpolate_features(&mut t, q, &PointCloud::empty(), &fs, fed),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn differentiable_in_query_positions() {
        let s = seeds();
        let q = Tensor::from_points(&[[0.1, 0.2, 0.3], [0.9, 0.1, -0.2]]);
        let r = GradCheck::new(1e-6)
            .run(
                |t, qv| {
                    let fs = features(t, 4);
                    let fed = t.leaf(Tensor::zeros(&[2, 1]));
                    let x = interpolate_features(t, qv, &s, &fs, fed)?;
                    let x = t.square(x)?;
                    t.sum(x)
                },
                &q,
            )
            .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
