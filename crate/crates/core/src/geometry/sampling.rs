use super::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Greedy farthest-point sampling. The first pick is `start`; every later pick
/// maximizes the distance to the already-picked set, lowest index on ties.
pub fn farthest_point_sample(c: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = c.len();
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if m > n {
        return Err(Error::SampleTooLarge {
            requested: m,
            count: n,
        });
    }
    if start >= n {
        return Err(Error::IndexOutOfRange {
            index: start,
            len: n,
        });
    }
    let pts = c.points();
    // Picked points are marked with -1 so they can never win again, even when
    // duplicates leave every remaining distance at zero.
    let mut min_d = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut current = start;
    for _ in 0..m {
        picked.push(current);
        min_d[current] = -1.0;
        let cp = pts[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (j, p) in pts.iter().enumerate() {
            let md = &mut min_d[j];
            if *md < 0.0 {
                continue;
            }
            let d = dist2(p, &cp);
            if d < *md {
                *md = d;
            }
            if *md > best_d {
                best_d = *md;
                best = j;
            }
        }
        current = best;
    }
    Ok(picked)
}
