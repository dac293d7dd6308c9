use super::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Row-major `|query| x k` index matrix; each row is sorted by ascending
/// distance with ties resolved toward the lower index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbors {
    k: usize,
    indices: Vec<usize>,
}

impl Neighbors {
    /// Wraps a row-major index matrix with `k` columns.
    pub fn from_flat(k: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 || indices.len() % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} indices do not form rows of {k}",
                indices.len()
            )));
        }
        Ok(Self { k, indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k.max(1))
    }
}

/// Exact k-nearest neighbors of every query point within `c`.
///
/// With `exclude_self`, candidate `i` is skipped for query row `i`; this is
/// the intended use when `query` is `c` itself.
pub fn knn(c: &PointCloud, query: &PointCloud, k: usize, exclude_self: bool) -> Result<Neighbors> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let available = if exclude_self {
        c.len().saturating_sub(1)
    } else {
        c.len()
    };
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    let pts = c.points();
    let mut indices = Vec::with_capacity(query.len() * k);
    // (d2, idx) pairs kept sorted; insertion keeps the earliest index first on ties.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (qi, q) in query.iter().enumerate() {
        best.clear();
        for (j, p) in pts.iter().enumerate() {
            if exclude_self && j == qi {
                continue;
            }
            let d = dist2(p, q);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        indices.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(Neighbors { k, indices })
}

/// Index and squared distance of the nearest point of `c` to `q`
/// (lowest index on ties). `None` for an empty cloud.
pub fn nearest(c: &PointCloud, q: &super::Point3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in c.iter().enumerate() {
        let d = dist2(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}
