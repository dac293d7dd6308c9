use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// An ordered sequence of 3D points with finite coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("coordinate of point {i}")));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Option<&Point3> {
        self.points.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Gathers the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })?;
            out.push(*p);
        }
        Ok(PointCloud { points: out })
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.len() as f64;
        Some([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Length of the axis-aligned bounding-box diagonal (0 for empty clouds).
    pub fn bbox_diagonal(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        super::dist2(&lo, &hi).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(super::norm).fold(0.0, f64::max)
    }

    /// Concatenates two clouds.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud { points }
    }
}

impl From<PointCloud> for Vec<Point3> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}

/// Similarity transform into the canonical unit-sphere frame:
/// `normalized = (p - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationTransform {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    pub fn invert_point(&self, p: &Point3) -> Point3 {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    pub fn apply(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| self.apply_point(p)).collect(),
        }
    }

    pub fn invert(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| self.invert_point(p)).collect(),
        }
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1. A cloud whose points all coincide keeps `scale = 1`.
pub fn normalize_unit_sphere(c: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let center = c.centroid().ok_or(Error::EmptyCloud)?;
    let shifted = NormalizationTransform { center, scale: 1.0 };
    let max_norm = shifted.apply(c).max_norm();
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    let t = NormalizationTransform { center, scale };
    Ok((t.apply(c), t))
}
