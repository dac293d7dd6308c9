//! Point-cloud container, file I/O, normalization, exact neighbor queries,
//! farthest-point sampling and seeded noise injection.
//!
//! Every operation here is a pure function of its inputs. Wherever an
//! ordering decision has to be made (nearest-neighbor ties, FPS ties) the
//! lowest index wins.

mod cloud;
mod io;
mod neighbors;
mod noise;
mod sampling;

pub use cloud::{normalize_unit_sphere, NormalizationTransform, Point3, PointCloud};
pub use io::{load_cloud, load_cloud_allow_empty, save_cloud, CloudFormat};
pub use neighbors::{knn, nearest, Neighbors};
pub use noise::add_gaussian_noise;
pub use sampling::farthest_point_sample;

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}
