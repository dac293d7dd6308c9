use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Closed parametric surfaces of the synthetic dataset, centered at the
/// origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    /// Radius 1.
    Sphere,
    /// Major radius 1, tube radius 0.4 (extends to 1.4 in-plane).
    Torus,
    /// Half-edge 0.6.
    Cube,
    /// Radius 0.6, height 1, with caps.
    Cylinder,
    /// Base radius 0.8, height 1.6, with base.
    Cone,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Sphere,
        Shape::Torus,
        Shape::Cube,
        Shape::Cylinder,
        Shape::Cone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Torus => "torus",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Cone => "cone",
        }
    }

    /// One point uniformly distributed over the surface area.
    pub fn sample_point(self, rng: &mut ChaCha8Rng) -> Point3 {
        match self {
            Shape::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            },
            Shape::Torus => {
                let (big, small) = (1.0, 0.4);
                // area element is proportional to the distance from the axis
                loop {
                    let u = rng.random_range(0.0..2.0 * PI);
                    let v = rng.random_range(0.0..2.0 * PI);
                    let w: f64 = rng.random();
                    let ring = big + small * v.cos();
                    if w * (big + small) <= ring {
                        break [ring * u.cos(), ring * u.sin(), small * v.sin()];
                    }
                }
            }
            Shape::Cube => {
                let h = 0.6;
                let face = rng.random_range(0..6usize);
                let a = rng.random_range(-h..h);
                let b = rng.random_range(-h..h);
                let s = if face % 2 == 0 { h } else { -h };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Shape::Cylinder => {
                let (r, half) = (0.6, 0.5);
                let side = 2.0 * PI * r * 2.0 * half;
                let caps = 2.0 * PI * r * r;
                let t = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..side + caps) < side {
                    [r * t.cos(), r * t.sin(), rng.random_range(-half..half)]
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { half } else { -half };
                    [rho * t.cos(), rho * t.sin(), z]
                }
            }
            Shape::Cone => {
                let (r, h): (f64, f64) = (0.8, 1.6);
                let slant = (r * r + h * h).sqrt();
                let lateral = PI * r * slant;
                let base = PI * r * r;
                let t = rng.random_range(0.0..2.0 * PI);
                let f = rng.random::<f64>().sqrt();
                if rng.random_range(0.0..lateral + base) < lateral {
                    // fraction of the way from apex to rim
                    [r * f * t.cos(), r * f * t.sin(), h / 2.0 - h * f]
                } else {
                    [r * f * t.cos(), r * f * t.sin(), -h / 2.0]
                }
            }
        }
    }

    pub fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
        PointCloud::new((0..n).map(|_| self.sample_point(rng)).collect())
    }

    /// Distance from `p` to the exact surface.
    pub fn surface_distance(self, p: &Point3) -> f64 {
        let [x, y, z] = *p;
        let radial = (x * x + y * y).sqrt();
        match self {
            Shape::Sphere => ((x * x + y * y + z * z).sqrt() - 1.0).abs(),
            Shape::Torus => (((radial - 1.0).powi(2) + z * z).sqrt() - 0.4).abs(),
            Shape::Cube => box_distance([x.abs(), y.abs(), z.abs()], [0.6, 0.6, 0.6]),
            Shape::Cylinder => box_distance_2d(radial, z.abs(), 0.6, 0.5),
            Shape::Cone => {
                let (r, h): (f64, f64) = (0.8, 1.6);
                // 2D: rho >= 0, apex at (0, h/2), rim at (r, -h/2)
                let seg = |ax: f64, ay: f64, bx: f64, by: f64| {
                    let (dx, dy) = (bx - ax, by - ay);
                    let t = (((radial - ax) * dx + (z - ay) * dy) / (dx * dx + dy * dy))
                        .clamp(0.0, 1.0);
                    ((radial - ax - t * dx).powi(2) + (z - ay - t * dy).powi(2)).sqrt()
                };
                seg(0.0, h / 2.0, r, -h / 2.0).min(seg(0.0, -h / 2.0, r, -h / 2.0))
            }
        }
    }
}

/// Unsigned distance from a point in the positive octant to the surface of
/// an axis-aligned box.
fn box_distance(p: [f64; 3], half: [f64; 3]) -> f64 {
    let q: Vec<f64> = (0..3).map(|i| p[i] - half[i]).collect();
    let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    let inside = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(0.0);
    (outside + inside).abs()
}

fn box_distance_2d(a: f64, b: f64, ha: f64, hb: f64) -> f64 {
    let (qa, qb) = (a - ha, b - hb);
    let outside = (qa.max(0.0).powi(2) + qb.max(0.0).powi(2)).sqrt();
    (outside + qa.max(qb).min(0.0)).abs()
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape `{s}`")))
    }
}
