use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PointCloud;
use crate::error::{Error, Result};

/// Perturbs every coordinate by `tau * s` with `s ~ N(0, 1)` from a seeded
/// ChaCha8 stream (x, y, z per point, in point order).
pub fn add_gaussian_noise(c: &PointCloud, tau: f64, seed: u64) -> Result<PointCloud> {
    if !(tau >= 0.0) {
        return Err(Error::NegativeNoise(tau));
    }
    if c.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if tau == 0.0 {
        return Ok(c.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = c
        .iter()
        .map(|p| {
            let mut q = *p;
            for v in &mut q {
                let s: f64 = StandardNormal.sample(&mut rng);
                *v += tau * s;
            }
            q
        })
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| [i as f64, 0.5 * i as f64, -(i as f64)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let c = grid(10);
        assert_eq!(add_gaussian_noise(&c, 0.0, 7).unwrap(), c);
    }

    #[test]
    fn deterministic_for_seed() {
        let c = grid(50);
        let a = add_gaussian_noise(&c, 0.01, 3).unwrap();
        let b = add_gaussian_noise(&c, 0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_gaussian_noise(&c, 0.01, 4).unwrap());
    }

    #[test]
    fn negative_tau_rejected() {
        assert!(matches!(
            add_gaussian_noise(&grid(2), -0.1, 0),
            Err(Error::NegativeNoise(_))
        ));
    }

    #[test]
    fn sample_std_matches_tau() {
        let c = grid(10_000);
        let tau = 0.01;
        let out = add_gaussian_noise(&c, tau, 11).unwrap();
        for axis in 0..3 {
            let d: Vec<f64> = out
                .iter()
                .zip(c.iter())
                .map(|(o, i)| o[axis] - i[axis])
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            let std = var.sqrt();
            assert!((std - tau).abs() / tau < 0.05, "axis {axis}: std {std}");
        }
    }
}
