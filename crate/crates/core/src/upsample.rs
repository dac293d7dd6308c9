//! Inference pipeline: midpoint interpolation with farthest-point
//! selection, followed by gradient-descent refinement on a learned
//! distance field.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, knn, normalize_unit_sphere, Point3, PointCloud};
use crate::model::{Network, NetworkField};
use crate::nn::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementConfig {
    /// Number of gradient steps `T`.
    pub iterations: usize,
    /// Step size `lambda`.
    pub lambda: f64,
    /// Add the predicted shift once before the gradient steps.
    pub apply_shift: bool,
    /// Neighbors paired with each point during interpolation.
    pub k_midpoint: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            lambda: 0.1,
            apply_shift: true,
            k_midpoint: 4,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.k_midpoint == 0 {
            return Err(Error::InvalidArgument("k_midpoint must be positive".into()));
        }
        Ok(())
    }
}

/// Number of points produced by upsampling `n` points at `rate`.
pub fn target_count(n: usize, rate: f64) -> Result<usize> {
    if !(rate > 1.0) || !rate.is_finite() {
        return Err(Error::InvalidRate(rate));
    }
    Ok((rate * n as f64).round() as usize)
}

fn key(p: &Point3) -> [u64; 3] {
    [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]
}

/// Input points followed by the midpoints of every point with its `k`
/// nearest neighbors, first occurrence kept on exact duplicates.
fn candidates(cloud: &PointCloud, k: usize) -> Result<Vec<Point3>> {
    let nb = knn(cloud, cloud, k, true)?;
    let pts = cloud.points();
    let mut seen = HashSet::with_capacity(pts.len() * (k + 1));
    let mut out = Vec::with_capacity(pts.len() * (k + 1));
    for p in pts {
        if seen.insert(key(p)) {
            out.push(*p);
        }
    }
    for (i, row) in nb.iter_rows().enumerate() {
        let p = pts[i];
        for &j in row {
            let q = pts[j];
            let mid = [
                (p[0] + q[0]) / 2.0,
                (p[1] + q[1]) / 2.0,
                (p[2] + q[2]) / 2.0,
            ];
            if seen.insert(key(&mid)) {
                out.push(mid);
            }
        }
    }
    Ok(out)
}

/// Midpoint interpolation followed by farthest-point selection of exactly
/// `round(rate * n)` points, starting from the first input point.
///
/// When the `k`-neighbor candidates are too few for the requested rate, `k`
/// is doubled (up to `n - 1`); if even that is not enough, another round of
/// interpolation runs on the candidate set.
pub fn midpoint_interpolate(cloud: &PointCloud, rate: f64, k: usize) -> Result<PointCloud> {
    let n = cloud.len();
    let m = target_count(n, rate)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if n < k + 1 {
        return Err(Error::KTooLarge {
            k,
            available: n.saturating_sub(1),
        });
    }
    let mut k = k;
    let mut base = cloud.clone();
    let pool = loop {
        let c = candidates(&base, k)?;
        if c.len() >= m {
            break c;
        }
        let limit = base.len() - 1;
        if k < limit {
            k = (2 * k).min(limit);
        } else {
            if c.len() == base.len() {
                // only possible when every point coincides
                return Err(Error::SampleTooLarge {
                    requested: m,
                    count: c.len(),
                });
            }
            base = PointCloud::new(c)?;
        }
    };
    let pool = PointCloud::new(pool)?;
    let picked = farthest_point_sample(&pool, m, 0)?;
    pool.select(&picked)
}

/// Anything that predicts a distance to the surface at query positions and
/// a first-step shift.
pub trait RefinementField {
    /// Predicted distance per position and its gradient with respect to
    /// that position. `fed_back` holds the previous prediction per point.
    fn distance_grad(
        &self,
        positions: &[Point3],
        fed_back: &[f64],
    ) -> Result<(Vec<f64>, Vec<Point3>)>;

    /// Displacement added once before the gradient steps.
    fn shift(&self, positions: &[Point3]) -> Result<Vec<Point3>>;
}

/// Gradient descent `p <- p - lambda * grad d(p)` on any field.
pub fn refine_with(
    field: &dyn RefinementField,
    cloud: &PointCloud,
    cfg: &RefinementConfig,
) -> Result<PointCloud> {
    cfg.validate()?;
    let mut p = cloud.points().to_vec();
    if cfg.apply_shift {
        let s = field.shift(&p)?;
        for (pi, si) in p.iter_mut().zip(&s) {
            for a in 0..3 {
                pi[a] += si[a];
            }
        }
    }
    let mut fed = vec![0.0; p.len()];
    for t in 0..cfg.iterations {
        let (d, g) = field.distance_grad(&p, &fed)?;
        for (pi, gi) in p.iter_mut().zip(&g) {
            for a in 0..3 {
                pi[a] -= cfg.lambda * gi[a];
            }
        }
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::RefinementDiverged { iteration: t });
        }
        fed = d;
    }
    PointCloud::new(p)
}

/// Refines a normalized interpolated cloud with the network, whose features
/// are extracted once from that cloud.
pub fn refine(
    cloud: &PointCloud,
    net: &Network,
    params: &ParamSet,
    cfg: &RefinementConfig,
) -> Result<PointCloud> {
    if cfg.iterations == 0 && !cfg.apply_shift {
        cfg.validate()?;
        return Ok(cloud.clone());
    }
    let field = NetworkField::new(net, params, cloud)?;
    refine_with(&field, cloud, cfg)
}

/// Normalize, interpolate, refine and map back to the input frame.
pub fn upsample(
    cloud: &PointCloud,
    rate: f64,
    net: &Network,
    params: &ParamSet,
    cfg: &RefinementConfig,
) -> Result<PointCloud> {
    let (normed, tf) = normalize_unit_sphere(cloud)?;
    let interp = midpoint_interpolate(&normed, rate, cfg.k_midpoint)?;
    let refined = refine(&interp, net, params, cfg)?;
    Ok(tf.invert(&refined))
}

/// Interpolation only, in the input frame; the baseline refinement is
/// measured against.
pub fn interpolate_only(cloud: &PointCloud, rate: f64, k: usize) -> Result<PointCloud> {
    let (normed, tf) = normalize_unit_sphere(cloud)?;
    Ok(tf.invert(&midpoint_interpolate(&normed, rate, k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::ExtractorConfig;
    use crate::geometry::dist2;
    use crate::model::NetworkConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| [rng.random(), rng.random(), rng.random()])
                .collect(),
        )
        .unwrap()
    }

    fn tiny() -> Network {
        Network::new(NetworkConfig {
            extractor: ExtractorConfig {
                init_dim: 4,
                mixer_dim: 4,
                transition_dim: 6,
                blocks: 1,
                mixers_per_block: 2,
                k_conv: 3,
                state_dim: 4,
                conv_width: 3,
                expand: 2,
            },
            hidden: 8,
        })
    }

    /// `d(p) = |p|^2`, no shift.
    struct Paraboloid;

    impl RefinementField for Paraboloid {
        fn distance_grad(&self, p: &[Point3], _: &[f64]) -> Result<(Vec<f64>, Vec<Point3>)> {
            Ok((
                p.iter().map(|q| dist2(q, &[0.0; 3])).collect(),
                p.iter()
                    .map(|q| [2.0 * q[0], 2.0 * q[1], 2.0 * q[2]])
                    .collect(),
            ))
        }

        fn shift(&self, p: &[Point3]) -> Result<Vec<Point3>> {
            Ok(vec![[0.0; 3]; p.len()])
        }
    }

    struct Exploding;

    impl RefinementField for Exploding {
        fn distance_grad(&self, p: &[Point3], _: &[f64]) -> Result<(Vec<f64>, Vec<Point3>)> {
            Ok((vec![0.0; p.len()], vec![[f64::NAN, 0.0, 0.0]; p.len()]))
        }

        fn shift(&self, p: &[Point3]) -> Result<Vec<Point3>> {
            Ok(vec![[0.0; 3]; p.len()])
        }
    }

    #[test]
    fn midpoint_of_a_pair() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let cand = candidates(&c, 1).unwrap();
        assert_eq!(
            cand,
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn unit_square_gains_its_edge_midpoints() {
        let c = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        let out = midpoint_interpolate(&c, 2.0, 2).unwrap();
        assert_eq!(out.len(), 8);
        for m in [
            [0.5, 0.0, 0.0],
            [1.0, 0.5, 0.0],
            [0.5, 1.0, 0.0],
            [0.0, 0.5, 0.0],
        ] {
            assert!(out.points().contains(&m), "{m:?}");
        }
        // the oracle enumeration: corners plus edge midpoints, nothing else
        let mut sorted: Vec<_> = out.points().to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = vec![
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 1.0, 0.0],
            [0.5, 0.0, 0.0],
            [0.5, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 0.5, 0.0],
            [1.0, 1.0, 0.0],
        ];
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, expected);
    }

    #[test]
    fn count_contract_at_rate_four() {
        let c = random_cloud(1024, 1);
        assert_eq!(midpoint_interpolate(&c, 4.0, 4).unwrap().len(), 4096);
    }

    #[test]
    fn rates_at_or_below_one_are_rejected() {
        let c = random_cloud(10, 2);
        for r in [1.0, 0.5, f64::NAN] {
            assert!(matches!(
                midpoint_interpolate(&c, r, 4),
                Err(Error::InvalidRate(_))
            ));
        }
    }

    #[test]
    fn too_few_points_for_k() {
        let c = random_cloud(4, 3);
        assert!(matches!(
            midpoint_interpolate(&c, 2.0, 4),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn tiny_cloud_at_high_rate_still_fills_the_count() {
        let c = random_cloud(3, 4);
        assert_eq!(midpoint_interpolate(&c, 8.0, 2).unwrap().len(), 24);
    }

    #[test]
    fn analytic_field_single_step() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let cfg = RefinementConfig {
            iterations: 1,
            lambda: 0.1,
            apply_shift: false,
            k_midpoint: 4,
        };
        let out = refine_with(&Paraboloid, &c, &cfg).unwrap();
        assert!(dist2(&out.points()[0], &[0.8, 0.0, 0.0]) < 1e-30);
    }

    #[test]
    fn divergence_reports_the_iteration() {
        let c = random_cloud(3, 5);
        let cfg = RefinementConfig::default();
        assert!(matches!(
            refine_with(&Exploding, &c, &cfg),
            Err(Error::RefinementDiverged { iteration: 0 })
        ));
    }

    #[test]
    fn zero_step_without_shift_is_identity() {
        let net = tiny();
        let params = net.init(3);
        let c = random_cloud(12, 6);
        for iterations in [0, 3] {
            let cfg = RefinementConfig {
                iterations,
                lambda: 0.0,
                apply_shift: false,
                k_midpoint: 4,
            };
            assert_eq!(refine(&c, &net, &params, &cfg).unwrap(), c);
        }
    }

    #[test]
    fn untrained_network_with_zero_step_returns_interpolation() {
        let net = tiny();
        let params = net.init(4);
        let c = random_cloud(20, 7);
        let cfg = RefinementConfig {
            lambda: 0.0,
            apply_shift: false,
            ..RefinementConfig::default()
        };
        let up = upsample(&c, 3.0, &net, &params, &cfg).unwrap();
        assert_eq!(up, interpolate_only(&c, 3.0, 4).unwrap());
    }

    #[test]
    fn refinement_moves_points_with_default_settings() {
        let net = tiny();
        let params = net.init(5);
        let c = random_cloud(16, 8);
        let (normed, _) = normalize_unit_sphere(&c).unwrap();
        let out = refine(&normed, &net, &params, &RefinementConfig::default()).unwrap();
        assert_eq!(out.len(), normed.len());
        assert_ne!(out, normed);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn cardinality_and_exact_midpoints(seed in 0u64..1000, rate in 2.0f64..8.0) {
            let c = random_cloud(24, seed);
            let out = midpoint_interpolate(&c, rate, 4).unwrap();
            prop_assert_eq!(out.len(), (rate * 24.0).round() as usize);
            let pts = c.points();
            for q in out.points() {
                let is_input = pts.contains(q);
                let is_mid = pts.iter().any(|a| pts.iter().any(|b| {
                    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0] == *q
                }));
                prop_assert!(is_input || is_mid);
            }
        }
    }
}
