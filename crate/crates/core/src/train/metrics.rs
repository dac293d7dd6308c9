use super::loss::{chamfer_distance, nearest_indices};
use crate::error::{Error, Result};
use crate::geometry::{dist2, PointCloud};

/// Evaluation scores of a prediction against ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub cd: f64,
    pub hd: f64,
    /// Mean distance to the dense surface proxy; `None` without one.
    pub p2f: Option<f64>,
    pub fscore: f64,
}

/// Euclidean distance from every point of `a` to its nearest point in `b`.
fn nn_distances(a: &PointCloud, b: &PointCloud) -> Result<Vec<f64>> {
    let nn = nearest_indices(a, b)?;
    Ok(a.iter()
        .zip(nn)
        .map(|(p, j)| dist2(p, &b.points()[j]).sqrt())
        .collect())
}

/// Symmetric Hausdorff distance (unsquared).
pub fn hausdorff_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let worst = |a, b| nn_distances(a, b).map(|d| d.into_iter().fold(0.0, f64::max));
    Ok(worst(p, q)?.max(worst(q, p)?))
}

/// Mean distance from each point of `p` to the dense proxy surface.
pub fn p2f_distance(p: &PointCloud, dense: &PointCloud) -> Result<f64> {
    if p.is_empty() || dense.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(nn_distances(p, dense)?.iter().sum::<f64>() / p.len() as f64)
}

/// Harmonic mean of precision and recall at an absolute distance
/// threshold; zero when both are zero.
pub fn fscore(p: &PointCloud, q: &PointCloud, threshold: f64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let frac = |a, b| -> Result<f64> {
        let d = nn_distances(a, b)?;
        Ok(d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64)
    };
    let precision = frac(p, q)?;
    let recall = frac(q, p)?;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// CD, HD and F-score against `gt`, P2F against `dense` when given. The
/// F-score threshold is `threshold_frac` times the bounding-box diagonal of
/// `gt`.
pub fn evaluate(
    pred: &PointCloud,
    gt: &PointCloud,
    dense: Option<&PointCloud>,
    threshold_frac: f64,
) -> Result<Metrics> {
    if !(threshold_frac >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be >= 0, got {threshold_frac}"
        )));
    }
    Ok(Metrics {
        cd: chamfer_distance(pred, gt)?,
        hd: hausdorff_distance(pred, gt)?,
        p2f: dense.map(|d| p2f_distance(pred, d)).transpose()?,
        fscore: fscore(pred, gt, threshold_frac * gt.bbox_diagonal())?,
    })
}

/// All four scores against a single dense reference.
pub fn metrics(pred: &PointCloud, dense: &PointCloud, threshold_frac: f64) -> Result<Metrics> {
    evaluate(pred, dense, Some(dense), threshold_frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| [rng.random(), rng.random(), rng.random()])
                .collect(),
        )
        .unwrap()
    }

    fn naive_min(x: &[f64; 3], b: &PointCloud) -> f64 {
        b.iter()
            .map(|y| dist2(x, y).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hausdorff_hand_value() {
        let p = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let q = PointCloud::new(vec![[3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(hausdorff_distance(&p, &q).unwrap(), 3.0);
    }

    #[test]
    fn subsample_of_reference() {
        let q = cloud(100, 1);
        let sub = q.select(&(0..100).step_by(3).collect::<Vec<_>>()).unwrap();
        let m = metrics(&sub, &q, 0.01).unwrap();
        assert_eq!(m.p2f, Some(0.0));
        let same = metrics(&q, &q, 0.01).unwrap();
        assert_eq!((same.cd, same.hd, same.fscore), (0.0, 0.0, 1.0));
    }

    #[test]
    fn missing_dense_reference_leaves_p2f_empty() {
        let p = cloud(10, 2);
        assert_eq!(evaluate(&p, &p, None, 0.01).unwrap().p2f, None);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let p = cloud(10, 3);
        assert!(matches!(
            metrics(&PointCloud::empty(), &p, 0.01),
            Err(Error::EmptyCloud)
        ));
        assert!(matches!(
            metrics(&p, &PointCloud::empty(), 0.01),
            Err(Error::EmptyCloud)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scores_match_double_loop_oracles(seed in 0u64..10_000, n in 1usize..50, m in 1usize..50, frac in 0.0f64..0.5) {
            let p = cloud(n, seed);
            let q = cloud(m, seed + 7);
            let got = metrics(&p, &q, frac).unwrap();
            let pq: Vec<f64> = p.iter().map(|x| naive_min(x, &q)).collect();
            let qp: Vec<f64> = q.iter().map(|x| naive_min(x, &p)).collect();
            let hd = pq.iter().chain(&qp).cloned().fold(0.0, f64::max);
            let p2f = pq.iter().sum::<f64>() / n as f64;
            let thr = frac * q.bbox_diagonal();
            let prec = pq.iter().filter(|&&d| d <= thr).count() as f64 / n as f64;
            let rec = qp.iter().filter(|&&d| d <= thr).count() as f64 / m as f64;
            let f = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
            prop_assert!((got.hd - hd).abs() < 1e-12);
            prop_assert!((got.p2f.unwrap() - p2f).abs() < 1e-12);
            prop_assert!((got.fscore - f).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got.fscore));
        }

        #[test]
        fn fscore_is_monotone_in_threshold(seed in 0u64..10_000, a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let p = cloud(20, seed);
            let q = cloud(25, seed + 3);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fscore(&p, &q, lo).unwrap() <= fscore(&p, &q, hi).unwrap());
        }
    }
}
