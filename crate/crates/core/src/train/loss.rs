use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud};
use crate::render::{render_points, view_loss_on_tape, CameraRig, DepthImage, RenderConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Weights of the view and Chamfer terms relative to the refinement term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn non_empty(c: &PointCloud) -> Result<()> {
    if c.is_empty() {
        Err(Error::EmptyCloud)
    } else {
        Ok(())
    }
}

/// Index of the nearest point of `target` for every point of `query`.
pub(crate) fn nearest_indices(query: &PointCloud, target: &PointCloud) -> Result<Vec<usize>> {
    Ok(knn(target, query, 1, false)?.as_flat().to_vec())
}

fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Mean squared nearest-neighbor distance from `p` to `q` plus the same
/// from `q` to `p`.
pub fn chamfer_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    non_empty(p)?;
    non_empty(q)?;
    let one_way = |a: &PointCloud, b: &PointCloud| -> Result<f64> {
        let nn = nearest_indices(a, b)?;
        Ok(a.iter()
            .zip(&nn)
            .map(|(x, &j)| sq(x, &b.points()[j]))
            .sum::<f64>()
            / a.len() as f64)
    };
    Ok(one_way(p, q)? + one_way(q, p)?)
}

/// Mean Euclidean distance from each refined point to its nearest
/// ground-truth point.
pub fn l1_refinement_loss(refined: &PointCloud, q: &PointCloud) -> Result<f64> {
    non_empty(refined)?;
    non_empty(q)?;
    let nn = nearest_indices(refined, q)?;
    Ok(refined
        .iter()
        .zip(&nn)
        .map(|(x, &j)| sq(x, &q.points()[j]).sqrt())
        .sum::<f64>()
        / refined.len() as f64)
}

fn cloud_of(tape: &Tape, p: Var) -> Result<PointCloud> {
    PointCloud::new(tape.value(p).to_points()?)
}

fn gather_fixed(tape: &mut Tape, q: &PointCloud, idx: &[usize]) -> Result<Var> {
    let pts: Vec<_> = idx.iter().map(|&j| q.points()[j]).collect();
    Ok(tape.leaf(Tensor::from_points(&pts)))
}

/// [`chamfer_distance`] of a tape point set (`n x 3`) against a fixed cloud.
/// Nearest-neighbor assignments are taken at the current values.
pub fn chamfer_on_tape(tape: &mut Tape, p: Var, q: &PointCloud) -> Result<Var> {
    let pc = cloud_of(tape, p)?;
    non_empty(&pc)?;
    non_empty(q)?;
    let forward = nearest_indices(&pc, q)?;
    let target = gather_fixed(tape, q, &forward)?;
    let d = tape.sub(p, target)?;
    let d = tape.square(d)?;
    let a = tape.sum(d)?;
    let a = tape.scale(a, 1.0 / pc.len() as f64)?;
    let backward = nearest_indices(q, &pc)?;
    let picked = tape.gather(p, backward)?;
    let fixed = tape.leaf(Tensor::from_points(q.points()));
    let d = tape.sub(picked, fixed)?;
    let d = tape.square(d)?;
    let b = tape.sum(d)?;
    let b = tape.scale(b, 1.0 / q.len() as f64)?;
    tape.add(a, b)
}

/// [`l1_refinement_loss`] on the tape.
pub fn l1_on_tape(tape: &mut Tape, refined: Var, q: &PointCloud) -> Result<Var> {
    let pc = cloud_of(tape, refined)?;
    non_empty(&pc)?;
    non_empty(q)?;
    let nn = nearest_indices(&pc, q)?;
    let target = gather_fixed(tape, q, &nn)?;
    let d = tape.sub(refined, target)?;
    let norms = tape.row_norm(d)?;
    tape.mean(norms)
}

/// Scale applied to both clouds before rendering, keeping displaced points
/// inside the unit ball the grid covers.
pub const RENDER_FRAME_SCALE: f64 = 0.8;

/// Fixed reference renderings of the ground truth for the view term.
pub fn reference_views(q: &PointCloud, rig: &CameraRig, cfg: &RenderConfig) -> Vec<DepthImage> {
    let scaled: Vec<_> = q
        .iter()
        .map(|p| {
            [
                p[0] * RENDER_FRAME_SCALE,
                p[1] * RENDER_FRAME_SCALE,
                p[2] * RENDER_FRAME_SCALE,
            ]
        })
        .collect();
    rig.poses
        .iter()
        .map(|pose| render_points(&scaled, pose, cfg))
        .collect()
}

/// Views, cameras and grid used by the view term.
pub struct ViewTarget<'a> {
    pub reference: &'a [DepthImage],
    pub rig: &'a CameraRig,
    pub cfg: &'a RenderConfig,
}

/// The three terms and their weighted total, all on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub refine: Var,
    pub view: Var,
    pub chamfer: Var,
    pub total: Var,
}

/// `L_d + alpha * L_v + beta * L_cd`: the refinement and Chamfer terms on
/// the refined points, the view term on the shifted temporary cloud.
pub fn total_loss(
    tape: &mut Tape,
    refined: Var,
    shifted: Var,
    q: &PointCloud,
    views: &ViewTarget<'_>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let refine = l1_on_tape(tape, refined, q)?;
    let scaled = tape.scale(shifted, RENDER_FRAME_SCALE)?;
    let view = view_loss_on_tape(tape, scaled, views.reference, views.rig, views.cfg)?;
    let chamfer = chamfer_on_tape(tape, refined, q)?;
    let v = tape.scale(view, cfg.alpha)?;
    let c = tape.scale(chamfer, cfg.beta)?;
    let total = tape.add(refine, v)?;
    let total = tape.add(total, c)?;
    Ok(LossTerms {
        refine,
        view,
        chamfer,
        total,
    })
}
