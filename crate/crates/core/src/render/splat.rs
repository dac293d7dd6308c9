use std::rc::Rc;

use super::camera::{CameraPose, CameraRig};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub depth_bins: usize,
    /// Splat standard deviation in grid cells.
    pub sigma: f64,
    pub background: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            depth_bins: 64,
            sigma: 1.0,
            background: 1.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if self.depth_bins < 2 {
            return Err(Error::InvalidArgument(
                "at least 2 depth bins are required".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::InvalidArgument(format!(
                "background depth must lie in [0, 1], got {}",
                self.background
            )));
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.width * self.height * self.depth_bins
    }

    /// Depth of the center of bin `z`.
    fn bin_depth(&self, z: usize) -> f64 {
        (z as f64 + 0.5) / self.depth_bins as f64
    }
}

/// Expected-depth image. Row `y` grows along the camera's up vector, so row
/// 0 is the bottom row.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height` rows of `width` values.
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.height, self.width, self.values.clone()).expect("consistent size")
    }
}

/// Continuous grid coordinates of a point; cell `(x, y, z)` has its center
/// at integer coordinates.
fn project(p: &Point3, pose: &CameraPose, cfg: &RenderConfig) -> [f64; 3] {
    let dot = |a: &Point3| p[0] * a[0] + p[1] * a[1] + p[2] * a[2];
    let u = dot(&pose.right);
    let v = dot(&pose.up);
    let depth = (dot(&pose.view) + 1.0) / 2.0;
    [
        (u + 1.0) / 2.0 * cfg.width as f64 - 0.5,
        (v + 1.0) / 2.0 * cfg.height as f64 - 0.5,
        depth * cfg.depth_bins as f64 - 0.5,
    ]
}

fn cell_range(center: f64, radius: f64, len: usize) -> std::ops::RangeInclusive<usize> {
    let lo = (center - radius).ceil().max(0.0);
    let hi = (center + radius).floor().min(len as f64 - 1.0);
    if hi < lo {
        // empty range
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    lo as usize..=hi as usize
}

/// Visits every grid cell within `3 sigma` of the projected point with its
/// flat index, offset from the point and unnormalized Gaussian weight.
fn for_each_cell(g: [f64; 3], cfg: &RenderConfig, mut f: impl FnMut(usize, [f64; 3], f64)) {
    let r = 3.0 * cfg.sigma;
    let r2 = r * r;
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for y in cell_range(g[1], r, cfg.height) {
        let dy = y as f64 - g[1];
        for x in cell_range(g[0], r, cfg.width) {
            let dx = x as f64 - g[0];
            let dxy = dx * dx + dy * dy;
            if dxy > r2 {
                continue;
            }
            let base = (y * cfg.width + x) * cfg.depth_bins;
            for z in cell_range(g[2], r, cfg.depth_bins) {
                let dz = z as f64 - g[2];
                let d2 = dxy + dz * dz;
                if d2 <= r2 {
                    f(base + z, [dx, dy, dz], (-d2 * inv).exp());
                }
            }
        }
    }
}

/// Summed splat densities, indexed `(y * W + x) * D + z`.
fn density(points: &[Point3], pose: &CameraPose, cfg: &RenderConfig) -> Vec<f64> {
    let mut rho = vec![0.0; cfg.cells()];
    for p in points {
        for_each_cell(project(p, pose, cfg), cfg, |i, _, w| rho[i] += w);
    }
    rho
}

/// Front-to-back compositing of one ray: returns the expected depth and the
/// total termination probability `sum_d r_d`.
fn composite(rho: &[f64], cfg: &RenderConfig) -> (f64, f64) {
    let mut transmit = 1.0;
    let mut expected = 0.0;
    for (z, &r) in rho.iter().enumerate() {
        // o = 1 - exp(-rho), and 1 - o = exp(-rho) exactly
        let o = -(-r).exp_m1();
        expected += transmit * o * cfg.bin_depth(z);
        transmit *= (-r).exp();
    }
    (expected + transmit * cfg.background, 1.0 - transmit)
}

fn check_unit_ball(cloud: &PointCloud) -> Result<()> {
    for (i, p) in cloud.iter().enumerate() {
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if n > 1.0 {
            return Err(Error::OutsideUnitBall { index: i, norm: n });
        }
    }
    Ok(())
}

/// Renders a normalized cloud (every point inside the unit ball) to an
/// expected-depth image.
pub fn render_depth(
    cloud: &PointCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<DepthImage> {
    cfg.validate()?;
    check_unit_ball(cloud)?;
    Ok(render_points(cloud.points(), pose, cfg))
}

/// As [`render_depth`] without the unit-ball check; points outside the view
/// volume simply lose the splat cells that fall off the grid.
pub fn render_points(points: &[Point3], pose: &CameraPose, cfg: &RenderConfig) -> DepthImage {
    let rho = density(points, pose, cfg);
    let values = rho
        .chunks(cfg.depth_bins)
        .map(|ray| composite(ray, cfg).0)
        .collect();
    DepthImage {
        width: cfg.width,
        height: cfg.height,
        values,
    }
}

/// Per-pixel total termination probability `sum_d r_d`, row-major.
pub fn termination_mass(points: &[Point3], pose: &CameraPose, cfg: &RenderConfig) -> Vec<f64> {
    density(points, pose, cfg)
        .chunks(cfg.depth_bins)
        .map(|ray| composite(ray, cfg).1)
        .collect()
}

/// Renders every pose of the rig.
pub fn render_rig(
    cloud: &PointCloud,
    rig: &CameraRig,
    cfg: &RenderConfig,
) -> Result<Vec<DepthImage>> {
    rig.poses
        .iter()
        .map(|p| render_depth(cloud, p, cfg))
        .collect()
}

/// Smallest distance, in coordinate units, by which any point would have to
/// move for a splat cell to cross the `3 sigma` truncation sphere. The
/// rendered depth is non-differentiable exactly there.
pub fn truncation_margin(points: &[Point3], pose: &CameraPose, cfg: &RenderConfig) -> f64 {
    let r = 3.0 * cfg.sigma;
    // a unit move of the point shifts its grid position by at most this
    let stretch = cfg.width.max(cfg.height).max(cfg.depth_bins) as f64 / 2.0;
    let mut margin = f64::INFINITY;
    for p in points {
        let g = project(p, pose, cfg);
        for y in cell_range(g[1], r + 1.0, cfg.height) {
            for x in cell_range(g[0], r + 1.0, cfg.width) {
                for z in cell_range(g[2], r + 1.0, cfg.depth_bins) {
                    let d = ((x as f64 - g[0]).powi(2)
                        + (y as f64 - g[1]).powi(2)
                        + (z as f64 - g[2]).powi(2))
                    .sqrt();
                    margin = margin.min((d - r).abs() / stretch);
                }
            }
        }
    }
    margin
}

/// Expected-depth rendering as a tape op: `points: n x 3 -> H x W`.
#[derive(Debug)]
pub struct RenderOp {
    pub pose: CameraPose,
    pub cfg: RenderConfig,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "render_depth"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let pts = inputs[0].to_points()?;
        render_points(&pts, &self.pose, &self.cfg)
            .to_tensor()
            .reshape(&[self.cfg.height, self.cfg.width])
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let cfg = &self.cfg;
        let pose = &self.pose;
        let pts = inputs[0].to_points()?;
        let rho = density(&pts, pose, cfg);
        let d = cfg.depth_bins;

        // dE/drho_k = T_{k+1} (depth_k - bg - G_{k+1}), where G_k is the
        // expected depth minus background of the ray suffix starting at k
        let mut g_rho = vec![0.0; rho.len()];
        let mut transmit = vec![0.0; d + 1];
        for (ray, (r, gr)) in rho.chunks(d).zip(g_rho.chunks_mut(d)).enumerate() {
            let ge = grad.data()[ray];
            if ge == 0.0 {
                continue;
            }
            transmit[0] = 1.0;
            for k in 0..d {
                transmit[k + 1] = transmit[k] * (-r[k]).exp();
            }
            let mut suffix = 0.0;
            for k in (0..d).rev() {
                let o = -(-r[k]).exp_m1();
                let rel = cfg.bin_depth(k) - cfg.background;
                gr[k] = ge * transmit[k + 1] * (rel - suffix);
                suffix = o * rel + (1.0 - o) * suffix;
            }
        }

        let s2 = cfg.sigma * cfg.sigma;
        let scale = [
            cfg.width as f64 / 2.0,
            cfg.height as f64 / 2.0,
            cfg.depth_bins as f64 / 2.0,
        ];
        let axes = [pose.right, pose.up, pose.view];
        let mut out = Vec::with_capacity(pts.len() * 3);
        for p in &pts {
            // d rho / d g = w (cell - g) / sigma^2
            let mut dg = [0.0; 3];
            for_each_cell(project(p, pose, cfg), cfg, |i, off, w| {
                let c = g_rho[i] * w / s2;
                for a in 0..3 {
                    dg[a] += c * off[a];
                }
            });
            for coord in 0..3 {
                out.push((0..3).map(|a| dg[a] * scale[a] * axes[a][coord]).sum());
            }
        }
        Ok(vec![Some(Tensor::new(vec![pts.len(), 3], out)?)])
    }
}

/// Records a rendering of `points` (`n x 3`) on the tape.
pub fn render_on_tape(
    tape: &mut Tape,
    points: Var,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<Var> {
    cfg.validate()?;
    tape.custom(
        Rc::new(RenderOp {
            pose: *pose,
            cfg: cfg.clone(),
        }),
        &[points],
    )
}

fn check_pair(rendered: &[DepthImage], reference: &[DepthImage]) -> Result<()> {
    if rendered.len() != reference.len() {
        return Err(Error::ConfigMismatch(format!(
            "{} rendered views against {} reference views",
            rendered.len(),
            reference.len()
        )));
    }
    for (a, b) in rendered.iter().zip(reference) {
        if (a.width, a.height) != (b.width, b.height) {
            return Err(Error::ConfigMismatch(format!(
                "{}x{} image against {}x{}",
                a.width, a.height, b.width, b.height
            )));
        }
    }
    Ok(())
}

/// Sum over views and pixels of absolute depth differences.
pub fn view_loss(rendered: &[DepthImage], reference: &[DepthImage]) -> Result<f64> {
    check_pair(rendered, reference)?;
    Ok(rendered
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .sum())
}

/// [`view_loss`] of a tape point set against fixed reference images.
pub fn view_loss_on_tape(
    tape: &mut Tape,
    points: Var,
    reference: &[DepthImage],
    rig: &CameraRig,
    cfg: &RenderConfig,
) -> Result<Var> {
    if rig.poses.len() != reference.len() {
        return Err(Error::ConfigMismatch(format!(
            "{} cameras against {} reference views",
            rig.poses.len(),
            reference.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (pose, img) in rig.poses.iter().zip(reference) {
        if (img.width, img.height) != (cfg.width, cfg.height) {
            return Err(Error::ConfigMismatch(format!(
                "reference image {}x{} but config renders {}x{}",
                img.width, img.height, cfg.width, cfg.height
            )));
        }
        let r = render_on_tape(tape, points, pose, cfg)?;
        let target = tape.leaf(img.to_tensor());
        let diff = tape.sub(r, target)?;
        let a = tape.abs(diff)?;
        let s = tape.sum(a)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.leaf(Tensor::scalar(0.0))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::make_camera_rig;
    use crate::tensor::GradCheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        while pts.len() < n {
            let p = [
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            ];
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 0.64 {
                pts.push(p);
            }
        }
        PointCloud::new(pts).unwrap()
    }

    fn small_cfg() -> RenderConfig {
        RenderConfig {
            width: 8,
            height: 8,
            depth_bins: 16,
            sigma: 1.0,
            background: 1.0,
        }
    }

    #[test]
    fn empty_cloud_is_background() {
        let rig = make_camera_rig(3);
        for pose in &rig.poses {
            let img = render_depth(&PointCloud::empty(), pose, &RenderConfig::default()).unwrap();
            assert!(img.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn single_point_hand_value() {
        // grid (1,1,2), sigma 0.5: the point sits at x = y = 0 and z = 0.5,
        // so both depth cells are 0.5 cells away
        let cfg = RenderConfig {
            width: 1,
            height: 1,
            depth_bins: 2,
            sigma: 0.5,
            background: 1.0,
        };
        let rho: f64 = (-0.25f64 / (2.0 * 0.25)).exp();
        let o = 1.0 - (-rho).exp();
        let r0 = o;
        let r1 = (1.0 - o) * o;
        let expect = r0 * 0.25 + r1 * 0.75 + (1.0 - r0 - r1) * 1.0;
        assert!((expect - 0.596_94).abs() < 1e-5);
        let pose = make_camera_rig(1).poses[0];
        let img = render_depth(&PointCloud::new(vec![[0.0; 3]]).unwrap(), &pose, &cfg).unwrap();
        assert!((img.values[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn moving_toward_camera_reduces_depth() {
        let cfg = RenderConfig {
            width: 1,
            height: 1,
            depth_bins: 8,
            sigma: 0.5,
            background: 1.0,
        };
        let pose = make_camera_rig(1).poses[0];
        let mut last = f64::INFINITY;
        for step in 0..10 {
            // toward the camera is against the view direction
            let t = 0.5 - step as f64 * 0.1;
            let p = [pose.view[0] * t, pose.view[1] * t, pose.view[2] * t];
            let img = render_depth(&PointCloud::new(vec![p]).unwrap(), &pose, &cfg).unwrap();
            assert!(img.values[0] < last);
            last = img.values[0];
        }
    }

    #[test]
    fn rejects_points_outside_unit_ball() {
        let pose = make_camera_rig(1).poses[0];
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.0]]).unwrap();
        assert!(matches!(
            render_depth(&c, &pose, &RenderConfig::default()),
            Err(Error::OutsideUnitBall { index: 1, .. })
        ));
    }

    #[test]
    fn view_loss_examples() {
        let img = |v: f64| DepthImage {
            width: 1,
            height: 1,
            values: vec![v],
        };
        let loss = view_loss(&[img(0.3), img(0.3)], &[img(0.7), img(0.7)]).unwrap();
        assert!((loss - 0.8).abs() < 1e-15);
        let rig = make_camera_rig(4);
        let cfg = small_cfg();
        let c = ball_cloud(20, 1);
        let a = render_rig(&c, &rig, &cfg).unwrap();
        assert_eq!(view_loss(&a, &a).unwrap(), 0.0);
        let e = render_rig(&PointCloud::empty(), &rig, &cfg).unwrap();
        assert!(view_loss(&a, &e).unwrap() > 0.0);
        assert!(matches!(
            view_loss(&a, &e[..2]),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn tape_render_matches_plain_render() {
        let rig = make_camera_rig(2);
        let cfg = small_cfg();
        let c = ball_cloud(6, 2);
        let mut t = Tape::new();
        let p = t.leaf(Tensor::from_points(c.points()));
        let r = render_on_tape(&mut t, p, &rig.poses[1], &cfg).unwrap();
        let plain = render_depth(&c, &rig.poses[1], &cfg).unwrap();
        assert_eq!(t.value(r).data(), &plain.values[..]);
    }

    #[test]
    fn view_loss_gradient() {
        let rig = make_camera_rig(2);
        let cfg = small_cfg();
        let cloud = ball_cloud(4, 3);
        let reference = render_rig(&ball_cloud(4, 4), &rig, &cfg).unwrap();
        let x = Tensor::from_points(cloud.points());
        let margin = rig
            .poses
            .iter()
            .map(|p| truncation_margin(cloud.points(), p, &cfg))
            .fold(f64::INFINITY, f64::min);
        let r = GradCheck::new(1e-6)
            .kink_distance(|_, _| margin)
            .run(|t, v| view_loss_on_tape(t, v, &reference, &rig, &cfg), &x)
            .unwrap();
        assert_eq!(r.skipped, 0, "instance sits on a truncation boundary");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    proptest! {
        #[test]
        fn termination_is_a_sub_distribution(seed in 0u64..500, n in 0usize..30) {
            let pose = make_camera_rig(5).poses[(seed % 5) as usize];
            let c = ball_cloud(n, seed);
            for m in termination_mass(c.points(), &pose, &small_cfg()) {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            for v in render_depth(&c, &pose, &small_cfg()).unwrap().values {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn point_order_does_not_matter(seed in 0u64..500) {
            let pose = make_camera_rig(3).poses[(seed % 3) as usize];
            let c = ball_cloud(12, seed);
            let mut rev = c.points().to_vec();
            rev.reverse();
            let a = render_depth(&c, &pose, &small_cfg()).unwrap();
            let b = render_depth(&PointCloud::new(rev).unwrap(), &pose, &small_cfg()).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn view_loss_is_symmetric(s1 in 0u64..500, s2 in 0u64..500) {
            let rig = make_camera_rig(2);
            let a = render_rig(&ball_cloud(5, s1), &rig, &small_cfg()).unwrap();
            let b = render_rig(&ball_cloud(5, s2), &rig, &small_cfg()).unwrap();
            prop_assert_eq!(view_loss(&a, &b).unwrap(), view_loss(&b, &a).unwrap());
        }
    }
}
