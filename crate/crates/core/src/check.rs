//! Self-check suites behind `mbpu check`: finite-difference gradients,
//! scan fidelity and timing, and brute-force oracles for the geometric
//! kernels and metrics.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::extractor::{conv_neighbors, P3DConv};
use crate::geometry::{dist2, farthest_point_sample, knn, PointCloud};
use crate::model::Network;
use crate::nn::{check_param_grads, ParamSet, ParamVars};
use crate::regressor::{Regressor, RegressorConfig};
use crate::render::{
    make_camera_rig, truncation_margin, view_loss_on_tape, CameraRig, RenderConfig,
};
use crate::ssm::{
    scan_benchmark, selective_scan, widen_step_sizes, MambaBlock, MambaConfig, ScanTiming,
};
use crate::tensor::{finite_diff_check, GradCheck, GradCheckReport, Tape, Tensor, Var};
use crate::train::{
    chamfer_distance, chamfer_on_tape, draw_pair, evaluate, l1_on_tape, l1_refinement_loss,
    pair_gradient, reference_views, total_loss, LossConfig, Shape, TrainConfig, ViewTarget,
    RENDER_FRAME_SCALE,
};

/// Step for elementwise checks.
const H: f64 = 1e-6;

/// Step for composite layers. Some of their gradient entries sit near 1e-5
/// against O(1) losses, where a 1e-6 step leaves the central difference with
/// roughly 1e-5 relative roundoff; truncation error stays far below that at
/// this width.
const LAYER_H: f64 = 1e-4;

/// Tolerance for elementwise and linear operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the end-to-end losses.
pub const LOSS_TOLERANCE: f64 = 1e-3;

/// One measured quantity against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckLine {
    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

/// Line for a check with kink exclusion. It fails when every coordinate was
/// skipped, since an empty check proves nothing.
fn kinked(name: &str, r: &GradCheckReport, tolerance: f64) -> CheckLine {
    let mut line = CheckLine::below(
        format!("{name} ({}/{} coords)", r.checked, r.checked + r.skipped),
        r.max_rel_error,
        tolerance,
    );
    line.passed &= r.checked > 0;
    line
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<40} {:.3e} (bound {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub lines: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    fn push(&mut self, line: CheckLine) {
        self.lines.push(line);
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape")
}

fn random_cloud(n: usize, r: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-r..r),
                    rng.random_range(-r..r),
                    rng.random_range(-r..r),
                ]
            })
            .collect(),
    )
    .expect("finite")
}

/// Contracts an output against fixed positive weights.
fn weighted_sum(t: &mut Tape, out: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let w = uniform(t.shape(out), 0.5, 1.5, &mut rng);
    let w = t.leaf(w);
    let p = t.mul(out, w)?;
    t.sum(p)
}

/// Worst relative error over all inputs of `f`, each checked with the
/// others held fixed.
fn op_error<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for which in 0..inputs.len() {
        let g = |t: &mut Tape, x: Var| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, v)| if j == which { x } else { t.leaf(v.clone()) })
                .collect();
            let out = f(t, &vars)?;
            weighted_sum(t, out)
        };
        worst = worst.max(finite_diff_check(g, &inputs[which], H)?);
    }
    Ok(worst)
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn core_ops(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut r = |shape: &[usize]| uniform(shape, -1.0, 1.0, rng);
    let (a, b) = (r(&[3, 4]), r(&[3, 4]));
    let v12 = r(&[12]);
    let x3 = r(&[3, 4, 2]);
    let mut out: Vec<(&'static str, Vec<Tensor>, OpFn)> = vec![
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![v12.clone()],
            Box::new(|t, v| t.scale(v[0], -2.5)),
        ),
        (
            "add_scalar",
            vec![v12.clone()],
            Box::new(|t, v| t.add_scalar(v[0], 0.75)),
        ),
        (
            "matmul",
            vec![r(&[3, 4]), r(&[4, 2])],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "transpose",
            vec![r(&[2, 3, 4])],
            Box::new(|t, v| t.transpose(v[0])),
        ),
        (
            "reshape",
            vec![r(&[2, 6])],
            Box::new(|t, v| t.reshape(v[0], &[3, 4])),
        ),
        (
            "concat",
            vec![r(&[2, 3]), r(&[2, 1])],
            Box::new(|t, v| t.concat(v, 1)),
        ),
        (
            "slice",
            vec![r(&[3, 5])],
            Box::new(|t, v| t.slice(v[0], 1, 1, 3)),
        ),
        (
            "gather",
            vec![r(&[4, 3])],
            Box::new(|t, v| t.gather(v[0], vec![3usize, 0, 3, 2])),
        ),
        (
            "broadcast",
            vec![r(&[2, 3])],
            Box::new(|t, v| t.broadcast(v[0], 1, 4)),
        ),
        (
            "sum_axis",
            vec![x3.clone()],
            Box::new(|t, v| t.sum_axis(v[0], 1)),
        ),
        (
            "mean_axis",
            vec![x3.clone()],
            Box::new(|t, v| t.mean_axis(v[0], 2)),
        ),
        (
            "max_axis",
            vec![x3.clone()],
            Box::new(|t, v| t.max_axis(v[0], 1)),
        ),
        ("sum", vec![x3.clone()], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![x3], Box::new(|t, v| t.mean(v[0]))),
        ("silu", vec![v12.clone()], Box::new(|t, v| t.silu(v[0]))),
        (
            "silu_deriv",
            vec![v12.clone()],
            Box::new(|t, v| t.silu_deriv(v[0])),
        ),
        (
            "sigmoid",
            vec![v12.clone()],
            Box::new(|t, v| t.sigmoid(v[0])),
        ),
        (
            "softplus",
            vec![v12.clone()],
            Box::new(|t, v| t.softplus(v[0])),
        ),
        ("exp", vec![v12.clone()], Box::new(|t, v| t.exp(v[0]))),
        ("square", vec![v12.clone()], Box::new(|t, v| t.square(v[0]))),
        ("abs", vec![v12.clone()], Box::new(|t, v| t.abs(v[0]))),
        ("relu", vec![v12], Box::new(|t, v| t.relu(v[0]))),
        (
            "row_norm",
            vec![r(&[4, 3])],
            Box::new(|t, v| t.row_norm(v[0])),
        ),
        (
            "dwconv1d",
            vec![r(&[6, 3]), r(&[3, 4])],
            Box::new(|t, v| t.dwconv1d(v[0], v[1])),
        ),
    ];
    let gain = uniform(&[5], 0.5, 1.5, rng);
    out.push((
        "layer_norm",
        vec![
            uniform(&[3, 5], -1.0, 1.0, rng),
            gain,
            uniform(&[5], -1.0, 1.0, rng),
        ],
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
    ));
    out.push((
        "reciprocal",
        vec![uniform(&[6], 0.5, 1.5, rng)],
        Box::new(|t, v| t.reciprocal(v[0])),
    ));
    let (n, d, s) = (7, 3, 4);
    out.push((
        "selective_scan",
        vec![
            uniform(&[n, d], -1.0, 1.0, rng),
            uniform(&[n, d], 0.1, 1.0, rng),
            uniform(&[n, s], -1.0, 1.0, rng),
            uniform(&[n, s], -1.0, 1.0, rng),
            uniform(&[d, s], -2.0, -0.1, rng),
            uniform(&[d], -1.0, 1.0, rng),
        ],
        Box::new(|t, v| crate::ssm::scan_on_tape(t, v[0], v[1], v[2], v[3], v[4], v[5])),
    ));
    out
}

fn worst(reports: &[(String, GradCheckReport)]) -> f64 {
    reports
        .iter()
        .map(|(_, r)| r.max_rel_error)
        .fold(0.0, f64::max)
}

fn layer_checks(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    // point convolution: features and weights
    let conv = P3DConv::new("conv", 4, 5);
    let mut params = ParamSet::new();
    conv.init(&mut params, rng);
    let cloud = random_cloud(9, 1.0, rng);
    let nb = conv_neighbors(&cloud, 4)?;
    let feat = uniform(&[9, 4], -1.0, 1.0, rng);
    let forward = |t: &mut Tape, vars: &ParamVars, f: Var| {
        let out = conv.forward(t, vars, f, &cloud, &nb)?;
        weighted_sum(t, out)
    };
    let input = GradCheck::new(LAYER_H).run(
        |t, f| {
            let v = params.bind(t);
            forward(t, &v, f)
        },
        &feat,
    )?;
    let weights = check_param_grads(
        &params,
        |t, vars| {
            let f = t.leaf(feat.clone());
            forward(t, vars, f)
        },
        LAYER_H,
        usize::MAX,
    )?;
    report.push(CheckLine::below(
        "p3dconv",
        input.max_rel_error.max(worst(&weights)),
        OP_TOLERANCE,
    ));

    // Mamba block: input and every parameter tensor
    let block = MambaBlock::new(
        "mamba",
        MambaConfig {
            dim: 4,
            state_dim: 4,
            conv_width: 4,
            expand: 2,
        },
    );
    let mut params = ParamSet::new();
    block.init(&mut params, rng);
    widen_step_sizes(&mut params, rng);
    let x = uniform(&[8, 4], -1.0, 1.0, rng);
    let loss = |t: &mut Tape, vars: &ParamVars, f: Var| {
        let s = block.forward(t, vars, f)?;
        let sq = t.square(s)?;
        t.sum(sq)
    };
    let input = GradCheck::new(LAYER_H).run(
        |t, f| {
            let v = params.bind(t);
            loss(t, &v, f)
        },
        &x,
    )?;
    let weights = check_param_grads(
        &params,
        |t, vars| {
            let f = t.leaf(x.clone());
            loss(t, vars, f)
        },
        LAYER_H,
        24,
    )?;
    report.push(CheckLine::below(
        "mamba_block",
        input.max_rel_error.max(worst(&weights)),
        OP_TOLERANCE,
    ));

    // regressor heads
    let reg = Regressor::new(
        "reg",
        RegressorConfig {
            input: 8,
            hidden: 6,
        },
    );
    let mut params = ParamSet::new();
    reg.init(&mut params, rng);
    let x = uniform(&[5, 8], -1.0, 1.0, rng);
    let loss = |t: &mut Tape, vars: &ParamVars, xv: Var| {
        let out = reg.forward_rows(t, vars, xv)?;
        let d = t.sum(out.distance)?;
        let s = t.square(out.shift)?;
        let s = t.sum(s)?;
        t.add(d, s)
    };
    let input = GradCheck::new(LAYER_H).run(
        |t, xv| {
            let v = params.bind(t);
            loss(t, &v, xv)
        },
        &x,
    )?;
    let weights = check_param_grads(
        &params,
        |t, vars| {
            let xv = t.leaf(x.clone());
            loss(t, vars, xv)
        },
        LAYER_H,
        usize::MAX,
    )?;
    report.push(CheckLine::below(
        "regressor_heads",
        input.max_rel_error.max(worst(&weights)),
        OP_TOLERANCE,
    ));
    Ok(())
}

/// Smallest half-gap between nearest and second-nearest distance in either
/// direction; perturbations below it cannot change an assignment.
fn assignment_margin(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    let gap = |a: &[[f64; 3]], b: &[[f64; 3]]| {
        a.iter()
            .map(|x| {
                let mut d: Vec<f64> = b.iter().map(|y| dist2(x, y).sqrt()).collect();
                d.sort_by(f64::total_cmp);
                if d.len() > 1 {
                    (d[1] - d[0]) / 2.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    gap(p, q).min(gap(q, p))
}

/// Truncation margin of the point owning flat coordinate `i`; moving one
/// coordinate only moves that point's splat.
fn render_margin(x: &Tensor, i: usize, rig: &CameraRig, cfg: &RenderConfig, scale: f64) -> f64 {
    let p = x.to_points().expect("n x 3")[i / 3].map(|v| v * scale);
    rig.poses
        .iter()
        .map(|pose| truncation_margin(&[p], pose, cfg))
        .fold(f64::INFINITY, f64::min)
        / scale
}

fn loss_checks(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let p = random_cloud(8, 0.5, rng);
    let q = random_cloud(8, 0.5, rng);
    let x = Tensor::from_points(p.points());
    let rig = make_camera_rig(2);
    let rcfg = RenderConfig {
        width: 8,
        height: 8,
        depth_bins: 16,
        ..RenderConfig::default()
    };
    let reference = reference_views(&q, &rig, &rcfg);
    let assign =
        |x: &Tensor, _: usize| assignment_margin(&x.to_points().expect("n x 3"), q.points());

    let r = GradCheck::new(H)
        .kink_distance(|x, i| render_margin(x, i, &rig, &rcfg, 1.0))
        .run(|t, v| view_loss_on_tape(t, v, &reference, &rig, &rcfg), &x)?;
    report.push(kinked("renderer_view_loss", &r, OP_TOLERANCE));

    let r = GradCheck::new(H)
        .kink_distance(assign)
        .run(|t, v| chamfer_on_tape(t, v, &q), &x)?;
    report.push(kinked("chamfer_loss", &r, OP_TOLERANCE));
    let r = GradCheck::new(H)
        .kink_distance(assign)
        .run(|t, v| l1_on_tape(t, v, &q), &x)?;
    report.push(kinked("refinement_loss", &r, OP_TOLERANCE));

    let target = ViewTarget {
        reference: &reference,
        rig: &rig,
        cfg: &rcfg,
    };
    let cfg = LossConfig {
        alpha: 0.5,
        beta: 1.0,
    };
    let r = GradCheck::new(H)
        .kink_distance(|x, i| {
            assign(x, i).min(render_margin(x, i, &rig, &rcfg, RENDER_FRAME_SCALE))
        })
        .run(|t, v| Ok(total_loss(t, v, v, &q, &target, &cfg)?.total), &x)?;
    report.push(kinked("total_loss (8 points, 2 views)", &r, LOSS_TOLERANCE));
    Ok(())
}

/// Weight gradient of the full training objective, refinement steps
/// included, against central differences on a handful of coordinates.
fn pipeline_check(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = TrainConfig::parse(
        "points = 8\nrate = 2\nviews = 2\nrender_width = 8\nrender_height = 8\ndepth_bins = 16\n\
         iterations = 2\nlambda = 0.05\nalpha = 0.01\ninit_dim = 4\nmixer_dim = 4\ntransition_dim = 6\n\
         blocks = 1\nmixers_per_block = 2\nstate_dim = 4\nconv_width = 3\nk_conv = 4\nhidden = 8\n",
    )?;
    let net = Network::new(cfg.network.clone());
    let params = net.init(rng.random());
    let pair = draw_pair(Shape::Sphere, cfg.points, cfg.rate, rng)?;
    let (_, grads) = pair_gradient(&net, &params, &pair, &cfg)?;
    let mut err: f64 = 0.0;
    for name in [
        "regressor.mlp0.w",
        "regressor.mlp1.w",
        "regressor.distance.b",
        "regressor.shift.w",
        "extractor.init.w",
        "extractor.block1.transition.w",
    ] {
        let len = params.get(name)?.len();
        for i in [0, len / 2, len - 1] {
            let probe = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                p.get_mut(name)?.data_mut()[i] += delta;
                Ok(pair_gradient(&net, &p, &pair, &cfg)?.0)
            };
            let numeric = (probe(H)? - probe(-H)?) / (2.0 * H);
            let analytic = grads.get(name)?.data()[i];
            err = err.max((numeric - analytic).abs() / numeric.abs().max(1e-8));
        }
    }
    report.push(CheckLine::below(
        "pipeline loss wrt weights (8 points, 2 views)",
        err,
        LOSS_TOLERANCE,
    ));
    Ok(())
}

/// Every finite-difference check: core ops, layers, renderer and losses.
pub fn grad_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ad);
    let mut report = SuiteReport::default();
    for (name, inputs, f) in core_ops(&mut rng) {
        report.push(CheckLine::below(name, op_error(&inputs, f)?, OP_TOLERANCE));
    }
    layer_checks(&mut report, &mut rng)?;
    loss_checks(&mut report, &mut rng)?;
    pipeline_check(&mut report, &mut rng)?;
    Ok(report)
}

/// The per-step recurrence written out directly: one state vector per
/// channel, `h <- exp(dt a) h + dt b x`, `y = c.h + D x`.
pub fn naive_selective_scan(
    x: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    dskip: &Tensor,
) -> Vec<f64> {
    let (n, d, s) = (x.dim(0), x.dim(1), a.dim(1));
    let mut h = vec![vec![0.0; s]; d];
    let mut y = Vec::with_capacity(n * d);
    for t in 0..n {
        for ch in 0..d {
            let dt = delta.row(t)[ch];
            let xv = x.row(t)[ch];
            let mut out = dskip.data()[ch] * xv;
            for j in 0..s {
                h[ch][j] = (dt * a.row(ch)[j]).exp() * h[ch][j] + dt * b.row(t)[j] * xv;
            }
            for j in 0..s {
                out += c.row(t)[j] * h[ch][j];
            }
            y.push(out);
        }
    }
    y
}

/// Scan fidelity lines plus the timing table.
#[derive(Clone, Debug)]
pub struct ScanReport {
    pub fidelity: SuiteReport,
    pub timings: Vec<ScanTiming>,
    /// `(n, t(2n) / t(n))`.
    pub ratios: Vec<(usize, f64)>,
    pub ratio_bound: f64,
}

impl ScanReport {
    pub fn passed(&self) -> bool {
        self.fidelity.passed() && self.ratios.iter().all(|&(_, r)| r <= self.ratio_bound)
    }
}

impl fmt::Display for ScanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.fidelity)?;
        writeln!(f, "{:>8}  {:>12}", "n", "time (ms)")?;
        for t in &self.timings {
            writeln!(f, "{:>8}  {:>12.3}", t.length, t.time.as_secs_f64() * 1e3)?;
        }
        for &(n, r) in &self.ratios {
            let ok = r <= self.ratio_bound;
            writeln!(
                f,
                "[{}] t({})/t({}) = {:.3} (bound {})",
                if ok { "PASS" } else { "FAIL" },
                2 * n,
                n,
                r,
                self.ratio_bound
            )?;
        }
        Ok(())
    }
}

/// Fidelity at the given lengths and timing ratios between consecutive
/// doublings of `timing_lengths`.
pub fn scan_suite(
    fidelity_lengths: &[usize],
    timing_lengths: &[usize],
    reps: usize,
) -> Result<ScanReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca);
    let mut fidelity = SuiteReport::default();
    let (d, s) = (16, 16);
    for &n in fidelity_lengths {
        let x = uniform(&[n, d], -1.0, 1.0, &mut rng);
        let delta = uniform(&[n, d], 0.01, 1.0, &mut rng);
        let b = uniform(&[n, s], -1.0, 1.0, &mut rng);
        let c = uniform(&[n, s], -1.0, 1.0, &mut rng);
        let a = uniform(&[d, s], -2.0, -0.05, &mut rng);
        let dskip = uniform(&[d], -1.0, 1.0, &mut rng);
        let fast = selective_scan(&x, &delta, &b, &c, &a, &dskip)?;
        let slow = naive_selective_scan(&x, &delta, &b, &c, &a, &dskip);
        let diff = fast
            .data()
            .iter()
            .zip(&slow)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        fidelity.push(CheckLine::below(
            format!("scan vs naive recurrence, n = {n}"),
            diff,
            1e-12,
        ));
    }
    let timings = scan_benchmark(timing_lengths, reps);
    let ratios = timings
        .windows(2)
        .filter(|w| w[1].length == 2 * w[0].length)
        .map(|w| {
            (
                w[0].length,
                w[1].time.as_secs_f64() / w[0].time.as_secs_f64(),
            )
        })
        .collect();
    Ok(ScanReport {
        fidelity,
        timings,
        ratios,
        ratio_bound: 2.5,
    })
}

/// Brute-force k nearest neighbors: sort every candidate by (distance, index).
pub fn naive_knn(c: &PointCloud, query: &PointCloud, k: usize, exclude_self: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (qi, q) in query.iter().enumerate() {
        let mut all: Vec<(f64, usize)> = c
            .iter()
            .enumerate()
            .filter(|&(j, _)| !(exclude_self && j == qi))
            .map(|(j, p)| (dist2(p, q), j))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(all.iter().take(k).map(|&(_, j)| j));
    }
    out
}

/// Brute-force farthest-point sampling, recomputing every point's distance
/// to the chosen set from scratch at each pick.
pub fn naive_fps(c: &PointCloud, m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in c.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| dist2(p, &c.points()[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn nn_dists(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| dist2(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Double-loop CD, HD, P2F, F-score (threshold as a fraction of the
/// reference diagonal) and refinement loss.
pub fn naive_scores(p: &PointCloud, q: &PointCloud, frac: f64) -> [f64; 5] {
    let pq = nn_dists(p, q);
    let qp = nn_dists(q, p);
    let mean_sq = |v: &[f64]| v.iter().map(|d| d * d).sum::<f64>() / v.len() as f64;
    let cd = mean_sq(&pq) + mean_sq(&qp);
    let hd = pq.iter().chain(&qp).cloned().fold(0.0, f64::max);
    let p2f = pq.iter().sum::<f64>() / pq.len() as f64;
    let thr = frac * q.bbox_diagonal();
    let prec = pq.iter().filter(|&&d| d <= thr).count() as f64 / pq.len() as f64;
    let rec = qp.iter().filter(|&&d| d <= thr).count() as f64 / qp.len() as f64;
    let f = if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    };
    [cd, hd, p2f, f, p2f]
}

/// Fast kernels against the brute-force oracles on `instances` random
/// clouds of at most `max_points` points.
pub fn oracle_suite(instances: usize, max_points: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut knn_bad = 0usize;
    let mut fps_bad = 0usize;
    let mut worst = [0.0f64; 5];
    for _ in 0..instances {
        let n = rng.random_range(2..=max_points.max(2));
        let m = rng.random_range(1..=max_points.max(1));
        let p = random_cloud(n, 1.0, &mut rng);
        let q = random_cloud(m, 1.0, &mut rng);
        let k = rng.random_range(1..n.min(16));
        if knn(&p, &p, k, true)?.as_flat() != naive_knn(&p, &p, k, true).as_slice() {
            knn_bad += 1;
        }
        let kq = rng.random_range(1..=n.min(8));
        if knn(&p, &q, kq, false)?.as_flat() != naive_knn(&p, &q, kq, false).as_slice() {
            knn_bad += 1;
        }
        let s = rng.random_range(1..=n.min(24));
        let start = rng.random_range(0..n);
        if farthest_point_sample(&p, s, start)? != naive_fps(&p, s, start) {
            fps_bad += 1;
        }
        let frac = rng.random_range(0.0..0.3);
        let got = evaluate(&p, &q, Some(&q), frac)?;
        let fast = [
            chamfer_distance(&p, &q)?,
            got.hd,
            got.p2f.expect("dense given"),
            got.fscore,
            l1_refinement_loss(&p, &q)?,
        ];
        let slow = naive_scores(&p, &q, frac);
        for i in 0..5 {
            worst[i] = worst[i].max((fast[i] - slow[i]).abs());
        }
        debug_assert!((got.cd - fast[0]).abs() == 0.0);
    }
    let mut report = SuiteReport::default();
    report.push(CheckLine::below(
        format!("knn index mismatches ({instances} instances)"),
        knn_bad as f64,
        0.5,
    ));
    report.push(CheckLine::below(
        format!("fps index mismatches ({instances} instances)"),
        fps_bad as f64,
        0.5,
    ));
    for (name, w) in [
        "chamfer",
        "hausdorff",
        "p2f_proxy",
        "fscore",
        "refinement_loss",
    ]
    .iter()
    .zip(worst)
    {
        report.push(CheckLine::below(format!("{name} max deviation"), w, 1e-12));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_fps_agrees_on_a_line() {
        let c = PointCloud::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        assert_eq!(naive_fps(&c, 3, 0), vec![0, 4, 2]);
        assert_eq!(farthest_point_sample(&c, 3, 0).unwrap(), vec![0, 4, 2]);
    }

    #[test]
    fn small_oracle_run_passes() {
        let r = oracle_suite(20, 40, 1).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn scan_fidelity_passes_at_small_lengths() {
        let r = scan_suite(&[1, 33], &[64, 128], 1).unwrap();
        assert!(r.fidelity.passed(), "{r}");
        assert_eq!(r.ratios.len(), 1);
    }

    #[test]
    fn fresh_grad_suite_passes() {
        let r = grad_suite().unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn sign_flipped_backward_rule_fails_the_grad_suite() {
        for op in ["matmul", "layer_norm", "selective_scan", "render_depth"] {
            crate::tensor::inject_backward_fault(Some(op));
            let r = grad_suite();
            crate::tensor::inject_backward_fault(None);
            let r = r.unwrap();
            assert!(!r.passed(), "flipping {op} went unnoticed:\n{r}");
        }
    }
}
