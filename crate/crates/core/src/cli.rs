//! Command-line front end. [`run`] parses arguments, prints the resolved
//! configuration, executes one command and returns the process exit code:
//! 0 on success, 1 on a runtime failure, 2 on a usage or configuration
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::check::{grad_suite, oracle_suite, scan_suite};
use crate::error::{Error, Result};
use crate::geometry::{
    load_cloud, load_cloud_allow_empty, normalize_unit_sphere, save_cloud, CloudFormat, PointCloud,
};
use crate::model::Network;
use crate::render::{make_camera_rig, render_rig, write_pfm, RenderConfig};
use crate::train::{evaluate, load_checkpoint, save_checkpoint, train, TrainConfig};
use crate::upsample::{upsample, RefinementConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mbpu",
    version,
    about = "Point cloud upsampling with learned gradient-descent refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Grad,
    Scan,
    Oracle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the synthetic shapes; writes a checkpoint and an epoch,loss CSV.
    Train {
        /// `key = value` configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Loss curve destination (default: the checkpoint path plus `.csv`).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Upsample a point cloud with a trained checkpoint.
    Upsample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the one-off shift before the gradient steps.
        #[arg(long)]
        no_shift: bool,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        k_midpoint: Option<usize>,
        /// Neighborhood of the point convolution (not stored in checkpoints).
        #[arg(long, default_value_t = 8)]
        k_conv: usize,
    },
    /// Score a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Dense surface proxy for P2F; reported as n/a when absent or unreadable.
        #[arg(long)]
        dense_gt: Option<PathBuf>,
        /// F-score radius as a fraction of the ground-truth bounding-box diagonal.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        /// One JSON object per line instead of labeled text.
        #[arg(long)]
        json_lines: bool,
    },
    /// Render depth images as view_000.pfm, view_001.pfm, ...
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [32, 32])]
        size: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        depth_bins: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Fit the cloud into the unit ball first instead of requiring it.
        #[arg(long)]
        normalize: bool,
    },
    /// Run a self-check suite; exits nonzero on any failure.
    Check {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::InvalidRate(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            out: ckpt,
            seed,
            loss_csv,
        } => cmd_train(config.as_deref(), &ckpt, seed, loss_csv, out),
        Command::Upsample {
            input,
            rate,
            ckpt,
            out: dest,
            no_shift,
            lambda,
            iters,
            k_midpoint,
            k_conv,
        } => {
            let mut cfg = RefinementConfig {
                apply_shift: !no_shift,
                ..RefinementConfig::default()
            };
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            if let Some(t) = iters {
                cfg.iterations = t;
            }
            if let Some(k) = k_midpoint {
                cfg.k_midpoint = k;
            }
            cmd_upsample(&input, rate, &ckpt, &dest, &cfg, k_conv, out, err)
        }
        Command::Eval {
            pred,
            gt,
            dense_gt,
            threshold,
            json_lines,
        } => cmd_eval(
            &pred,
            &gt,
            dense_gt.as_deref(),
            threshold,
            json_lines,
            out,
            err,
        ),
        Command::Render {
            input,
            out_dir,
            views,
            size,
            depth_bins,
            sigma,
            normalize,
        } => {
            let cfg = RenderConfig {
                width: size[0],
                height: size[1],
                depth_bins,
                sigma,
                ..RenderConfig::default()
            };
            cmd_render(&input, &out_dir, views, &cfg, normalize, out)
        }
        Command::Check { suite } => cmd_check(suite, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Outcome {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Runtime(format!("cannot write output: {e}")))
}

fn cmd_train(
    config: Option<&Path>,
    ckpt: &Path,
    seed: Option<u64>,
    csv: Option<PathBuf>,
    out: &mut dyn Write,
) -> Outcome {
    let mut cfg = match config {
        Some(path) => TrainConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => {
                Failure::Usage(format!("cannot read config {}: {source}", path.display()))
            }
            other => Failure::from(other),
        })?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let csv = csv.unwrap_or_else(|| {
        let mut p = ckpt.as_os_str().to_owned();
        p.push(".csv");
        PathBuf::from(p)
    });
    let mut header = cfg.to_text();
    let _ = writeln!(
        header,
        "out = {}\nloss_csv = {}",
        ckpt.display(),
        csv.display()
    );
    emit(out, &header)?;
    let mut curve = String::from("epoch,loss\n");
    let outcome = train(&cfg, |epoch, loss| {
        let _ = writeln!(curve, "{epoch},{loss}");
        let _ = writeln!(out, "epoch {epoch} loss {loss}");
    })?;
    save_checkpoint(ckpt, &outcome.params)?;
    std::fs::write(&csv, curve).map_err(|e| Error::io(&csv, e))?;
    Ok(())
}

fn load_any(path: &Path) -> Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path))
}

#[allow(clippy::too_many_arguments)]
fn cmd_upsample(
    input: &Path,
    rate: f64,
    ckpt: &Path,
    dest: &Path,
    cfg: &RefinementConfig,
    k_conv: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let header = format!(
        "input = {}\nrate = {rate}\nckpt = {}\nout = {}\niterations = {}\nlambda = {}\napply_shift = {}\n\
         k_midpoint = {}\nk_conv = {k_conv}\n",
        input.display(),
        ckpt.display(),
        dest.display(),
        cfg.iterations,
        cfg.lambda,
        cfg.apply_shift,
        cfg.k_midpoint
    );
    emit(out, &header)?;
    cfg.validate()?;
    if !(rate > 1.0) {
        return Err(Error::InvalidRate(rate).into());
    }
    if !(2.0..=8.0).contains(&rate) {
        let _ = writeln!(
            err,
            "warning: rate {rate} is outside the evaluated range [2, 8]"
        );
    }
    let cloud = load_any(input)?;
    let params = load_checkpoint(ckpt)?;
    let net = Network::infer(&params, k_conv)?;
    let up = upsample(&cloud, rate, &net, &params, cfg)?;
    save_cloud(dest, &up, CloudFormat::from_path(dest))?;
    emit(out, &format!("wrote {} points\n", up.len()))
}

fn fmt_value(v: Option<f64>, json: bool) -> String {
    match (v, json) {
        (Some(x), _) => format!("{x}"),
        (None, true) => "null".into(),
        (None, false) => "n/a".into(),
    }
}

fn cmd_eval(
    pred: &Path,
    gt: &Path,
    dense: Option<&Path>,
    threshold: f64,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let header = format!(
        "pred = {}\ngt = {}\ndense_gt = {}\nthreshold = {threshold}\njson_lines = {json}\n",
        pred.display(),
        gt.display(),
        dense.map_or("none".into(), |d| d.display().to_string())
    );
    emit(out, &header)?;
    let p = load_any(pred)?;
    let q = load_any(gt)?;
    let dense_cloud = match dense {
        Some(path) => match load_any(path) {
            Ok(c) => Some(c),
            Err(e) => {
                let _ = writeln!(
                    err,
                    "warning: dense ground truth unusable ({e}); p2f is n/a"
                );
                None
            }
        },
        None => None,
    };
    let m = evaluate(&p, &q, dense_cloud.as_ref(), threshold)?;
    let text = if json {
        format!(
            "{{\"cd\": {}, \"hd\": {}, \"p2f\": {}, \"fscore\": {}}}\n",
            fmt_value(Some(m.cd), true),
            fmt_value(Some(m.hd), true),
            fmt_value(m.p2f, true),
            fmt_value(Some(m.fscore), true)
        )
    } else {
        format!(
            "cd {}\nhd {}\np2f {}\nfscore {}\n",
            fmt_value(Some(m.cd), false),
            fmt_value(Some(m.hd), false),
            fmt_value(m.p2f, false),
            fmt_value(Some(m.fscore), false)
        )
    };
    emit(out, &text)
}

fn cmd_render(
    input: &Path,
    dir: &Path,
    views: usize,
    cfg: &RenderConfig,
    normalize: bool,
    out: &mut dyn Write,
) -> Outcome {
    let header = format!(
        "input = {}\nout_dir = {}\nviews = {views}\nsize = {} {}\ndepth_bins = {}\nsigma = {}\nbackground = {}\nnormalize = {normalize}\n",
        input.display(),
        dir.display(),
        cfg.width,
        cfg.height,
        cfg.depth_bins,
        cfg.sigma,
        cfg.background
    );
    emit(out, &header)?;
    if views == 0 {
        return Err(Failure::Usage("--views must be positive".into()));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut cloud = load_cloud_allow_empty(input, CloudFormat::from_path(input))?;
    if normalize && !cloud.is_empty() {
        cloud = normalize_unit_sphere(&cloud)?.0;
    }
    let images = render_rig(&cloud, &make_camera_rig(views), cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        write_pfm(dir.join(format!("view_{i:03}.pfm")), img)?;
    }
    emit(out, &format!("wrote {} images\n", images.len()))
}

fn cmd_check(suite: Suite, out: &mut dyn Write) -> Outcome {
    emit(out, &format!("suite = {suite:?}\n").to_lowercase())?;
    let (text, passed) = match suite {
        Suite::Grad => {
            let r = grad_suite()?;
            (r.to_string(), r.passed())
        }
        Suite::Scan => {
            let r = scan_suite(&[1, 64, 1024, 8192], &[1024, 2048, 4096, 8192], 7)?;
            (r.to_string(), r.passed())
        }
        Suite::Oracle => {
            let r = oracle_suite(200, 200, 0x0ac1e)?;
            (r.to_string(), r.passed())
        }
    };
    emit(out, &text)?;
    if passed {
        emit(out, "all checks passed\n")
    } else {
        Err(Failure::Runtime("some checks failed".into()))
    }
}
