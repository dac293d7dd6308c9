//! End-to-end checks of the `mbpu` command line, run in-process through
//! `mbpu::cli::run` and, for exit codes, through the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use mbpu::geometry::{load_cloud, save_cloud, CloudFormat, PointCloud};
use mbpu::model::{Network, NetworkConfig};
use mbpu::train::save_checkpoint;
use mbpu::upsample::interpolate_only;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn mbpu(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mbpu").chain(args.iter().copied());
    let code = mbpu::cli::run(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn fixture(rel: &str) -> String {
    format!("{}/tests/fixtures/{rel}", env!("CARGO_MANIFEST_DIR"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Value following `label ` on its own line of the text report.
fn labeled(report: &str, label: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{label} ")))
        .unwrap_or_else(|| panic!("no `{label}` line in\n{report}"))
        .to_string()
}

fn expected(key: &str) -> f64 {
    let text = std::fs::read_to_string(fixture("eval/expected.json")).unwrap();
    let line = text
        .lines()
        .find(|l| l.trim_start().starts_with(&format!("\"{key}\"")))
        .unwrap();
    let value = line.split(':').nth(1).unwrap();
    value.trim().trim_end_matches(',').parse().unwrap()
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap()
}

/// A 256-point input and an untrained default checkpoint.
fn upsample_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let input = dir.join("in.xyz");
    save_cloud(&input, &random_cloud(256, 3), CloudFormat::Xyz).unwrap();
    let ckpt = dir.join("net.ckpt");
    let params = Network::new(NetworkConfig::default()).init(11);
    save_checkpoint(&ckpt, &params).unwrap();
    (input, ckpt)
}

const TINY_CONFIG: &str = "epochs = 2\nshapes = sphere,cube\npoints = 32\nrate = 2\nviews = 2\n\
    render_width = 8\nrender_height = 8\ndepth_bins = 16\niterations = 2\ninit_dim = 8\n\
    mixer_dim = 8\ntransition_dim = 8\nblocks = 1\nmixers_per_block = 2\nstate_dim = 4\n\
    k_conv = 4\nhidden = 16\n";

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let r = mbpu(&[
        "train",
        "--config",
        s(&missing),
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains(s(&missing)), "{}", r.err);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 1\nwarp_factor = 9\n").unwrap();
    let r = mbpu(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("warp_factor"), "{}", r.err);
}

#[test]
fn unknown_flag_is_rejected() {
    let r = mbpu(&["check", "--suite", "grad", "--verbose"]);
    assert_eq!(r.code, 2);
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_mbpu");
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args(["eval", "--pred", s(&dir.path().join("none.xyz"))])
        .args(["--gt", &fixture("eval/gt.xyz")])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    let status = Command::new(bin)
        .args(["upsample", "--rate", "4"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn train_twice_with_one_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let mut bytes = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = dir.path().join(name);
        let r = mbpu(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--seed",
            "9",
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        assert!(r.out.contains("seed = 9"), "{}", r.out);
        assert!(r.out.contains("epoch 1 loss"), "{}", r.out);
        bytes.push(std::fs::read(&out).unwrap());
        let csv = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        let rows: Vec<_> = csv.lines().collect();
        assert_eq!(rows[0], "epoch,loss");
        assert_eq!(rows.len(), 3);
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn train_prints_every_resolved_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    let r = mbpu(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("z.ckpt")),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    for key in [
        "learning_rate",
        "alpha",
        "beta",
        "lambda",
        "apply_shift",
        "k_conv",
        "hidden",
    ] {
        assert!(
            r.out.contains(&format!("{key} = ")),
            "{key} missing:\n{}",
            r.out
        );
    }
}

#[test]
fn eval_matches_the_committed_oracle_values() {
    let r = mbpu(&[
        "eval",
        "--pred",
        &fixture("eval/pred.xyz"),
        "--gt",
        &fixture("eval/gt.xyz"),
        "--dense-gt",
        &fixture("eval/dense.xyz"),
        "--threshold",
        "0.25",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    for key in ["cd", "hd", "p2f", "fscore"] {
        let got: f64 = labeled(&r.out, key).parse().unwrap();
        let want = expected(key);
        assert!((got - want).abs() <= 1e-12, "{key}: {got} vs {want}");
    }
}

#[test]
fn eval_json_lines_is_one_object() {
    let r = mbpu(&[
        "eval",
        "--pred",
        &fixture("eval/pred.xyz"),
        "--gt",
        &fixture("eval/gt.xyz"),
        "--json-lines",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let line = r.out.lines().last().unwrap();
    assert!(
        line.starts_with("{\"cd\": ") && line.ends_with('}'),
        "{line}"
    );
    assert!(line.contains("\"p2f\": null"), "{line}");
}

#[test]
fn eval_of_a_cloud_against_itself_is_perfect() {
    let gt = fixture("eval/gt.xyz");
    let r = mbpu(&["eval", "--pred", &gt, "--gt", &gt]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(labeled(&r.out, "cd"), "0");
    assert_eq!(labeled(&r.out, "hd"), "0");
    assert_eq!(labeled(&r.out, "fscore"), "1");
}

#[test]
fn unusable_dense_reference_degrades_to_na() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.xyz");
    std::fs::write(&empty, "").unwrap();
    let missing = dir.path().join("missing.xyz");
    let mut cds = Vec::new();
    for dense in [&empty, &missing] {
        let r = mbpu(&[
            "eval",
            "--pred",
            &fixture("eval/pred.xyz"),
            "--gt",
            &fixture("eval/gt.xyz"),
            "--dense-gt",
            s(dense),
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        assert_eq!(labeled(&r.out, "p2f"), "n/a");
        assert!(r.err.contains("warning"), "{}", r.err);
        cds.push(labeled(&r.out, "cd"));
    }
    assert!((cds[0].parse::<f64>().unwrap() - expected("cd")).abs() <= 1e-12);
    assert_eq!(cds[0], cds[1]);
}

#[test]
fn eval_of_an_empty_prediction_fails() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.xyz");
    std::fs::write(&empty, "").unwrap();
    let r = mbpu(&["eval", "--pred", s(&empty), "--gt", &fixture("eval/gt.xyz")]);
    assert_eq!(r.code, 1);
}

#[test]
fn render_reproduces_the_golden_images() {
    let dir = tempfile::tempdir().unwrap();
    let r = mbpu(&[
        "render",
        "--input",
        &fixture("render4/points.xyz"),
        "--out-dir",
        s(dir.path()),
        "--views",
        "2",
        "--size",
        "8",
        "8",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    for i in 0..2 {
        let name = format!("view_{i:03}.pfm");
        let got = std::fs::read(dir.path().join(&name)).unwrap();
        let want = std::fs::read(fixture(&format!("render4/{name}"))).unwrap();
        assert_eq!(got, want, "{name}");
    }
    assert!(!dir.path().join("view_002.pfm").exists());
}

#[test]
fn render_of_an_empty_cloud_is_all_background() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.xyz");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("views");
    let r = mbpu(&[
        "render",
        "--input",
        s(&empty),
        "--out-dir",
        s(&out),
        "--views",
        "3",
        "--size",
        "6",
        "4",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    for i in 0..3 {
        let img = mbpu::render::read_pfm(out.join(format!("view_{i:03}.pfm"))).unwrap();
        assert_eq!((img.width, img.height), (6, 4));
        assert!(img.values.iter().all(|&v| v == 1.0));
    }
}

#[test]
fn render_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.xyz");
    save_cloud(&input, &random_cloud(50, 5), CloudFormat::Xyz).unwrap();
    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let r = mbpu(&[
            "render",
            "--input",
            s(&input),
            "--out-dir",
            s(&out),
            "--views",
            "2",
            "--normalize",
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        runs.push(std::fs::read(out.join("view_001.pfm")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn upsample_writes_rate_times_n_points() {
    let dir = tempfile::tempdir().unwrap();
    let (input, ckpt) = upsample_inputs(dir.path());
    let out = dir.path().join("out.xyz");
    let r = mbpu(&[
        "upsample",
        "--input",
        s(&input),
        "--rate",
        "4",
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&out),
        "--iters",
        "2",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("iterations = 2"), "{}", r.out);
    assert_eq!(load_cloud(&out, CloudFormat::Xyz).unwrap().len(), 1024);
}

#[test]
fn upsample_without_steps_or_shift_is_plain_interpolation() {
    let dir = tempfile::tempdir().unwrap();
    let (input, ckpt) = upsample_inputs(dir.path());
    let out = dir.path().join("out.ply");
    let r = mbpu(&[
        "upsample",
        "--input",
        s(&input),
        "--rate",
        "3",
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&out),
        "--lambda",
        "0",
        "--no-shift",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let got = load_cloud(&out, CloudFormat::PlyAscii).unwrap();
    let cloud = load_cloud(&input, CloudFormat::Xyz).unwrap();
    let want = interpolate_only(&cloud, 3.0, 4).unwrap();
    assert_eq!(got.points(), want.points());
}

#[test]
fn upsample_warns_outside_the_evaluated_rates_and_rejects_rate_one() {
    let dir = tempfile::tempdir().unwrap();
    let (input, ckpt) = upsample_inputs(dir.path());
    let out = dir.path().join("out.xyz");
    let args = |rate: &'static str| {
        vec![
            "upsample".to_string(),
            "--input".into(),
            s(&input).into(),
            "--rate".into(),
            rate.into(),
            "--ckpt".into(),
            s(&ckpt).into(),
            "--out".into(),
            s(&out).into(),
            "--iters".into(),
            "0".into(),
        ]
    };
    let run = |rate| {
        let a = args(rate);
        mbpu(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let r = run("1.5");
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.err.contains("warning"), "{}", r.err);
    assert_eq!(load_cloud(&out, CloudFormat::Xyz).unwrap().len(), 384);
    assert_eq!(run("1").code, 2);
}

#[test]
fn one_checkpoint_serves_every_rate_from_two_to_eight() {
    let dir = tempfile::tempdir().unwrap();
    let (input, ckpt) = upsample_inputs(dir.path());
    for rate in 2..=8 {
        let out = dir.path().join(format!("r{rate}.xyz"));
        let rate_arg = rate.to_string();
        let r = mbpu(&[
            "upsample",
            "--input",
            s(&input),
            "--rate",
            &rate_arg,
            "--ckpt",
            s(&ckpt),
            "--out",
            s(&out),
            "--iters",
            "1",
        ]);
        assert_eq!(r.code, 0, "rate {rate}: {}", r.err);
        assert!(r.err.is_empty(), "{}", r.err);
        assert_eq!(
            load_cloud(&out, CloudFormat::Xyz).unwrap().len(),
            256 * rate
        );
    }
}

#[test]
fn upsample_with_a_corrupt_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (input, ckpt) = upsample_inputs(dir.path());
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let r = mbpu(&[
        "upsample",
        "--input",
        s(&input),
        "--rate",
        "2",
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&dir.path().join("o.xyz")),
    ]);
    assert_eq!(r.code, 1);
}

#[test]
fn check_oracle_suite_passes() {
    let r = mbpu(&["check", "--suite", "oracle"]);
    assert_eq!(r.code, 0, "{}{}", r.out, r.err);
    assert!(r.out.contains("suite = oracle"));
}
