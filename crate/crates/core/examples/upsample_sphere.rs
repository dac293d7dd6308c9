//! Upsamples a sparse sphere 4x with the full pipeline: interpolation,
//! one shift, then gradient steps on the predicted distance. Pass a
//! checkpoint from `mbpu train` to use trained weights; otherwise a fresh
//! initialization runs, which shows the mechanics but not the gain.
//!
//! `cargo run --release --example upsample_sphere -- [checkpoint] [out.xyz]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbpu::geometry::{save_cloud, CloudFormat};
use mbpu::model::{Network, NetworkConfig};
use mbpu::train::{evaluate, load_checkpoint, Shape};
use mbpu::upsample::{interpolate_only, upsample, RefinementConfig};

fn main() -> mbpu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (net, params) = match args.first() {
        Some(path) => {
            let params = load_checkpoint(path)?;
            (Network::infer(&params, 8)?, params)
        }
        None => {
            let net = Network::new(NetworkConfig::default());
            let params = net.init(0);
            (net, params)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sparse = Shape::Sphere.sample(256, &mut rng)?;
    let gt = Shape::Sphere.sample(1024, &mut rng)?;
    let dense = Shape::Sphere.sample(10240, &mut rng)?;

    let cfg = RefinementConfig::default();
    let base = interpolate_only(&sparse, 4.0, cfg.k_midpoint)?;
    let up = upsample(&sparse, 4.0, &net, &params, &cfg)?;
    for (name, cloud) in [("interpolation", &base), ("pipeline", &up)] {
        let m = evaluate(cloud, &gt, Some(&dense), 0.01)?;
        println!(
            "{name:<14} {} points  cd {:.4e}  hd {:.4e}  p2f {:.4e}  f@1% {:.4}",
            cloud.len(),
            m.cd,
            m.hd,
            m.p2f.unwrap_or(f64::NAN),
            m.fscore
        );
    }
    if let Some(out) = args.get(1) {
        save_cloud(out, &up, CloudFormat::from_path(out.as_ref()))?;
        println!("wrote {out}");
    }
    Ok(())
}
