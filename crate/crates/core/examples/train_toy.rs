//! Trains the default toy configuration and compares the upsampler against
//! plain midpoint interpolation on held-out draws.
//!
//! `cargo run --release --example train_toy -- [epochs]`

use std::time::Instant;

use mbpu::geometry::add_gaussian_noise;
use mbpu::train::{held_out_pairs, held_out_score, train, TrainConfig};

fn main() -> mbpu::Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(e) = std::env::args().nth(1) {
        cfg.epochs = e.parse().expect("epochs must be an integer");
    }
    print!("{}", cfg.to_text());
    let start = Instant::now();
    let out = train(&cfg, |epoch, loss| {
        println!(
            "epoch {epoch:3}  loss {loss:.6}  ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
    })?;
    let pairs = held_out_pairs(&cfg, 2)?;
    for tau in [0.0, 0.005, 0.01] {
        let s = held_out_score(
            &out.network,
            &out.params,
            &pairs,
            cfg.rate,
            &cfg.refine,
            |c, i| add_gaussian_noise(c, tau, 1000 + i as u64),
        )?;
        println!(
            "tau {tau:<5}  refined CD {:.6e}  interpolation CD {:.6e}  ratio {:.3}",
            s.refined_cd,
            s.baseline_cd,
            s.ratio()
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
