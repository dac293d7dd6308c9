//! CD, HD, P2F and F-score of increasingly noisy sphere samples against a
//! clean sample and a 10x denser surface proxy.
//!
//! `cargo run --release --example evaluate_metrics`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbpu::geometry::add_gaussian_noise;
use mbpu::train::{evaluate, Shape};

fn main() -> mbpu::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = Shape::Sphere.sample(1024, &mut rng)?;
    let dense = Shape::Sphere.sample(10240, &mut rng)?;
    let pred = Shape::Sphere.sample(1024, &mut rng)?;
    println!(
        "{:>7} {:>11} {:>11} {:>11} {:>9} {:>9}",
        "tau", "cd", "hd", "p2f", "f@0.5%", "f@1%"
    );
    for (i, tau) in [0.0, 0.005, 0.01, 0.02, 0.05].into_iter().enumerate() {
        let noisy = add_gaussian_noise(&pred, tau, i as u64)?;
        let m = evaluate(&noisy, &gt, Some(&dense), 0.005)?;
        let wide = evaluate(&noisy, &gt, None, 0.01)?;
        println!(
            "{tau:>7} {:>11.4e} {:>11.4e} {:>11.4e} {:>9.4} {:>9.4}",
            m.cd,
            m.hd,
            m.p2f.unwrap_or(f64::NAN),
            m.fscore,
            wide.fscore
        );
    }
    Ok(())
}
