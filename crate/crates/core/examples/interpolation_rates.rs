//! Midpoint interpolation of one sparse cube sample at every rate from 2 to
//! 8: exact output counts and the Chamfer distance to a matching dense draw.
//!
//! `cargo run --release --example interpolation_rates`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbpu::train::{chamfer_distance, Shape};
use mbpu::upsample::interpolate_only;

fn main() -> mbpu::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sparse = Shape::Cube.sample(256, &mut rng)?;
    println!(
        "{:>4} {:>7} {:>12} {:>12}",
        "rate", "points", "cd interp", "cd sparse"
    );
    for rate in 2..=8 {
        let dense = Shape::Cube.sample(256 * rate, &mut rng)?;
        let up = interpolate_only(&sparse, rate as f64, 4)?;
        println!(
            "{rate:>4} {:>7} {:>12.4e} {:>12.4e}",
            up.len(),
            chamfer_distance(&up, &dense)?,
            chamfer_distance(&sparse, &dense)?
        );
    }
    Ok(())
}
