//! Renders a torus from four cameras, writes the depth images as PFM files
//! and prints the first view as a character ramp.
//!
//! `cargo run --release --example render_views -- [out_dir]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbpu::geometry::normalize_unit_sphere;
use mbpu::render::{make_camera_rig, render_rig, write_pfm, RenderConfig};
use mbpu::train::Shape;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mbpu_views"));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let torus = Shape::Torus.sample(2048, &mut rng)?;
    // the renderer frames the unit ball
    let (cloud, _) = normalize_unit_sphere(&torus)?;
    let cfg = RenderConfig {
        width: 48,
        height: 24,
        ..RenderConfig::default()
    };
    let rig = make_camera_rig(4);
    let images = render_rig(&cloud, &rig, &cfg)?;

    std::fs::create_dir_all(&dir)?;
    for (i, img) in images.iter().enumerate() {
        write_pfm(dir.join(format!("view_{i:03}.pfm")), img)?;
    }
    println!("wrote {} views to {}", images.len(), dir.display());

    // near is dark, background is blank
    let ramp = ['#', '%', '*', '+', '=', '-', ':', '.'];
    let img = &images[0];
    for y in (0..img.height).rev() {
        let row: String = (0..img.width)
            .map(|x| {
                let d = img.get(x, y);
                if d >= cfg.background - 1e-3 {
                    ' '
                } else {
                    ramp[((d * ramp.len() as f64) as usize).min(ramp.len() - 1)]
                }
            })
            .collect();
        println!("|{row}|");
    }
    Ok(())
}
