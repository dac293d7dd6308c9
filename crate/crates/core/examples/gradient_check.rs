//! Finite-difference checks of every differentiable piece: tape ops, point
//! convolution, Mamba block, regressor heads, renderer, losses and the full
//! training objective through the refinement steps.
//!
//! `cargo run --release --example gradient_check`

use std::time::Instant;

fn main() -> mbpu::Result<()> {
    let start = Instant::now();
    let report = mbpu::check::grad_suite()?;
    print!("{report}");
    println!(
        "{} checks in {:.2}s, {}",
        report.lines.len(),
        start.elapsed().as_secs_f64(),
        if report.passed() {
            "all passed"
        } else {
            "FAILURES"
        }
    );
    Ok(())
}
