//! Selective scan against the naive per-step recurrence, then forward
//! timings at doubling lengths. Linear cost shows up as ratios near 2.
//!
//! `cargo run --release --example scan_benchmark`

fn main() -> mbpu::Result<()> {
    let report = mbpu::check::scan_suite(
        &[1, 64, 1024, 8192],
        &[512, 1024, 2048, 4096, 8192, 16384],
        5,
    )?;
    print!("{report}");
    Ok(())
}
