use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scan::selective_scan;
use crate::tensor::Tensor;

/// Channel and state widths used for timing: the inner width of a default
/// 32-channel block.
const BENCH_CHANNELS: usize = 64;
const BENCH_STATES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanTiming {
    pub length: usize,
    /// Fastest of the repetitions; the minimum is the least noisy estimate
    /// of the intrinsic cost.
    pub time: Duration,
}

fn random(shape: [usize; 2], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape[0] * shape[1];
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// Times the selective-scan forward pass at each sequence length, taking the
/// minimum over `reps` runs (at least one).
pub fn scan_benchmark(lengths: &[usize], reps: usize) -> Vec<ScanTiming> {
    let (d, s) = (BENCH_CHANNELS, BENCH_STATES);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca9);
    let a = random([d, s], -2.0, -0.1, &mut rng);
    let dskip = Tensor::vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    lengths
        .iter()
        .map(|&n| {
            let x = random([n, d], -1.0, 1.0, &mut rng);
            let delta = random([n, d], 0.01, 0.5, &mut rng);
            let b = random([n, s], -1.0, 1.0, &mut rng);
            let c = random([n, s], -1.0, 1.0, &mut rng);
            let mut best = Duration::MAX;
            for _ in 0..reps.max(1) {
                let start = Instant::now();
                let y = selective_scan(&x, &delta, &b, &c, &a, &dskip).expect("consistent shapes");
                let elapsed = start.elapsed();
                std::hint::black_box(y);
                best = best.min(elapsed);
            }
            ScanTiming {
                length: n,
                time: best,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_per_length() {
        let t = scan_benchmark(&[8], 1);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].length, 8);
    }
}
