use super::array::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

type KinkDistance<'a> = Box<dyn Fn(&Tensor, usize) -> f64 + 'a>;

/// Central finite-difference check of a tape-built scalar function.
///
/// The relative error per coordinate is
/// `|analytic - central| / max(1e-8, |central|)`.
pub struct GradCheck<'a> {
    h: f64,
    coords: Option<Vec<usize>>,
    kink: Option<KinkDistance<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl<'a> GradCheck<'a> {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            coords: None,
            kink: None,
        }
    }

    /// Restricts the check to the given flat coordinates.
    pub fn coords(mut self, coords: Vec<usize>) -> Self {
        self.coords = Some(coords);
        self
    }

    /// Checks an evenly strided subset of at most `max` coordinates.
    pub fn subsample(self, len: usize, max: usize) -> Self {
        if len <= max || max == 0 {
            return self;
        }
        let coords = (0..max).map(|i| i * len / max).collect();
        self.coords(coords)
    }

    /// `dist(x, i)` is the distance from coordinate `i` of `x` to the nearest
    /// non-differentiable point along that coordinate; coordinates closer than
    /// `10h` are skipped.
    pub fn kink_distance(mut self, dist: impl Fn(&Tensor, usize) -> f64 + 'a) -> Self {
        self.kink = Some(Box::new(dist));
        self
    }

    pub fn run<F>(&self, f: F, x: &Tensor) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let eval = |x: &Tensor| -> Result<f64> {
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone());
            let out = f(&mut tape, v)?;
            let y = tape.value(out).item()?;
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("function value {y}")));
            }
            Ok(y)
        };

        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = f(&mut tape, v)?;
        let grads = tape.backward(out)?;
        let analytic = grads.wrt(v);
        if !analytic.all_finite() {
            return Err(Error::NonFinite("analytic gradient".into()));
        }

        let all: Vec<usize>;
        let coords = match &self.coords {
            Some(c) => c.as_slice(),
            None => {
                all = (0..x.len()).collect();
                &all
            }
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            skipped: 0,
        };
        let mut probe = x.clone();
        for &i in coords {
            if i >= x.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: x.len(),
                });
            }
            if let Some(dist) = &self.kink {
                if dist(x, i) < 10.0 * self.h {
                    report.skipped += 1;
                    continue;
                }
            }
            let x0 = x.data()[i];
            let (xp, xm) = (x0 + self.h, x0 - self.h);
            probe.data_mut()[i] = xp;
            let fp = eval(&probe)?;
            probe.data_mut()[i] = xm;
            let fm = eval(&probe)?;
            probe.data_mut()[i] = x0;
            // divide by the step actually taken after rounding
            let central = (fp - fm) / (xp - xm);
            let a = analytic.data()[i];
            let err = (a - central).abs() / central.abs().max(1e-8);
            report.checked += 1;
            if report.worst_index.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = Some(i);
                report.analytic = a;
                report.numeric = central;
            }
        }
        Ok(report)
    }
}

/// Maximum relative error of the tape gradient of `f` at `x` against central
/// differences with step `h`, over every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    Ok(GradCheck::new(h).run(f, x)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let x = random(&[7], 1);
        // no truncation error for a linear function, so a wide step only
        // reduces cancellation
        let err = finite_diff_check(|t, v| t.sum(v), &x, 1e-3).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softplus_sum_is_accurate() {
        let x = random(&[9], 2);
        let err = finite_diff_check(
            |t, v| {
                let s = t.softplus(v)?;
                t.sum(s)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_kink_is_skipped() {
        let x = Tensor::vector(vec![0.0, 0.5, -0.5]);
        let relu_sum = |t: &mut Tape, v: Var| {
            let r = t.relu(v)?;
            t.sum(r)
        };
        // Without the exclusion the kink coordinate disagrees with the
        // central difference (0 vs 0.5).
        let raw = finite_diff_check(relu_sum, &x, 1e-6).unwrap();
        assert!(raw > 0.1);
        let report = GradCheck::new(1e-6)
            .kink_distance(|x, i| x.data()[i].abs())
            .run(relu_sum, &x)
            .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn non_finite_evaluation_errors() {
        let x = Tensor::vector(vec![1e-7, 1.0]);
        let r = finite_diff_check(
            |t, v| {
                let s = t.reciprocal(v)?;
                let s = t.exp(s)?;
                t.sum(s)
            },
            &x,
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
