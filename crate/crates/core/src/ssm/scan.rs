use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

struct Dims {
    n: usize,
    d: usize,
    s: usize,
}

fn check_shapes(
    x: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    dskip: &Tensor,
) -> Result<Dims> {
    let op = "selective_scan";
    if x.rank() != 2 {
        return Err(Error::shape(op, x.shape(), &[0, 0]));
    }
    let (n, d) = (x.dim(0), x.dim(1));
    if delta.shape() != x.shape() {
        return Err(Error::shape(op, x.shape(), delta.shape()));
    }
    if a.rank() != 2 || a.dim(0) != d {
        return Err(Error::shape(op, x.shape(), a.shape()));
    }
    let s = a.dim(1);
    if b.shape() != [n, s] {
        return Err(Error::shape(op, &[n, s], b.shape()));
    }
    if c.shape() != [n, s] {
        return Err(Error::shape(op, &[n, s], c.shape()));
    }
    if dskip.shape() != [d] {
        return Err(Error::shape(op, &[d], dskip.shape()));
    }
    for (i, &v) in delta.data().iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveDelta {
                step: i / d,
                channel: i % d,
                value: v,
            });
        }
    }
    Ok(Dims { n, d, s })
}

/// Selective state-space scan over `n` steps and `d` independent channels
/// with `s` states each:
///
/// `h_t = exp(delta_t A_c) h_{t-1} + delta_t B_t x_t`,
/// `y_t = <C_t, h_t> + D_c x_t`, `h_0 = 0`.
///
/// Shapes: `x, delta: n x d`, `B, C: n x s`, `A: d x s`, `D: d`. Cost is
/// `O(n d s)`; the recurrence is evaluated strictly sequentially in `t`.
pub fn selective_scan(
    x: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    dskip: &Tensor,
) -> Result<Tensor> {
    let Dims { n, d, s } = check_shapes(x, delta, b, c, a, dskip)?;
    let (xd, dd, bd, cd, ad, dk) = (
        x.data(),
        delta.data(),
        b.data(),
        c.data(),
        a.data(),
        dskip.data(),
    );
    let mut h = vec![0.0; d * s];
    let mut y = vec![0.0; n * d];
    for t in 0..n {
        let bt = &bd[t * s..(t + 1) * s];
        let ct = &cd[t * s..(t + 1) * s];
        for ch in 0..d {
            let xv = xd[t * d + ch];
            let dt = dd[t * d + ch];
            let hc = &mut h[ch * s..(ch + 1) * s];
            let ac = &ad[ch * s..(ch + 1) * s];
            for j in 0..s {
                hc[j] = (dt * ac[j]).exp() * hc[j] + dt * bt[j] * xv;
            }
            let mut acc = dk[ch] * xv;
            for j in 0..s {
                acc += ct[j] * hc[j];
            }
            y[t * d + ch] = acc;
        }
    }
    Tensor::new(vec![n, d], y)
}

/// Tape op wrapping [`selective_scan`]. The backward pass re-runs the
/// recurrence to materialize all states, then sweeps in reverse time.
#[derive(Debug)]
pub struct SelectiveScanOp;

impl CustomOp for SelectiveScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let [x, delta, b, c, a, dskip] = inputs else {
            return Err(Error::InvalidArgument(
                "selective_scan takes 6 inputs".into(),
            ));
        };
        selective_scan(x, delta, b, c, a, dskip)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let [x, delta, b, c, a, dskip] = inputs else {
            return Err(Error::InvalidArgument(
                "selective_scan takes 6 inputs".into(),
            ));
        };
        let Dims { n, d, s } = check_shapes(x, delta, b, c, a, dskip)?;
        let (xd, dd, bd, cd, ad, dk) = (
            x.data(),
            delta.data(),
            b.data(),
            c.data(),
            a.data(),
            dskip.data(),
        );
        let gy = grad.data();

        // states[t] holds h_t for t = 1..=n at offset (t-1)*d*s
        let mut states = vec![0.0; n * d * s];
        let mut decay = vec![0.0; n * d * s];
        let mut prev = vec![0.0; d * s];
        for t in 0..n {
            let base = t * d * s;
            for ch in 0..d {
                let dt = dd[t * d + ch];
                let xv = xd[t * d + ch];
                for j in 0..s {
                    let k = ch * s + j;
                    let e = (dt * ad[k]).exp();
                    let hv = e * prev[k] + dt * bd[t * s + j] * xv;
                    decay[base + k] = e;
                    states[base + k] = hv;
                    prev[k] = hv;
                }
            }
        }

        let mut gx = vec![0.0; n * d];
        let mut gdelta = vec![0.0; n * d];
        let mut gb = vec![0.0; n * s];
        let mut gc = vec![0.0; n * s];
        let mut ga = vec![0.0; d * s];
        let mut gd = vec![0.0; d];
        let mut dh = vec![0.0; d * s];
        for t in (0..n).rev() {
            let base = t * d * s;
            for ch in 0..d {
                let i = t * d + ch;
                let g = gy[i];
                let xv = xd[i];
                let dt = dd[i];
                gd[ch] += g * xv;
                let mut gxv = g * dk[ch];
                let mut gdt = 0.0;
                for j in 0..s {
                    let k = ch * s + j;
                    let hv = states[base + k];
                    gc[t * s + j] += g * hv;
                    let adj = dh[k] + g * cd[t * s + j];
                    let hprev = if t > 0 { states[base - d * s + k] } else { 0.0 };
                    let e = decay[base + k];
                    let bj = bd[t * s + j];
                    // through exp(dt A) h_{t-1}
                    let de = adj * hprev * e;
                    gdt += de * ad[k] + adj * bj * xv;
                    ga[k] += de * dt;
                    // through dt B x
                    gb[t * s + j] += adj * dt * xv;
                    gxv += adj * dt * bj;
                    dh[k] = adj * e;
                }
                gx[i] += gxv;
                gdelta[i] += gdt;
            }
        }
        Ok(vec![
            Some(Tensor::new(vec![n, d], gx)?),
            Some(Tensor::new(vec![n, d], gdelta)?),
            Some(Tensor::new(vec![n, s], gb)?),
            Some(Tensor::new(vec![n, s], gc)?),
            Some(Tensor::new(vec![d, s], ga)?),
            Some(Tensor::new(vec![d], gd)?),
        ])
    }
}

/// Records a selective scan on the tape.
pub fn scan_on_tape(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    b: Var,
    c: Var,
    a: Var,
    dskip: Var,
) -> Result<Var> {
    tape.custom(Rc::new(SelectiveScanOp), &[x, delta, b, c, a, dskip])
}
