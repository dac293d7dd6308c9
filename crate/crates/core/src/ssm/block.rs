use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scan::scan_on_tape;
use crate::error::{Error, Result};
use crate::nn::{add_row_bias, join, uniform_init, Linear, ParamSet, ParamVars};
use crate::tensor::{Tape, Tensor, Var};

/// Shape of one Mamba block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MambaConfig {
    /// Model width `d` of the block input and output.
    pub dim: usize,
    /// States per channel `s`.
    pub state_dim: usize,
    pub conv_width: usize,
    /// Inner width is `expand * dim`.
    pub expand: usize,
}

impl MambaConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            state_dim: 16,
            conv_width: 4,
            expand: 2,
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.dim
    }

    /// Rank of the step-size projection, `ceil(d / 16)`.
    pub fn dt_rank(&self) -> usize {
        self.dim.div_ceil(16)
    }
}

/// Mamba block weights under a name prefix:
///
/// ```text
/// u, z = split(in_proj(LN(F)))
/// T    = SSM(SiLU(DW(u)))
/// S    = out_proj(LN(T) * SiLU(z)) + F
/// ```
///
/// `A` is stored as `a_log` with `A = -exp(a_log)`, so the effective state
/// matrix is strictly negative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MambaBlock {
    pub prefix: String,
    pub cfg: MambaConfig,
}

impl MambaBlock {
    pub fn new(prefix: impl Into<String>, cfg: MambaConfig) -> Self {
        Self {
            prefix: prefix.into(),
            cfg,
        }
    }

    fn name(&self, s: &str) -> String {
        join(&self.prefix, s)
    }

    fn in_proj(&self) -> Linear {
        Linear::new(self.name("in_proj"), self.cfg.dim, 2 * self.cfg.inner())
    }

    fn x_proj(&self) -> Linear {
        Linear::new(
            self.name("x_proj"),
            self.cfg.inner(),
            self.cfg.dt_rank() + 2 * self.cfg.state_dim,
        )
        .without_bias()
    }

    fn dt_proj(&self) -> Linear {
        Linear::new(self.name("dt_proj"), self.cfg.dt_rank(), self.cfg.inner())
    }

    fn out_proj(&self) -> Linear {
        Linear::new(self.name("out_proj"), self.cfg.inner(), self.cfg.dim)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let (d, e, s, w) = (
            self.cfg.dim,
            self.cfg.inner(),
            self.cfg.state_dim,
            self.cfg.conv_width,
        );
        params.insert(self.name("norm_in.g"), Tensor::full(&[d], 1.0));
        params.insert(self.name("norm_in.b"), Tensor::zeros(&[d]));
        self.in_proj().init(params, rng);
        params.insert(self.name("conv.w"), uniform_init(&[e, w], w, rng));
        params.insert(self.name("conv.b"), uniform_init(&[e], w, rng));
        self.x_proj().init(params, rng);
        self.dt_proj().init(params, rng);
        // step sizes start log-uniform in [1e-3, 1e-1]: bias = softplus^-1(dt)
        let mut bias = Vec::with_capacity(e);
        for i in 0..e {
            let frac = if e > 1 {
                i as f64 / (e - 1) as f64
            } else {
                0.5
            };
            let dt = (1e-3f64.ln() + frac * (1e-1f64.ln() - 1e-3f64.ln())).exp();
            bias.push(dt + (-(-dt).exp_m1()).ln());
        }
        params.insert(self.dt_proj().bias_name(), Tensor::vector(bias));
        let a_log = (0..e * s).map(|k| ((k % s) as f64 + 1.0).ln()).collect();
        params.insert(
            self.name("a_log"),
            Tensor::new(vec![e, s], a_log).expect("shape"),
        );
        params.insert(self.name("d_skip"), Tensor::full(&[e], 1.0));
        params.insert(self.name("norm_out.g"), Tensor::full(&[e], 1.0));
        params.insert(self.name("norm_out.b"), Tensor::zeros(&[e]));
        self.out_proj().init(params, rng);
    }

    /// `F: n x d -> S: n x d`.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, f: Var) -> Result<Var> {
        let branch = self.branch(tape, vars, f)?;
        tape.add(branch, f)
    }

    /// The gated branch `S - F`.
    pub fn branch(&self, tape: &mut Tape, vars: &ParamVars, f: Var) -> Result<Var> {
        let (d, e, s) = (self.cfg.dim, self.cfg.inner(), self.cfg.state_dim);
        let shape = tape.shape(f).to_vec();
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::shape(
                "mamba_block",
                &shape,
                &[shape.first().copied().unwrap_or(0), d],
            ));
        }
        let g_in = vars.get(&self.name("norm_in.g"))?;
        let b_in = vars.get(&self.name("norm_in.b"))?;
        let normed = tape.layer_norm(f, g_in, b_in)?;
        let uz = self.in_proj().forward(tape, vars, normed)?;
        let u = tape.slice(uz, 1, 0, e)?;
        let z = tape.slice(uz, 1, e, e)?;

        let kernel = vars.get(&self.name("conv.w"))?;
        let conv = tape.dwconv1d(u, kernel)?;
        let conv = add_row_bias(tape, conv, vars.get(&self.name("conv.b"))?)?;
        let x = tape.silu(conv)?;

        let r = self.cfg.dt_rank();
        let proj = self.x_proj().forward(tape, vars, x)?;
        let dt_in = tape.slice(proj, 1, 0, r)?;
        let b = tape.slice(proj, 1, r, s)?;
        let c = tape.slice(proj, 1, r + s, s)?;
        let dt = self.dt_proj().forward(tape, vars, dt_in)?;
        let delta = tape.softplus(dt)?;

        let a_log = vars.get(&self.name("a_log"))?;
        let a = tape.exp(a_log)?;
        let a = tape.scale(a, -1.0)?;
        let d_skip = vars.get(&self.name("d_skip"))?;
        let t = scan_on_tape(tape, x, delta, b, c, a, d_skip)?;

        let g_out = vars.get(&self.name("norm_out.g"))?;
        let b_out = vars.get(&self.name("norm_out.b"))?;
        let tn = tape.layer_norm(t, g_out, b_out)?;
        let gate = tape.silu(z)?;
        let gated = tape.mul(tn, gate)?;
        self.out_proj().forward(tape, vars, gated)
    }
}

/// Resets every step-size bias in `params` to `softplus^-1` of values in
/// `[0.5, 1.5]`. At the default initialization the state decay barely
/// depends on `a_log` and the step projection, so finite-difference probes
/// of those parameters sit at the rounding floor; this gives them an O(1)
/// effect.
pub fn widen_step_sizes(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params
        .names()
        .filter(|n| n.ends_with("dt_proj.b"))
        .map(String::from)
        .collect();
    for name in names {
        let t = params.get_mut(&name).expect("name listed above");
        for v in t.data_mut() {
            let dt: f64 = rng.random_range(0.5..1.5);
            *v = dt + (-(-dt).exp_m1()).ln();
        }
    }
}
