//! Two-headed per-point regressor: a shared three-layer SiLU trunk feeding
//! a non-negative distance head and an unconstrained 3D shift head.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet, ParamVars};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegressorConfig {
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Regressor {
    pub prefix: String,
    pub cfg: RegressorConfig,
}

/// Intermediate values of one trunk evaluation; `z*` are pre-activations.
#[derive(Clone, Copy, Debug)]
pub struct Trunk {
    pub z0: Var,
    pub z1: Var,
    pub z2: Var,
    pub z3: Var,
    /// `n x 1`, `softplus(z3)`.
    pub distance: Var,
    /// `n x 3`.
    pub shift: Var,
}

impl Regressor {
    pub fn new(prefix: impl Into<String>, cfg: RegressorConfig) -> Self {
        Self {
            prefix: prefix.into(),
            cfg,
        }
    }

    /// First trunk layer, `input -> hidden`.
    pub fn mlp0(&self) -> Linear {
        Linear::new(
            format!("{}.mlp0", self.prefix),
            self.cfg.input,
            self.cfg.hidden,
        )
    }

    fn mlp1(&self) -> Linear {
        Linear::new(
            format!("{}.mlp1", self.prefix),
            self.cfg.hidden,
            self.cfg.hidden,
        )
    }

    fn mlp2(&self) -> Linear {
        Linear::new(
            format!("{}.mlp2", self.prefix),
            self.cfg.hidden,
            self.cfg.hidden,
        )
    }

    fn distance_head(&self) -> Linear {
        Linear::new(format!("{}.distance", self.prefix), self.cfg.hidden, 1)
    }

    fn shift_head(&self) -> Linear {
        Linear::new(format!("{}.shift", self.prefix), self.cfg.hidden, 3)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for l in [
            self.mlp0(),
            self.mlp1(),
            self.mlp2(),
            self.distance_head(),
            self.shift_head(),
        ] {
            l.init(params, rng);
        }
    }

    /// Trunk and both heads from the first pre-activation `z0 = mlp0(X)`.
    pub fn from_z0(&self, tape: &mut Tape, vars: &ParamVars, z0: Var) -> Result<Trunk> {
        let a0 = tape.silu(z0)?;
        let z1 = self.mlp1().forward(tape, vars, a0)?;
        let a1 = tape.silu(z1)?;
        let z2 = self.mlp2().forward(tape, vars, a1)?;
        let a2 = tape.silu(z2)?;
        let z3 = self.distance_head().forward(tape, vars, a2)?;
        let distance = tape.softplus(z3)?;
        let shift = self.shift_head().forward(tape, vars, a2)?;
        Ok(Trunk {
            z0,
            z1,
            z2,
            z3,
            distance,
            shift,
        })
    }

    /// `X: n x input`, one row per point.
    pub fn forward_rows(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<Trunk> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.cfg.input {
            return Err(Error::shape(
                "regress",
                shape,
                &[shape.first().copied().unwrap_or(0), self.cfg.input],
            ));
        }
        let z0 = self.mlp0().forward(tape, vars, x)?;
        self.from_z0(tape, vars, z0)
    }

    /// Channel-major batch form: `X: b x c x n -> (b x 1 x n, b x 3 x n)`.
    pub fn regress(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.input {
            return Err(Error::shape("regress", &shape, &[0, self.cfg.input, 0]));
        }
        let (b, c, n) = (shape[0], shape[1], shape[2]);
        let mut dist = Vec::with_capacity(b);
        let mut shift = Vec::with_capacity(b);
        for i in 0..b {
            let xi = tape.slice(x, 0, i, 1)?;
            let xi = tape.reshape(xi, &[c, n])?;
            let rows = tape.transpose(xi)?;
            let out = self.forward_rows(tape, vars, rows)?;
            let d = tape.transpose(out.distance)?;
            dist.push(tape.reshape(d, &[1, 1, n])?);
            let s = tape.transpose(out.shift)?;
            shift.push(tape.reshape(s, &[1, 3, n])?);
        }
        Ok((tape.concat(&dist, 0)?, tape.concat(&shift, 0)?))
    }

    /// `d distance_i / d z0_i` for every row, built from tape ops so that
    /// it can itself be differentiated (`n x hidden`).
    pub fn distance_grad_z0(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        trunk: &Trunk,
    ) -> Result<Var> {
        let sig = tape.sigmoid(trunk.z3)?;
        let w3 = vars.get(&self.distance_head().weight_name())?;
        let w3t = tape.transpose(w3)?;
        let g_a2 = tape.matmul(sig, w3t)?;
        let g_z2 = silu_back(tape, g_a2, trunk.z2)?;
        let w2 = vars.get(&self.mlp2().weight_name())?;
        let g_a1 = matmul_t(tape, g_z2, w2)?;
        let g_z1 = silu_back(tape, g_a1, trunk.z1)?;
        let w1 = vars.get(&self.mlp1().weight_name())?;
        let g_a0 = matmul_t(tape, g_z1, w1)?;
        silu_back(tape, g_a0, trunk.z0)
    }
}

fn silu_back(tape: &mut Tape, g: Var, z: Var) -> Result<Var> {
    let d = tape.silu_deriv(z)?;
    tape.mul(g, d)
}

/// `g W^T`.
fn matmul_t(tape: &mut Tape, g: Var, w: Var) -> Result<Var> {
    let wt = tape.transpose(w)?;
    tape.matmul(g, wt)
}
