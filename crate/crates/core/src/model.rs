//! The full network: feature extractor plus regressor, and the two ways of
//! running refinement with it.
//!
//! Inference evaluates the predicted distance at the current positions and
//! asks the tape for its gradient. Training needs the refined positions as
//! a differentiable function of the weights, which involves second
//! derivatives; there the position gradient is assembled explicitly from
//! tape primitives (sigmoid, SiLU derivative, transposed weights and the
//! derivative of the interpolation weights), so that backpropagating
//! through it yields the mixed derivative.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::extractor::{
    interpolate_features, weights_on_tape, Extractor, ExtractorConfig, FeatureSet, InterpWeights,
    INTERP_EPS,
};
use crate::geometry::{Point3, PointCloud};
use crate::nn::{row_dot, scale_rows, ParamSet, ParamVars};
use crate::regressor::{Regressor, RegressorConfig};
use crate::tensor::{Tape, Tensor, Var};
use crate::upsample::{RefinementConfig, RefinementField};

pub const EXTRACTOR_PREFIX: &str = "extractor";
pub const REGRESSOR_PREFIX: &str = "regressor";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub extractor: ExtractorConfig,
    /// Width of the regressor trunk.
    pub hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            hidden: 64,
        }
    }
}

impl NetworkConfig {
    /// Regressor input: interpolated local features, coordinates, global
    /// feature and fed-back distance.
    pub fn regressor_input(&self) -> usize {
        self.extractor.local_dim() + 3 + self.extractor.global_dim() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub extractor: Extractor,
    pub regressor: Regressor,
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Self {
        let extractor = Extractor::new(EXTRACTOR_PREFIX, cfg.extractor.clone());
        let regressor = Regressor::new(
            REGRESSOR_PREFIX,
            RegressorConfig {
                input: cfg.regressor_input(),
                hidden: cfg.hidden,
            },
        );
        Self {
            cfg,
            extractor,
            regressor,
        }
    }

    /// Freshly initialized weights, fully determined by `seed`.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.extractor.init(&mut p, &mut rng);
        self.regressor.init(&mut p, &mut rng);
        p
    }

    /// Reconstructs the architecture from the tensor shapes of a parameter
    /// set. The neighborhood size of the point convolution is not stored in
    /// any weight and must be supplied.
    pub fn infer(params: &ParamSet, k_conv: usize) -> Result<Network> {
        let shape = |name: &str| params.get(name).map(|t| t.shape().to_vec());
        let init = shape("extractor.init.w")?;
        let reduce = shape("extractor.block1.mixer1.reduce.w")?;
        let transition = shape("extractor.block1.transition.w")?;
        let a_log = shape("extractor.block1.mixer1.mamba.a_log")?;
        let conv = shape("extractor.block1.mixer1.mamba.conv.w")?;
        let mlp1 = shape("regressor.mlp1.w")?;
        let count = |pattern: &dyn Fn(usize) -> String| {
            (1..)
                .take_while(|&i| params.get(&pattern(i)).is_ok())
                .count()
        };
        let blocks = count(&|b| format!("extractor.block{b}.transition.w"));
        let mixers = count(&|m| format!("extractor.block1.mixer{m}.reduce.w"));
        let mixer_dim = reduce[1];
        let cfg = NetworkConfig {
            extractor: ExtractorConfig {
                init_dim: init[1],
                mixer_dim,
                transition_dim: transition[1],
                blocks,
                mixers_per_block: mixers,
                k_conv,
                state_dim: a_log[1],
                conv_width: conv[1],
                expand: a_log[0] / mixer_dim.max(1),
            },
            hidden: mlp1[0],
        };
        let net = Network::new(cfg);
        let reference = net.init(0);
        if !reference.aligned_with(params) {
            return Err(Error::Checkpoint(
                "tensor names or shapes do not form a consistent network".into(),
            ));
        }
        Ok(net)
    }

    /// Column layout of the regressor input:
    /// `(local, coords, global, fed)` start offsets.
    fn layout(&self) -> (usize, usize, usize, usize) {
        let l = self.cfg.extractor.local_dim();
        let g = self.cfg.extractor.global_dim();
        (0, l, l + 3, l + 3 + g)
    }

    /// Runs refinement on the tape with every step differentiable with
    /// respect to the weights. `cloud` is the interpolated, normalized
    /// cloud; it provides both the features and the starting positions.
    pub fn refine_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        cloud: &PointCloud,
        cfg: &RefinementConfig,
    ) -> Result<RefineTrace> {
        let fs = self.extractor.extract(tape, vars, cloud)?;
        let proj = ProjectedFeatures::new(self, tape, vars, &fs)?;
        let n = cloud.len();
        let mut p = tape.leaf(Tensor::from_points(cloud.points()));
        let zeros = tape.leaf(Tensor::zeros(&[n, 1]));
        let start = p;
        if cfg.apply_shift {
            let step = proj.eval(self, tape, vars, cloud, p, zeros)?;
            p = tape.add(p, step.trunk.shift)?;
        }
        let shifted = p;
        let mut fed = zeros;
        for t in 0..cfg.iterations {
            let step = proj.eval(self, tape, vars, cloud, p, fed)?;
            let grad = proj.position_grad(self, tape, vars, cloud, p, &step)?;
            let move_ = tape.scale(grad, cfg.lambda)?;
            p = tape.sub(p, move_)?;
            if !tape.value(p).all_finite() {
                return Err(Error::RefinementDiverged { iteration: t });
            }
            fed = step.trunk.distance;
        }
        Ok(RefineTrace {
            start,
            shifted,
            refined: p,
        })
    }
}

/// Positions recorded by [`Network::refine_on_tape`] (`n x 3` each).
#[derive(Clone, Copy, Debug)]
pub struct RefineTrace {
    pub start: Var,
    pub shifted: Var,
    pub refined: Var,
}

/// Seed features already multiplied by the first regressor layer, so that
/// interpolation happens in the trunk's hidden width.
struct ProjectedFeatures {
    /// `m x hidden`: local features of every seed times their weight rows.
    h: Var,
    /// Coordinate rows of the first layer, `3 x hidden`.
    w_coord: Var,
    /// Fed-back distance row, `1 x hidden`.
    w_fed: Var,
    /// Global feature contribution plus bias, `hidden`.
    offset: Var,
}

struct StepEval {
    iw: InterpWeights,
    weights: Vec<Var>,
    trunk: crate::regressor::Trunk,
}

impl ProjectedFeatures {
    fn new(net: &Network, tape: &mut Tape, vars: &ParamVars, fs: &FeatureSet) -> Result<Self> {
        let (_, coord, global, fed) = net.layout();
        let mlp0 = net.regressor.mlp0();
        let w0 = vars.get(&mlp0.weight_name())?;
        let b0 = vars.get(&mlp0.bias_name())?;
        let w_local = tape.slice(w0, 0, 0, coord)?;
        let w_coord = tape.slice(w0, 0, coord, 3)?;
        let w_global = tape.slice(w0, 0, global, fed - global)?;
        let w_fed = tape.slice(w0, 0, fed, 1)?;
        let local = tape.concat(&fs.local, 1)?;
        let h = tape.matmul(local, w_local)?;
        let g = tape.reshape(fs.global, &[1, fed - global])?;
        let gw = tape.matmul(g, w_global)?;
        let gw = tape.reshape(gw, &[net.cfg.hidden])?;
        let offset = tape.add(gw, b0)?;
        Ok(Self {
            h,
            w_coord,
            w_fed,
            offset,
        })
    }

    fn eval(
        &self,
        net: &Network,
        tape: &mut Tape,
        vars: &ParamVars,
        seeds: &PointCloud,
        p: Var,
        fed: Var,
    ) -> Result<StepEval> {
        let q = PointCloud::new(tape.value(p).to_points()?)?;
        let n = q.len();
        let iw = InterpWeights::compute(&q, seeds)?;
        let weights = weights_on_tape(tape, p, seeds, &iw)?;
        let mut z0 = tape.matmul(p, self.w_coord)?;
        let fz = tape.matmul(fed, self.w_fed)?;
        z0 = tape.add(z0, fz)?;
        let off = tape.broadcast(self.offset, 0, n)?;
        z0 = tape.add(z0, off)?;
        for (col, &w) in weights.iter().enumerate() {
            let rows = tape.gather(self.h, iw.column(col))?;
            let term = scale_rows(tape, rows, w)?;
            z0 = tape.add(z0, term)?;
        }
        let trunk = net.regressor.from_z0(tape, vars, z0)?;
        Ok(StepEval { iw, weights, trunk })
    }

    /// Gradient of each point's predicted distance with respect to its own
    /// position, as a tape value (`n x 3`).
    fn position_grad(
        &self,
        net: &Network,
        tape: &mut Tape,
        vars: &ParamVars,
        seeds: &PointCloud,
        p: Var,
        step: &StepEval,
    ) -> Result<Var> {
        let n = step.iw.exact.len();
        let g_z0 = net.regressor.distance_grad_z0(tape, vars, &step.trunk)?;
        let wct = tape.transpose(self.w_coord)?;
        let mut grad = tape.matmul(g_z0, wct)?;

        // d/dp sum_j w_j a_j with w_j = r_j / S, r_j = 1 / (|p - s_j|^2 + eps):
        // sum_j (a_j - abar) dr_j/dp / S, dr_j/dp = -2 r_j^2 (p - s_j)
        let k = step.iw.k();
        let mut a = Vec::with_capacity(k);
        let mut diffs = Vec::with_capacity(k);
        let mut recips = Vec::with_capacity(k);
        for col in 0..k {
            let rows = tape.gather(self.h, step.iw.column(col))?;
            a.push(row_dot(tape, g_z0, rows)?);
            let s: Vec<f64> = step
                .iw
                .column(col)
                .iter()
                .flat_map(|&j| seeds.points()[j])
                .collect();
            let s = tape.leaf(Tensor::new(vec![n, 3], s)?);
            let d = tape.sub(p, s)?;
            let sq = tape.square(d)?;
            let d2 = tape.sum_axis(sq, 1)?;
            let d2 = tape.add_scalar(d2, INTERP_EPS)?;
            recips.push(tape.reciprocal(d2)?);
            diffs.push(d);
        }
        let mut abar = tape.mul(a[0], step.weights[0])?;
        let mut total = recips[0];
        for col in 1..k {
            let t = tape.mul(a[col], step.weights[col])?;
            abar = tape.add(abar, t)?;
            total = tape.add(total, recips[col])?;
        }
        let inv_total = tape.reciprocal(total)?;
        let (keep, _) = step.iw.masks();
        let keep = tape.leaf(keep);
        let factor = tape.mul(inv_total, keep)?;
        let factor = tape.scale(factor, -2.0)?;
        for col in 0..k {
            let centered = tape.sub(a[col], abar)?;
            let r2 = tape.square(recips[col])?;
            let c = tape.mul(centered, r2)?;
            let c = tape.mul(c, factor)?;
            let term = scale_rows(tape, diffs[col], c)?;
            grad = tape.add(grad, term)?;
        }
        Ok(grad)
    }
}

/// The network as a distance field over query positions, with features
/// extracted once from the seed cloud.
pub struct NetworkField<'a> {
    net: &'a Network,
    params: &'a ParamSet,
    seeds: PointCloud,
    local: Vec<Tensor>,
    global: Tensor,
}

impl<'a> NetworkField<'a> {
    pub fn new(net: &'a Network, params: &'a ParamSet, seeds: &PointCloud) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let fs = net.extractor.extract(&mut tape, &vars, seeds)?;
        Ok(Self {
            net,
            params,
            seeds: seeds.clone(),
            local: fs.local.iter().map(|&v| tape.value(v).clone()).collect(),
            global: tape.value(fs.global).clone(),
        })
    }

    fn heads(
        &self,
        tape: &mut Tape,
        positions: &[Point3],
        fed_back: &[f64],
    ) -> Result<(Var, crate::regressor::Trunk)> {
        let vars = self.params.bind(tape);
        let fs = FeatureSet {
            local: self.local.iter().map(|t| tape.leaf(t.clone())).collect(),
            global: tape.leaf(self.global.clone()),
        };
        let q = tape.leaf(Tensor::from_points(positions));
        let fed = tape.leaf(Tensor::new(vec![positions.len(), 1], fed_back.to_vec())?);
        let x = interpolate_features(tape, q, &self.seeds, &fs, fed)?;
        let trunk = self.net.regressor.forward_rows(tape, &vars, x)?;
        Ok((q, trunk))
    }
}

impl RefinementField for NetworkField<'_> {
    fn distance_grad(
        &self,
        positions: &[Point3],
        fed_back: &[f64],
    ) -> Result<(Vec<f64>, Vec<Point3>)> {
        let mut tape = Tape::new();
        let (q, trunk) = self.heads(&mut tape, positions, fed_back)?;
        let total = tape.sum(trunk.distance)?;
        let g = tape.backward(total)?;
        let grad = g.wrt(q).to_points()?;
        Ok((tape.value(trunk.distance).data().to_vec(), grad))
    }

    fn shift(&self, positions: &[Point3]) -> Result<Vec<Point3>> {
        let mut tape = Tape::new();
        let zeros = vec![0.0; positions.len()];
        let (_, trunk) = self.heads(&mut tape, positions, &zeros)?;
        tape.value(trunk.shift).to_points()
    }
}
