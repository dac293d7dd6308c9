//! Point feature extractor: an initial per-point MLP, densely connected
//! blocks of mixers (reduction MLP, Mamba block, point convolution) closed
//! by transition layers, and a global max-pool.

mod interp;
mod p3dconv;

use rand_chacha::ChaCha8Rng;

pub use interp::{
    interpolate_features, weights_on_tape, InterpWeights, INTERP_EPS, INTERP_NEIGHBORS,
};
pub use p3dconv::{conv_neighbors, P3DConv};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Linear, ParamSet, ParamVars};
use crate::ssm::{MambaBlock, MambaConfig};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractorConfig {
    /// Width of `l0`, the initial MLP output.
    pub init_dim: usize,
    /// Width of every mixer output.
    pub mixer_dim: usize,
    /// Width of every transition output (`l1..`) and of the global feature.
    pub transition_dim: usize,
    pub blocks: usize,
    pub mixers_per_block: usize,
    pub k_conv: usize,
    pub state_dim: usize,
    pub conv_width: usize,
    pub expand: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            init_dim: 32,
            mixer_dim: 32,
            transition_dim: 64,
            blocks: 3,
            mixers_per_block: 3,
            k_conv: 8,
            state_dim: 16,
            conv_width: 4,
            expand: 2,
        }
    }
}

impl ExtractorConfig {
    /// Total width of the concatenated local features `l0..`.
    pub fn local_dim(&self) -> usize {
        self.init_dim + self.blocks * self.transition_dim
    }

    pub fn global_dim(&self) -> usize {
        self.transition_dim
    }

    fn block_input(&self, block: usize) -> usize {
        if block == 0 {
            self.init_dim
        } else {
            self.transition_dim
        }
    }
}

/// Local features `l0..l_B` (one `n x c_i` tape value each) and the global
/// feature `g`, the per-channel max of the last local feature.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub local: Vec<Var>,
    pub global: Var,
}

struct Mixer {
    reduce: Linear,
    mamba: MambaBlock,
    conv: P3DConv,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extractor {
    pub prefix: String,
    pub cfg: ExtractorConfig,
}

impl Extractor {
    pub fn new(prefix: impl Into<String>, cfg: ExtractorConfig) -> Self {
        Self {
            prefix: prefix.into(),
            cfg,
        }
    }

    fn init_mlp(&self) -> Linear {
        Linear::new(format!("{}.init", self.prefix), 3, self.cfg.init_dim)
    }

    fn mixer(&self, block: usize, m: usize) -> Mixer {
        let c = &self.cfg;
        let base = format!("{}.block{}.mixer{}", self.prefix, block + 1, m + 1);
        let input = c.block_input(block) + m * c.mixer_dim;
        Mixer {
            reduce: Linear::new(format!("{base}.reduce"), input, c.mixer_dim),
            mamba: MambaBlock::new(
                format!("{base}.mamba"),
                MambaConfig {
                    dim: c.mixer_dim,
                    state_dim: c.state_dim,
                    conv_width: c.conv_width,
                    expand: c.expand,
                },
            ),
            conv: P3DConv::new(format!("{base}.conv"), c.mixer_dim, c.mixer_dim),
        }
    }

    fn transition(&self, block: usize) -> Linear {
        let c = &self.cfg;
        Linear::new(
            format!("{}.block{}.transition", self.prefix, block + 1),
            c.block_input(block) + c.mixers_per_block * c.mixer_dim,
            c.transition_dim,
        )
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        self.init_mlp().init(params, rng);
        for b in 0..self.cfg.blocks {
            for m in 0..self.cfg.mixers_per_block {
                let mx = self.mixer(b, m);
                mx.reduce.init(params, rng);
                mx.mamba.init(params, rng);
                mx.conv.init(params, rng);
            }
            self.transition(b).init(params, rng);
        }
    }

    /// Features of `cloud`, with points fed to the sequence layers in stored
    /// order.
    pub fn extract(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        cloud: &PointCloud,
    ) -> Result<FeatureSet> {
        self.run(tape, vars, cloud, None, &mut Vec::new())
    }

    /// `zero_mixer = Some((block, mixer))` replaces that mixer's output by
    /// zeros; `inputs` collects every mixer's input.
    fn run(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        cloud: &PointCloud,
        zero_mixer: Option<(usize, usize)>,
        inputs: &mut Vec<Var>,
    ) -> Result<FeatureSet> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let n = cloud.len();
        let neighbors = conv_neighbors(cloud, self.cfg.k_conv)?;
        let coords = tape.leaf(Tensor::from_points(cloud.points()));
        let l0 = self.init_mlp().forward(tape, vars, coords)?;
        let l0 = tape.silu(l0)?;
        let mut local = vec![l0];
        let mut x = l0;
        for b in 0..self.cfg.blocks {
            let mut dense = vec![x];
            for m in 0..self.cfg.mixers_per_block {
                let mx = self.mixer(b, m);
                let input = tape.concat(&dense, 1)?;
                inputs.push(input);
                let out = if zero_mixer == Some((b, m)) {
                    tape.leaf(Tensor::zeros(&[n, self.cfg.mixer_dim]))
                } else {
                    let r = mx.reduce.forward(tape, vars, input)?;
                    let r = tape.silu(r)?;
                    let s = mx.mamba.forward(tape, vars, r)?;
                    mx.conv.forward(tape, vars, s, cloud, &neighbors)?
                };
                dense.push(out);
            }
            let cat = tape.concat(&dense, 1)?;
            let t = self.transition(b).forward(tape, vars, cat)?;
            x = tape.silu(t)?;
            local.push(x);
        }
        let global = tape.max_axis(x, 0)?;
        Ok(FeatureSet { local, global })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_param_grads;
    use rand::{Rng, SeedableRng};

    fn small() -> ExtractorConfig {
        ExtractorConfig {
            init_dim: 4,
            mixer_dim: 4,
            transition_dim: 6,
            blocks: 2,
            mixers_per_block: 2,
            k_conv: 3,
            state_dim: 4,
            conv_width: 3,
            expand: 2,
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    fn setup(cfg: ExtractorConfig) -> (Extractor, ParamSet) {
        let e = Extractor::new("extractor", cfg);
        let mut p = ParamSet::new();
        e.init(&mut p, &mut ChaCha8Rng::seed_from_u64(21));
        (e, p)
    }

    #[test]
    fn default_shapes() {
        let (e, p) = setup(ExtractorConfig::default());
        let c = cloud(16, 1);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let fs = e.extract(&mut t, &v, &c).unwrap();
        let widths: Vec<usize> = fs.local.iter().map(|&l| t.shape(l)[1]).collect();
        assert_eq!(widths, vec![32, 64, 64, 64]);
        assert!(fs.local.iter().all(|&l| t.shape(l)[0] == 16));
        assert_eq!(t.shape(fs.global), &[64]);
        assert_eq!(e.cfg.local_dim(), 224);
    }

    #[test]
    fn global_is_max_of_last_local() {
        let (e, p) = setup(small());
        let c = cloud(10, 2);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let fs = e.extract(&mut t, &v, &c).unwrap();
        let last = t.value(*fs.local.last().unwrap());
        for ch in 0..6 {
            let m = (0..10)
                .map(|i| last.row(i)[ch])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(t.value(fs.global).data()[ch], m);
        }
    }

    #[test]
    fn dense_connectivity_is_blockwise() {
        let (e, p) = setup(small());
        let c = cloud(9, 3);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let mut normal = Vec::new();
        e.run(&mut t, &v, &c, None, &mut normal).unwrap();
        let mut zeroed = Vec::new();
        e.run(&mut t, &v, &c, Some((1, 0)), &mut zeroed).unwrap();
        // block 2, mixer 2 input = [block input (6) | mixer 1 output (4)]
        let a = t.value(normal[3]);
        let b = t.value(zeroed[3]);
        for i in 0..9 {
            assert_eq!(&a.row(i)[0..6], &b.row(i)[0..6]);
            assert!(b.row(i)[6..10].iter().all(|&x| x == 0.0));
        }
        assert!((0..9).any(|i| a.row(i)[6..10] != b.row(i)[6..10]));
    }

    #[test]
    fn pooling_ignores_duplicated_rows() {
        // the sequence layer is order sensitive, so the pooling property is
        // checked on the pooling step itself: duplicating every per-point
        // feature row leaves the max unchanged
        let (e, p) = setup(small());
        let c = cloud(8, 4);
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        let fs = e.extract(&mut t, &v, &c).unwrap();
        let last = *fs.local.last().unwrap();
        let twice = t.concat(&[last, last], 0).unwrap();
        let pooled = t.max_axis(twice, 0).unwrap();
        assert_eq!(t.value(pooled), t.value(fs.global));
    }

    #[test]
    fn empty_cloud_errors() {
        let (e, p) = setup(small());
        let mut t = Tape::new();
        let v = p.bind(&mut t);
        assert!(matches!(
            e.extract(&mut t, &v, &PointCloud::empty()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn parameter_gradients_of_global_norm() {
        let (e, mut p) = setup(small());
        crate::ssm::widen_step_sizes(&mut p, &mut ChaCha8Rng::seed_from_u64(6));
        let c = cloud(8, 5);
        let reports = check_param_grads(
            &p,
            |t, vars| {
                let fs = e.extract(t, vars, &c)?;
                let g = t.square(fs.global)?;
                t.sum(g)
            },
            1e-5,
            8,
        )
        .unwrap();
        for (name, r) in reports {
            assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
        }
    }
}
