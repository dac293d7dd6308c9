//! Losses, metrics, optimizer, synthetic data and the training loop.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod metrics;
mod shapes;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION,
};
pub use config::TrainConfig;
pub use loss::{
    chamfer_distance, chamfer_on_tape, l1_on_tape, l1_refinement_loss, reference_views, total_loss,
    LossConfig, LossTerms, ViewTarget, RENDER_FRAME_SCALE,
};
pub use metrics::{evaluate, fscore, hausdorff_distance, metrics, p2f_distance, Metrics};
pub use shapes::Shape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, PointCloud};
use crate::model::Network;
use crate::nn::ParamSet;
use crate::render::make_camera_rig;
use crate::tensor::Tape;
use crate::upsample::{interpolate_only, midpoint_interpolate, upsample, RefinementConfig};

/// A sparse input and an independently drawn dense target of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub shape: Shape,
    pub sparse: PointCloud,
    pub dense: PointCloud,
}

/// Draws `points` sparse and `round(rate * points)` dense surface samples.
pub fn draw_pair(
    shape: Shape,
    points: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPair> {
    let sparse = shape.sample(points, rng)?;
    let dense = shape.sample((rate * points as f64).round() as usize, rng)?;
    Ok(TrainingPair {
        shape,
        sparse,
        dense,
    })
}

/// Evaluation pairs from a random stream the training loop never touches.
pub fn held_out_pairs(cfg: &TrainConfig, per_shape: usize) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut out = Vec::with_capacity(per_shape * cfg.shapes.len());
    for _ in 0..per_shape {
        for &shape in &cfg.shapes {
            out.push(draw_pair(shape, cfg.points, cfg.rate, &mut rng)?);
        }
    }
    Ok(out)
}

/// Total loss of one pair and its gradient with respect to every weight,
/// taken through the refinement steps.
pub fn pair_gradient(
    net: &Network,
    params: &ParamSet,
    pair: &TrainingPair,
    cfg: &TrainConfig,
) -> Result<(f64, ParamSet)> {
    let (normed, tf) = normalize_unit_sphere(&pair.sparse)?;
    let dense = tf.apply(&pair.dense);
    let interp = midpoint_interpolate(&normed, cfg.rate, cfg.refine.k_midpoint)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let trace = net.refine_on_tape(&mut tape, &vars, &interp, &cfg.refine)?;
    let rig = make_camera_rig(cfg.views);
    let reference = reference_views(&dense, &rig, &cfg.render);
    let target = ViewTarget {
        reference: &reference,
        rig: &rig,
        cfg: &cfg.render,
    };
    let terms = total_loss(
        &mut tape,
        trace.refined,
        trace.shifted,
        &dense,
        &target,
        &cfg.loss,
    )?;
    let loss = tape.value(terms.total).item()?;
    if !loss.is_finite() {
        return Ok((loss, params.zeros_like()));
    }
    let g = tape.backward(terms.total)?;
    Ok((loss, params.grads(&vars, &g)))
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub params: ParamSet,
    /// Mean loss of every epoch, in order.
    pub losses: Vec<f64>,
}

/// Fits freshly initialized weights. `on_epoch(epoch, mean_loss)` runs
/// after every epoch. The whole run is a function of `cfg` alone.
pub fn train(cfg: &TrainConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let network = Network::new(cfg.network.clone());
    let mut params = network.init(cfg.seed);
    let mut opt = Adam::new(&params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = cfg
            .shapes
            .iter()
            .map(|&s| draw_pair(s, cfg.points, cfg.rate, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut acc = params.zeros_like();
            for pair in batch {
                let (loss, grads) = match pair_gradient(&network, &params, pair, cfg) {
                    // numeric breakdown inside the network is divergence too
                    Err(
                        Error::RefinementDiverged { .. }
                        | Error::NonPositiveDelta { .. }
                        | Error::NonFinite(_),
                    ) => (f64::NAN, params.zeros_like()),
                    other => other?,
                };
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                total += loss;
                acc.axpy(1.0 / batch.len() as f64, &grads)?;
            }
            opt.step(&mut params, &acc)?;
            if !params.all_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        let mean = total / pairs.len() as f64;
        losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        network,
        params,
        losses,
    })
}

/// Mean Chamfer distance to the dense target, for the full pipeline and for
/// interpolation alone, in the input frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldOutScore {
    pub refined_cd: f64,
    pub baseline_cd: f64,
}

impl HeldOutScore {
    pub fn ratio(&self) -> f64 {
        self.refined_cd / self.baseline_cd
    }
}

/// Scores `pairs` after replacing every sparse input by `perturb(input)`.
pub fn held_out_score(
    net: &Network,
    params: &ParamSet,
    pairs: &[TrainingPair],
    rate: f64,
    refine: &RefinementConfig,
    perturb: impl Fn(&PointCloud, usize) -> Result<PointCloud>,
) -> Result<HeldOutScore> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no evaluation pairs".into()));
    }
    let mut refined = 0.0;
    let mut baseline = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let input = perturb(&pair.sparse, i)?;
        refined += chamfer_distance(&upsample(&input, rate, net, params, refine)?, &pair.dense)?;
        baseline += chamfer_distance(
            &interpolate_only(&input, rate, refine.k_midpoint)?,
            &pair.dense,
        )?;
    }
    let n = pairs.len() as f64;
    Ok(HeldOutScore {
        refined_cd: refined / n,
        baseline_cd: baseline / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> TrainConfig {
        TrainConfig::parse(
            "epochs = 2\nshapes = sphere, cube\npoints = 24\nviews = 2\nrender_width = 8\nrender_height = 8\n\
             depth_bins = 16\niterations = 2\ninit_dim = 4\nmixer_dim = 4\ntransition_dim = 6\nblocks = 1\n\
             mixers_per_block = 1\nstate_dim = 4\nconv_width = 3\nk_conv = 4\nhidden = 8\n",
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_return_initial_weights() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny()
        };
        let out = train(&cfg, |_, _| {}).unwrap();
        assert!(out.losses.is_empty());
        let init = Network::new(cfg.network.clone()).init(cfg.seed);
        assert_eq!(encode_checkpoint(&out.params), encode_checkpoint(&init));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny();
        let a = train(&cfg, |_, _| {}).unwrap();
        let b = train(&cfg, |_, _| {}).unwrap();
        assert_eq!(a.losses.len(), 2);
        assert_eq!(
            a.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(encode_checkpoint(&a.params), encode_checkpoint(&b.params));
        let other = train(&TrainConfig { seed: 1, ..cfg }, |_, _| {}).unwrap();
        assert_ne!(other.losses, a.losses);
    }

    #[test]
    fn exploding_step_reports_the_epoch() {
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs: 5,
            refine: RefinementConfig {
                lambda: 1e6,
                ..tiny().refine
            },
            ..tiny()
        };
        match train(&cfg, |_, _| {}) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("{:?}", other.map(|o| o.losses)),
        }
    }

    #[test]
    fn held_out_pairs_differ_from_training_draws() {
        let cfg = tiny();
        let held = held_out_pairs(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let first = draw_pair(cfg.shapes[0], cfg.points, cfg.rate, &mut rng).unwrap();
        assert_ne!(held[0].sparse, first.sparse);
        assert_eq!(held.len(), 2);
    }

    #[test]
    fn pipeline_loss_gradient_matches_finite_differences() {
        // end-to-end weight gradient, refinement steps included
        let cfg = tiny();
        let net = Network::new(cfg.network.clone());
        let params = net.init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pair = draw_pair(Shape::Sphere, 8, 2.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            rate: 2.0,
            points: 8,
            refine: RefinementConfig {
                iterations: 2,
                lambda: 0.05,
                apply_shift: true,
                k_midpoint: 4,
            },
            loss: LossConfig {
                alpha: 0.0,
                beta: 1.0,
            },
            ..cfg
        };
        let (_, grads) = pair_gradient(&net, &params, &pair, &cfg).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for name in [
            "regressor.mlp1.w",
            "regressor.distance.w",
            "regressor.shift.w",
            "extractor.init.w",
        ] {
            for i in [0, 3] {
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= h;
                let lp = pair_gradient(&net, &plus, &pair, &cfg).unwrap().0;
                let lm = pair_gradient(&net, &minus, &pair, &cfg).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.get(name).unwrap().data()[i];
                worst = worst.max((numeric - analytic).abs() / numeric.abs().max(1e-8));
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }
}
