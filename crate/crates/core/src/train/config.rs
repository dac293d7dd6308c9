//! Flat `key = value` configuration text. Blank lines and `#` comments are
//! ignored; every key is optional and unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use super::loss::LossConfig;
use super::shapes::Shape;
use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::model::NetworkConfig;
use crate::render::RenderConfig;
use crate::upsample::RefinementConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Samples whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    /// One fresh sparse/dense pair per shape per epoch.
    pub shapes: Vec<Shape>,
    /// Sparse points per sample.
    pub points: usize,
    /// Upsampling rate during training; the dense target has
    /// `round(rate * points)` points.
    pub rate: f64,
    /// Cameras for the view term.
    pub views: usize,
    pub render: RenderConfig,
    pub loss: LossConfig,
    pub refine: RefinementConfig,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
            batch_size: 1,
            shapes: Shape::ALL.to_vec(),
            points: 256,
            rate: 4.0,
            views: 4,
            render: RenderConfig {
                width: 16,
                height: 16,
                depth_bins: 32,
                ..RenderConfig::default()
            },
            loss: LossConfig::default(),
            refine: RefinementConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("invalid boolean `{v}` for `{key}`"),
        }),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let ex = &mut self.network.extractor;
        match key {
            "epochs" => self.epochs = parse(line, key, v)?,
            "learning_rate" => self.learning_rate = parse(line, key, v)?,
            "seed" => self.seed = parse(line, key, v)?,
            "batch_size" => self.batch_size = parse(line, key, v)?,
            "shapes" => {
                self.shapes = v
                    .split(',')
                    .map(|s| s.trim().parse::<Shape>())
                    .collect::<Result<_>>()
                    .map_err(|e| Error::Config {
                        line,
                        message: e.to_string(),
                    })?
            }
            "points" => self.points = parse(line, key, v)?,
            "rate" => self.rate = parse(line, key, v)?,
            "views" => self.views = parse(line, key, v)?,
            "render_width" => self.render.width = parse(line, key, v)?,
            "render_height" => self.render.height = parse(line, key, v)?,
            "depth_bins" => self.render.depth_bins = parse(line, key, v)?,
            "sigma" => self.render.sigma = parse(line, key, v)?,
            "alpha" => self.loss.alpha = parse(line, key, v)?,
            "beta" => self.loss.beta = parse(line, key, v)?,
            "iterations" => self.refine.iterations = parse(line, key, v)?,
            "lambda" => self.refine.lambda = parse(line, key, v)?,
            "apply_shift" => self.refine.apply_shift = parse_bool(line, key, v)?,
            "k_midpoint" => self.refine.k_midpoint = parse(line, key, v)?,
            "init_dim" => ex.init_dim = parse(line, key, v)?,
            "mixer_dim" => ex.mixer_dim = parse(line, key, v)?,
            "transition_dim" => ex.transition_dim = parse(line, key, v)?,
            "blocks" => ex.blocks = parse(line, key, v)?,
            "mixers_per_block" => ex.mixers_per_block = parse(line, key, v)?,
            "k_conv" => ex.k_conv = parse(line, key, v)?,
            "state_dim" => ex.state_dim = parse(line, key, v)?,
            "conv_width" => ex.conv_width = parse(line, key, v)?,
            "expand" => ex.expand = parse(line, key, v)?,
            "hidden" => self.network.hidden = parse(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config { line: 0, message });
        let ex: &ExtractorConfig = &self.network.extractor;
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("points", self.points),
            ("views", self.views),
            ("init_dim", ex.init_dim),
            ("mixer_dim", ex.mixer_dim),
            ("transition_dim", ex.transition_dim),
            ("blocks", ex.blocks),
            ("mixers_per_block", ex.mixers_per_block),
            ("k_conv", ex.k_conv),
            ("state_dim", ex.state_dim),
            ("conv_width", ex.conv_width),
            ("expand", ex.expand),
            ("hidden", self.network.hidden),
        ] {
            if v == 0 {
                return bad(format!("`{name}` must be positive"));
            }
        }
        if self.shapes.is_empty() {
            return bad("`shapes` must name at least one shape".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "`learning_rate` must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.rate > 1.0) || !self.rate.is_finite() {
            return bad(format!("`rate` must be > 1, got {}", self.rate));
        }
        if self.points < self.refine.k_midpoint + 1 {
            return bad(format!(
                "`points` must exceed k_midpoint = {}",
                self.refine.k_midpoint
            ));
        }
        let wrap = |e: Error| Error::Config {
            line: 0,
            message: e.to_string(),
        };
        self.render.validate().map_err(wrap)?;
        self.loss.validate().map_err(wrap)?;
        self.refine.validate().map_err(wrap)?;
        Ok(())
    }

    /// Every key with its current value, in a form [`TrainConfig::parse`]
    /// reads back.
    pub fn to_text(&self) -> String {
        let ex = &self.network.extractor;
        let shapes: Vec<&str> = self.shapes.iter().map(|s| s.name()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("seed", self.seed.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("shapes", shapes.join(","));
        kv("points", self.points.to_string());
        kv("rate", self.rate.to_string());
        kv("views", self.views.to_string());
        kv("render_width", self.render.width.to_string());
        kv("render_height", self.render.height.to_string());
        kv("depth_bins", self.render.depth_bins.to_string());
        kv("sigma", self.render.sigma.to_string());
        kv("alpha", self.loss.alpha.to_string());
        kv("beta", self.loss.beta.to_string());
        kv("iterations", self.refine.iterations.to_string());
        kv("lambda", self.refine.lambda.to_string());
        kv("apply_shift", self.refine.apply_shift.to_string());
        kv("k_midpoint", self.refine.k_midpoint.to_string());
        kv("init_dim", ex.init_dim.to_string());
        kv("mixer_dim", ex.mixer_dim.to_string());
        kv("transition_dim", ex.transition_dim.to_string());
        kv("blocks", ex.blocks.to_string());
        kv("mixers_per_block", ex.mixers_per_block.to_string());
        kv("k_conv", ex.k_conv.to_string());
        kv("state_dim", ex.state_dim.to_string());
        kv("conv_width", ex.conv_width.to_string());
        kv("expand", ex.expand.to_string());
        kv("hidden", self.network.hidden.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = TrainConfig::parse(
            "# toy\nepochs = 3\nshapes = cube, cone  # two\napply_shift = off\n\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.shapes, vec![Shape::Cube, Shape::Cone]);
        assert!(!cfg.refine.apply_shift);
    }

    #[test]
    fn unknown_key_names_its_line() {
        match TrainConfig::parse("epochs = 2\nwarmup = 5\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("warmup"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "epochs = -1",
            "rate = 1",
            "shapes = blob",
            "alpha = -0.1",
            "points",
            "hidden = 0",
        ] {
            assert!(
                matches!(TrainConfig::parse(text), Err(Error::Config { .. })),
                "{text}"
            );
        }
    }
}
