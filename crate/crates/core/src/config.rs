//! Run configuration as `key = value` text.

use std::fmt::Write as _;
use std::path::Path;

use crate::attention::ScaleMode;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Interp, ThresholdRule};
use crate::formats::parse_key_values;
use crate::model::Variant;
use crate::synth::DatasetConfig;
use crate::trainer::{SplitMode, TrainConfig};

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Train on the first recording and validate on the rest.
    pub split_by_session: bool,
    pub train_frac: f64,
    pub eval: EvalConfig,
    pub synth: DatasetConfig,
}

impl Default for RunConfig {
    /// Full-size model and schedule.
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split_by_session: false,
            train_frac: 0.8,
            eval: EvalConfig::default(),
            synth: DatasetConfig::default(),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "epochs",
    "batch",
    "lr",
    "tau",
    "alpha",
    "beta",
    "lambda_a",
    "lambda_s",
    "seed",
    "align.detach_negatives",
    "aug.ppg.scale",
    "aug.ppg.jitter",
    "aug.ppg.stretch",
    "aug.fp.flip",
    "aug.fp.rotate",
    "aug.fp.crop",
    "aug.fp.noise",
    "model.d",
    "model.d_h",
    "model.blocks",
    "model.heads",
    "model.ppg_token",
    "model.fp_token",
    "model.scale",
    "model.variant",
    "pairs.factor",
    "pairs.ratio",
    "pairs.mixed",
    "split.mode",
    "split.train_frac",
    "eval.threshold",
    "eval.interp",
    "synth.subjects",
    "synth.recordings",
    "synth.separability",
    "synth.seed",
    "synth.duration",
    "synth.fps",
    "synth.size",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Small model, 40 epochs of 64-pair batches, learning rate 3e-3.
    pub fn desk() -> Self {
        Self {
            train: TrainConfig::desk(),
            ..Self::default()
        }
    }

    /// Parses config text; a `preset = desk|paper` line picks the base.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kvs = parse_key_values(text, path)?;
        let mut cfg = match kvs.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str()) {
            None | Some("paper") => Self::default(),
            Some("desk") => Self::desk(),
            Some(other) => return Err(Error::Config(format!("preset: expected desk or paper, got {other:?}"))),
        };
        for (k, v) in kvs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "tau" => t.weights.tau = parse(key, value)?,
            "alpha" => t.weights.alpha = parse(key, value)?,
            "beta" => t.weights.beta = parse(key, value)?,
            "lambda_a" => t.weights.lambda_a = parse(key, value)?,
            "lambda_s" => t.weights.lambda_s = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "align.detach_negatives" => t.detach_negatives = parse_bool(key, value)?,
            "aug.ppg.scale" => t.ppg_aug.scale = parse_bool(key, value)?,
            "aug.ppg.jitter" => t.ppg_aug.jitter = parse_bool(key, value)?,
            "aug.ppg.stretch" => t.ppg_aug.stretch = parse_bool(key, value)?,
            "aug.fp.flip" => t.fp_aug.flip = parse_bool(key, value)?,
            "aug.fp.rotate" => t.fp_aug.rotate = parse_bool(key, value)?,
            "aug.fp.crop" => t.fp_aug.crop = parse_bool(key, value)?,
            "aug.fp.noise" => t.fp_aug.noise = parse_bool(key, value)?,
            "model.d" => t.model.d = parse(key, value)?,
            "model.d_h" => t.model.d_h = parse(key, value)?,
            "model.blocks" => t.model.blocks = parse(key, value)?,
            "model.heads" => t.model.heads = parse(key, value)?,
            "model.ppg_token" => t.model.ppg_token = parse(key, value)?,
            "model.fp_token" => t.model.fp_token = parse(key, value)?,
            "model.scale" => {
                t.model.scale = match value {
                    "model" => ScaleMode::Model,
                    "head" => ScaleMode::PerHead,
                    _ => return Err(Error::Config(format!("{key}: expected model or head, got {value:?}"))),
                }
            }
            "model.variant" => t.model.variant = Variant::parse(value)?,
            "pairs.factor" => t.pairs.factor = parse(key, value)?,
            "pairs.ratio" => t.pairs.ratio = parse(key, value)?,
            "pairs.mixed" => t.pairs.mixed = parse(key, value)?,
            "split.mode" => {
                self.split_by_session = match value {
                    "random" => false,
                    "session" => true,
                    _ => return Err(Error::Config(format!("{key}: expected random or session, got {value:?}"))),
                }
            }
            "split.train_frac" => self.train_frac = parse(key, value)?,
            "eval.threshold" => {
                self.eval.threshold = match value {
                    "eer" => ThresholdRule::Eer,
                    _ => ThresholdRule::Fixed(parse(key, value)?),
                }
            }
            "eval.interp" => self.eval.interp = Interp::parse(value)?,
            "synth.subjects" => self.synth.subjects = parse(key, value)?,
            "synth.recordings" => self.synth.recordings = parse(key, value)?,
            "synth.separability" => self.synth.separability = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            "synth.duration" => self.synth.video.duration_s = parse(key, value)?,
            "synth.fps" => self.synth.video.fps = parse(key, value)?,
            "synth.size" => self.synth.video.size = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0 < self.train_frac && self.train_frac < 1.0) {
            return Err(Error::Config(format!("split.train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.synth.subjects == 0 || self.synth.recordings == 0 {
            return Err(Error::Config("synth.subjects and synth.recordings must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn split_mode(&self) -> SplitMode {
        if self.split_by_session {
            SplitMode::BySession
        } else {
            SplitMode::Random {
                train_frac: self.train_frac,
            }
        }
    }

    /// Every key with its value; [`RunConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("epochs", t.epochs.to_string());
        put("batch", t.batch.to_string());
        put("lr", t.adam.lr.to_string());
        put("tau", t.weights.tau.to_string());
        put("alpha", t.weights.alpha.to_string());
        put("beta", t.weights.beta.to_string());
        put("lambda_a", t.weights.lambda_a.to_string());
        put("lambda_s", t.weights.lambda_s.to_string());
        put("seed", t.seed.to_string());
        put("align.detach_negatives", t.detach_negatives.to_string());
        put("aug.ppg.scale", t.ppg_aug.scale.to_string());
        put("aug.ppg.jitter", t.ppg_aug.jitter.to_string());
        put("aug.ppg.stretch", t.ppg_aug.stretch.to_string());
        put("aug.fp.flip", t.fp_aug.flip.to_string());
        put("aug.fp.rotate", t.fp_aug.rotate.to_string());
        put("aug.fp.crop", t.fp_aug.crop.to_string());
        put("aug.fp.noise", t.fp_aug.noise.to_string());
        put("model.d", t.model.d.to_string());
        put("model.d_h", t.model.d_h.to_string());
        put("model.blocks", t.model.blocks.to_string());
        put("model.heads", t.model.heads.to_string());
        put("model.ppg_token", t.model.ppg_token.to_string());
        put("model.fp_token", t.model.fp_token.to_string());
        put(
            "model.scale",
            match t.model.scale {
                ScaleMode::Model => "model",
                ScaleMode::PerHead => "head",
            }
            .into(),
        );
        put("model.variant", t.model.variant.name().into());
        put("pairs.factor", t.pairs.factor.to_string());
        put("pairs.ratio", t.pairs.ratio.to_string());
        put("pairs.mixed", t.pairs.mixed.to_string());
        put("split.mode", if self.split_by_session { "session" } else { "random" }.into());
        put("split.train_frac", self.train_frac.to_string());
        put(
            "eval.threshold",
            match self.eval.threshold {
                ThresholdRule::Eer => "eer".into(),
                ThresholdRule::Fixed(x) => x.to_string(),
            },
        );
        put("eval.interp", self.eval.interp.name().into());
        put("synth.subjects", self.synth.subjects.to_string());
        put("synth.recordings", self.synth.recordings.to_string());
        put("synth.separability", self.synth.separability.to_string());
        put("synth.seed", self.synth.seed.to_string());
        put("synth.duration", self.synth.video.duration_s.to_string());
        put("synth.fps", self.synth.video.fps.to_string());
        put("synth.size", self.synth.video.size.to_string());
        s
    }
}
