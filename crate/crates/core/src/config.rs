//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.
//! `model.profile` is applied before any `model.*` override regardless of
//! line order. Defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `model.profile` | `tiny-32` (also `small-224`) |
//! | `model.image_size`, `model.patch_size`, `model.channels`, `model.depth`, `model.dim`, `model.heads`, `model.mlp_ratio`, `model.num_classes`, `model.hash_bits` | from the profile |
//! | `prune.stages` | `4:0.5,8:0.5,10:0.25` (`none` disables) |
//! | `hash.alpha` | 1.0 |
//! | `hash.max_iters` | 50 |
//! | `hash.tol` | 1e-7 |
//! | `loss.beta` | 0.1 |
//! | `loss.sigma` | 1.0 |
//! | `drg.k_masked` | 4 |
//! | `fit.lr` | 0.01 |
//! | `fit.steps` | 500 |
//! | `seed` | 0 |
//! | `eval.q_cutoff` | database size (`all`) |
//! | `eval.exclude_self` | false |
//! | `eval.normalizer` | `within_cutoff` (or `all_relevant`) |
//! | `synth.classes` | 10 |
//! | `synth.train_per_class` | 20 |
//! | `synth.query_per_class` | 5 |
//! | `synth.pixel_noise` | 0.05 |
//! | `synth.flip_prob` | 0.05 |
//! | `profile.runs` | 100 |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::ctp::PruneSchedule;
use crate::error::{EetError, Result};
use crate::losses::{FitOptions, LossWeights};
use crate::retrieval::EvalOptions;
use crate::vit::ViTConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub query_per_class: usize,
    /// Standard deviation of the additive pixel noise, in [0, 1] intensity units.
    pub pixel_noise: f64,
    /// Probability of flipping each teacher-code bit away from its class centroid.
    pub flip_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            train_per_class: 20,
            query_per_class: 5,
            pixel_noise: 0.05,
            flip_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub profile_name: String,
    pub model: ViTConfig,
    pub schedule: PruneSchedule,
    pub hash_alpha: f64,
    pub hash_max_iters: usize,
    pub hash_tol: f64,
    pub loss: LossWeights,
    pub k_masked: usize,
    pub fit: FitOptions,
    pub seed: u64,
    pub eval: EvalOptions,
    pub synth: SynthConfig,
    pub profile_runs: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            profile_name: "tiny-32".into(),
            model: ViTConfig::tiny_32(),
            schedule: PruneSchedule::default_hierarchical(),
            hash_alpha: 1.0,
            hash_max_iters: 50,
            hash_tol: 1e-7,
            loss: LossWeights::default(),
            k_masked: 4,
            fit: FitOptions::default(),
            seed: 0,
            eval: EvalOptions::default(),
            synth: SynthConfig::default(),
            profile_runs: 100,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| EetError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(EetError::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Applies `key = value` pairs on top of the defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(EetError::Config(format!("duplicate key {k}")));
            }
        }
        let mut cfg = Config::default();
        if let Some(p) = map.remove("model.profile") {
            cfg.profile_name = p.clone();
            cfg.model = ViTConfig::profile(&p)?;
        }
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Setting `model.profile` resets all model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        match key {
            "model.profile" => {
                self.model = ViTConfig::profile(value)?;
                self.profile_name = value.to_string();
            }
            "model.image_size" => m.image_size = parse(key, value)?,
            "model.patch_size" => m.patch_size = parse(key, value)?,
            "model.channels" => m.channels = parse(key, value)?,
            "model.depth" => m.depth = parse(key, value)?,
            "model.dim" => m.dim = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "model.num_classes" => m.num_classes = parse(key, value)?,
            "model.hash_bits" => m.hash_bits = parse(key, value)?,
            "prune.stages" => self.schedule = value.parse()?,
            "hash.alpha" => self.hash_alpha = parse(key, value)?,
            "hash.max_iters" => self.hash_max_iters = parse(key, value)?,
            "hash.tol" => self.hash_tol = parse(key, value)?,
            "loss.beta" => self.loss = LossWeights::new(parse(key, value)?, self.loss.sigma)?,
            "loss.sigma" => self.loss = LossWeights::new(self.loss.beta, parse(key, value)?)?,
            "drg.k_masked" => self.k_masked = parse(key, value)?,
            "fit.lr" => self.fit.learning_rate = parse(key, value)?,
            "fit.steps" => self.fit.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval.q_cutoff" => {
                self.eval.q_cutoff = match value {
                    "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval.exclude_self" => self.eval.exclude_self = parse_bool(key, value)?,
            "eval.normalizer" => self.eval.normalizer = value.parse()?,
            "synth.classes" => self.synth.classes = parse(key, value)?,
            "synth.train_per_class" => self.synth.train_per_class = parse(key, value)?,
            "synth.query_per_class" => self.synth.query_per_class = parse(key, value)?,
            "synth.pixel_noise" => self.synth.pixel_noise = parse(key, value)?,
            "synth.flip_prob" => self.synth.flip_prob = parse(key, value)?,
            "profile.runs" => self.profile_runs = parse(key, value)?,
            _ => return Err(EetError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate_depth(self.model.depth)?;
        let bad = |m: &str| Err(EetError::Config(m.into()));
        if !(self.hash_alpha > 0.0) {
            return bad("hash.alpha must be positive");
        }
        if !(self.hash_tol >= 0.0) {
            return bad("hash.tol must be non-negative");
        }
        if !(self.fit.learning_rate > 0.0) {
            return bad("fit.lr must be positive");
        }
        if self.k_masked > self.model.num_patches() {
            return bad("drg.k_masked exceeds the patch count");
        }
        if self.synth.classes == 0 || self.synth.train_per_class == 0 {
            return bad("synth.classes and synth.train_per_class must be positive");
        }
        if !(0.0..=1.0).contains(&self.synth.flip_prob) || !(self.synth.pixel_noise >= 0.0) {
            return bad("synth.flip_prob must be in [0, 1] and synth.pixel_noise non-negative");
        }
        if self.profile_runs == 0 {
            return bad("profile.runs must be positive");
        }
        Ok(())
    }
}

impl FromStr for Config {
    type Err = EetError;

    fn from_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EetError::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        Config::from_pairs(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_applies_before_overrides() {
        let cfg: Config = "model.hash_bits = 32\nmodel.profile = small-224 # comment\n".parse().unwrap();
        assert_eq!(cfg.model.hash_bits, 32);
        assert_eq!(cfg.model.dim, 384);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!("nope = 1".parse::<Config>().is_err());
        assert!("seed".parse::<Config>().is_err());
        assert!("seed = x".parse::<Config>().is_err());
        assert!("seed = 1\nseed = 2".parse::<Config>().is_err());
        assert!("hash.alpha = 0".parse::<Config>().is_err());
        assert!("prune.stages = 13:0.5".parse::<Config>().is_err());
    }

    #[test]
    fn empty_text_gives_defaults() {
        let cfg: Config = "\n# nothing\n".parse().unwrap();
        assert_eq!(cfg.schedule, PruneSchedule::default_hierarchical());
        assert_eq!(cfg.k_masked, 4);
        assert_eq!(cfg.eval.q_cutoff, None);
    }
}
