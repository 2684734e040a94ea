//! Experiment configuration as a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not present in
//! a file keep their defaults; unknown keys are an error. Lists are
//! comma-separated, booleans are `true`/`false`, and any float may be written
//! as a fraction such as `8/255`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Perturbation budget for the optimization-based baselines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackBudget {
    /// Maximum L∞ distance from the clean image, in pixel units.
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
}

impl AttackBudget {
    pub fn new(epsilon: f64, step_size: f64, iterations: usize) -> Self {
        AttackBudget {
            epsilon,
            step_size,
            iterations,
        }
    }

    /// `ε = 0` is the empty budget and accepts any positive step; otherwise
    /// `0 < step ≤ ε`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(invalid("epsilon", "must be finite and non-negative"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("step_size", "must be finite and positive"));
        }
        if self.epsilon > 0.0 && self.step_size > self.epsilon {
            return Err(invalid("step_size", "must not exceed epsilon"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,

    // synthetic data
    pub classes: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    pub train_size: usize,
    pub query_size: usize,
    pub database_size: usize,
    pub template_contrast: f64,
    pub noise_sigma: f64,
    pub multi_label_prob: f64,

    // target hashing model
    pub code_length: usize,
    pub hash_hidden: Vec<usize>,
    pub hash_epochs: usize,
    pub hash_batch: usize,
    pub hash_lr: f64,
    pub hash_quantization: f64,

    // attack networks
    pub prototype_hidden: Vec<usize>,
    pub semantic_dim: usize,
    pub decoder_hidden: usize,
    pub bottleneck: usize,
    pub discriminator_hidden: usize,
    pub gan_epochs: usize,
    pub gan_batch: usize,
    pub gan_lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub disable_hamming_loss: bool,
    pub disable_discriminator_classes: bool,

    // baselines
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,

    // evaluation
    pub topn: Vec<usize>,
    pub run_baselines: bool,
    pub run_transfer: bool,
    pub transfer_code_length: usize,
    pub transfer_hidden: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            classes: 4,
            image_height: 16,
            image_width: 16,
            image_channels: 1,
            train_size: 500,
            query_size: 100,
            database_size: 1000,
            template_contrast: 0.006,
            noise_sigma: 0.01,
            multi_label_prob: 0.2,
            code_length: 12,
            hash_hidden: vec![128, 64],
            hash_epochs: 30,
            hash_batch: 32,
            hash_lr: 1e-3,
            hash_quantization: 0.1,
            prototype_hidden: vec![64, 32],
            semantic_dim: 32,
            decoder_hidden: 64,
            bottleneck: 64,
            discriminator_hidden: 64,
            gan_epochs: 80,
            gan_batch: 16,
            gan_lr: 1e-4,
            alpha1: 1.0,
            alpha2: 1e-4,
            alpha3: 1.0,
            alpha: 50.0,
            beta: 1.0,
            disable_hamming_loss: false,
            disable_discriminator_classes: false,
            epsilon: 8.0 / 255.0,
            step_size: 1.0 / 255.0,
            iterations: 200,
            topn: vec![1, 5, 10, 50, 100, 200, 500, 1000],
            run_baselines: true,
            run_transfer: true,
            transfer_code_length: 16,
            transfer_hidden: vec![96, 48],
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let parsed = match v.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| invalid(key, format!("not a number: {v}")))?;
            let den: f64 = den.trim().parse().map_err(|_| invalid(key, format!("not a number: {v}")))?;
            num / den
        }
        None => v.parse().map_err(|_| invalid(key, format!("not a number: {v}")))?,
    };
    if parsed.is_finite() {
        Ok(parsed)
    } else {
        Err(invalid(key, "must be finite"))
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| invalid(key, format!("not a non-negative integer: {v}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got {v}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Reads `path`, starting from the defaults.
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = v.parse().map_err(|_| invalid(key, format!("not a u64: {v}")))?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "classes" => self.classes = parse_usize(key, v)?,
            "image_height" => self.image_height = parse_usize(key, v)?,
            "image_width" => self.image_width = parse_usize(key, v)?,
            "image_channels" => self.image_channels = parse_usize(key, v)?,
            "train_size" => self.train_size = parse_usize(key, v)?,
            "query_size" => self.query_size = parse_usize(key, v)?,
            "database_size" => self.database_size = parse_usize(key, v)?,
            "template_contrast" => self.template_contrast = parse_f64(key, v)?,
            "noise_sigma" => self.noise_sigma = parse_f64(key, v)?,
            "multi_label_prob" => self.multi_label_prob = parse_f64(key, v)?,
            "code_length" => self.code_length = parse_usize(key, v)?,
            "hash_hidden" => self.hash_hidden = parse_list(key, v)?,
            "hash_epochs" => self.hash_epochs = parse_usize(key, v)?,
            "hash_batch" => self.hash_batch = parse_usize(key, v)?,
            "hash_lr" => self.hash_lr = parse_f64(key, v)?,
            "hash_quantization" => self.hash_quantization = parse_f64(key, v)?,
            "prototype_hidden" => self.prototype_hidden = parse_list(key, v)?,
            "semantic_dim" => self.semantic_dim = parse_usize(key, v)?,
            "decoder_hidden" => self.decoder_hidden = parse_usize(key, v)?,
            "bottleneck" => self.bottleneck = parse_usize(key, v)?,
            "discriminator_hidden" => self.discriminator_hidden = parse_usize(key, v)?,
            "gan_epochs" => self.gan_epochs = parse_usize(key, v)?,
            "gan_batch" => self.gan_batch = parse_usize(key, v)?,
            "gan_lr" => self.gan_lr = parse_f64(key, v)?,
            "alpha1" => self.alpha1 = parse_f64(key, v)?,
            "alpha2" => self.alpha2 = parse_f64(key, v)?,
            "alpha3" => self.alpha3 = parse_f64(key, v)?,
            "alpha" => self.alpha = parse_f64(key, v)?,
            "beta" => self.beta = parse_f64(key, v)?,
            "disable_hamming_loss" => self.disable_hamming_loss = parse_bool(key, v)?,
            "disable_discriminator_classes" => self.disable_discriminator_classes = parse_bool(key, v)?,
            "epsilon" => self.epsilon = parse_f64(key, v)?,
            "step_size" => self.step_size = parse_f64(key, v)?,
            "iterations" => self.iterations = parse_usize(key, v)?,
            "topn" => self.topn = parse_list(key, v)?,
            "run_baselines" => self.run_baselines = parse_bool(key, v)?,
            "run_transfer" => self.run_transfer = parse_bool(key, v)?,
            "transfer_code_length" => self.transfer_code_length = parse_usize(key, v)?,
            "transfer_hidden" => self.transfer_hidden = parse_list(key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Renders every key. Floats use shortest round-trip formatting, so
    /// `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("classes", self.classes.to_string());
        kv("image_height", self.image_height.to_string());
        kv("image_width", self.image_width.to_string());
        kv("image_channels", self.image_channels.to_string());
        kv("train_size", self.train_size.to_string());
        kv("query_size", self.query_size.to_string());
        kv("database_size", self.database_size.to_string());
        kv("template_contrast", self.template_contrast.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("multi_label_prob", self.multi_label_prob.to_string());
        kv("code_length", self.code_length.to_string());
        kv("hash_hidden", join(&self.hash_hidden));
        kv("hash_epochs", self.hash_epochs.to_string());
        kv("hash_batch", self.hash_batch.to_string());
        kv("hash_lr", self.hash_lr.to_string());
        kv("hash_quantization", self.hash_quantization.to_string());
        kv("prototype_hidden", join(&self.prototype_hidden));
        kv("semantic_dim", self.semantic_dim.to_string());
        kv("decoder_hidden", self.decoder_hidden.to_string());
        kv("bottleneck", self.bottleneck.to_string());
        kv("discriminator_hidden", self.discriminator_hidden.to_string());
        kv("gan_epochs", self.gan_epochs.to_string());
        kv("gan_batch", self.gan_batch.to_string());
        kv("gan_lr", self.gan_lr.to_string());
        kv("alpha1", self.alpha1.to_string());
        kv("alpha2", self.alpha2.to_string());
        kv("alpha3", self.alpha3.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("disable_hamming_loss", self.disable_hamming_loss.to_string());
        kv("disable_discriminator_classes", self.disable_discriminator_classes.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("step_size", self.step_size.to_string());
        kv("iterations", self.iterations.to_string());
        kv("topn", join(&self.topn));
        kv("run_baselines", self.run_baselines.to_string());
        kv("run_transfer", self.run_transfer.to_string());
        kv("transfer_code_length", self.transfer_code_length.to_string());
        kv("transfer_hidden", join(&self.transfer_hidden));
        s
    }

    /// SHA-256 of [`serialize`](Self::serialize), hex encoded. The output
    /// directory does not take part, so moving a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut located = self.clone();
        located.output_dir = PathBuf::new();
        hex_digest(located.serialize().as_bytes())
    }

    pub fn budget(&self) -> AttackBudget {
        AttackBudget::new(self.epsilon, self.step_size, self.iterations)
    }

    /// Pixels per image.
    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width * self.image_channels
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("image_channels", self.image_channels),
            ("train_size", self.train_size),
            ("query_size", self.query_size),
            ("database_size", self.database_size),
            ("code_length", self.code_length),
            ("hash_epochs", self.hash_epochs),
            ("hash_batch", self.hash_batch),
            ("semantic_dim", self.semantic_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("bottleneck", self.bottleneck),
            ("discriminator_hidden", self.discriminator_hidden),
            ("gan_epochs", self.gan_epochs),
            ("gan_batch", self.gan_batch),
            ("transfer_code_length", self.transfer_code_length),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.classes < 2 {
            return Err(invalid("classes", "at least 2 classes are required"));
        }
        for (key, list) in [
            ("hash_hidden", &self.hash_hidden),
            ("prototype_hidden", &self.prototype_hidden),
            ("transfer_hidden", &self.transfer_hidden),
        ] {
            if list.contains(&0) {
                return Err(invalid(key, "layer widths must be positive"));
            }
        }
        if self.topn.contains(&0) {
            return Err(invalid("topn", "cutoffs must be positive"));
        }
        for (key, v) in [
            ("hash_lr", self.hash_lr),
            ("gan_lr", self.gan_lr),
        ] {
            if v <= 0.0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        for (key, v) in [
            ("template_contrast", self.template_contrast),
            ("noise_sigma", self.noise_sigma),
            ("hash_quantization", self.hash_quantization),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if v < 0.0 {
                return Err(invalid(key, "must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(invalid("multi_label_prob", "must lie in [0, 1]"));
        }
        self.budget().validate()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn fractions_and_comments() {
        let c = ExperimentConfig::parse("# toy\nepsilon = 8/255\n\nstep_size=1/255\n").unwrap();
        assert_eq!(c.epsilon, 8.0 / 255.0);
        assert_eq!(c.step_size, 1.0 / 255.0);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "bogus".into()
            }
        );
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::parse("classes = 1").is_err());
        assert!(ExperimentConfig::parse("code_length = 0").is_err());
        assert!(ExperimentConfig::parse("alpha = -1").is_err());
        assert!(ExperimentConfig::parse("step_size = 0.5").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("disable_hamming_loss = yes").is_err());
    }

    #[test]
    fn hash_follows_settings_not_location() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn budget_rules() {
        assert!(AttackBudget::new(0.0, 1.0 / 255.0, 5).validate().is_ok());
        assert!(AttackBudget::new(8.0 / 255.0, 8.0 / 255.0, 1).validate().is_ok());
        assert!(AttackBudget::new(1.0 / 255.0, 8.0 / 255.0, 1).validate().is_err());
        assert!(AttackBudget::new(0.1, 0.01, 0).validate().is_err());
        assert!(AttackBudget::new(0.1, 0.0, 3).validate().is_err());
    }

    prop_compose! {
        fn arb_config()(
            seed in any::<u64>(),
            k in 1usize..64,
            classes in 2usize..20,
            hidden in proptest::collection::vec(1usize..300, 0..4),
            lr in 1e-6f64..1.0,
            alpha in 0.0f64..1e4,
            contrast in 0.0f64..0.5,
            prob in 0.0f64..=1.0,
            eps in 1e-4f64..0.5,
            frac in 0.01f64..=1.0,
            flags in any::<(bool, bool, bool)>(),
        ) -> ExperimentConfig {
            ExperimentConfig {
                seed,
                code_length: k,
                classes,
                hash_hidden: hidden,
                gan_lr: lr,
                alpha,
                template_contrast: contrast,
                multi_label_prob: prob,
                epsilon: eps,
                step_size: eps * frac,
                disable_hamming_loss: flags.0,
                disable_discriminator_classes: flags.1,
                run_transfer: flags.2,
                ..ExperimentConfig::default()
            }
        }
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(c in arb_config()) {
            prop_assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
        }
    }
}
