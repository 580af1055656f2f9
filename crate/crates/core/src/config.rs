//! Experiment configuration: TOML text whose keys mirror the experiment
//! table's row names in kebab-case (`gradient-clipping-threshold`,
//! `l2-norm`, `units-per-layer`, ...). Unknown keys are rejected. Every
//! default matches the published setting where one exists.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SynthSpec;
use crate::decoder::LmTrainConfig;
use crate::optim::{AdamConfig, SgdConfig};
use crate::regressors::{Activation, InitScheme, TrainOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("config parse error in {0}: {1}")]
    Parse(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub synth: SynthSpec,
    pub vocabulary: VocabularyConfig,
    pub lm: LmConfig,
    pub ridge: RidgeConfig,
    pub mlp3: MlpConfig,
    pub dnn5: MlpConfig,
    pub ae: AeConfig,
    pub decode: DecodeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            synth: SynthSpec::default(),
            vocabulary: VocabularyConfig::default(),
            lm: LmConfig::default(),
            ridge: RidgeConfig::default(),
            mlp3: MlpConfig::mlp3_default(),
            dnn5: MlpConfig::dnn5_default(),
            ae: AeConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct VocabularyConfig {
    /// Tokens must appear strictly more than this many times.
    pub min_count: usize,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        VocabularyConfig { min_count: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct LmConfig {
    pub units_per_layer: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub gradient_clipping_threshold: f64,
    pub l2_norm: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            units_per_layer: 512,
            embed_dim: 512,
            epochs: 100,
            batch_size: 32,
            a: 0.001,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            gradient_clipping_threshold: 1.0,
            l2_norm: 0.005,
        }
    }
}

impl LmConfig {
    pub fn train_config(&self, seed: u64) -> LmTrainConfig {
        LmTrainConfig {
            adam: AdamConfig { alpha: self.a, beta1: self.b1, beta2: self.b2, eps: self.eps },
            clip_threshold: self.gradient_clipping_threshold,
            l2: self.l2_norm,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            embed_dim: self.embed_dim,
            hidden_dim: self.units_per_layer,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RidgeConfig {
    pub l2_norm: f64,
    pub fit_bias: bool,
    pub standardize: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { l2_norm: 0.5, fit_bias: true, standardize: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden_units: Vec<usize>,
    pub learning_rate: f64,
    pub gradient_clipping_threshold: f64,
    pub l2_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub activation: Activation,
    /// Restores literal standard-normal initialization instead of the
    /// fan-in-scaled default.
    pub paper_init: bool,
    pub standardize: bool,
}

impl MlpConfig {
    fn sgd_base() -> MlpConfig {
        MlpConfig {
            hidden_units: vec![],
            learning_rate: 0.01,
            gradient_clipping_threshold: 1.0,
            l2_norm: 0.005,
            epochs: 1000,
            batch_size: 32,
            activation: Activation::Relu,
            paper_init: false,
            standardize: true,
        }
    }

    pub fn mlp3_default() -> MlpConfig {
        MlpConfig { hidden_units: vec![8000], ..MlpConfig::sgd_base() }
    }

    pub fn dnn5_default() -> MlpConfig {
        MlpConfig { hidden_units: vec![7500, 6500, 5500], ..MlpConfig::sgd_base() }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            sgd: SgdConfig {
                learning_rate: self.learning_rate,
                clip_threshold: self.gradient_clipping_threshold,
                l2: self.l2_norm,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            init: if self.paper_init { InitScheme::StandardNormal } else { InitScheme::ScaledNormal },
            activation: self.activation,
        }
    }

    pub fn arch(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut a = vec![in_dim];
        a.extend_from_slice(&self.hidden_units);
        a.push(out_dim);
        a
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig::mlp3_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct AeConfig {
    pub epochs_per_layer: usize,
    pub learning_rate: f64,
    pub gradient_clipping_threshold: f64,
    pub l2_norm: f64,
    pub batch_size: usize,
    pub activation: Activation,
    pub paper_init: bool,
    pub standardize: bool,
    /// Encoder dims; empty means "reuse the dnn5 hidden units".
    pub hidden_units: Vec<usize>,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            epochs_per_layer: 200,
            learning_rate: 0.01,
            gradient_clipping_threshold: 1.0,
            l2_norm: 0.005,
            batch_size: 32,
            activation: Activation::Relu,
            paper_init: false,
            standardize: true,
            hidden_units: vec![],
        }
    }
}

impl AeConfig {
    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            sgd: SgdConfig {
                learning_rate: self.learning_rate,
                clip_threshold: self.gradient_clipping_threshold,
                l2: self.l2_norm,
            },
            epochs: self.epochs_per_layer,
            batch_size: self.batch_size,
            seed,
            init: if self.paper_init { InitScheme::StandardNormal } else { InitScheme::ScaledNormal },
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub beam: usize,
    pub allow_unk: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_len: 20, beam: 1, allow_unk: false }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse(origin.to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.vocabulary.min_count < 1 {
            return Err(ConfigError::Invalid("vocabulary min-count must be >= 1".into()));
        }
        if self.decode.max_len < 1 {
            return Err(ConfigError::Invalid("decode max-len must be >= 1".into()));
        }
        if self.decode.beam < 1 {
            return Err(ConfigError::Invalid("decode beam must be >= 1".into()));
        }
        for (name, lr, clip) in [
            ("mlp3", self.mlp3.learning_rate, self.mlp3.gradient_clipping_threshold),
            ("dnn5", self.dnn5.learning_rate, self.dnn5.gradient_clipping_threshold),
            ("ae", self.ae.learning_rate, self.ae.gradient_clipping_threshold),
        ] {
            if lr <= 0.0 || clip <= 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{name}: learning-rate and gradient-clipping-threshold must be > 0"
                )));
            }
        }
        if self.lm.a <= 0.0 || self.lm.eps <= 0.0 {
            return Err(ConfigError::Invalid("lm: a and eps must be > 0".into()));
        }
        Ok(())
    }

    /// Scales the sample counts to the published regime (4,500 train /
    /// 7,540 unlabeled / 300 test) while keeping desk-scale dims.
    pub fn apply_paper_scale_ratio(&mut self) {
        self.synth.n_train = 4500;
        self.synth.n_unlabeled = 7540;
        self.synth.n_test = 300;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lm.a, 0.001);
        assert_eq!(cfg.lm.b1, 0.9);
        assert_eq!(cfg.lm.b2, 0.999);
        assert_eq!(cfg.lm.eps, 1e-8);
        assert_eq!(cfg.lm.gradient_clipping_threshold, 1.0);
        assert_eq!(cfg.lm.l2_norm, 0.005);
        assert_eq!(cfg.lm.units_per_layer, 512);
        assert_eq!(cfg.lm.epochs, 100);
        assert_eq!(cfg.ridge.l2_norm, 0.5);
        assert_eq!(cfg.mlp3.learning_rate, 0.01);
        assert_eq!(cfg.mlp3.gradient_clipping_threshold, 1.0);
        assert_eq!(cfg.mlp3.l2_norm, 0.005);
        assert_eq!(cfg.mlp3.epochs, 1000);
        assert_eq!(cfg.mlp3.hidden_units, vec![8000]);
        assert_eq!(cfg.dnn5.hidden_units, vec![7500, 6500, 5500]);
        assert_eq!(cfg.ae.epochs_per_layer, 200);
        assert_eq!(cfg.vocabulary.min_count, 50);
    }

    #[test]
    fn kebab_case_keys_parse() {
        let cfg = ExperimentConfig::parse(
            r#"
seed = 7

[lm]
gradient-clipping-threshold = 2.5
units-per-layer = 64

[ridge]
l2-norm = 0.25

[synth]
n-train = 50
"#,
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lm.gradient_clipping_threshold, 2.5);
        assert_eq!(cfg.lm.units_per_layer, 64);
        assert_eq!(cfg.ridge.l2_norm, 0.25);
        assert_eq!(cfg.synth.n_train, 50);
        // Untouched keys keep defaults.
        assert_eq!(cfg.lm.a, 0.001);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::parse("[lm]\nlearning-rate = 0.5\n", "inline").unwrap_err();
        match err {
            ConfigError::Parse(_, msg) => assert!(msg.contains("learning-rate"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(ExperimentConfig::parse("nonsense-key = 1\n", "inline").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::parse("[decode]\nbeam = 0\n", "inline").is_err());
        assert!(ExperimentConfig::parse("[mlp3]\nlearning-rate = -1.0\n", "inline").is_err());
    }

    #[test]
    fn paper_scale_ratio_preset() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_paper_scale_ratio();
        assert_eq!(cfg.synth.n_train, 4500);
        assert_eq!(cfg.synth.n_unlabeled, 7540);
        assert_eq!(cfg.synth.n_test, 300);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::parse(&text, "inline").unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }
}
