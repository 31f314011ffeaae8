//! Run configuration: one JSON or TOML file drives every command, with CLI
//! flags overriding fields one-for-one.

use std::path::{Path, PathBuf};

use cbe_core::{Encoding, Faithfulness, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid json config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid toml config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown setting {0:?} (expected uuu_ff, uuu_f, uu_ff, uu_f, u_ff, u_f, or all)")]
    UnknownSetting(String),
    #[error("config has no [synth] section")]
    MissingSynth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepSection {
    /// Minimum image count for a concept to survive the rare filter.
    pub min_images: usize,
    /// Percentile of absolute off-diagonal correlations used as the pruning
    /// threshold.
    pub percentile: f64,
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
}

impl Default for PrepSection {
    fn default() -> Self {
        PrepSection {
            min_images: 20,
            percentile: 90.0,
            probe_epochs: 500,
            probe_learning_rate: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2_candidates: Vec<f64>,
    pub k: usize,
    pub reg_max_weight: f64,
    pub reg_ramp_start: f64,
    pub reg_ramp_end: f64,
    pub seed: u64,
    pub refit: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            lambda1: base.lambda1,
            lambda2_candidates: base.lambda2_candidates,
            k: base.k,
            reg_max_weight: base.reg_max_weight,
            reg_ramp_start: base.reg_ramp.0,
            reg_ramp_end: base.reg_ramp.1,
            seed: base.seed,
            refit: base.refit,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda1: self.lambda1,
            lambda2_candidates: self.lambda2_candidates.clone(),
            k: self.k,
            reg_max_weight: self.reg_max_weight,
            reg_ramp: (self.reg_ramp_start, self.reg_ramp_end),
            seed: self.seed,
            refit: self.refit,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetdissectSection {
    pub quantile: f64,
    pub top_k: usize,
}

impl Default for NetdissectSection {
    fn default() -> Self {
        NetdissectSection {
            quantile: 0.005,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EludeSection {
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EludeSection {
    fn default() -> Self {
        EludeSection {
            k: 8,
            epochs: 300,
            learning_rate: 5e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_concepts: usize,
    pub n_classes: usize,
    pub k_star: usize,
    pub base_rate: f64,
    pub feature_noise_sigma: f64,
    pub output_noise_sigma: f64,
    pub feature_linked_outputs: bool,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_samples: 1000,
            n_features: 16,
            n_concepts: 20,
            n_classes: 5,
            k_star: 4,
            base_rate: 0.3,
            feature_noise_sigma: 0.0,
            output_noise_sigma: 0.0,
            feature_linked_outputs: false,
            seed: 0,
        }
    }
}

impl SynthSection {
    pub fn to_params(&self) -> cbe_core::synth::SynthParams {
        cbe_core::synth::SynthParams {
            n_samples: self.n_samples,
            n_features: self.n_features,
            n_concepts: self.n_concepts,
            n_classes: self.n_classes,
            k_star: self.k_star,
            base_rates: vec![self.base_rate; self.n_concepts],
            feature_noise_sigma: self.feature_noise_sigma,
            output_noise_sigma: self.output_noise_sigma,
            feature_linked_outputs: self.feature_linked_outputs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// One of the six encoding/faithfulness pairs, or "all".
    pub setting: String,
    pub split: SplitSection,
    pub prep: PrepSection,
    pub train: TrainSection,
    pub netdissect: NetdissectSection,
    pub elude: EludeSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.json"),
            out_dir: PathBuf::from("out"),
            setting: "all".into(),
            split: SplitSection::default(),
            prep: PrepSection::default(),
            train: TrainSection::default(),
            netdissect: NetdissectSection::default(),
            elude: EludeSection::default(),
            synth: None,
        }
    }
}

/// Flag values that override config fields one-for-one.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub setting: Option<String>,
    pub k: Option<usize>,
    pub lambda2: Option<f64>,
    pub quantile: Option<f64>,
    pub percentile: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let is_toml = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("toml"))
            .unwrap_or(false);
        if is_toml {
            Ok(toml::from_str(&text)?)
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            self.train.seed = seed;
            self.split.seed = seed;
            if let Some(synth) = &mut self.synth {
                synth.seed = seed;
            }
        }
        if let Some(setting) = &overrides.setting {
            self.setting = setting.clone();
        }
        if let Some(k) = overrides.k {
            self.train.k = k;
        }
        if let Some(lambda2) = overrides.lambda2 {
            self.train.lambda2_candidates = vec![lambda2];
        }
        if let Some(quantile) = overrides.quantile {
            self.netdissect.quantile = quantile;
        }
        if let Some(percentile) = overrides.percentile {
            self.prep.percentile = percentile;
        }
    }

    pub fn split_spec(&self) -> Result<cbe_core::SplitSpec, cbe_core::DatasetError> {
        cbe_core::SplitSpec::new(self.split.train, self.split.val, self.split.test, self.split.seed)
    }

    /// The encoding/faithfulness pairs this run covers, in fixed order.
    pub fn settings(&self) -> Result<Vec<(Encoding, Faithfulness)>, ConfigError> {
        if self.setting == "all" {
            return Ok(all_settings());
        }
        parse_setting(&self.setting).map(|pair| vec![pair])
    }
}

pub fn all_settings() -> Vec<(Encoding, Faithfulness)> {
    vec![
        (Encoding::GroundTruthBinary, Faithfulness::FullOutputs),
        (Encoding::GroundTruthBinary, Faithfulness::PredictionOnly),
        (Encoding::Probability, Faithfulness::FullOutputs),
        (Encoding::Probability, Faithfulness::PredictionOnly),
        (Encoding::Continuous, Faithfulness::FullOutputs),
        (Encoding::Continuous, Faithfulness::PredictionOnly),
    ]
}

pub fn parse_setting(name: &str) -> Result<(Encoding, Faithfulness), ConfigError> {
    let (enc, faith) = name
        .rsplit_once('_')
        .ok_or_else(|| ConfigError::UnknownSetting(name.to_string()))?;
    let encoding = match enc {
        "uuu" => Encoding::GroundTruthBinary,
        "uu" => Encoding::Probability,
        "u" => Encoding::Continuous,
        _ => return Err(ConfigError::UnknownSetting(name.to_string())),
    };
    let faithfulness = match faith {
        "ff" => Faithfulness::FullOutputs,
        "f" => Faithfulness::PredictionOnly,
        _ => return Err(ConfigError::UnknownSetting(name.to_string())),
    };
    Ok((encoding, faithfulness))
}

pub fn setting_name(encoding: Encoding, faithfulness: Faithfulness) -> &'static str {
    match (encoding, faithfulness) {
        (Encoding::GroundTruthBinary, Faithfulness::FullOutputs) => "uuu_ff",
        (Encoding::GroundTruthBinary, Faithfulness::PredictionOnly) => "uuu_f",
        (Encoding::Probability, Faithfulness::FullOutputs) => "uu_ff",
        (Encoding::Probability, Faithfulness::PredictionOnly) => "uu_f",
        (Encoding::Continuous, Faithfulness::FullOutputs) => "u_ff",
        (Encoding::Continuous, Faithfulness::PredictionOnly) => "u_f",
    }
}

/// Short name of an understandability level, used for per-level artifacts.
pub fn encoding_name(encoding: Encoding) -> &'static str {
    match encoding {
        Encoding::GroundTruthBinary => "uuu",
        Encoding::Probability => "uu",
        Encoding::Continuous => "u",
    }
}
