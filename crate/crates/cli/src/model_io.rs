//! Serialized explanation models and training reports: self-describing JSON
//! carrying the weights, the concept vocabulary in play, a config echo, and
//! a content hash of the inputs.

use std::path::Path;

use cbe_core::{ExplanationModel, LinearMap, Mat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_setting, setting_name, ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Setting(#[from] ConfigError),
    #[error("inconsistent model file: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearMapFile {
    /// Row-major `out x in` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearMapFile {
    fn from_map(map: &LinearMap) -> Self {
        LinearMapFile {
            weights: (0..map.out_dim()).map(|r| map.weights.row(r).to_vec()).collect(),
            bias: map.bias.clone(),
        }
    }

    fn to_map(&self) -> Result<LinearMap, ModelIoError> {
        let rows = self.weights.len();
        let cols = self.weights.first().map(|r| r.len()).unwrap_or(0);
        if self.weights.iter().any(|r| r.len() != cols) {
            return Err(ModelIoError::Inconsistent("ragged weight rows".into()));
        }
        if self.bias.len() != rows {
            return Err(ModelIoError::Inconsistent("bias length != row count".into()));
        }
        let data: Vec<f64> = self.weights.iter().flatten().copied().collect();
        Ok(LinearMap {
            weights: Mat::from_vec(rows, cols, data),
            bias: self.bias.clone(),
        })
    }
}

/// One fitted explanation on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub setting: String,
    /// Original dataset concept indices the model was trained over, in the
    /// column order of `h_conc`/`h_pred`.
    pub concept_indices: Vec<usize>,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Selected columns, as positions into `concept_indices`.
    pub selected: Vec<usize>,
    /// The same selection in original dataset indices.
    pub selected_original: Vec<usize>,
    pub h_conc: LinearMapFile,
    pub h_pred: LinearMapFile,
    pub lambda2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    pub config_echo: RunConfig,
    pub inputs_sha256: String,
}

impl ModelFile {
    pub fn from_model(
        model: &ExplanationModel,
        concept_indices: &[usize],
        concept_names: &[String],
        class_names: &[String],
        lambda2: f64,
        val_accuracy: Option<f64>,
        config: &RunConfig,
        inputs_sha256: &str,
    ) -> Self {
        ModelFile {
            setting: setting_name(model.encoding, model.faithfulness).to_string(),
            concept_indices: concept_indices.to_vec(),
            concept_names: concept_names.to_vec(),
            class_names: class_names.to_vec(),
            selected: model.selected.clone(),
            selected_original: model.selected.iter().map(|&i| concept_indices[i]).collect(),
            h_conc: LinearMapFile::from_map(&model.h_conc),
            h_pred: LinearMapFile::from_map(&model.h_pred),
            lambda2,
            val_accuracy,
            config_echo: config.clone(),
            inputs_sha256: inputs_sha256.to_string(),
        }
    }

    pub fn to_model(&self) -> Result<ExplanationModel, ModelIoError> {
        let (encoding, faithfulness) = parse_setting(&self.setting)?;
        let h_conc = self.h_conc.to_map()?;
        let h_pred = self.h_pred.to_map()?;
        if h_pred.in_dim() != self.concept_indices.len() {
            return Err(ModelIoError::Inconsistent(
                "h_pred width != concept count".into(),
            ));
        }
        let mut model = ExplanationModel::new_full(h_conc, h_pred, encoding, faithfulness);
        model.selected = self.selected.clone();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| ModelIoError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<ModelFile, ModelIoError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelIoError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// SHA-256 over the concatenated bytes of the given files, hex-encoded.
pub fn hash_files(paths: &[std::path::PathBuf]) -> Result<String, std::io::Error> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(std::fs::read(path)?);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbe_core::{Encoding, Faithfulness};

    #[test]
    fn model_round_trip() {
        let mut model = ExplanationModel::new_full(
            LinearMap {
                weights: Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                bias: vec![0.1, 0.2],
            },
            LinearMap {
                weights: Mat::from_vec(2, 2, vec![0.5, 0.0, -0.5, 0.0]),
                bias: vec![0.0, 1.0],
            },
            Encoding::Probability,
            Faithfulness::PredictionOnly,
        );
        model.selected = vec![0];
        let file = ModelFile::from_model(
            &model,
            &[3, 7],
            &["a".into(), "b".into()],
            &["x".into(), "y".into()],
            0.05,
            Some(0.9),
            &RunConfig::default(),
            "deadbeef",
        );
        assert_eq!(file.setting, "uu_f");
        assert_eq!(file.selected_original, vec![3]);
        let path = std::env::temp_dir().join(format!("model-io-{}.json", std::process::id()));
        file.save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        let restored = loaded.to_model().unwrap();
        assert_eq!(restored, model);
        assert_eq!(loaded.lambda2, 0.05);
        assert_eq!(loaded.inputs_sha256, "deadbeef");
    }

    #[test]
    fn hash_is_stable_and_order_sensitive() {
        let dir = std::env::temp_dir().join(format!("hash-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let a = dir.join("a.bin");
        let b = dir.join("b.bin");
        std::fs::write(&a, b"alpha").unwrap();
        std::fs::write(&b, b"beta").unwrap();
        let h1 = hash_files(&[a.clone(), b.clone()]).unwrap();
        let h2 = hash_files(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        assert_ne!(h1, hash_files(&[b, a]).unwrap());
    }
}
