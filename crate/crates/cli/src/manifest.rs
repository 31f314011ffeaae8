//! Dataset manifests: a JSON document naming the NPY arrays plus the concept
//! and class vocabularies, with full cross-shape validation on load.

use std::path::{Path, PathBuf};

use cbe_core::dataset::DatasetError;
use cbe_core::{Mat, ProbeDataset};
use serde::{Deserialize, Serialize};

use crate::npy::{load_array, NpyError};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Array(#[from] NpyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// On-disk description of a probe dataset. Array paths are resolved relative
/// to the manifest file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub name: Option<String>,
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub model_outputs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_fractions: Option<PathBuf>,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    /// Every file this manifest references, with paths resolved against
    /// `base`.
    pub fn array_paths(&self, base: &Path) -> Vec<PathBuf> {
        let mut paths = vec![
            base.join(&self.features),
            base.join(&self.annotations),
            base.join(&self.model_outputs),
        ];
        if let Some(area) = &self.area_fractions {
            paths.push(base.join(area));
        }
        paths
    }
}

fn load_mat(base: &Path, rel: &Path) -> Result<Mat, ManifestError> {
    Ok(load_array(&base.join(rel))?.to_mat()?)
}

/// Load every array named by a manifest and assemble the validated dataset.
pub fn load_dataset(manifest_path: &Path) -> Result<ProbeDataset, ManifestError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    load_dataset_from(&manifest, &base)
}

pub fn load_dataset_from(
    manifest: &DatasetManifest,
    base: &Path,
) -> Result<ProbeDataset, ManifestError> {
    let features = load_mat(base, &manifest.features)?;
    let annotations = load_mat(base, &manifest.annotations)?;
    let model_outputs = load_mat(base, &manifest.model_outputs)?;
    let area_fractions = match &manifest.area_fractions {
        Some(rel) => Some(load_mat(base, rel)?),
        None => None,
    };
    Ok(ProbeDataset::new(
        features,
        annotations,
        model_outputs,
        area_fractions,
        manifest.concept_names.clone(),
        manifest.class_names.clone(),
    )?)
}

/// Write a dataset as NPY arrays plus manifest.json in `dir`.
pub fn save_dataset(ds: &ProbeDataset, name: &str, dir: &Path) -> Result<PathBuf, ManifestError> {
    std::fs::create_dir_all(dir).map_err(|e| ManifestError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let write = |file: &str, m: &Mat| -> Result<(), ManifestError> {
        crate::npy::save_array(&crate::npy::DenseArray::from_mat(m), &dir.join(file))?;
        Ok(())
    };
    write("features.npy", &ds.features)?;
    write("model_outputs.npy", &ds.model_outputs)?;
    // Annotations are binary: store as uint8.
    let ann = crate::npy::DenseArray::from_u8(
        vec![ds.annotations.rows(), ds.annotations.cols()],
        ds.annotations.data().iter().map(|&v| v as u8).collect(),
    );
    crate::npy::save_array(&ann, &dir.join("annotations.npy"))?;
    let mut area_path = None;
    if let Some(area) = &ds.area_fractions {
        write("area_fractions.npy", area)?;
        area_path = Some(PathBuf::from("area_fractions.npy"));
    }
    let manifest = DatasetManifest {
        name: Some(name.to_string()),
        features: PathBuf::from("features.npy"),
        annotations: PathBuf::from("annotations.npy"),
        model_outputs: PathBuf::from("model_outputs.npy"),
        area_fractions: area_path,
        concept_names: ds.concept_names.clone(),
        class_names: ds.class_names.clone(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
