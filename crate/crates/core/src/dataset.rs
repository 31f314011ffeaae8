//! Probe datasets: typed in-memory representation, splitting, and argmax
//! predictions.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::Mat;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("shape mismatch for {name}: expected {expected} rows, got {got}")]
    ShapeMismatch {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-binary annotation {value} at row {row}, concept {col}")]
    NonBinaryAnnotation { row: usize, col: usize, value: f64 },
    #[error("area fraction {value} out of [0,1] at row {row}, concept {col}")]
    AreaFractionOutOfRange { row: usize, col: usize, value: f64 },
    #[error("area fraction {value} nonzero where concept {col} is absent in row {row}")]
    AreaFractionWithoutAnnotation { row: usize, col: usize, value: f64 },
    #[error("{name} has {got} names but the matrix has {expected} columns")]
    NameCountMismatch {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("split requires at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("split fractions must be positive and sum to 1, got {0}, {1}, {2}")]
    BadSplitFractions(f64, f64, f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A probe dataset: per-sample features, binary concept annotations, model
/// output logits, and (optionally) the fraction of each image covered by each
/// concept's mask. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub features: Mat,
    pub annotations: Mat,
    pub model_outputs: Mat,
    pub area_fractions: Option<Mat>,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl ProbeDataset {
    pub fn new(
        features: Mat,
        annotations: Mat,
        model_outputs: Mat,
        area_fractions: Option<Mat>,
        concept_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = features.rows();
        if annotations.rows() != n {
            return Err(DatasetError::ShapeMismatch {
                name: "annotations",
                expected: n,
                got: annotations.rows(),
            });
        }
        if model_outputs.rows() != n {
            return Err(DatasetError::ShapeMismatch {
                name: "model_outputs",
                expected: n,
                got: model_outputs.rows(),
            });
        }
        if !features.all_finite() {
            return Err(DatasetError::NonFinite("features"));
        }
        if !model_outputs.all_finite() {
            return Err(DatasetError::NonFinite("model_outputs"));
        }
        for r in 0..n {
            for (c, &v) in annotations.row(r).iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(DatasetError::NonBinaryAnnotation { row: r, col: c, value: v });
                }
            }
        }
        if let Some(area) = &area_fractions {
            if area.rows() != n {
                return Err(DatasetError::ShapeMismatch {
                    name: "area_fractions",
                    expected: n,
                    got: area.rows(),
                });
            }
            if area.cols() != annotations.cols() {
                return Err(DatasetError::ShapeMismatch {
                    name: "area_fractions",
                    expected: annotations.cols(),
                    got: area.cols(),
                });
            }
            for r in 0..n {
                for (c, &v) in area.row(r).iter().enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(DatasetError::AreaFractionOutOfRange { row: r, col: c, value: v });
                    }
                    if v != 0.0 && annotations.get(r, c) == 0.0 {
                        return Err(DatasetError::AreaFractionWithoutAnnotation {
                            row: r,
                            col: c,
                            value: v,
                        });
                    }
                }
            }
        }
        if concept_names.len() != annotations.cols() {
            return Err(DatasetError::NameCountMismatch {
                name: "concept_names",
                expected: annotations.cols(),
                got: concept_names.len(),
            });
        }
        if class_names.len() != model_outputs.cols() {
            return Err(DatasetError::NameCountMismatch {
                name: "class_names",
                expected: model_outputs.cols(),
                got: class_names.len(),
            });
        }
        Ok(ProbeDataset {
            features,
            annotations,
            model_outputs,
            area_fractions,
            concept_names,
            class_names,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_concepts(&self) -> usize {
        self.annotations.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.model_outputs.cols()
    }

    /// Row subset, preserving the given order.
    pub fn subset(&self, idx: &[usize]) -> ProbeDataset {
        ProbeDataset {
            features: self.features.select_rows(idx),
            annotations: self.annotations.select_rows(idx),
            model_outputs: self.model_outputs.select_rows(idx),
            area_fractions: self.area_fractions.as_ref().map(|a| a.select_rows(idx)),
            concept_names: self.concept_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Restrict the concept vocabulary to `kept` (original indices, any order).
    pub fn restrict_concepts(&self, kept: &[usize]) -> ProbeDataset {
        ProbeDataset {
            features: self.features.clone(),
            annotations: self.annotations.select_cols(kept),
            model_outputs: self.model_outputs.clone(),
            area_fractions: self.area_fractions.as_ref().map(|a| a.select_cols(kept)),
            concept_names: kept.iter().map(|&i| self.concept_names[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn predicted_labels(&self) -> Vec<usize> {
        predictions_from_outputs(&self.model_outputs)
    }
}

/// How to split a probe dataset into train/val/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, DatasetError> {
        let spec = SplitSpec {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if self.train_fraction <= 0.0
            || self.val_fraction <= 0.0
            || self.test_fraction <= 0.0
            || math::abs(sum - 1.0) > 1e-9
        {
            return Err(DatasetError::BadSplitFractions(
                self.train_fraction,
                self.val_fraction,
                self.test_fraction,
            ));
        }
        Ok(())
    }
}

/// Index argmax with ties broken toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Per-row argmax labels of an output matrix.
pub fn predictions_from_outputs(outputs: &Mat) -> Vec<usize> {
    (0..outputs.rows()).map(|r| argmax_row(outputs.row(r))).collect()
}

/// Deterministic disjoint index sets covering 0..n. Val and test sizes are
/// `round(n * fraction)`; the remainder goes to train.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), DatasetError> {
    spec.validate()?;
    if n < 3 {
        return Err(DatasetError::TooFewSamples(n));
    }
    let n_val = math::round(n as f64 * spec.val_fraction) as usize;
    let n_test = math::round(n as f64 * spec.test_fraction) as usize;
    let n_train = n - n_val - n_test;

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = Rng::from_seed(spec.seed);
    rng.shuffle(&mut perm);

    let train = perm[..n_train].to_vec();
    let val = perm[n_train..n_train + n_val].to_vec();
    let test = perm[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

pub fn split_dataset(
    ds: &ProbeDataset,
    spec: &SplitSpec,
) -> Result<(ProbeDataset, ProbeDataset, ProbeDataset), DatasetError> {
    let (train, val, test) = split_indices(ds.num_samples(), spec)?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&test)))
}
