//! Seeded synthetic probe datasets with planted ground truth, for desk-scale
//! verification of selection and recovery.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::ProbeDataset;
use crate::matrix::Mat;
use crate::objectives::ExplanationModel;
use crate::rng::Rng;

/// Generation parameters. Concepts are independent coins at `base_rates`;
/// features and outputs are linear in the annotations plus Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_concepts: usize,
    pub n_classes: usize,
    /// Number of planted relevant concepts.
    pub k_star: usize,
    pub base_rates: Vec<f64>,
    pub feature_noise_sigma: f64,
    pub output_noise_sigma: f64,
    /// When set, model outputs are generated from the (noisy) features by
    /// projecting them back through the concept-to-feature map, instead of
    /// directly from the annotations. This makes the black box a genuine
    /// function of the feature space, which is the regime where continuous
    /// concept encodings can out-mimic the ground-truth encoding.
    pub feature_linked_outputs: bool,
    pub seed: u64,
}

impl SynthParams {
    /// Convenience constructor for small noiseless test fixtures.
    pub fn small_test(
        n_samples: usize,
        n_features: usize,
        n_concepts: usize,
        n_classes: usize,
        k_star: usize,
        seed: u64,
    ) -> Self {
        SynthParams {
            n_samples,
            n_features,
            n_concepts,
            n_classes,
            k_star,
            base_rates: vec![0.4; n_concepts],
            feature_noise_sigma: 0.0,
            output_noise_sigma: 0.0,
            feature_linked_outputs: false,
            seed,
        }
    }

    pub fn validate(&self) {
        assert!(self.n_samples > 0 && self.n_features > 0 && self.n_concepts > 0 && self.n_classes > 0);
        assert!(self.k_star <= self.n_concepts, "K* exceeds concept count");
        assert_eq!(self.base_rates.len(), self.n_concepts);
        for &p in &self.base_rates {
            assert!(p > 0.0 && p < 1.0, "base rates must lie in (0,1)");
        }
        assert!(self.feature_noise_sigma >= 0.0 && self.output_noise_sigma >= 0.0);
    }
}

/// The planted structure behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGroundTruth {
    /// Relevant concept indices, in draw order.
    pub planted_support: Vec<usize>,
    /// `n x C` map from annotations to features.
    pub concept_to_feature: Mat,
    /// `D x C` map from annotations to outputs; zero outside the support.
    pub concept_to_output: Mat,
}

/// Generate a probe dataset with planted ground truth. A pure function of
/// `params`.
pub fn generate(params: &SynthParams) -> (ProbeDataset, SynthGroundTruth) {
    params.validate();
    let mut rng = Rng::from_seed(params.seed);
    let (n, n_feat, c, d) = (params.n_samples, params.n_features, params.n_concepts, params.n_classes);

    let planted_support = rng.sample_distinct(c, params.k_star);

    let mut concept_to_feature = Mat::zeros(n_feat, c);
    for v in concept_to_feature.data_mut() {
        *v = rng.normal();
    }
    let mut concept_to_output = Mat::zeros(d, c);
    for &col in &planted_support {
        for row in 0..d {
            concept_to_output.set(row, col, rng.normal());
        }
    }

    let mut annotations = Mat::zeros(n, c);
    for r in 0..n {
        for (col, &p) in params.base_rates.iter().enumerate() {
            if rng.bernoulli(p) {
                annotations.set(r, col, 1.0);
            }
        }
    }

    let mut features = Mat::zeros(n, n_feat);
    for r in 0..n {
        let ann = annotations.row(r);
        for j in 0..n_feat {
            let mut acc = 0.0;
            for (col, &a) in ann.iter().enumerate() {
                if a != 0.0 {
                    acc += concept_to_feature.get(j, col);
                }
            }
            features.set(r, j, acc);
        }
    }
    if params.feature_noise_sigma > 0.0 {
        for v in features.data_mut() {
            *v += params.feature_noise_sigma * rng.normal();
        }
    }

    let mut model_outputs = Mat::zeros(n, d);
    if params.feature_linked_outputs {
        // outputs = V * (M^T f) / n_feat, a linear function of the features.
        let scale = 1.0 / n_feat as f64;
        for r in 0..n {
            let f_row = features.row(r);
            for out in 0..d {
                let mut acc = 0.0;
                for col in 0..c {
                    let v = concept_to_output.get(out, col);
                    if v != 0.0 {
                        let mut proj = 0.0;
                        for j in 0..n_feat {
                            proj += concept_to_feature.get(j, col) * f_row[j];
                        }
                        acc += v * proj * scale;
                    }
                }
                model_outputs.set(r, out, acc);
            }
        }
    } else {
        for r in 0..n {
            let ann = annotations.row(r);
            for out in 0..d {
                let mut acc = 0.0;
                for (col, &a) in ann.iter().enumerate() {
                    if a != 0.0 {
                        acc += concept_to_output.get(out, col);
                    }
                }
                model_outputs.set(r, out, acc);
            }
        }
    }
    if params.output_noise_sigma > 0.0 {
        for v in model_outputs.data_mut() {
            *v += params.output_noise_sigma * rng.normal();
        }
    }

    let mut area_fractions = Mat::zeros(n, c);
    for r in 0..n {
        for col in 0..c {
            if annotations.get(r, col) != 0.0 {
                area_fractions.set(r, col, rng.uniform_open());
            }
        }
    }

    let concept_names = (0..c).map(|i| format!("concept_{i}")).collect();
    let class_names = (0..d).map(|i| format!("class_{i}")).collect();
    let ds = ProbeDataset::new(
        features,
        annotations,
        model_outputs,
        Some(area_fractions),
        concept_names,
        class_names,
    )
    .expect("generated dataset satisfies its own invariants");

    let gt = SynthGroundTruth {
        planted_support,
        concept_to_feature,
        concept_to_output,
    };
    (ds, gt)
}

/// Fraction of the planted support recovered by the model's selection.
pub fn recovery_score(model: &ExplanationModel, gt: &SynthGroundTruth) -> f64 {
    if gt.planted_support.is_empty() {
        return 1.0;
    }
    let hits = model
        .selected
        .iter()
        .filter(|i| gt.planted_support.contains(i))
        .count();
    hits as f64 / gt.planted_support.len() as f64
}
