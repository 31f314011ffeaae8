//! Prior-method reductions: NetDissect (IOU and nAP forms), alignment-only
//! fitting, the non-negative per-class decomposition, and the per-class L1
//! sparse fit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::ProbeDataset;
use crate::evaluation::normalized_ap;
use crate::math;
use crate::matrix::Mat;
use crate::objectives::{Encoding, ExplanationModel, Faithfulness, LinearMap};
use crate::trainer::{
    train_explanation, train_with_options, AdamState, FitOptions, TrainConfig, TrainError,
    TrainReport,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VariantError {
    #[error("region matrices disagree: {activations} activation rows vs {concepts} concept rows")]
    RegionRowMismatch { activations: usize, concepts: usize },
    #[error("non-binary region concept {value} at row {row}, concept {col}")]
    NonBinaryRegionConcept { row: usize, col: usize, value: f64 },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Per-region neuron activations and binary concept labels on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAlignmentData {
    /// `M x n`: one row per image region, one column per neuron.
    pub region_activations: Mat,
    /// `M x C` binary matrix of region-level concept labels.
    pub region_concepts: Mat,
}

impl RegionAlignmentData {
    pub fn new(region_activations: Mat, region_concepts: Mat) -> Result<Self, VariantError> {
        if region_activations.rows() != region_concepts.rows() {
            return Err(VariantError::RegionRowMismatch {
                activations: region_activations.rows(),
                concepts: region_concepts.rows(),
            });
        }
        for r in 0..region_concepts.rows() {
            for (c, &v) in region_concepts.row(r).iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(VariantError::NonBinaryRegionConcept { row: r, col: c, value: v });
                }
            }
        }
        Ok(RegionAlignmentData {
            region_activations,
            region_concepts,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.region_activations.rows()
    }

    pub fn num_neurons(&self) -> usize {
        self.region_activations.cols()
    }

    pub fn num_concepts(&self) -> usize {
        self.region_concepts.cols()
    }
}

/// One neuron's alignment summary: best concept by IOU plus the top concepts
/// by normalized AP.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronRow {
    pub neuron: usize,
    pub iou_concept: usize,
    pub iou: f64,
    /// `(concept, nAP)` pairs, descending by nAP.
    pub nap: Vec<(usize, f64)>,
}

/// Alignment summaries for every neuron, plus concepts skipped because their
/// label column was single-class.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronConceptReport {
    pub neurons: Vec<NeuronRow>,
    pub skipped_concepts: Vec<usize>,
}

/// Binarize a neuron's activations so that exactly `ceil(quantile * M)`
/// entries are set: the largest values, ties at the cut toward lower index.
pub fn top_quantile_threshold(activations: &[f64], quantile: f64) -> Vec<bool> {
    assert!(quantile > 0.0 && quantile < 1.0, "quantile must lie in (0,1)");
    let m = activations.len();
    let keep = math::ceil(quantile * m as f64) as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        activations[b]
            .partial_cmp(&activations[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = vec![false; m];
    for &i in &order[..keep] {
        out[i] = true;
    }
    out
}

fn iou(a: &[bool], b: &[f64]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let y = y != 0.0;
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// For each neuron: threshold its activations at the top quantile and report
/// the concept with the highest intersection-over-union, ties toward the
/// lower concept index. Empty unions score 0.
pub fn netdissect_iou(data: &RegionAlignmentData, quantile: f64) -> Vec<(usize, f64)> {
    let c = data.num_concepts();
    assert!(c > 0, "no concepts");
    (0..data.num_neurons())
        .map(|neuron| {
            let bits = top_quantile_threshold(&data.region_activations.col(neuron), quantile);
            let mut best = (0, f64::NEG_INFINITY);
            for concept in 0..c {
                let score = iou(&bits, &data.region_concepts.col(concept));
                if score > best.1 {
                    best = (concept, score);
                }
            }
            best
        })
        .collect()
}

/// For each neuron: normalized AP of its raw activations against every
/// concept column, top `k` reported. Single-class concept columns are skipped
/// and listed in the result.
pub fn netdissect_nap(data: &RegionAlignmentData, k: usize) -> (Vec<Vec<(usize, f64)>>, Vec<usize>) {
    let m = data.num_regions();
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for concept in 0..data.num_concepts() {
        let positives = data
            .region_concepts
            .col(concept)
            .iter()
            .filter(|&&v| v != 0.0)
            .count();
        if positives == 0 || positives == m {
            skipped.push(concept);
        } else {
            usable.push(concept);
        }
    }
    let per_neuron = (0..data.num_neurons())
        .map(|neuron| {
            let scores = data.region_activations.col(neuron);
            let mut ranked: Vec<(usize, f64)> = usable
                .iter()
                .map(|&concept| {
                    let labels = data.region_concepts.col(concept);
                    let negatives = labels.iter().filter(|&&v| v == 0.0).count();
                    (concept, normalized_ap(&scores, &labels, negatives as f64))
                })
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            ranked.truncate(k);
            ranked
        })
        .collect();
    (per_neuron, skipped)
}

/// IOU and nAP summaries for every neuron in one report.
pub fn netdissect_report(data: &RegionAlignmentData, quantile: f64, k: usize) -> NeuronConceptReport {
    let ious = netdissect_iou(data, quantile);
    let (naps, skipped_concepts) = netdissect_nap(data, k);
    let neurons = ious
        .into_iter()
        .zip(naps)
        .enumerate()
        .map(|(neuron, ((iou_concept, iou), nap))| NeuronRow {
            neuron,
            iou_concept,
            iou,
            nap,
        })
        .collect();
    NeuronConceptReport {
        neurons,
        skipped_concepts,
    }
}

/// How the alignment-only baseline relates neurons to concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    /// Train the full feature-to-concept linear map with the mimic term off.
    Linear,
    /// Assign each neuron the concept maximizing nAP of its raw activations.
    Indicator,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentOnlyResult {
    /// The trained feature-to-concept map.
    Linear(LinearMap),
    /// Per-neuron best concept index, or None when every concept column was
    /// single-class.
    Indicator(Vec<Option<usize>>),
}

/// Alignment-only fit: linear mode runs the standard trainer with the mimic
/// weight set to zero and the full vocabulary kept; indicator mode treats
/// each feature coordinate as a neuron and assigns the concept with the best
/// normalized AP.
pub fn alignment_only_fit(
    ds: &ProbeDataset,
    config: &TrainConfig,
    mode: AlignmentMode,
) -> Result<AlignmentOnlyResult, VariantError> {
    match mode {
        AlignmentMode::Linear => {
            let mut cfg = config.clone();
            cfg.lambda1 = 0.0;
            cfg.k = ds.num_concepts();
            cfg.reg_max_weight = 0.0;
            let lambda2 = 1.0;
            let (model, _) = train_explanation(
                ds,
                &cfg,
                Encoding::Probability,
                Faithfulness::FullOutputs,
                lambda2,
            )?;
            Ok(AlignmentOnlyResult::Linear(model.h_conc))
        }
        AlignmentMode::Indicator => {
            let data = RegionAlignmentData::new(ds.features.clone(), ds.annotations.clone())?;
            let (naps, _) = netdissect_nap(&data, 1);
            Ok(AlignmentOnlyResult::Indicator(
                naps.into_iter().map(|top| top.first().map(|&(c, _)| c)).collect(),
            ))
        }
    }
}

fn single_class_view(ds: &ProbeDataset, class_index: usize) -> Result<ProbeDataset, VariantError> {
    let d = ds.num_classes();
    if class_index >= d {
        return Err(VariantError::ClassOutOfRange {
            class: class_index,
            classes: d,
        });
    }
    Ok(ProbeDataset {
        features: ds.features.clone(),
        annotations: ds.annotations.clone(),
        model_outputs: ds.model_outputs.select_cols(&[class_index]),
        area_fractions: ds.area_fractions.clone(),
        concept_names: ds.concept_names.clone(),
        class_names: vec![ds.class_names[class_index].clone()],
    })
}

/// Per-class non-negative decomposition: the probability-encoded, full-output
/// objective restricted to one output coordinate, with the coefficient row
/// clamped at zero after every optimizer step.
pub fn ibd_fit(
    ds: &ProbeDataset,
    config: &TrainConfig,
    class_index: usize,
) -> Result<(ExplanationModel, TrainReport), VariantError> {
    ibd_fit_with_hook(ds, config, class_index, &mut |_| {})
}

/// As `ibd_fit`, with a hook invoked after every optimizer step so invariants
/// can be audited mid-training.
pub fn ibd_fit_with_hook(
    ds: &ProbeDataset,
    config: &TrainConfig,
    class_index: usize,
    step_hook: &mut dyn FnMut(&ExplanationModel),
) -> Result<(ExplanationModel, TrainReport), VariantError> {
    let view = single_class_view(ds, class_index)?;
    let lambda2 = config.lambda2_candidates.first().copied().unwrap_or(1.0);
    let opts = FitOptions { nonneg_pred: true };
    let out = train_with_options(
        &view,
        config,
        Encoding::Probability,
        Faithfulness::FullOutputs,
        lambda2,
        opts,
        step_hook,
    )?;
    Ok(out)
}

/// Result of the per-class L1 sparse fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EludeResult {
    /// Binary explanation: `h_pred` row 0 is the class logit over concepts,
    /// row 1 is zero (the "rest" logit).
    pub model: ExplanationModel,
    pub l1_weight: f64,
    pub nonzeros: usize,
    /// Set when bisection could not reach a weight with at most K nonzeros;
    /// the result then carries the nearest achievable sparsity.
    pub bracket_failed: bool,
}

struct L1Fit {
    weights: Vec<f64>,
    bias: f64,
}

/// One logistic fit of `sigmoid(w . a + b)` against binary labels, with an
/// L1 soft-threshold applied to `w` after every Adam step. Full batch,
/// deterministic.
fn l1_logistic_fit(
    annotations: &Mat,
    labels: &[f64],
    config: &TrainConfig,
    l1_weight: f64,
) -> L1Fit {
    let n = annotations.rows();
    let c = annotations.cols();
    let mut w = vec![0.0; c];
    let mut b = 0.0;
    let mut state_w = AdamState::new(c);
    let mut state_b = AdamState::new(1);
    let mut grad_w = vec![0.0; c];
    for t in 1..=config.epochs as u64 {
        for g in grad_w.iter_mut() {
            *g = 0.0;
        }
        let mut grad_b = 0.0;
        for r in 0..n {
            let ann = annotations.row(r);
            let mut z = b;
            for (j, &a) in ann.iter().enumerate() {
                z += w[j] * a;
            }
            let err = math::sigmoid(z) - labels[r];
            for (j, &a) in ann.iter().enumerate() {
                grad_w[j] += err * a;
            }
            grad_b += err;
        }
        let scale = 1.0 / n as f64;
        for g in grad_w.iter_mut() {
            *g *= scale;
        }
        grad_b *= scale;
        crate::trainer::adam_step(
            &mut w,
            &grad_w,
            &mut state_w,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            t,
        );
        let mut bias_slice = [b];
        crate::trainer::adam_step(
            &mut bias_slice,
            &[grad_b],
            &mut state_b,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            t,
        );
        b = bias_slice[0];
        if l1_weight > 0.0 {
            let shrink = config.learning_rate * l1_weight;
            for v in w.iter_mut() {
                let mag = math::abs(*v) - shrink;
                *v = if mag <= 0.0 {
                    0.0
                } else if *v > 0.0 {
                    mag
                } else {
                    -mag
                };
            }
        }
    }
    L1Fit { weights: w, bias: b }
}

fn nonzero_count(w: &[f64]) -> usize {
    w.iter().filter(|&&v| v != 0.0).count()
}

/// Per-class sparse fit on annotations: a binary one-vs-rest logistic model
/// of the classifier's predicted label, with the L1 weight bisected (at most
/// 20 iterations) to leave at most `k` nonzero coefficients.
pub fn elude_fit(
    ds: &ProbeDataset,
    config: &TrainConfig,
    class_index: usize,
    k: usize,
) -> Result<EludeResult, VariantError> {
    let d = ds.num_classes();
    if class_index >= d {
        return Err(VariantError::ClassOutOfRange {
            class: class_index,
            classes: d,
        });
    }
    if ds.num_samples() == 0 {
        return Err(VariantError::Train(TrainError::EmptyDataset));
    }
    let labels: Vec<f64> = ds
        .predicted_labels()
        .into_iter()
        .map(|l| if l == class_index { 1.0 } else { 0.0 })
        .collect();

    let mut fit = l1_logistic_fit(&ds.annotations, &labels, config, 0.0);
    let mut l1_weight = 0.0;
    let mut bracket_failed = false;
    if nonzero_count(&fit.weights) > k {
        // Grow an upper bracket, then bisect toward the smallest weight that
        // still meets the sparsity target.
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut hi_fit = l1_logistic_fit(&ds.annotations, &labels, config, hi);
        let mut grow = 0;
        while nonzero_count(&hi_fit.weights) > k && grow < 20 {
            lo = hi;
            hi *= 4.0;
            hi_fit = l1_logistic_fit(&ds.annotations, &labels, config, hi);
            grow += 1;
        }
        if nonzero_count(&hi_fit.weights) > k {
            bracket_failed = true;
            fit = hi_fit;
            l1_weight = hi;
        } else {
            let mut best = (hi, hi_fit);
            for _ in 0..20 {
                let mid = 0.5 * (lo + hi);
                let mid_fit = l1_logistic_fit(&ds.annotations, &labels, config, mid);
                if nonzero_count(&mid_fit.weights) <= k {
                    hi = mid;
                    best = (mid, mid_fit);
                } else {
                    lo = mid;
                }
            }
            l1_weight = best.0;
            fit = best.1;
        }
    }

    let c = ds.num_concepts();
    let nonzeros = nonzero_count(&fit.weights);
    let mut pred = LinearMap::zeros(2, c);
    pred.weights.row_mut(0).copy_from_slice(&fit.weights);
    pred.bias[0] = fit.bias;
    let mut model = ExplanationModel::new_full(
        LinearMap::zeros(c, ds.num_features()),
        pred,
        Encoding::GroundTruthBinary,
        Faithfulness::PredictionOnly,
    );
    model.selected = (0..c).filter(|&j| fit.weights[j] != 0.0).collect();
    Ok(EludeResult {
        model,
        l1_weight,
        nonzeros,
        bracket_failed,
    })
}

/// The binary one-vs-rest view used by the per-class L1 fit: outputs become
/// two columns whose argmax is 0 exactly when the classifier predicts the
/// target class.
pub fn one_vs_rest_view(ds: &ProbeDataset, class_index: usize) -> Result<ProbeDataset, VariantError> {
    let d = ds.num_classes();
    if class_index >= d {
        return Err(VariantError::ClassOutOfRange {
            class: class_index,
            classes: d,
        });
    }
    let n = ds.num_samples();
    let labels = ds.predicted_labels();
    let mut outputs = Mat::zeros(n, 2);
    for (r, &l) in labels.iter().enumerate() {
        if l == class_index {
            outputs.set(r, 0, 1.0);
        } else {
            outputs.set(r, 1, 1.0);
        }
    }
    let mut class_names: Vec<String> = Vec::with_capacity(2);
    class_names.push(ds.class_names[class_index].clone());
    class_names.push(String::from("rest"));
    Ok(ProbeDataset {
        features: ds.features.clone(),
        annotations: ds.annotations.clone(),
        model_outputs: outputs,
        area_fractions: ds.area_fractions.clone(),
        concept_names: ds.concept_names.clone(),
        class_names,
    })
}
