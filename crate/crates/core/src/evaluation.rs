//! Faithfulness and concept-property metrics: L2 gap, explanation accuracy,
//! top-concept rankings and overlap, frequency/size, normalized AP, ROC AUC.

use alloc::vec::Vec;

use crate::dataset::{argmax_row, ProbeDataset};
use crate::math;
use crate::matrix::Mat;
use crate::objectives::{all_rows, explanation_forward, ExplanationModel};

/// Mean L2 distance between the softmax distributions of the model and the
/// explanation. Lies in [0, sqrt(2)].
pub fn l2_gap(model: &ExplanationModel, ds: &ProbeDataset) -> f64 {
    l2_gap_with(model, ds, true)
}

/// As `l2_gap`; `softmax = false` compares raw logits instead.
pub fn l2_gap_with(model: &ExplanationModel, ds: &ProbeDataset, softmax: bool) -> f64 {
    let rows = all_rows(ds);
    assert!(!rows.is_empty(), "empty dataset");
    let logits = explanation_forward(model, ds, &rows);
    let mut total = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        let mut a = logits.row(i).to_vec();
        let mut b = ds.model_outputs.row(r).to_vec();
        if softmax {
            math::softmax_in_place(&mut a);
            math::softmax_in_place(&mut b);
        }
        let mut sq = 0.0;
        for (x, y) in a.iter().zip(&b) {
            let diff = x - y;
            sq += diff * diff;
        }
        total += math::sqrt(sq);
    }
    total / rows.len() as f64
}

/// Fraction of rows where the explanation's argmax matches the model's.
pub fn explanation_accuracy(model: &ExplanationModel, ds: &ProbeDataset) -> f64 {
    let rows = all_rows(ds);
    assert!(!rows.is_empty(), "empty dataset");
    let logits = explanation_forward(model, ds, &rows);
    let mut hits = 0usize;
    for (i, &r) in rows.iter().enumerate() {
        if argmax_row(logits.row(i)) == argmax_row(ds.model_outputs.row(r)) {
            hits += 1;
        }
    }
    hits as f64 / rows.len() as f64
}

/// The `k` selected concepts with the largest absolute `h_pred` coefficient
/// for a class, as `(concept index, signed coefficient)`, descending by
/// magnitude with ties toward lower index.
pub fn top_concepts(model: &ExplanationModel, class_index: usize, k: usize) -> Vec<(usize, f64)> {
    assert!(class_index < model.num_classes(), "class {class_index} out of range");
    assert!(k <= model.selected.len(), "k exceeds selected set");
    let row = model.h_pred.weights.row(class_index);
    let mut ranked: Vec<(usize, f64)> = model.selected.iter().map(|&c| (c, row[c])).collect();
    ranked.sort_by(|a, b| {
        math::abs(b.1)
            .partial_cmp(&math::abs(a.1))
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    ranked
}

/// Size of the intersection of the two models' top-k concept sets for a
/// class.
pub fn concept_overlap(
    a: &ExplanationModel,
    b: &ExplanationModel,
    class_index: usize,
    k: usize,
) -> usize {
    let set_a: Vec<usize> = top_concepts(a, class_index, k).into_iter().map(|(c, _)| c).collect();
    top_concepts(b, class_index, k)
        .into_iter()
        .filter(|(c, _)| set_a.contains(c))
        .count()
}

/// Fraction of samples containing the concept.
pub fn concept_frequency(annotations: &Mat, concept_index: usize) -> f64 {
    let n = annotations.rows();
    let sum: f64 = (0..n).map(|r| annotations.get(r, concept_index)).sum();
    sum / n as f64
}

/// Mean area fraction over samples where the concept is present; 0 when it
/// never occurs.
pub fn concept_size(area_fractions: &Mat, annotations: &Mat, concept_index: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..annotations.rows() {
        if annotations.get(r, concept_index) != 0.0 {
            total += area_fractions.get(r, concept_index);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Ranking order: indices sorted by descending score, ties toward lower
/// sample index.
fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Normalized average precision: at each positive hit, the precision is
/// computed with the true-positive mass rescaled so every concept is scored
/// as if it had `norm_positive_count` positives. Equals ordinary AP when
/// `norm_positive_count` is the true positive count.
pub fn normalized_ap(scores: &[f64], labels: &[f64], norm_positive_count: f64) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l != 0.0).count();
    assert!(
        positives > 0 && positives < labels.len(),
        "normalized_ap needs both classes"
    );
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut sum = 0.0;
    for &i in &ranking_order(scores) {
        if labels[i] != 0.0 {
            tp += 1;
            let recall = tp as f64 / positives as f64;
            let scaled_tp = recall * norm_positive_count;
            sum += scaled_tp / (scaled_tp + fp as f64);
        } else {
            fp += 1;
        }
    }
    sum / positives as f64
}

/// ROC AUC in the Mann-Whitney formulation: P(score+ > score-) plus half the
/// tie probability. Computed by rank sums with average ranks at ties.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l != 0.0).count();
    assert!(positives > 0 && positives < n, "roc_auc needs both classes");
    let negatives = n - positives;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Average 1-based rank across the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] != 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - positives as f64 * (positives as f64 + 1.0) / 2.0;
    u / (positives as f64 * negatives as f64)
}

/// One row of the concept-property table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptPropertyRow {
    pub concept: usize,
    pub frequency: f64,
    /// None when the dataset carries no area fractions.
    pub size: Option<f64>,
    pub nap: f64,
    pub auc: f64,
}

/// Frequency, size, and learnability (nAP and AUC of the probe logits) for
/// every selected concept. `norm_positive_count` of None uses the concept's
/// negative count.
pub fn concept_property_table(
    model: &ExplanationModel,
    ds: &ProbeDataset,
    probe_logits: &Mat,
    norm_positive_count: Option<f64>,
) -> Vec<ConceptPropertyRow> {
    let n = ds.num_samples();
    assert_eq!(probe_logits.rows(), n);
    model
        .selected
        .iter()
        .map(|&c| {
            let labels = ds.annotations.col(c);
            let scores = probe_logits.col(c);
            let positives = labels.iter().filter(|&&l| l != 0.0).count();
            let (nap, auc) = if positives == 0 || positives == n {
                (f64::NAN, f64::NAN)
            } else {
                let n_hat = norm_positive_count.unwrap_or((n - positives) as f64);
                (normalized_ap(&scores, &labels, n_hat), roc_auc(&scores, &labels))
            };
            ConceptPropertyRow {
                concept: c,
                frequency: concept_frequency(&ds.annotations, c),
                size: ds
                    .area_fractions
                    .as_ref()
                    .map(|a| concept_size(a, &ds.annotations, c)),
                nap,
                auc,
            }
        })
        .collect()
}
