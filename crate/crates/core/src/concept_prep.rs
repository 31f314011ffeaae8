//! Concept vocabulary preparation: rare-concept filtering, greedy
//! decorrelation pruning, and per-concept linear probes.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::Mat;
use crate::objectives::LinearMap;
use crate::rng::Rng;
use crate::trainer::{adam_step, AdamState};

/// Where a concept-score matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    GroundTruth,
    Learned,
}

/// Per-sample concept scores used for correlation pruning: either the binary
/// annotations cast to float, or learned probe logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptScores {
    pub scores: Mat,
    pub source: ScoreSource,
}

/// Outcome of the greedy decorrelation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    /// Kept concept indices, in the order they were accepted.
    pub kept: Vec<usize>,
    pub threshold: f64,
    /// Dropped index -> the earlier kept index that excluded it.
    pub dropped_because: Vec<(usize, usize)>,
}

/// Indices of concepts present in at least `min_images` samples.
pub fn filter_rare_concepts(annotations: &Mat, min_images: usize) -> Vec<usize> {
    assert!(min_images >= 1);
    let mut kept = Vec::new();
    for c in 0..annotations.cols() {
        let count: f64 = (0..annotations.rows()).map(|r| annotations.get(r, c)).sum();
        if count as usize >= min_images {
            kept.push(c);
        }
    }
    kept
}

/// Pearson correlation matrix of the score columns. Constant columns get
/// correlation 0 against everything, with 1 on the diagonal.
pub fn pearson_matrix(scores: &ConceptScores) -> Mat {
    let m = &scores.scores;
    let (n, c) = (m.rows(), m.cols());
    let n_f = n as f64;
    let mut means = vec![0.0; c];
    for r in 0..n {
        for (j, &v) in m.row(r).iter().enumerate() {
            means[j] += v;
        }
    }
    for v in means.iter_mut() {
        *v /= n_f;
    }
    let mut sds = vec![0.0; c];
    for r in 0..n {
        for (j, &v) in m.row(r).iter().enumerate() {
            let d = v - means[j];
            sds[j] += d * d;
        }
    }
    for v in sds.iter_mut() {
        *v = math::sqrt(*v);
    }

    let mut corr = Mat::zeros(c, c);
    for i in 0..c {
        corr.set(i, i, 1.0);
        for j in i + 1..c {
            let value = if sds[i] == 0.0 || sds[j] == 0.0 {
                0.0
            } else {
                let mut cov = 0.0;
                for r in 0..n {
                    cov += (m.get(r, i) - means[i]) * (m.get(r, j) - means[j]);
                }
                (cov / (sds[i] * sds[j])).clamp(-1.0, 1.0)
            };
            corr.set(i, j, value);
            corr.set(j, i, value);
        }
    }
    corr
}

/// Nearest-rank percentile of the absolute off-diagonal correlations.
pub fn correlation_threshold(corr: &Mat, percentile: f64) -> f64 {
    assert!((0.0..=100.0).contains(&percentile));
    let c = corr.cols();
    let mut values = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            values.push(math::abs(corr.get(i, j)));
        }
    }
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = math::ceil(percentile / 100.0 * values.len() as f64) as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Greedy decorrelation: walk `order`, keep a concept iff its absolute
/// correlation with every previously kept concept is at most the percentile
/// threshold.
pub fn greedy_decorrelate(corr: &Mat, order: &[usize], percentile: f64) -> PruneResult {
    let threshold = correlation_threshold(corr, percentile);
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped_because = Vec::new();
    for &candidate in order {
        let blocker = kept
            .iter()
            .find(|&&k| math::abs(corr.get(candidate, k)) > threshold)
            .copied();
        match blocker {
            None => kept.push(candidate),
            Some(k) => dropped_because.push((candidate, k)),
        }
    }
    PruneResult {
        kept,
        threshold,
        dropped_because,
    }
}

/// Concept iteration order by descending frequency, ties toward lower index.
pub fn frequency_order(annotations: &Mat, concepts: &[usize]) -> Vec<usize> {
    let mut counts: Vec<(usize, f64)> = concepts
        .iter()
        .map(|&c| {
            let count: f64 = (0..annotations.rows()).map(|r| annotations.get(r, c)).sum();
            (c, count)
        })
        .collect();
    counts.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    counts.into_iter().map(|(c, _)| c).collect()
}

/// Hyperparameters for the per-concept logistic probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// Independent binary logistic probes, one per concept, trained jointly by
/// full-batch Adam (the per-concept objectives share no parameters). Returns
/// the probe map and its logits on the input rows.
pub fn learn_concept_probes(
    features: &Mat,
    annotations: &Mat,
    config: &ProbeConfig,
) -> (LinearMap, ConceptScores) {
    let (n, n_feat, c) = (features.rows(), features.cols(), annotations.cols());
    assert!(n > 0, "empty dataset");
    assert_eq!(annotations.rows(), n);

    let mut rng = Rng::from_seed(config.seed);
    let bound = 1.0 / math::sqrt(n_feat as f64);
    let mut probe = LinearMap::zeros(c, n_feat);
    for v in probe.weights.data_mut() {
        *v = rng.uniform_range(-bound, bound);
    }

    let mut w_state = AdamState::new(c * n_feat);
    let mut b_state = AdamState::new(c);
    let mut logits = Mat::zeros(n, c);
    let inv_n = 1.0 / n as f64;
    for t in 1..=config.epochs as u64 {
        for r in 0..n {
            probe.apply(features.row(r), logits.row_mut(r));
        }
        let mut grad_w = vec![0.0; c * n_feat];
        let mut grad_b = vec![0.0; c];
        for r in 0..n {
            let x = features.row(r);
            let ann = annotations.row(r);
            for j in 0..c {
                let residual = (math::sigmoid(logits.get(r, j)) - ann[j]) * inv_n;
                grad_b[j] += residual;
                for (f, &xf) in x.iter().enumerate() {
                    grad_w[j * n_feat + f] += residual * xf;
                }
            }
        }
        adam_step(probe.weights.data_mut(), &grad_w, &mut w_state, config.learning_rate, 0.9, 0.999, 1e-8, t);
        adam_step(&mut probe.bias, &grad_b, &mut b_state, config.learning_rate, 0.9, 0.999, 1e-8, t);
    }

    for r in 0..n {
        probe.apply(features.row(r), logits.row_mut(r));
    }
    (
        probe,
        ConceptScores {
            scores: logits,
            source: ScoreSource::Learned,
        },
    )
}

/// Probe logits on a different set of rows.
pub fn probe_scores(probe: &LinearMap, features: &Mat) -> ConceptScores {
    let mut logits = Mat::zeros(features.rows(), probe.out_dim());
    for r in 0..features.rows() {
        probe.apply(features.row(r), logits.row_mut(r));
    }
    ConceptScores {
        scores: logits,
        source: ScoreSource::Learned,
    }
}

/// Ground-truth annotations as a score matrix.
pub fn ground_truth_scores(annotations: &Mat) -> ConceptScores {
    ConceptScores {
        scores: annotations.clone(),
        source: ScoreSource::GroundTruth,
    }
}
