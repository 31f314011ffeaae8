//! The explanation forward pass, concept encodings, and all loss terms with
//! analytic gradients.
//!
//! An explanation is `h_pred ∘ mask_S ∘ encode ∘ h_conc` applied to features,
//! where `encode` is one of three concept encodings and `mask_S` zeroes every
//! concept coordinate outside the selected set.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{argmax_row, ProbeDataset};
use crate::math;
use crate::matrix::Mat;

/// How concept scores are produced before being fed to `h_pred`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// Raw linear scores `h_conc(f(x))`.
    Continuous,
    /// Logistic of the linear scores.
    Probability,
    /// Ground-truth binary annotations substituted for the learned scores.
    GroundTruthBinary,
}

/// What the explanation is trained to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Faithfulness {
    /// Match the model's full output vector (mean squared L2).
    FullOutputs,
    /// Match only the model's argmax prediction (softmax cross-entropy).
    PredictionOnly,
}

/// Dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `out x in` weight matrix.
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl LinearMap {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearMap {
            weights: Mat::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut map = LinearMap::zeros(dim, dim);
        for i in 0..dim {
            map.weights.set(i, i, 1.0);
        }
        map
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(out.len(), self.out_dim());
        for (o, val) in out.iter_mut().enumerate() {
            let mut acc = self.bias[o];
            let row = self.weights.row(o);
            for (j, &w) in row.iter().enumerate() {
                acc += w * x[j];
            }
            *val = acc;
        }
    }
}

/// A fitted concept-based explanation of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationModel {
    /// Feature-to-concept map (`C x n`).
    pub h_conc: LinearMap,
    /// Concept-to-output map (`D x C`).
    pub h_pred: LinearMap,
    /// Selected concept indices (ascending). During training this is the full
    /// vocabulary; after finalization it has exactly K entries and every
    /// `h_pred` column outside it is zero.
    pub selected: Vec<usize>,
    pub encoding: Encoding,
    pub faithfulness: Faithfulness,
}

impl ExplanationModel {
    /// Fresh model with every concept selected.
    pub fn new_full(
        h_conc: LinearMap,
        h_pred: LinearMap,
        encoding: Encoding,
        faithfulness: Faithfulness,
    ) -> Self {
        let c = h_pred.in_dim();
        ExplanationModel {
            h_conc,
            h_pred,
            selected: (0..c).collect(),
            encoding,
            faithfulness,
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.h_pred.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.h_pred.out_dim()
    }

    /// Boolean mask over concept coordinates, true inside the selected set.
    pub fn selection_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_concepts()];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

/// One loss evaluation split into its components. `mimic`, `align`, and `reg`
/// are unweighted; `total` is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mimic: f64,
    pub align: f64,
    pub reg: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub reg_weight: f64,
}

/// Gradients of the total loss with respect to both linear maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conc_weights: Mat,
    pub conc_bias: Vec<f64>,
    pub pred_weights: Mat,
    pub pred_bias: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &ExplanationModel) -> Self {
        Gradients {
            conc_weights: Mat::zeros(model.h_conc.out_dim(), model.h_conc.in_dim()),
            conc_bias: vec![0.0; model.h_conc.out_dim()],
            pred_weights: Mat::zeros(model.h_pred.out_dim(), model.h_pred.in_dim()),
            pred_bias: vec![0.0; model.h_pred.out_dim()],
        }
    }
}

/// Concept scores for a batch, one row per sample in `rows`. Coordinates
/// outside the selected set are still computed; masking happens downstream.
pub fn encode_concepts(model: &ExplanationModel, ds: &ProbeDataset, rows: &[usize]) -> Mat {
    let c = model.num_concepts();
    let mut out = Mat::zeros(rows.len(), c);
    match model.encoding {
        Encoding::GroundTruthBinary => {
            for (i, &r) in rows.iter().enumerate() {
                out.row_mut(i).copy_from_slice(ds.annotations.row(r));
            }
        }
        Encoding::Continuous => {
            for (i, &r) in rows.iter().enumerate() {
                let features = ds.features.row(r);
                model.h_conc.apply(features, out.row_mut(i));
            }
        }
        Encoding::Probability => {
            for (i, &r) in rows.iter().enumerate() {
                let features = ds.features.row(r);
                model.h_conc.apply(features, out.row_mut(i));
                for v in out.row_mut(i).iter_mut() {
                    *v = math::sigmoid(*v);
                }
            }
        }
    }
    out
}

/// Explanation logits for a batch: encode, zero coordinates outside the
/// selected set, apply `h_pred`.
pub fn explanation_forward(model: &ExplanationModel, ds: &ProbeDataset, rows: &[usize]) -> Mat {
    let encoded = encode_concepts(model, ds, rows);
    forward_from_encoded(model, &encoded)
}

fn forward_from_encoded(model: &ExplanationModel, encoded: &Mat) -> Mat {
    let mask = model.selection_mask();
    let d = model.num_classes();
    let mut out = Mat::zeros(encoded.rows(), d);
    let mut masked = vec![0.0; model.num_concepts()];
    for i in 0..encoded.rows() {
        let row = encoded.row(i);
        for (c, v) in masked.iter_mut().enumerate() {
            *v = if mask[c] { row[c] } else { 0.0 };
        }
        model.h_pred.apply(&masked, out.row_mut(i));
    }
    out
}

/// All row indices of a dataset, for whole-set evaluations.
pub fn all_rows(ds: &ProbeDataset) -> Vec<usize> {
    (0..ds.num_samples()).collect()
}

/// Mimic loss over a batch: mean squared L2 against the model's output rows
/// (FullOutputs) or mean softmax cross-entropy against its argmax labels
/// (PredictionOnly).
pub fn mimic_loss(model: &ExplanationModel, ds: &ProbeDataset, rows: &[usize]) -> f64 {
    assert!(!rows.is_empty(), "mimic_loss on empty batch");
    let logits = explanation_forward(model, ds, rows);
    mimic_from_logits(model, ds, rows, &logits)
}

fn mimic_from_logits(model: &ExplanationModel, ds: &ProbeDataset, rows: &[usize], logits: &Mat) -> f64 {
    let b = rows.len() as f64;
    let mut total = 0.0;
    match model.faithfulness {
        Faithfulness::FullOutputs => {
            for (i, &r) in rows.iter().enumerate() {
                let target = ds.model_outputs.row(r);
                for (d, &y) in logits.row(i).iter().enumerate() {
                    let diff = y - target[d];
                    total += diff * diff;
                }
            }
        }
        Faithfulness::PredictionOnly => {
            for (i, &r) in rows.iter().enumerate() {
                let label = argmax_row(ds.model_outputs.row(r));
                total -= math::log_softmax_at(logits.row(i), label);
            }
        }
    }
    total / b
}

/// Alignment loss: mean (over batch rows and selected concepts) binary
/// cross-entropy between `sigmoid(h_conc(f(x)))` and the annotations. Zero
/// under the ground-truth encoding, where `h_conc` is unused.
pub fn align_loss(model: &ExplanationModel, ds: &ProbeDataset, rows: &[usize]) -> f64 {
    assert!(!rows.is_empty(), "align_loss on empty batch");
    if model.encoding == Encoding::GroundTruthBinary || model.selected.is_empty() {
        return 0.0;
    }
    let denom = (rows.len() * model.selected.len()) as f64;
    let mut z = vec![0.0; model.num_concepts()];
    let mut total = 0.0;
    for &r in rows {
        model.h_conc.apply(ds.features.row(r), &mut z);
        let ann = ds.annotations.row(r);
        for &c in &model.selected {
            total += math::bce_with_logit(z[c], ann[c]);
        }
    }
    total / denom
}

/// Group-Lasso penalty: sum of squared column l2 norms over the `C - K`
/// columns with smallest squared norm, ties resolved toward lower index.
pub fn group_lasso_penalty(pred_weights: &Mat, k: usize) -> f64 {
    penalized_columns(pred_weights, k)
        .into_iter()
        .map(|(_, sq)| sq)
        .sum()
}

/// The `C - K` penalized columns as `(index, squared norm)` pairs.
pub fn penalized_columns(pred_weights: &Mat, k: usize) -> Vec<(usize, f64)> {
    let c = pred_weights.cols();
    assert!(k <= c, "K={k} exceeds concept count {c}");
    let norms = pred_weights.col_sq_norms();
    let mut order: Vec<usize> = (0..c).collect();
    // Stable by construction: equal norms keep ascending index order.
    order.sort_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap().then(a.cmp(&b)));
    order[..c - k].iter().map(|&i| (i, norms[i])).collect()
}

/// Full loss with its components.
pub fn total_loss(
    model: &ExplanationModel,
    ds: &ProbeDataset,
    rows: &[usize],
    lambda1: f64,
    lambda2: f64,
    reg_weight: f64,
    k: usize,
) -> LossBreakdown {
    let mimic = mimic_loss(model, ds, rows);
    let align = align_loss(model, ds, rows);
    let reg = group_lasso_penalty(&model.h_pred.weights, k);
    LossBreakdown {
        mimic,
        align,
        reg,
        total: lambda1 * mimic + lambda2 * align + reg_weight * reg,
        lambda1,
        lambda2,
        reg_weight,
    }
}

/// Analytic gradients of the total loss. The group-Lasso column membership is
/// held fixed at the current weights (subgradient at ties).
pub fn loss_gradients(
    model: &ExplanationModel,
    ds: &ProbeDataset,
    rows: &[usize],
    lambda1: f64,
    lambda2: f64,
    reg_weight: f64,
    k: usize,
) -> Gradients {
    loss_and_gradients(model, ds, rows, lambda1, lambda2, reg_weight, k).1
}

/// Loss breakdown and gradients in one pass over the batch.
pub fn loss_and_gradients(
    model: &ExplanationModel,
    ds: &ProbeDataset,
    rows: &[usize],
    lambda1: f64,
    lambda2: f64,
    reg_weight: f64,
    k: usize,
) -> (LossBreakdown, Gradients) {
    assert!(!rows.is_empty(), "empty batch");
    let b = rows.len();
    let b_f = b as f64;
    let n_c = model.num_concepts();
    let n_d = model.num_classes();
    let mask = model.selection_mask();
    let mut grads = Gradients::zeros(model);

    // Pre-activation concept scores (only meaningful for learned encodings).
    let mut z = Mat::zeros(b, n_c);
    if model.encoding != Encoding::GroundTruthBinary {
        for (i, &r) in rows.iter().enumerate() {
            model.h_conc.apply(ds.features.row(r), z.row_mut(i));
        }
    }
    // Encoded and masked concept activations.
    let mut masked = Mat::zeros(b, n_c);
    for i in 0..b {
        let row = masked.row_mut(i);
        match model.encoding {
            Encoding::GroundTruthBinary => {
                let ann = ds.annotations.row(rows[i]);
                for c in 0..n_c {
                    row[c] = if mask[c] { ann[c] } else { 0.0 };
                }
            }
            Encoding::Continuous => {
                for c in 0..n_c {
                    row[c] = if mask[c] { z.get(i, c) } else { 0.0 };
                }
            }
            Encoding::Probability => {
                for c in 0..n_c {
                    row[c] = if mask[c] { math::sigmoid(z.get(i, c)) } else { 0.0 };
                }
            }
        }
    }
    // Explanation logits.
    let mut logits = Mat::zeros(b, n_d);
    for i in 0..b {
        model.h_pred.apply(masked.row(i), logits.row_mut(i));
    }

    // Mimic value and dL/dlogits (already scaled by lambda1 / batch size).
    let mut mimic = 0.0;
    let mut dlogits = Mat::zeros(b, n_d);
    match model.faithfulness {
        Faithfulness::FullOutputs => {
            for (i, &r) in rows.iter().enumerate() {
                let target = ds.model_outputs.row(r);
                for d in 0..n_d {
                    let diff = logits.get(i, d) - target[d];
                    mimic += diff * diff;
                    dlogits.set(i, d, lambda1 * 2.0 * diff / b_f);
                }
            }
        }
        Faithfulness::PredictionOnly => {
            for (i, &r) in rows.iter().enumerate() {
                let label = argmax_row(ds.model_outputs.row(r));
                mimic -= math::log_softmax_at(logits.row(i), label);
                let mut probs = logits.row(i).to_vec();
                math::softmax_in_place(&mut probs);
                for d in 0..n_d {
                    let indicator = if d == label { 1.0 } else { 0.0 };
                    dlogits.set(i, d, lambda1 * (probs[d] - indicator) / b_f);
                }
            }
        }
    }
    mimic /= b_f;

    // h_pred gradients and backprop into the masked activations.
    let mut dmasked = Mat::zeros(b, n_c);
    for i in 0..b {
        let m_row = masked.row(i);
        for d in 0..n_d {
            let g = dlogits.get(i, d);
            if g == 0.0 {
                continue;
            }
            grads.pred_bias[d] += g;
            let w_row = grads.pred_weights.row_mut(d);
            for c in 0..n_c {
                w_row[c] += g * m_row[c];
            }
            let pred_row = model.h_pred.weights.row(d);
            let dm_row = dmasked.row_mut(i);
            for c in 0..n_c {
                dm_row[c] += g * pred_row[c];
            }
        }
    }

    // Alignment value plus its direct gradient on z, then the encoding
    // backprop from dmasked to z. Ground-truth encoding touches h_conc
    // nowhere, so its gradients stay exactly zero.
    let mut align = 0.0;
    if model.encoding != Encoding::GroundTruthBinary {
        let align_denom = (b * model.selected.len().max(1)) as f64;
        let mut dz = Mat::zeros(b, n_c);
        for (i, &r) in rows.iter().enumerate() {
            let ann = ds.annotations.row(r);
            for c in 0..n_c {
                let mut g = 0.0;
                if mask[c] {
                    let zv = z.get(i, c);
                    let s = math::sigmoid(zv);
                    align += math::bce_with_logit(zv, ann[c]);
                    g += lambda2 * (s - ann[c]) / align_denom;
                    let dm = dmasked.get(i, c);
                    match model.encoding {
                        Encoding::Continuous => g += dm,
                        Encoding::Probability => g += dm * s * (1.0 - s),
                        Encoding::GroundTruthBinary => unreachable!(),
                    }
                }
                dz.set(i, c, g);
            }
        }
        align /= align_denom;
        for (i, &r) in rows.iter().enumerate() {
            let x = ds.features.row(r);
            for c in 0..n_c {
                let g = dz.get(i, c);
                if g == 0.0 {
                    continue;
                }
                grads.conc_bias[c] += g;
                let row = grads.conc_weights.row_mut(c);
                for (j, &xj) in x.iter().enumerate() {
                    row[j] += g * xj;
                }
            }
        }
    }

    // Group-Lasso term: 2 * W on the penalized columns.
    let penalized = penalized_columns(&model.h_pred.weights, k);
    let mut reg = 0.0;
    for &(c, sq) in &penalized {
        reg += sq;
        for d in 0..n_d {
            let cur = grads.pred_weights.get(d, c);
            grads
                .pred_weights
                .set(d, c, cur + reg_weight * 2.0 * model.h_pred.weights.get(d, c));
        }
    }

    let breakdown = LossBreakdown {
        mimic,
        align,
        reg,
        total: lambda1 * mimic + lambda2 * align + reg_weight * reg,
        lambda1,
        lambda2,
        reg_weight,
    };
    (breakdown, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::string::String;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("{prefix}{i}")).collect()
    }

    fn random_dataset(rng: &mut Rng, n: usize, n_feat: usize, n_conc: usize, n_class: usize) -> ProbeDataset {
        let mut features = Mat::zeros(n, n_feat);
        let mut annotations = Mat::zeros(n, n_conc);
        let mut outputs = Mat::zeros(n, n_class);
        for r in 0..n {
            for c in 0..n_feat {
                features.set(r, c, rng.normal());
            }
            for c in 0..n_conc {
                annotations.set(r, c, if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
            }
            for c in 0..n_class {
                outputs.set(r, c, rng.normal());
            }
        }
        ProbeDataset::new(
            features,
            annotations,
            outputs,
            None,
            names("c", n_conc),
            names("k", n_class),
        )
        .unwrap()
    }

    fn random_model(
        rng: &mut Rng,
        n_feat: usize,
        n_conc: usize,
        n_class: usize,
        encoding: Encoding,
        faithfulness: Faithfulness,
    ) -> ExplanationModel {
        let mut h_conc = LinearMap::zeros(n_conc, n_feat);
        let mut h_pred = LinearMap::zeros(n_class, n_conc);
        for v in h_conc.weights.data_mut() {
            *v = rng.uniform_range(-0.8, 0.8);
        }
        for v in h_conc.bias.iter_mut() {
            *v = rng.uniform_range(-0.3, 0.3);
        }
        for v in h_pred.weights.data_mut() {
            *v = rng.uniform_range(-0.8, 0.8);
        }
        for v in h_pred.bias.iter_mut() {
            *v = rng.uniform_range(-0.3, 0.3);
        }
        ExplanationModel::new_full(h_conc, h_pred, encoding, faithfulness)
    }

    #[test]
    fn encode_identity_continuous() {
        let mut ds = random_dataset(&mut Rng::from_seed(0), 1, 2, 2, 2);
        ds.features.set(0, 0, 2.0);
        ds.features.set(0, 1, -1.0);
        let model = ExplanationModel::new_full(
            LinearMap::identity(2),
            LinearMap::identity(2),
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        let enc = encode_concepts(&model, &ds, &[0]);
        assert_eq!(enc.row(0), &[2.0, -1.0]);
    }

    #[test]
    fn encode_probability_zero_logit_is_half() {
        let ds = random_dataset(&mut Rng::from_seed(0), 1, 2, 2, 2);
        let model = ExplanationModel::new_full(
            LinearMap::zeros(2, 2),
            LinearMap::identity(2),
            Encoding::Probability,
            Faithfulness::FullOutputs,
        );
        let enc = encode_concepts(&model, &ds, &[0]);
        assert_eq!(enc.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn encode_ground_truth_casts_annotations() {
        let mut ds = random_dataset(&mut Rng::from_seed(0), 1, 2, 3, 2);
        ds.annotations.row_mut(0).copy_from_slice(&[1.0, 0.0, 1.0]);
        let model = ExplanationModel::new_full(
            LinearMap::zeros(3, 2),
            LinearMap::zeros(2, 3),
            Encoding::GroundTruthBinary,
            Faithfulness::FullOutputs,
        );
        let enc = encode_concepts(&model, &ds, &[0]);
        assert_eq!(enc.row(0), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn forward_constant_map_returns_bias() {
        let ds = random_dataset(&mut Rng::from_seed(1), 4, 3, 2, 2);
        let mut h_pred = LinearMap::zeros(2, 2);
        h_pred.bias = alloc::vec![0.7, -0.2];
        let model = ExplanationModel::new_full(
            LinearMap::zeros(2, 3),
            h_pred,
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        let out = explanation_forward(&model, &ds, &[0, 1, 2, 3]);
        for i in 0..4 {
            assert_eq!(out.row(i), &[0.7, -0.2]);
        }
    }

    #[test]
    fn forward_identity_composition() {
        let ds = random_dataset(&mut Rng::from_seed(2), 5, 3, 3, 3);
        let model = ExplanationModel::new_full(
            LinearMap::identity(3),
            LinearMap::identity(3),
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        let enc = encode_concepts(&model, &ds, &[0, 1, 2, 3, 4]);
        let out = explanation_forward(&model, &ds, &[0, 1, 2, 3, 4]);
        assert_eq!(enc, out);
    }

    #[test]
    fn forward_matches_dense_matmul_oracle() {
        let mut rng = Rng::from_seed(3);
        let ds = random_dataset(&mut rng, 6, 4, 3, 2);
        let mut model = random_model(&mut rng, 4, 3, 2, Encoding::Continuous, Faithfulness::FullOutputs);
        model.selected = alloc::vec![0, 2];
        let rows = alloc::vec![0, 2, 5];
        let out = explanation_forward(&model, &ds, &rows);
        for (i, &r) in rows.iter().enumerate() {
            // Independent dense composition, scalar loops.
            let x = ds.features.row(r);
            let mut enc = [0.0; 3];
            for c in 0..3 {
                enc[c] = model.h_conc.bias[c];
                for j in 0..4 {
                    enc[c] += model.h_conc.weights.get(c, j) * x[j];
                }
            }
            enc[1] = 0.0; // not selected
            for d in 0..2 {
                let mut y = model.h_pred.bias[d];
                for c in 0..3 {
                    y += model.h_pred.weights.get(d, c) * enc[c];
                }
                assert!((out.get(i, d) - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coordinates_outside_s_never_influence_output() {
        let mut rng = Rng::from_seed(4);
        let ds = random_dataset(&mut rng, 5, 3, 4, 2);
        let mut model = random_model(&mut rng, 3, 4, 2, Encoding::Continuous, Faithfulness::FullOutputs);
        model.selected = alloc::vec![1, 3];
        let before = explanation_forward(&model, &ds, &[0, 1, 2, 3, 4]);
        // Perturb h_conc rows outside S; the output must not move.
        for v in model.h_conc.weights.row_mut(0) {
            *v += 10.0;
        }
        model.h_conc.bias[2] -= 5.0;
        let after = explanation_forward(&model, &ds, &[0, 1, 2, 3, 4]);
        assert_eq!(before, after);
    }

    #[test]
    fn mimic_perfect_is_zero() {
        let mut rng = Rng::from_seed(5);
        let mut ds = random_dataset(&mut rng, 4, 3, 3, 2);
        let model = random_model(&mut rng, 3, 3, 2, Encoding::Continuous, Faithfulness::FullOutputs);
        let rows = alloc::vec![0, 1, 2, 3];
        let logits = explanation_forward(&model, &ds, &rows);
        for (i, &r) in rows.iter().enumerate() {
            ds.model_outputs.row_mut(r).copy_from_slice(logits.row(i));
        }
        assert!(mimic_loss(&model, &ds, &rows) < 1e-18);
    }

    #[test]
    fn mimic_uniform_softmax_is_ln2() {
        let mut rng = Rng::from_seed(6);
        let mut ds = random_dataset(&mut rng, 1, 3, 2, 2);
        ds.model_outputs.row_mut(0).copy_from_slice(&[1.0, 0.0]); // label 0
        let model = ExplanationModel::new_full(
            LinearMap::zeros(2, 3),
            LinearMap::zeros(2, 2),
            Encoding::Continuous,
            Faithfulness::PredictionOnly,
        );
        let loss = mimic_loss(&model, &ds, &[0]);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mimic_matches_per_row_oracle() {
        let mut rng = Rng::from_seed(7);
        let ds = random_dataset(&mut rng, 8, 4, 3, 3);
        for faith in [Faithfulness::FullOutputs, Faithfulness::PredictionOnly] {
            let model = random_model(&mut rng, 4, 3, 3, Encoding::Probability, faith);
            let rows = all_rows(&ds);
            let loss = mimic_loss(&model, &ds, &rows);
            let logits = explanation_forward(&model, &ds, &rows);
            let mut expected = 0.0;
            for (i, &r) in rows.iter().enumerate() {
                match faith {
                    Faithfulness::FullOutputs => {
                        let mut sq = 0.0;
                        for d in 0..3 {
                            let diff = logits.get(i, d) - ds.model_outputs.get(r, d);
                            sq += diff * diff;
                        }
                        expected += sq;
                    }
                    Faithfulness::PredictionOnly => {
                        let label = argmax_row(ds.model_outputs.row(r));
                        let mut probs = logits.row(i).to_vec();
                        math::softmax_in_place(&mut probs);
                        expected -= math::ln(probs[label]);
                    }
                }
            }
            expected /= rows.len() as f64;
            assert!((loss - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn align_zero_logit_single_concept_is_ln2() {
        let mut rng = Rng::from_seed(8);
        let mut ds = random_dataset(&mut rng, 1, 2, 1, 2);
        ds.annotations.set(0, 0, 1.0);
        let model = ExplanationModel::new_full(
            LinearMap::zeros(1, 2),
            LinearMap::zeros(2, 1),
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        let loss = align_loss(&model, &ds, &[0]);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn align_saturated_logits_vanish() {
        let mut rng = Rng::from_seed(9);
        let mut ds = random_dataset(&mut rng, 3, 1, 2, 2);
        for r in 0..3 {
            ds.features.set(r, 0, 1.0);
            ds.annotations.set(r, 0, 1.0);
            ds.annotations.set(r, 1, 0.0);
        }
        let mut h_conc = LinearMap::zeros(2, 1);
        h_conc.weights.set(0, 0, 50.0);
        h_conc.weights.set(1, 0, -50.0);
        let model = ExplanationModel::new_full(
            h_conc,
            LinearMap::zeros(2, 2),
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        assert!(align_loss(&model, &ds, &[0, 1, 2]) < 1e-9);
    }

    #[test]
    fn align_matches_scalar_bce_oracle() {
        let mut rng = Rng::from_seed(10);
        let ds = random_dataset(&mut rng, 5, 4, 3, 2);
        let model = random_model(&mut rng, 4, 3, 2, Encoding::Continuous, Faithfulness::FullOutputs);
        let rows = all_rows(&ds);
        let loss = align_loss(&model, &ds, &rows);
        let mut expected = 0.0;
        for &r in &rows {
            for c in 0..3 {
                let mut zc = model.h_conc.bias[c];
                for j in 0..4 {
                    zc += model.h_conc.weights.get(c, j) * ds.features.get(r, j);
                }
                let s = math::sigmoid(zc);
                let a = ds.annotations.get(r, c);
                expected += -(a * math::ln(s) + (1.0 - a) * math::ln(1.0 - s));
            }
        }
        expected /= (rows.len() * 3) as f64;
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn align_is_zero_under_ground_truth_encoding() {
        let mut rng = Rng::from_seed(11);
        let ds = random_dataset(&mut rng, 4, 3, 3, 2);
        let model = random_model(&mut rng, 3, 3, 2, Encoding::GroundTruthBinary, Faithfulness::FullOutputs);
        assert_eq!(align_loss(&model, &ds, &all_rows(&ds)), 0.0);
    }

    #[test]
    fn group_lasso_planted_zero_column() {
        let w = Mat::from_vec(2, 2, alloc::vec![3.0, 0.0, 4.0, 0.0]);
        assert_eq!(group_lasso_penalty(&w, 1), 0.0);
    }

    #[test]
    fn group_lasso_hand_computed() {
        let w = Mat::from_vec(2, 3, alloc::vec![1.0, 0.0, 2.0, 0.0, 1.0, 2.0]);
        assert_eq!(group_lasso_penalty(&w, 1), 2.0);
    }

    #[test]
    fn group_lasso_matches_sort_oracle() {
        let mut rng = Rng::from_seed(12);
        let mut w = Mat::zeros(4, 6);
        for v in w.data_mut() {
            *v = rng.normal();
        }
        let k = 2;
        let got = group_lasso_penalty(&w, k);
        let mut norms = w.col_sq_norms();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: f64 = norms[..6 - k].iter().sum();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn group_lasso_extremes() {
        let mut rng = Rng::from_seed(13);
        let mut w = Mat::zeros(3, 4);
        for v in w.data_mut() {
            *v = rng.normal();
        }
        assert_eq!(group_lasso_penalty(&w, 4), 0.0);
        let frob: f64 = w.data().iter().map(|v| v * v).sum();
        assert!((group_lasso_penalty(&w, 0) - frob).abs() < 1e-12);
    }

    #[test]
    fn group_lasso_column_permutation_invariant() {
        let mut rng = Rng::from_seed(14);
        let mut w = Mat::zeros(3, 5);
        for v in w.data_mut() {
            *v = rng.normal();
        }
        let perm = [4, 2, 0, 1, 3];
        let wp = w.select_cols(&perm);
        for k in 0..=5 {
            assert!((group_lasso_penalty(&w, k) - group_lasso_penalty(&wp, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_breakdown_identity() {
        let mut rng = Rng::from_seed(15);
        let ds = random_dataset(&mut rng, 6, 3, 4, 3);
        for encoding in [Encoding::Continuous, Encoding::Probability, Encoding::GroundTruthBinary] {
            let model = random_model(&mut rng, 3, 4, 3, encoding, Faithfulness::PredictionOnly);
            let bd = total_loss(&model, &ds, &all_rows(&ds), 0.7, 0.3, 0.2, 2);
            let recomposed = 0.7 * bd.mimic + 0.3 * bd.align + 0.2 * bd.reg;
            assert!((bd.total - recomposed).abs() < 1e-9);
        }
    }

    #[test]
    fn total_loss_single_term_cases() {
        let mut rng = Rng::from_seed(16);
        let ds = random_dataset(&mut rng, 5, 3, 3, 2);
        let model = random_model(&mut rng, 3, 3, 2, Encoding::Continuous, Faithfulness::FullOutputs);
        let bd = total_loss(&model, &ds, &all_rows(&ds), 2.0, 0.0, 0.0, 1);
        assert!((bd.total - 2.0 * bd.mimic).abs() < 1e-12);

        let gt = random_model(&mut rng, 3, 3, 2, Encoding::GroundTruthBinary, Faithfulness::FullOutputs);
        let bd = total_loss(&gt, &ds, &all_rows(&ds), 0.0, 0.5, 0.4, 1);
        assert_eq!(bd.align, 0.0);
        assert!((bd.total - 0.4 * bd.reg).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_encoding_has_zero_conc_gradient() {
        let mut rng = Rng::from_seed(17);
        let ds = random_dataset(&mut rng, 6, 3, 3, 2);
        let model = random_model(&mut rng, 3, 3, 2, Encoding::GroundTruthBinary, Faithfulness::FullOutputs);
        let grads = loss_gradients(&model, &ds, &all_rows(&ds), 1.0, 0.5, 0.3, 1);
        assert!(grads.conc_weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.conc_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_regime_gradient() {
        // Zero weights and zero features: the h_pred bias gradient is the
        // plain mean residual derivative of the bias alone.
        let mut rng = Rng::from_seed(18);
        let mut ds = random_dataset(&mut rng, 3, 2, 2, 2);
        for r in 0..3 {
            for j in 0..2 {
                ds.features.set(r, j, 0.0);
            }
        }
        let model = ExplanationModel::new_full(
            LinearMap::zeros(2, 2),
            LinearMap::zeros(2, 2),
            Encoding::Continuous,
            Faithfulness::FullOutputs,
        );
        let grads = loss_gradients(&model, &ds, &[0, 1, 2], 1.0, 0.0, 0.0, 2);
        for d in 0..2 {
            let mut expected = 0.0;
            for r in 0..3 {
                expected += 2.0 * (0.0 - ds.model_outputs.get(r, d)) / 3.0;
            }
            assert!((grads.pred_bias[d] - expected).abs() < 1e-12);
        }
    }

    /// Central finite differences over every parameter of both maps.
    fn check_gradients(encoding: Encoding, faithfulness: Faithfulness, seed: u64) {
        let mut rng = Rng::from_seed(seed);
        let ds = random_dataset(&mut rng, 7, 3, 4, 3);
        let model = random_model(&mut rng, 3, 4, 3, encoding, faithfulness);
        let rows = all_rows(&ds);
        let (l1, l2, rw, k) = (1.0, 0.4, 0.3, 2);
        let grads = loss_gradients(&model, &ds, &rows, l1, l2, rw, k);
        let h = 1e-4;

        let eval = |m: &ExplanationModel| total_loss(m, &ds, &rows, l1, l2, rw, k).total;
        let check = |analytic: f64, mut plus: ExplanationModel, mut minus: ExplanationModel, idx: (u8, usize)| {
            match idx.0 {
                0 => {
                    plus.h_conc.weights.data_mut()[idx.1] += h;
                    minus.h_conc.weights.data_mut()[idx.1] -= h;
                }
                1 => {
                    plus.h_conc.bias[idx.1] += h;
                    minus.h_conc.bias[idx.1] -= h;
                }
                2 => {
                    plus.h_pred.weights.data_mut()[idx.1] += h;
                    minus.h_pred.weights.data_mut()[idx.1] -= h;
                }
                _ => {
                    plus.h_pred.bias[idx.1] += h;
                    minus.h_pred.bias[idx.1] -= h;
                }
            }
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "{encoding:?}/{faithfulness:?} param {idx:?}: analytic {analytic} vs numeric {numeric}"
            );
        };
        for i in 0..model.h_conc.weights.data().len() {
            check(grads.conc_weights.data()[i], model.clone(), model.clone(), (0, i));
        }
        for i in 0..model.h_conc.bias.len() {
            check(grads.conc_bias[i], model.clone(), model.clone(), (1, i));
        }
        for i in 0..model.h_pred.weights.data().len() {
            check(grads.pred_weights.data()[i], model.clone(), model.clone(), (2, i));
        }
        for i in 0..model.h_pred.bias.len() {
            check(grads.pred_bias[i], model.clone(), model.clone(), (3, i));
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_settings() {
        let mut seed = 100;
        for encoding in [Encoding::Continuous, Encoding::Probability, Encoding::GroundTruthBinary] {
            for faithfulness in [Faithfulness::FullOutputs, Faithfulness::PredictionOnly] {
                check_gradients(encoding, faithfulness, seed);
                seed += 1;
            }
        }
    }
}
