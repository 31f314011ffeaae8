//! Minibatch Adam training of the explanation objective with a ramped
//! group-Lasso schedule, hard concept selection, and the lambda2 sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::ProbeDataset;
use crate::evaluation;
use crate::math;
use crate::matrix::Mat;
use crate::objectives::{
    loss_and_gradients, Encoding, ExplanationModel, Faithfulness, LinearMap, LossBreakdown,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("K={k} exceeds concept count {concepts}")]
    KTooLarge { k: usize, concepts: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFinite { epoch: usize, component: &'static str },
}

/// Training hyperparameters. Defaults follow the standard recipe: 5000
/// epochs, batch 1024, Adam at 1e-3, lambda2 swept over six candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2_candidates: Vec<f64>,
    pub k: usize,
    pub reg_max_weight: f64,
    /// Fractions of training at which the regularization weight ramps from 0
    /// to `reg_max_weight`.
    pub reg_ramp: (f64, f64),
    pub seed: u64,
    /// Re-optimize `h_pred` over the selected columns after hard zeroing.
    pub refit: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            batch_size: 1024,
            learning_rate: 1e-3,
            lambda1: 1.0,
            lambda2_candidates: vec![1.0, 0.5, 0.1, 0.05, 0.01, 0.005],
            k: 16,
            reg_max_weight: 1.0,
            reg_ramp: (0.2, 0.8),
            seed: 0,
            refit: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive"));
        }
        if self.k == 0 {
            return Err(TrainError::InvalidConfig("K must be positive"));
        }
        let (start, end) = self.reg_ramp;
        if !(0.0..1.0).contains(&start) || start >= end || end > 1.0 {
            return Err(TrainError::InvalidConfig("reg ramp must satisfy 0 <= start < end <= 1"));
        }
        if self.lambda2_candidates.is_empty() {
            return Err(TrainError::InvalidConfig("lambda2 candidates must be nonempty"));
        }
        Ok(())
    }
}

/// Group-Lasso weight at a given epoch: zero before the ramp, linear across
/// it, constant at `reg_max_weight` after.
pub fn regularization_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let t = if config.epochs <= 1 {
        1.0
    } else {
        epoch as f64 / (config.epochs - 1) as f64
    };
    let (start, end) = config.reg_ramp;
    if t < start {
        0.0
    } else if t >= end {
        config.reg_max_weight
    } else {
        config.reg_max_weight * (t - start) / (end - start)
    }
}

/// Per-tensor Adam first/second moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update. `t` is the 1-based global step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    debug_assert!(t >= 1);
    debug_assert_eq!(params.len(), grads.len());
    let bc1 = 1.0 - math::powi(beta1, t);
    let bc2 = 1.0 - math::powi(beta2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
    }
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Per-epoch loss breakdown, averaged over the epoch's batches. Length
    /// equals `config.epochs`; the refit phase is not traced.
    pub trace: Vec<LossBreakdown>,
    pub selected: Vec<usize>,
    pub val_accuracy: Option<f64>,
    /// Filled in by callers that can measure time; zero otherwise.
    pub wall_clock_secs: f64,
    pub lambda2: f64,
}

/// Extra knobs for the prior-method variants.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Clamp `h_pred` weights at zero after every optimizer step.
    pub nonneg_pred: bool,
}

/// The K columns of `pred_weights` with largest squared norm, ties toward
/// lower index, returned in ascending index order.
pub fn select_concepts(pred_weights: &Mat, k: usize) -> Vec<usize> {
    let c = pred_weights.cols();
    assert!(k <= c, "K={k} exceeds concept count {c}");
    let norms = pred_weights.col_sq_norms();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Train an explanation for one (encoding, faithfulness) setting at a fixed
/// lambda2. Deterministic in `config.seed`.
pub fn train_explanation(
    train: &ProbeDataset,
    config: &TrainConfig,
    encoding: Encoding,
    faithfulness: Faithfulness,
    lambda2: f64,
) -> Result<(ExplanationModel, TrainReport), TrainError> {
    train_with_options(train, config, encoding, faithfulness, lambda2, FitOptions::default(), &mut |_| {})
}

/// As `train_explanation`, with variant options and a hook invoked after
/// every optimizer step (used to audit mid-training invariants).
pub fn train_with_options(
    train: &ProbeDataset,
    config: &TrainConfig,
    encoding: Encoding,
    faithfulness: Faithfulness,
    lambda2: f64,
    opts: FitOptions,
    step_hook: &mut dyn FnMut(&ExplanationModel),
) -> Result<(ExplanationModel, TrainReport), TrainError> {
    config.validate()?;
    let n = train.num_samples();
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let n_feat = train.num_features();
    let n_conc = train.num_concepts();
    let n_class = train.num_classes();
    if config.k > n_conc {
        return Err(TrainError::KTooLarge { k: config.k, concepts: n_conc });
    }

    let mut rng = Rng::from_seed(config.seed);
    let mut model = ExplanationModel::new_full(
        init_linear(&mut rng, n_conc, n_feat),
        init_linear(&mut rng, n_class, n_conc),
        encoding,
        faithfulness,
    );

    let mut opt = Optimizer::new(&model, config);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut indices);
        let reg_weight = regularization_schedule(epoch, config);
        let mut epoch_loss = LossBreakdown {
            mimic: 0.0,
            align: 0.0,
            reg: 0.0,
            total: 0.0,
            lambda1: config.lambda1,
            lambda2,
            reg_weight,
        };
        for batch in indices.chunks(config.batch_size) {
            let (bd, grads) = loss_and_gradients(
                &model,
                train,
                batch,
                config.lambda1,
                lambda2,
                reg_weight,
                config.k,
            );
            if !bd.total.is_finite() {
                let component = if !bd.mimic.is_finite() {
                    "mimic"
                } else if !bd.align.is_finite() {
                    "align"
                } else {
                    "reg"
                };
                return Err(TrainError::NonFinite { epoch, component });
            }
            let w = batch.len() as f64 / n as f64;
            epoch_loss.mimic += w * bd.mimic;
            epoch_loss.align += w * bd.align;
            epoch_loss.reg += w * bd.reg;
            epoch_loss.total += w * bd.total;
            opt.step(&mut model, &grads, config, opts);
            step_hook(&model);
        }
        trace.push(epoch_loss);
    }

    // Finalize the selection: keep the K largest columns, zero the rest.
    let selected = select_concepts(&model.h_pred.weights, config.k);
    zero_unselected(&mut model.h_pred.weights, &selected);
    model.selected = selected.clone();

    // Optional refit of h_pred over the surviving columns, reg weight 0,
    // h_conc frozen.
    let refit_epochs = config.epochs / 10;
    if config.refit && refit_epochs > 0 {
        let mut opt = Optimizer::new(&model, config);
        for _ in 0..refit_epochs {
            rng.shuffle(&mut indices);
            for batch in indices.chunks(config.batch_size) {
                let (_, grads) = loss_and_gradients(
                    &model,
                    train,
                    batch,
                    config.lambda1,
                    lambda2,
                    0.0,
                    config.k,
                );
                opt.step_pred_only(&mut model, &grads, config, opts);
                zero_unselected(&mut model.h_pred.weights, &model.selected);
                step_hook(&model);
            }
        }
    }

    let report = TrainReport {
        trace,
        selected,
        val_accuracy: None,
        wall_clock_secs: 0.0,
        lambda2,
    };
    Ok((model, report))
}

/// One entry of a lambda2 sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub lambda2: f64,
    pub val_accuracy: f64,
    pub report: TrainReport,
}

/// Train once per lambda2 candidate (seed offset by candidate index) and keep
/// the model with the best validation explanation accuracy, ties toward the
/// larger lambda2. Under the ground-truth encoding the align term is vacuous,
/// so the sweep degenerates to a single run at the first candidate.
pub fn sweep_lambda2(
    train: &ProbeDataset,
    val: &ProbeDataset,
    config: &TrainConfig,
    encoding: Encoding,
    faithfulness: Faithfulness,
) -> Result<(ExplanationModel, Vec<SweepEntry>), TrainError> {
    config.validate()?;
    let candidates: Vec<f64> = if encoding == Encoding::GroundTruthBinary {
        vec![config.lambda2_candidates[0]]
    } else {
        config.lambda2_candidates.clone()
    };
    let mut best: Option<(ExplanationModel, f64, f64)> = None;
    let mut entries = Vec::with_capacity(candidates.len());
    for (i, &lambda2) in candidates.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        let (model, mut report) = train_explanation(train, &cfg, encoding, faithfulness, lambda2)?;
        let acc = evaluation::explanation_accuracy(&model, val);
        report.val_accuracy = Some(acc);
        let replace = match &best {
            None => true,
            Some((_, best_acc, best_l2)) => {
                acc > *best_acc || (acc == *best_acc && lambda2 > *best_l2)
            }
        };
        if replace {
            best = Some((model, acc, lambda2));
        }
        entries.push(SweepEntry {
            lambda2,
            val_accuracy: acc,
            report,
        });
    }
    let (model, _, _) = best.expect("candidates nonempty");
    Ok((model, entries))
}

fn init_linear(rng: &mut Rng, out_dim: usize, in_dim: usize) -> LinearMap {
    let bound = 1.0 / math::sqrt(in_dim as f64);
    let mut map = LinearMap::zeros(out_dim, in_dim);
    for v in map.weights.data_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    map
}

fn zero_unselected(weights: &mut Mat, selected: &[usize]) {
    let cols = weights.cols();
    let mut keep = vec![false; cols];
    for &c in selected {
        keep[c] = true;
    }
    for r in 0..weights.rows() {
        let row = weights.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            if !keep[c] {
                *v = 0.0;
            }
        }
    }
}

struct Optimizer {
    conc_w: AdamState,
    conc_b: AdamState,
    pred_w: AdamState,
    pred_b: AdamState,
    t: u64,
}

impl Optimizer {
    fn new(model: &ExplanationModel, _config: &TrainConfig) -> Self {
        Optimizer {
            conc_w: AdamState::new(model.h_conc.weights.data().len()),
            conc_b: AdamState::new(model.h_conc.bias.len()),
            pred_w: AdamState::new(model.h_pred.weights.data().len()),
            pred_b: AdamState::new(model.h_pred.bias.len()),
            t: 0,
        }
    }

    fn step(
        &mut self,
        model: &mut ExplanationModel,
        grads: &crate::objectives::Gradients,
        config: &TrainConfig,
        opts: FitOptions,
    ) {
        self.t += 1;
        adam_step(
            model.h_conc.weights.data_mut(),
            grads.conc_weights.data(),
            &mut self.conc_w,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            self.t,
        );
        adam_step(
            &mut model.h_conc.bias,
            &grads.conc_bias,
            &mut self.conc_b,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            self.t,
        );
        self.step_pred_tensors(model, grads, config, opts);
    }

    fn step_pred_only(
        &mut self,
        model: &mut ExplanationModel,
        grads: &crate::objectives::Gradients,
        config: &TrainConfig,
        opts: FitOptions,
    ) {
        self.t += 1;
        self.step_pred_tensors(model, grads, config, opts);
    }

    fn step_pred_tensors(
        &mut self,
        model: &mut ExplanationModel,
        grads: &crate::objectives::Gradients,
        config: &TrainConfig,
        opts: FitOptions,
    ) {
        adam_step(
            model.h_pred.weights.data_mut(),
            grads.pred_weights.data(),
            &mut self.pred_w,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            self.t,
        );
        adam_step(
            &mut model.h_pred.bias,
            &grads.pred_bias,
            &mut self.pred_b,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            self.t,
        );
        if opts.nonneg_pred {
            for v in model.h_pred.weights.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}
