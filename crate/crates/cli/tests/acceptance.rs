//! Acceptance suite: ten criteria, one test each, printing one pass/fail
//! line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cbe_core::concept_prep::{greedy_decorrelate, ground_truth_scores, pearson_matrix};
use cbe_core::dataset::{split_dataset, SplitSpec};
use cbe_core::evaluation::{l2_gap, normalized_ap, roc_auc};
use cbe_core::objectives::{
    all_rows, loss_gradients, mimic_loss, total_loss, Encoding, ExplanationModel, Faithfulness,
    LinearMap,
};
use cbe_core::rng::Rng;
use cbe_core::synth::{generate, recovery_score, SynthParams};
use cbe_core::trainer::{train_explanation, train_with_options, FitOptions, TrainConfig};
use cbe_core::variants::{
    alignment_only_fit, elude_fit, ibd_fit_with_hook, netdissect_iou, top_quantile_threshold,
    AlignmentMode, AlignmentOnlyResult, RegionAlignmentData,
};
use cbe_core::{Mat, ProbeDataset};

fn report(criterion: &str, ok: bool) {
    eprintln!("acceptance criterion {criterion}: {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance criterion {criterion} failed");
}

fn desk_params(seed: u64) -> SynthParams {
    SynthParams {
        n_samples: 5000,
        n_features: 32,
        n_concepts: 40,
        n_classes: 10,
        k_star: 8,
        base_rates: vec![0.3; 40],
        feature_noise_sigma: 0.0,
        output_noise_sigma: 0.01,
        feature_linked_outputs: false,
        seed,
    }
}

#[test]
fn criterion_01_planted_recovery() {
    let mut successes = 0;
    let mut within_budget = true;
    for seed in 0..10u64 {
        let (ds, gt) = generate(&desk_params(1000 + seed));
        let config = TrainConfig {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-2,
            k: 8,
            seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let (model, _) = train_explanation(
            &ds,
            &config,
            Encoding::GroundTruthBinary,
            Faithfulness::FullOutputs,
            0.1,
        )
        .unwrap();
        if start.elapsed().as_secs_f64() >= 120.0 {
            within_budget = false;
        }
        if recovery_score(&model, &gt) >= 7.0 / 8.0 {
            successes += 1;
        }
    }
    report("1 (planted recovery)", successes >= 9 && within_budget);
}

#[test]
fn criterion_02_tradeoff_trend() {
    let levels = [Encoding::Continuous, Encoding::Probability, Encoding::GroundTruthBinary];
    let faiths = [Faithfulness::FullOutputs, Faithfulness::PredictionOnly];
    // Count, per comparison, how many seeds satisfy it.
    let mut order_holds = [0usize; 2]; // U <= UU <= UUU per faithfulness column
    let mut row_holds = [0usize; 3]; // FF <= F per understandability row
    let seeds = 10u64;
    for seed in 0..seeds {
        let params = SynthParams {
            feature_noise_sigma: 0.5,
            feature_linked_outputs: true,
            ..desk_params(2000 + seed)
        };
        let (raw, _) = generate(&params);
        // Sharpen the black box: a near-uniform target softmax would make the
        // prediction-only column reward under-confidence instead of fidelity.
        let mut outputs = raw.model_outputs.clone();
        for v in outputs.data_mut() {
            *v *= 4.0;
        }
        let ds = ProbeDataset::new(
            raw.features.clone(),
            raw.annotations.clone(),
            outputs,
            None,
            raw.concept_names.clone(),
            raw.class_names.clone(),
        )
        .unwrap();
        let spec = SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap();
        let (train, _, test) = split_dataset(&ds, &spec).unwrap();
        // gaps[level][faith]
        let mut gaps = [[0.0f64; 2]; 3];
        for (li, &encoding) in levels.iter().enumerate() {
            for (fi, &faithfulness) in faiths.iter().enumerate() {
                let config = TrainConfig {
                    epochs: 800,
                    batch_size: 1024,
                    learning_rate: 2e-2,
                    k: 8,
                    seed,
                    ..TrainConfig::default()
                };
                let (model, _) =
                    train_explanation(&train, &config, encoding, faithfulness, 0.05).unwrap();
                gaps[li][fi] = l2_gap(&model, &test);
            }
        }
        for fi in 0..2 {
            if gaps[0][fi] <= gaps[1][fi] && gaps[1][fi] <= gaps[2][fi] {
                order_holds[fi] += 1;
            }
        }
        for li in 0..3 {
            if gaps[li][0] <= gaps[li][1] {
                row_holds[li] += 1;
            }
        }
    }
    eprintln!(
        "criterion 2 detail: ordering held {:?}/10 per column, ff<=f held {:?}/10 per row",
        order_holds, row_holds
    );
    let ok = order_holds.iter().all(|&c| c >= 8) && row_holds.iter().all(|&c| c >= 8);
    report("2 (tradeoff trend)", ok);
}

#[test]
fn criterion_03_exact_sparsity() {
    let mut rng = Rng::from_seed(300);
    let mut ok = true;
    for trial in 0..20u64 {
        let c = 5 + rng.below(10) as usize;
        let k = 1 + rng.below(c);
        let params = SynthParams {
            n_samples: 60 + rng.below(60) as usize,
            n_features: 3 + rng.below(5) as usize,
            n_concepts: c,
            n_classes: 2 + rng.below(3) as usize,
            k_star: k.min(c),
            base_rates: vec![0.4; c],
            feature_noise_sigma: 0.2,
            output_noise_sigma: 0.1,
            feature_linked_outputs: false,
            seed: 3000 + trial,
        };
        let (ds, _) = generate(&params);
        let encoding = match rng.below(3) {
            0 => Encoding::Continuous,
            1 => Encoding::Probability,
            _ => Encoding::GroundTruthBinary,
        };
        let faithfulness = if rng.bernoulli(0.5) {
            Faithfulness::FullOutputs
        } else {
            Faithfulness::PredictionOnly
        };
        let config = TrainConfig {
            epochs: 5 + rng.below(20) as usize,
            batch_size: 32,
            learning_rate: 1e-2,
            k,
            seed: trial,
            refit: rng.bernoulli(0.5),
            ..TrainConfig::default()
        };
        let (model, _) = train_explanation(&ds, &config, encoding, faithfulness, 0.1).unwrap();
        let norms = model.h_pred.weights.col_sq_norms();
        let zero_cols = norms.iter().filter(|&&v| v == 0.0).count();
        if zero_cols != c - k || model.selected.len() != k {
            ok = false;
        }
    }
    report("3 (exact sparsity)", ok);
}

fn random_instance(rng: &mut Rng) -> (ProbeDataset, ExplanationModel, usize) {
    let n = 4 + rng.below(4) as usize;
    let n_feat = 1 + rng.below(5) as usize;
    let c = 2 + rng.below(4) as usize;
    let d = 1 + rng.below(5) as usize;
    let mut features = Mat::zeros(n, n_feat);
    for v in features.data_mut() {
        *v = rng.normal();
    }
    let mut ann = Mat::zeros(n, c);
    for v in ann.data_mut() {
        *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
    }
    let mut outputs = Mat::zeros(n, d);
    for v in outputs.data_mut() {
        *v = rng.normal();
    }
    let ds = ProbeDataset::new(
        features,
        ann,
        outputs,
        None,
        (0..c).map(|i| format!("c{i}")).collect(),
        (0..d).map(|i| format!("k{i}")).collect(),
    )
    .unwrap();
    let mut h_conc = LinearMap::zeros(c, n_feat);
    for v in h_conc.weights.data_mut() {
        *v = rng.normal();
    }
    for v in h_conc.bias.iter_mut() {
        *v = 0.3 * rng.normal();
    }
    let mut h_pred = LinearMap::zeros(d, c);
    for v in h_pred.weights.data_mut() {
        *v = rng.normal();
    }
    for v in h_pred.bias.iter_mut() {
        *v = 0.3 * rng.normal();
    }
    let k = 1 + rng.below(c);
    let model = ExplanationModel::new_full(h_conc, h_pred, Encoding::Continuous, Faithfulness::FullOutputs);
    (ds, model, k)
}

/// Gap between the K-th and (K+1)-th smallest squared column norms; tiny
/// gaps make group-Lasso membership unstable under perturbation.
fn membership_gap(weights: &Mat, k: usize) -> f64 {
    let mut norms = weights.col_sq_norms();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let boundary = norms.len() - k;
    if boundary == 0 || boundary == norms.len() {
        f64::INFINITY
    } else {
        norms[boundary] - norms[boundary - 1]
    }
}

#[test]
fn criterion_04_gradient_check() {
    let pairs = [
        (Encoding::GroundTruthBinary, Faithfulness::FullOutputs),
        (Encoding::GroundTruthBinary, Faithfulness::PredictionOnly),
        (Encoding::Probability, Faithfulness::FullOutputs),
        (Encoding::Probability, Faithfulness::PredictionOnly),
        (Encoding::Continuous, Faithfulness::FullOutputs),
        (Encoding::Continuous, Faithfulness::PredictionOnly),
    ];
    let h = 1e-4;
    let mut rng = Rng::from_seed(400);
    let mut ok = true;
    let mut checked = 0;
    while checked < 50 {
        let (ds, base, k) = random_instance(&mut rng);
        if membership_gap(&base.h_pred.weights, k) < 1e-2 {
            continue;
        }
        checked += 1;
        let rows = all_rows(&ds);
        let (lambda1, lambda2, reg_weight) = (1.0, 0.7, 0.4);
        for &(encoding, faithfulness) in &pairs {
            let mut model = base.clone();
            model.encoding = encoding;
            model.faithfulness = faithfulness;
            let grads = loss_gradients(&model, &ds, &rows, lambda1, lambda2, reg_weight, k);
            let mut check = |get: &dyn Fn(&ExplanationModel) -> f64,
                             set: &dyn Fn(&mut ExplanationModel, f64),
                             analytic: f64| {
                let orig = get(&model);
                let mut m = model.clone();
                set(&mut m, orig + h);
                let plus = total_loss(&m, &ds, &rows, lambda1, lambda2, reg_weight, k).total;
                set(&mut m, orig - h);
                let minus = total_loss(&m, &ds, &rows, lambda1, lambda2, reg_weight, k).total;
                let fd = (plus - minus) / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(1e-2);
                if (analytic - fd).abs() > tol {
                    ok = false;
                }
            };
            for r in 0..model.h_conc.out_dim() {
                for col in 0..model.h_conc.in_dim() {
                    check(
                        &|m| m.h_conc.weights.get(r, col),
                        &|m, v| m.h_conc.weights.set(r, col, v),
                        grads.conc_weights.get(r, col),
                    );
                }
            }
            for r in 0..model.h_pred.out_dim() {
                for col in 0..model.h_pred.in_dim() {
                    check(
                        &|m| m.h_pred.weights.get(r, col),
                        &|m, v| m.h_pred.weights.set(r, col, v),
                        grads.pred_weights.get(r, col),
                    );
                }
            }
            for i in 0..model.h_conc.bias.len() {
                check(&|m| m.h_conc.bias[i], &|m, v| m.h_conc.bias[i] = v, grads.conc_bias[i]);
            }
            for i in 0..model.h_pred.bias.len() {
                check(&|m| m.h_pred.bias[i], &|m, v| m.h_pred.bias[i] = v, grads.pred_bias[i]);
            }
        }
    }
    report("4 (gradient correctness)", ok);
}

fn oracle_ap_family(scores: &[f64], labels: &[f64], n_hat: f64) -> f64 {
    let p: f64 = labels.iter().sum();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let (mut tp, mut fp, mut sum) = (0.0, 0.0, 0.0);
    for &i in &order {
        if labels[i] != 0.0 {
            tp += 1.0;
            let recall = tp / p;
            sum += recall * n_hat / (recall * n_hat + fp);
        } else {
            fp += 1.0;
        }
    }
    sum / p
}

fn oracle_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut wins, mut ties, mut pairs) = (0.0, 0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] != 0.0 && labels[j] == 0.0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    ties += 1.0;
                }
            }
        }
    }
    (wins + 0.5 * ties) / pairs
}

#[test]
fn criterion_05_metric_oracles() {
    let mut ok = true;

    // Exhaustive label patterns at N=8 with tie-prone integer scores.
    let mut rng = Rng::from_seed(500);
    let n = 8;
    let scores: Vec<f64> = (0..n).map(|_| rng.below(4) as f64).collect();
    for pattern in 1..(1u32 << n) - 1 {
        let labels: Vec<f64> = (0..n).map(|i| ((pattern >> i) & 1) as f64).collect();
        let n_hat = 2.5;
        if (normalized_ap(&scores, &labels, n_hat) - oracle_ap_family(&scores, &labels, n_hat)).abs() > 1e-9 {
            ok = false;
        }
        if (roc_auc(&scores, &labels) - oracle_auc(&scores, &labels)).abs() > 1e-9 {
            ok = false;
        }
    }

    // Random small instances for all five operations.
    for trial in 0..50u64 {
        let mut rng = Rng::from_seed(510 + trial);
        let n = 4 + rng.below(9) as usize; // <= 12
        let c = 2 + rng.below(5) as usize; // <= 6

        // normalized_ap / roc_auc with both classes present.
        let scores: Vec<f64> = (0..n).map(|_| rng.below(5) as f64).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        if labels.iter().all(|&l| l == 0.0) {
            labels[0] = 1.0;
        }
        if labels.iter().all(|&l| l == 1.0) {
            labels[n - 1] = 0.0;
        }
        let n_hat = 1.0 + rng.below(5) as f64;
        if (normalized_ap(&scores, &labels, n_hat) - oracle_ap_family(&scores, &labels, n_hat)).abs() > 1e-9 {
            ok = false;
        }
        if (roc_auc(&scores, &labels) - oracle_auc(&scores, &labels)).abs() > 1e-9 {
            ok = false;
        }

        // netdissect_iou against explicit set counting.
        let mut act = Mat::zeros(n, 2);
        for v in act.data_mut() {
            *v = rng.below(6) as f64;
        }
        let mut conc = Mat::zeros(n, c);
        for v in conc.data_mut() {
            *v = if rng.bernoulli(0.4) { 1.0 } else { 0.0 };
        }
        let data = RegionAlignmentData::new(act.clone(), conc.clone()).unwrap();
        let q = 0.3;
        let got = netdissect_iou(&data, q);
        for neuron in 0..2 {
            let col = act.col(neuron);
            // Brute-force threshold: sort value-index pairs descending.
            let keep = (q * n as f64).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| col[b].partial_cmp(&col[a]).unwrap().then(a.cmp(&b)));
            let mut bits = vec![false; n];
            for &i in &order[..keep] {
                bits[i] = true;
            }
            let mut best = (0usize, f64::NEG_INFINITY);
            for concept in 0..c {
                let (mut inter, mut union) = (0.0, 0.0);
                for i in 0..n {
                    let b = conc.get(i, concept) != 0.0;
                    if bits[i] && b {
                        inter += 1.0;
                    }
                    if bits[i] || b {
                        union += 1.0;
                    }
                }
                let score = if union == 0.0 { 0.0 } else { inter / union };
                if score > best.1 {
                    best = (concept, score);
                }
            }
            if got[neuron].0 != best.0 || (got[neuron].1 - best.1).abs() > 1e-9 {
                ok = false;
            }
        }
        // The library threshold agrees with the brute-force one too.
        for neuron in 0..2 {
            let col = act.col(neuron);
            let bits = top_quantile_threshold(&col, q);
            let keep = (q * n as f64).ceil() as usize;
            if bits.iter().filter(|&&b| b).count() != keep {
                ok = false;
            }
        }

        // pearson_matrix against the scalar covariance formula.
        let mut m = Mat::zeros(n, c);
        for v in m.data_mut() {
            *v = rng.normal();
        }
        let corr = pearson_matrix(&ground_truth_scores(&m));
        for i in 0..c {
            for j in 0..c {
                let nf = n as f64;
                let (mut mi, mut mj) = (0.0, 0.0);
                for r in 0..n {
                    mi += m.get(r, i) / nf;
                    mj += m.get(r, j) / nf;
                }
                let (mut cov, mut vi, mut vj) = (0.0, 0.0, 0.0);
                for r in 0..n {
                    let (di, dj) = (m.get(r, i) - mi, m.get(r, j) - mj);
                    cov += di * dj;
                    vi += di * di;
                    vj += dj * dj;
                }
                let expected = if vi == 0.0 || vj == 0.0 {
                    if i == j { 1.0 } else { 0.0 }
                } else if i == j {
                    1.0
                } else {
                    cov / (vi.sqrt() * vj.sqrt())
                };
                if (corr.get(i, j) - expected).abs() > 1e-9 {
                    ok = false;
                }
            }
        }

        // greedy_decorrelate against a direct reimplementation.
        let mut sym = Mat::zeros(c, c);
        for i in 0..c {
            sym.set(i, i, 1.0);
            for j in i + 1..c {
                let v = rng.uniform_range(-1.0, 1.0);
                sym.set(i, j, v);
                sym.set(j, i, v);
            }
        }
        let order: Vec<usize> = (0..c).collect();
        let percentile = 40.0 + rng.below(50) as f64;
        let result = greedy_decorrelate(&sym, &order, percentile);
        let mut vals = Vec::new();
        for i in 0..c {
            for j in i + 1..c {
                vals.push(sym.get(i, j).abs());
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((percentile / 100.0 * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
        let threshold = vals[rank - 1];
        let mut kept: Vec<usize> = Vec::new();
        for cand in 0..c {
            if kept.iter().all(|&prev| sym.get(cand, prev).abs() <= threshold) {
                kept.push(cand);
            }
        }
        if (result.threshold - threshold).abs() > 1e-9 || result.kept != kept {
            ok = false;
        }
    }
    report("5 (metric oracles)", ok);
}

#[test]
fn criterion_06_nap_degeneracy() {
    let mut ok = true;
    for trial in 0..100u64 {
        let mut rng = Rng::from_seed(600 + trial);
        let n = 5 + rng.below(20) as usize;
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 }).collect();
        if labels.iter().all(|&l| l == 0.0) {
            labels[0] = 1.0;
        }
        if labels.iter().all(|&l| l == 1.0) {
            labels[n - 1] = 0.0;
        }
        let positives: f64 = labels.iter().sum();
        let nap = normalized_ap(&scores, &labels, positives);
        // Ordinary AP: mean precision at each hit.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let (mut tp, mut seen, mut ap) = (0.0, 0.0, 0.0);
        for &i in &order {
            seen += 1.0;
            if labels[i] != 0.0 {
                tp += 1.0;
                ap += tp / seen;
            }
        }
        ap /= positives;
        if (nap - ap).abs() > 1e-9 {
            ok = false;
        }
    }
    report("6 (nAP degeneracy)", ok);
}

#[test]
fn criterion_07_reduction_identities() {
    let mut ok = true;

    // alignment_only_fit(linear) is bit-identical to the trainer at
    // lambda1 = 0 under the same seed and config.
    let params = SynthParams {
        n_samples: 150,
        n_features: 8,
        n_concepts: 6,
        n_classes: 3,
        k_star: 3,
        base_rates: vec![0.4; 6],
        feature_noise_sigma: 0.3,
        output_noise_sigma: 0.1,
        feature_linked_outputs: false,
        seed: 700,
    };
    let (ds, _) = generate(&params);
    let config = TrainConfig {
        epochs: 12,
        batch_size: 64,
        learning_rate: 1e-2,
        seed: 7,
        ..TrainConfig::default()
    };
    let aligned = match alignment_only_fit(&ds, &config, AlignmentMode::Linear).unwrap() {
        AlignmentOnlyResult::Linear(map) => map,
        _ => unreachable!(),
    };
    let mut cfg = config.clone();
    cfg.lambda1 = 0.0;
    cfg.k = ds.num_concepts();
    cfg.reg_max_weight = 0.0;
    let (direct, _) =
        train_explanation(&ds, &cfg, Encoding::Probability, Faithfulness::FullOutputs, 1.0).unwrap();
    if aligned != direct.h_conc {
        ok = false;
    }

    // (U, F) mimic on a batch equals the scalar per-row CE mean.
    let mut rng = Rng::from_seed(701);
    for _ in 0..20 {
        let (ds, mut model, _) = random_instance(&mut rng);
        model.encoding = Encoding::Continuous;
        model.faithfulness = Faithfulness::PredictionOnly;
        let rows = all_rows(&ds);
        let got = mimic_loss(&model, &ds, &rows);

        // Scalar recomputation: forward by hand, softmax CE at the model's
        // argmax label.
        let mut expected = 0.0;
        for &r in &rows {
            let x = ds.features.row(r);
            let mut conc = vec![0.0; model.num_concepts()];
            for (j, v) in conc.iter_mut().enumerate() {
                let mut acc = model.h_conc.bias[j];
                for (f, &xf) in x.iter().enumerate() {
                    acc += model.h_conc.weights.get(j, f) * xf;
                }
                *v = acc;
            }
            let mut logits = vec![0.0; model.num_classes()];
            for (d, v) in logits.iter_mut().enumerate() {
                let mut acc = model.h_pred.bias[d];
                for (j, &cj) in conc.iter().enumerate() {
                    acc += model.h_pred.weights.get(d, j) * cj;
                }
                *v = acc;
            }
            let target = ds.model_outputs.row(r);
            let mut label = 0;
            for (i, &v) in target.iter().enumerate() {
                if v > target[label] {
                    label = i;
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            expected += log_z - logits[label];
        }
        expected /= rows.len() as f64;
        if (got - expected).abs() > 1e-9 {
            ok = false;
        }
    }
    report("7 (reduction identities)", ok);
}

#[test]
fn criterion_08_ibd_nonnegativity_hook() {
    let params = SynthParams {
        n_samples: 400,
        n_features: 10,
        n_concepts: 12,
        n_classes: 4,
        k_star: 4,
        base_rates: vec![0.4; 12],
        feature_noise_sigma: 0.3,
        output_noise_sigma: 0.05,
        feature_linked_outputs: false,
        seed: 800,
    };
    let (ds, _) = generate(&params);
    let config = TrainConfig {
        epochs: 60,
        batch_size: 64,
        learning_rate: 1e-2,
        k: 4,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut sampled = 0usize;
    let mut steps = 0usize;
    let mut ok = true;
    let (model, _) = ibd_fit_with_hook(&ds, &config, 2, &mut |m| {
        steps += 1;
        // Check every step until 200 samples have accumulated.
        if sampled < 200 {
            sampled += 1;
            if m.h_pred.weights.data().iter().any(|&v| v < 0.0) {
                ok = false;
            }
        }
    })
    .unwrap();
    if sampled < 200 {
        ok = false;
    }
    if model.h_pred.weights.data().iter().any(|&v| v < 0.0) {
        ok = false;
    }
    report("8 (IBD constraint)", ok);
}

fn run_cbe(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cbe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn criterion_09_cli_determinism() {
    let root = std::env::temp_dir().join(format!("cbe-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let data_dir = root.join("data");
    let out_dir = root.join("out");
    let config_path = root.join("config.json");
    let config = serde_json::json!({
        "manifest": data_dir.join("manifest.json"),
        "out_dir": out_dir,
        "setting": "uu_f",
        "prep": { "min_images": 5, "probe_epochs": 40 },
        "train": {
            "epochs": 8,
            "batch_size": 64,
            "k": 3,
            "learning_rate": 0.01,
            "lambda2_candidates": [0.1]
        },
        "elude": { "epochs": 50, "k": 3 },
        "synth": {
            "n_samples": 120,
            "n_features": 6,
            "n_concepts": 8,
            "n_classes": 3,
            "k_star": 3,
            "base_rate": 0.4,
            "seed": 9
        }
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let cfg = config_path.to_str().unwrap();
    let synth_out = data_dir.to_str().unwrap().to_string();

    let run_all = || {
        for args in [
            vec!["synth", "--config", cfg, "--out", &synth_out],
            vec!["prune", "--config", cfg],
            vec!["fit", "--config", cfg],
            vec!["eval", "--config", cfg],
            vec!["netdissect", "--config", cfg],
            vec!["ibd", "--config", cfg],
            vec!["elude", "--config", cfg],
        ] {
            let out = run_cbe(&args);
            assert!(
                out.status.success(),
                "command {:?} failed: {}",
                args,
                String::from_utf8_lossy(&out.stderr)
            );
        }
    };
    run_all();
    let first_data = snapshot(&data_dir);
    let first_out = snapshot(&out_dir);
    run_all();
    let ok = snapshot(&data_dir) == first_data && snapshot(&out_dir) == first_out;
    report("9 (CLI determinism)", ok);
}

#[test]
fn criterion_10_elude_sparsity() {
    // Ten classes; the classifier's predictions on class 0 are a pure
    // single-concept indicator.
    let mut rng = Rng::from_seed(1000);
    let n = 400;
    let c = 15;
    let d = 10;
    let mut ann = Mat::zeros(n, c);
    for v in ann.data_mut() {
        *v = if rng.bernoulli(0.4) { 1.0 } else { 0.0 };
    }
    let mut outputs = Mat::zeros(n, d);
    for r in 0..n {
        if ann.get(r, 5) != 0.0 {
            // Concept 5 forces class 0.
            outputs.set(r, 0, 10.0);
        } else {
            for cls in 1..d {
                outputs.set(r, cls, rng.normal());
            }
            outputs.set(r, 0, -10.0);
        }
    }
    let ds = ProbeDataset::new(
        Mat::zeros(n, 3),
        ann,
        outputs,
        None,
        (0..c).map(|i| format!("c{i}")).collect(),
        (0..d).map(|i| format!("k{i}")).collect(),
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 250,
        learning_rate: 5e-2,
        ..TrainConfig::default()
    };
    let k = 8;
    let mut ok = true;
    for class in 0..d {
        let result = elude_fit(&ds, &config, class, k).unwrap();
        if result.bracket_failed || result.nonzeros > k {
            ok = false;
        }
        if class == 0 {
            let row = result.model.h_pred.weights.row(0);
            let best = (0..c)
                .max_by(|&a, &b| row[a].abs().partial_cmp(&row[b].abs()).unwrap())
                .unwrap();
            if best != 5 {
                ok = false;
            }
        }
    }
    report("10 (ELUDE sparsity)", ok);
}

// Variant fit options stay exercised from the suite's dependency surface.
#[allow(dead_code)]
fn _unused(_: FitOptions) {
    let _ = train_with_options;
}
