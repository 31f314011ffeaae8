//! Subcommand implementations: synth, prune, fit, eval, netdissect, ibd,
//! elude. Every command is a pure function of its config file, so replays
//! produce byte-identical artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cbe_core::concept_prep::{
    filter_rare_concepts, frequency_order, greedy_decorrelate, ground_truth_scores,
    learn_concept_probes, ConceptScores, ProbeConfig, PruneResult,
};
use cbe_core::dataset::split_dataset;
use cbe_core::evaluation::{concept_property_table, explanation_accuracy, l2_gap, top_concepts};
use cbe_core::objectives::all_rows;
use cbe_core::trainer::TrainError;
use cbe_core::variants::{
    elude_fit, ibd_fit, netdissect_report, RegionAlignmentData, VariantError,
};
use cbe_core::{Encoding, Faithfulness, Mat, ProbeDataset};
use serde::{Deserialize, Serialize};

use crate::config::{encoding_name, setting_name, RunConfig};
use crate::manifest::{save_dataset, DatasetManifest};
use crate::model_io::{hash_files, ModelFile};

/// Failures split by exit code: validation problems exit 1, numerical
/// failures exit 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

fn validation<E: std::fmt::Display>(err: E) -> CliError {
    CliError::Validation(err.to_string())
}

fn from_train_error(err: TrainError) -> CliError {
    match err {
        TrainError::NonFinite { .. } => CliError::Numerical(err.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn from_variant_error(err: VariantError) -> CliError {
    match err {
        VariantError::Train(e) => from_train_error(e),
        other => CliError::Validation(other.to_string()),
    }
}

struct Inputs {
    ds: ProbeDataset,
    inputs_sha256: String,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs, CliError> {
    let manifest = DatasetManifest::load(&config.manifest).map_err(validation)?;
    let base = config
        .manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut files = vec![config.manifest.clone()];
    files.extend(manifest.array_paths(&base));
    let inputs_sha256 = hash_files(&files).map_err(validation)?;
    let ds = crate::manifest::load_dataset_from(&manifest, &base).map_err(validation)?;
    Ok(Inputs { ds, inputs_sha256 })
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir).map_err(validation)
}

fn config_sha256(config: &RunConfig) -> String {
    // The output location does not affect results, so it is excluded from
    // the hash; replays into different directories stay byte-identical.
    let mut normalized = config.clone();
    normalized.out_dir = PathBuf::new();
    let text = serde_json::to_string(&normalized).expect("config serializes");
    let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
    sha2::Digest::update(&mut hasher, text.as_bytes());
    let digest = sha2::Digest::finalize(hasher);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

fn write_csv(
    path: &Path,
    config: &RunConfig,
    inputs_sha256: &str,
    header: &str,
    rows: &[String],
) -> Result<(), CliError> {
    let mut text = String::new();
    let _ = writeln!(text, "# config_sha256: {}", config_sha256(config));
    let _ = writeln!(text, "# inputs_sha256: {inputs_sha256}");
    let _ = writeln!(text, "{header}");
    for row in rows {
        let _ = writeln!(text, "{row}");
    }
    std::fs::write(path, text).map_err(validation)
}

/// Generate the configured synthetic dataset into the output directory:
/// manifest + NPY arrays + the planted ground truth as JSON.
pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let section = config
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no [synth] section".into()))?;
    let params = section.to_params();
    let (ds, gt) = cbe_core::synth::generate(&params);
    ensure_out_dir(config)?;
    save_dataset(&ds, "synth", &config.out_dir).map_err(validation)?;

    #[derive(Serialize)]
    struct GroundTruthFile<'a> {
        planted_support: &'a [usize],
        concept_to_feature: Vec<Vec<f64>>,
        concept_to_output: Vec<Vec<f64>>,
        config_echo: &'a RunConfig,
    }
    let rows = |m: &Mat| -> Vec<Vec<f64>> { (0..m.rows()).map(|r| m.row(r).to_vec()).collect() };
    let file = GroundTruthFile {
        planted_support: &gt.planted_support,
        concept_to_feature: rows(&gt.concept_to_feature),
        concept_to_output: rows(&gt.concept_to_output),
        config_echo: config,
    };
    let text = serde_json::to_string_pretty(&file).map_err(validation)?;
    std::fs::write(config.out_dir.join("ground_truth.json"), text + "\n").map_err(validation)
}

/// A pruned concept vocabulary for one understandability level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneFile {
    pub level: String,
    pub threshold: f64,
    /// Kept concepts as original dataset indices, in acceptance order.
    pub kept: Vec<usize>,
    pub kept_names: Vec<String>,
    /// Dropped original index -> kept original index that excluded it.
    pub dropped_because: Vec<(usize, usize)>,
    pub rare_filtered: usize,
    pub config_echo: RunConfig,
    pub inputs_sha256: String,
}

/// Prune the vocabulary for one understandability level on the training
/// split. Scores: annotations for the ground-truth level, probe logits for
/// the continuous level, probe probabilities for the probability level.
fn prune_level(
    train: &ProbeDataset,
    rare_kept: &[usize],
    encoding: Encoding,
    config: &RunConfig,
) -> PruneResult {
    let ann = train.annotations.select_cols(rare_kept);
    let scores: ConceptScores = match encoding {
        Encoding::GroundTruthBinary => ground_truth_scores(&ann),
        Encoding::Continuous | Encoding::Probability => {
            let probe_config = ProbeConfig {
                epochs: config.prep.probe_epochs,
                learning_rate: config.prep.probe_learning_rate,
                seed: config.train.seed,
            };
            let (_, mut scores) = learn_concept_probes(&train.features, &ann, &probe_config);
            if encoding == Encoding::Probability {
                for v in scores.scores.data_mut() {
                    *v = cbe_core::math::sigmoid(*v);
                }
            }
            scores
        }
    };
    let corr = cbe_core::concept_prep::pearson_matrix(&scores);
    let order = frequency_order(&ann, &(0..rare_kept.len()).collect::<Vec<_>>());
    greedy_decorrelate(&corr, &order, config.prep.percentile)
}

fn prune_file_for(
    train: &ProbeDataset,
    full: &ProbeDataset,
    rare_kept: &[usize],
    encoding: Encoding,
    config: &RunConfig,
    inputs_sha256: &str,
) -> PruneFile {
    let result = prune_level(train, rare_kept, encoding, config);
    let kept: Vec<usize> = result.kept.iter().map(|&p| rare_kept[p]).collect();
    PruneFile {
        level: encoding_name(encoding).to_string(),
        threshold: result.threshold,
        kept_names: kept.iter().map(|&i| full.concept_names[i].clone()).collect(),
        kept,
        dropped_because: result
            .dropped_because
            .iter()
            .map(|&(d, b)| (rare_kept[d], rare_kept[b]))
            .collect(),
        rare_filtered: full.num_concepts() - rare_kept.len(),
        config_echo: config.clone(),
        inputs_sha256: inputs_sha256.to_string(),
    }
}

/// Write one pruned-vocabulary JSON per understandability level.
pub fn cmd_prune(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let spec = config.split_spec().map_err(validation)?;
    let (train, _, _) = split_dataset(&inputs.ds, &spec).map_err(validation)?;
    let rare_kept = filter_rare_concepts(&train.annotations, config.prep.min_images);
    if rare_kept.is_empty() {
        return Err(CliError::Validation(format!(
            "no concept appears in at least {} training images ({} concepts checked)",
            config.prep.min_images,
            train.num_concepts()
        )));
    }
    ensure_out_dir(config)?;
    for encoding in [
        Encoding::GroundTruthBinary,
        Encoding::Probability,
        Encoding::Continuous,
    ] {
        let file = prune_file_for(&train, &inputs.ds, &rare_kept, encoding, config, &inputs.inputs_sha256);
        let path = config.out_dir.join(format!("prune_{}.json", file.level));
        let text = serde_json::to_string_pretty(&file).map_err(validation)?;
        std::fs::write(path, text + "\n").map_err(validation)?;
    }
    Ok(())
}

fn kept_for_encoding(
    config: &RunConfig,
    inputs: &Inputs,
    train: &ProbeDataset,
    encoding: Encoding,
) -> Result<Vec<usize>, CliError> {
    let path = config
        .out_dir
        .join(format!("prune_{}.json", encoding_name(encoding)));
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(validation)?;
        let file: PruneFile = serde_json::from_str(&text).map_err(validation)?;
        return Ok(file.kept);
    }
    let rare_kept = filter_rare_concepts(&train.annotations, config.prep.min_images);
    if rare_kept.is_empty() {
        return Err(CliError::Validation(format!(
            "no concept appears in at least {} training images",
            config.prep.min_images
        )));
    }
    let file = prune_file_for(train, &inputs.ds, &rare_kept, encoding, config, &inputs.inputs_sha256);
    Ok(file.kept)
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepEntryFile {
    lambda2: f64,
    val_accuracy: f64,
    epochs: usize,
    final_loss: Option<LossFile>,
    selected_original: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LossFile {
    mimic: f64,
    align: f64,
    reg: f64,
    total: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    setting: String,
    chosen_lambda2: f64,
    sweep: Vec<SweepEntryFile>,
    config_echo: RunConfig,
    inputs_sha256: String,
}

/// Fit one explanation per requested setting, sweeping lambda2 against the
/// validation split, and write the model plus a sweep report for each.
pub fn cmd_fit(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let spec = config.split_spec().map_err(validation)?;
    let (train, val, _) = split_dataset(&inputs.ds, &spec).map_err(validation)?;
    let settings = config.settings().map_err(validation)?;
    ensure_out_dir(config)?;

    for (encoding, faithfulness) in settings {
        let kept = kept_for_encoding(config, &inputs, &train, encoding)?;
        let train_r = train.restrict_concepts(&kept);
        let val_r = val.restrict_concepts(&kept);
        let mut train_config = config.train.to_train_config();
        train_config.k = train_config.k.min(kept.len());
        let (model, entries) =
            cbe_core::sweep_lambda2(&train_r, &val_r, &train_config, encoding, faithfulness)
                .map_err(from_train_error)?;
        let name = setting_name(encoding, faithfulness);

        let chosen = entries
            .iter()
            .max_by(|a, b| {
                a.val_accuracy
                    .partial_cmp(&b.val_accuracy)
                    .unwrap()
                    .then(a.lambda2.partial_cmp(&b.lambda2).unwrap())
            })
            .expect("sweep nonempty");
        let val_accuracy = Some(chosen.val_accuracy);
        let model_file = ModelFile::from_model(
            &model,
            &kept,
            &train_r.concept_names,
            &train_r.class_names,
            chosen.lambda2,
            val_accuracy,
            config,
            &inputs.inputs_sha256,
        );
        model_file
            .save(&config.out_dir.join(format!("{name}.json")))
            .map_err(validation)?;

        let report = ReportFile {
            setting: name.to_string(),
            chosen_lambda2: chosen.lambda2,
            sweep: entries
                .iter()
                .map(|e| SweepEntryFile {
                    lambda2: e.lambda2,
                    val_accuracy: e.val_accuracy,
                    epochs: e.report.trace.len(),
                    final_loss: e.report.trace.last().map(|l| LossFile {
                        mimic: l.mimic,
                        align: l.align,
                        reg: l.reg,
                        total: l.total,
                    }),
                    selected_original: e.report.selected.iter().map(|&i| kept[i]).collect(),
                })
                .collect(),
            config_echo: config.clone(),
            inputs_sha256: inputs.inputs_sha256.clone(),
        };
        let text = serde_json::to_string_pretty(&report).map_err(validation)?;
        std::fs::write(
            config.out_dir.join(format!("report_{name}.json")),
            text + "\n",
        )
        .map_err(validation)?;
    }
    Ok(())
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// Evaluate fitted models on the test split: the faithfulness grid, pairwise
/// top-concept overlaps per class, and a property table per model.
pub fn cmd_eval(config: &RunConfig, model_paths: &[PathBuf]) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let spec = config.split_spec().map_err(validation)?;
    let (train, _, test) = split_dataset(&inputs.ds, &spec).map_err(validation)?;
    ensure_out_dir(config)?;

    let paths: Vec<PathBuf> = if model_paths.is_empty() {
        crate::config::all_settings()
            .into_iter()
            .map(|(e, f)| config.out_dir.join(format!("{}.json", setting_name(e, f))))
            .filter(|p| p.exists())
            .collect()
    } else {
        model_paths.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::Validation(
            "no model files found; run fit first or pass --models".into(),
        ));
    }

    struct Loaded {
        file: ModelFile,
        model: cbe_core::ExplanationModel,
        test: ProbeDataset,
    }
    let mut loaded = Vec::new();
    for path in &paths {
        let file = ModelFile::load(path).map_err(validation)?;
        let model = file.to_model().map_err(validation)?;
        let test_r = test.restrict_concepts(&file.concept_indices);
        loaded.push(Loaded {
            file,
            model,
            test: test_r,
        });
    }

    // Faithfulness grid: one row per understandability level, one column per
    // faithfulness mode, empty cells for missing models.
    let mut grid_rows = Vec::new();
    for (level, encoding) in [
        ("uuu", Encoding::GroundTruthBinary),
        ("uu", Encoding::Probability),
        ("u", Encoding::Continuous),
    ] {
        let mut cells = vec![level.to_string()];
        for faithfulness in [Faithfulness::FullOutputs, Faithfulness::PredictionOnly] {
            let name = setting_name(encoding, faithfulness);
            match loaded.iter().find(|l| l.file.setting == name) {
                Some(l) => {
                    let gap = l2_gap(&l.model, &l.test);
                    let acc = explanation_accuracy(&l.model, &l.test);
                    cells.push(fmt_float(gap));
                    cells.push(fmt_float(acc));
                }
                None => {
                    cells.push(String::new());
                    cells.push(String::new());
                }
            }
        }
        grid_rows.push(cells.join(","));
    }
    write_csv(
        &config.out_dir.join("faithfulness_grid.csv"),
        config,
        &inputs.inputs_sha256,
        "understandability,ff_l2_gap,ff_accuracy,f_l2_gap,f_accuracy",
        &grid_rows,
    )?;

    // Pairwise overlap of top-10 concepts per class, in original indices.
    let top_k = 10;
    let mut overlap_rows = Vec::new();
    for a in 0..loaded.len() {
        for b in a + 1..loaded.len() {
            let (la, lb) = (&loaded[a], &loaded[b]);
            for class in 0..la.model.num_classes().min(lb.model.num_classes()) {
                let ka = top_k.min(la.model.selected.len());
                let kb = top_k.min(lb.model.selected.len());
                let set_a: Vec<usize> = top_concepts(&la.model, class, ka)
                    .into_iter()
                    .map(|(c, _)| la.file.concept_indices[c])
                    .collect();
                let count = top_concepts(&lb.model, class, kb)
                    .into_iter()
                    .map(|(c, _)| lb.file.concept_indices[c])
                    .filter(|c| set_a.contains(c))
                    .count();
                overlap_rows.push(format!(
                    "{},{},{},{}",
                    la.file.setting, lb.file.setting, class, count
                ));
            }
        }
    }
    write_csv(
        &config.out_dir.join("overlaps.csv"),
        config,
        &inputs.inputs_sha256,
        "model_a,model_b,class,overlap",
        &overlap_rows,
    )?;

    // Property table per model: frequency, size, learnability of each
    // selected concept, probes trained on the training split.
    for l in &loaded {
        let train_r = train.restrict_concepts(&l.file.concept_indices);
        let probe_config = ProbeConfig {
            epochs: config.prep.probe_epochs,
            learning_rate: config.prep.probe_learning_rate,
            seed: config.train.seed,
        };
        let (probe, _) =
            learn_concept_probes(&train_r.features, &train_r.annotations, &probe_config);
        let logits = cbe_core::concept_prep::probe_scores(&probe, &l.test.features);
        let table = concept_property_table(&l.model, &l.test, &logits.scores, None);
        let rows: Vec<String> = table
            .iter()
            .map(|row| {
                format!(
                    "{},{},{},{},{},{}",
                    l.file.concept_indices[row.concept],
                    l.test.concept_names[row.concept],
                    fmt_float(row.frequency),
                    row.size.map(fmt_float).unwrap_or_default(),
                    fmt_float(row.nap),
                    fmt_float(row.auc)
                )
            })
            .collect();
        write_csv(
            &config.out_dir.join(format!("properties_{}.csv", l.file.setting)),
            config,
            &inputs.inputs_sha256,
            "concept,concept_name,frequency,size,nap,auc",
            &rows,
        )?;
    }
    Ok(())
}

/// Region-level neuron/concept alignment: the dataset's features are treated
/// as per-region activations and its annotations as region concept labels.
pub fn cmd_netdissect(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let data = RegionAlignmentData::new(
        inputs.ds.features.clone(),
        inputs.ds.annotations.clone(),
    )
    .map_err(from_variant_error)?;
    let report = netdissect_report(&data, config.netdissect.quantile, config.netdissect.top_k);
    ensure_out_dir(config)?;

    let k = config.netdissect.top_k;
    let mut header = String::from("neuron,iou_concept,iou");
    for i in 1..=k {
        let _ = write!(header, ",nap_concept_{i},nap_{i}");
    }
    let rows: Vec<String> = report
        .neurons
        .iter()
        .map(|row| {
            let mut line = format!("{},{},{}", row.neuron, row.iou_concept, fmt_float(row.iou));
            for i in 0..k {
                match row.nap.get(i) {
                    Some(&(c, v)) => {
                        let _ = write!(line, ",{c},{}", fmt_float(v));
                    }
                    None => line.push_str(",,"),
                }
            }
            line
        })
        .collect();
    write_csv(
        &config.out_dir.join("netdissect.csv"),
        config,
        &inputs.inputs_sha256,
        &header,
        &rows,
    )
}

/// Per-class non-negative decomposition over the training split; one CSV row
/// per selected concept.
pub fn cmd_ibd(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let spec = config.split_spec().map_err(validation)?;
    let (train, _, test) = split_dataset(&inputs.ds, &spec).map_err(validation)?;
    let train_config = config.train.to_train_config();
    ensure_out_dir(config)?;

    let mut rows = Vec::new();
    for class in 0..train.num_classes() {
        let (model, _) = ibd_fit(&train, &train_config, class).map_err(from_variant_error)?;
        let test_view = ProbeDataset {
            model_outputs: test.model_outputs.select_cols(&[class]),
            class_names: vec![test.class_names[class].clone()],
            ..test.clone()
        };
        let mimic =
            cbe_core::objectives::mimic_loss(&model, &test_view, &all_rows(&test_view));
        for &c in &model.selected {
            rows.push(format!(
                "{},{},{},{},{}",
                class,
                c,
                train.concept_names[c],
                fmt_float(model.h_pred.weights.get(0, c)),
                fmt_float(mimic)
            ));
        }
    }
    write_csv(
        &config.out_dir.join("ibd.csv"),
        config,
        &inputs.inputs_sha256,
        "class,concept,concept_name,coefficient,test_mimic",
        &rows,
    )
}

/// Per-class sparse annotation-space fit; one CSV row per nonzero concept.
pub fn cmd_elude(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_inputs(config)?;
    let spec = config.split_spec().map_err(validation)?;
    let (train, _, _) = split_dataset(&inputs.ds, &spec).map_err(validation)?;
    let mut fit_config = config.train.to_train_config();
    fit_config.epochs = config.elude.epochs;
    fit_config.learning_rate = config.elude.learning_rate;
    ensure_out_dir(config)?;

    let mut rows = Vec::new();
    for class in 0..train.num_classes() {
        let result =
            elude_fit(&train, &fit_config, class, config.elude.k).map_err(from_variant_error)?;
        for &c in &result.model.selected {
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                class,
                c,
                train.concept_names[c],
                fmt_float(result.model.h_pred.weights.get(0, c)),
                fmt_float(result.l1_weight),
                result.nonzeros,
                result.bracket_failed
            ));
        }
    }
    write_csv(
        &config.out_dir.join("elude.csv"),
        config,
        &inputs.inputs_sha256,
        "class,concept,concept_name,coefficient,l1_weight,nonzeros,bracket_failed",
        &rows,
    )
}
