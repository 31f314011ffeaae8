//! Core algorithms for fitting, selecting, and evaluating concept-based
//! explanations of a black-box classifier.
//!
//! Everything here operates on in-memory matrices; file formats and the CLI
//! live in the companion `cbe-cli` crate. The crate is `no_std`-compatible
//! (with `alloc`) so the numeric core carries no IO dependencies.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod concept_prep;
pub mod dataset;
pub mod evaluation;
pub mod math;
pub mod matrix;
pub mod objectives;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod variants;

pub use dataset::{predictions_from_outputs, split_dataset, DatasetError, ProbeDataset, SplitSpec};
pub use matrix::Mat;
pub use objectives::{
    Encoding, ExplanationModel, Faithfulness, LinearMap, LossBreakdown,
};
pub use trainer::{train_explanation, sweep_lambda2, TrainConfig, TrainError, TrainReport};
