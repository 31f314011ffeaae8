//! File formats, configuration, and command implementations for the `cbe`
//! binary. All numerics live in `cbe-core`; this crate only moves bytes.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod model_io;
pub mod npy;
