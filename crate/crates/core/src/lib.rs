//! Numerical laboratory for invasion fronts of the strong-competition
//! Lotka-Volterra diffusion system.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod config;
pub mod error;
pub mod experiment;
pub mod front;
pub mod model;
pub mod par;
pub mod pde;
pub mod stats;
pub mod supersub;
pub mod wave;

pub use config::{parse_config, ExperimentConfig};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_sweep, RunManifest};
pub use model::{canonical_speeds, char_roots, cuv_sign_prediction, ModelParams};
pub use par::Exec;
