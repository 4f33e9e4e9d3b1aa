//! PAC and meta-PAC prediction-set calibration.
//!
//! - [`binom`]: binomial tails and the Clopper-Pearson upper bound.
//! - [`pac`]: prediction sets and PS-Binom threshold selection.
//! - [`meta`]: Meta-PS across calibration tasks, and the pooled and
//!   test-task baselines.
//! - [`synthetic`]: hierarchical task models with exact correctness oracles.
//! - [`harness`]: nested Monte Carlo guarantee verification.
//! - [`cli`]: the `metapac` command-line front end.

pub mod binom;
pub mod cli;
pub mod error;
pub mod format;
pub mod harness;
pub mod meta;
pub mod pac;
pub mod rng;
pub mod synthetic;

pub use binom::{binom_cdf, binom_pmf, cp_upper_bound};
pub use error::{Error, Result};
pub use meta::{meta_calibrate, meta_ps, per_task_thresholds, pooled_ps, ps_test, GuaranteeSpec, TaskCalibrationBundle};
pub use pac::{error_count, max_valid_error_count, prediction_set, ps_binom, ScoreSample, Threshold};
