//! Meta-calibration across tasks, plus the pooled and test-task baselines.
//!
//! [`meta_ps`] runs PS-Binom on each calibration task at `(ε, α/2)`, then runs
//! it again over the resulting thresholds at `(α/2, δ)`. The second level
//! scores each threshold with `g(τ, 1) = τ`, so it reduces to an order
//! statistic of the per-task thresholds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_closed, check_unit_open, Error, Result};
use crate::pac::{
    max_valid_unchecked, ps_binom, ps_binom_with_budget, select_order_statistic, ScoreSample,
    Threshold,
};

/// Guarantee levels and sample sizes of a meta-calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuaranteeSpec {
    /// Per-example miscoverage ε.
    pub eps: f64,
    /// Fraction α of test tasks allowed to get an incorrect threshold.
    pub alpha: f64,
    /// Calibration failure probability δ.
    pub delta: f64,
    /// Number of calibration tasks N.
    pub num_tasks: usize,
    /// Calibration examples per task n.
    pub calib_size: usize,
    /// Adaptation examples per task t; 0 disables adaptation.
    pub adapt_size: usize,
}

impl GuaranteeSpec {
    pub fn validate(&self) -> Result<()> {
        check_unit_closed("eps", self.eps)?;
        check_unit_open("alpha", self.alpha)?;
        check_unit_open("delta", self.delta)?;
        if self.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be at least 1".into()));
        }
        if self.calib_size == 0 {
            return Err(Error::Config("calib_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Level of the per-task PS-Binom call: `(ε, α/2)`.
    pub fn task_level(&self) -> PacLevel {
        PacLevel {
            eps: self.eps,
            delta: self.alpha / 2.0,
        }
    }

    /// Level of the second-level PS-Binom call: `(α/2, δ)`.
    pub fn meta_level(&self) -> PacLevel {
        PacLevel {
            eps: self.alpha / 2.0,
            delta: self.delta,
        }
    }
}

/// An `(ε, δ)` pair passed to one PS-Binom call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacLevel {
    pub eps: f64,
    pub delta: f64,
}

/// One calibration task: its adaptation data and the true-label scores of its
/// calibration set under the adapted score function.
#[derive(Debug, Clone)]
pub struct TaskCalibrationBundle<A = ()> {
    pub adaptation: A,
    pub calibration_scores: ScoreSample,
}

impl TaskCalibrationBundle<()> {
    pub fn from_scores(calibration_scores: ScoreSample) -> Self {
        TaskCalibrationBundle {
            adaptation: (),
            calibration_scores,
        }
    }
}

/// Dummy label carried by every second-level example.
pub const META_LABEL: u32 = 1;

/// Second-level score `g(τ, y) = τ · 1(y = 1)`.
pub fn second_level_score(tau: Threshold, label: u32) -> f64 {
    if label == META_LABEL {
        tau.value()
    } else {
        0.0
    }
}

/// Full output of [`meta_calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCalibration {
    pub threshold: Threshold,
    pub per_task_thresholds: Vec<Threshold>,
    pub task_level: PacLevel,
    pub meta_level: PacLevel,
}

fn check_levels(spec: &GuaranteeSpec) -> Result<()> {
    check_unit_closed("eps", spec.eps)?;
    check_unit_open("alpha", spec.alpha)?;
    check_unit_open("delta", spec.delta)?;
    Ok(())
}

fn ps_binom_many<'a>(
    samples: impl IndexedParallelIterator<Item = &'a ScoreSample>,
    sizes: impl Iterator<Item = usize>,
    level: PacLevel,
) -> Vec<Threshold> {
    // the error budget depends only on |S|
    let budgets: BTreeMap<usize, Option<u64>> = sizes
        .map(|n| (n, max_valid_unchecked(n as u64, level.eps, level.delta)))
        .collect();
    samples
        .map(|s| ps_binom_with_budget(s, budgets[&s.len()]))
        .collect()
}

/// Per-task thresholds `τ_i = PS-Binom(S_i, ε, α/2)`, in input order.
pub fn per_task_thresholds<A: Sync>(
    bundles: &[TaskCalibrationBundle<A>],
    spec: &GuaranteeSpec,
) -> Result<Vec<Threshold>> {
    if bundles.is_empty() {
        return Err(Error::NoTasks);
    }
    check_levels(spec)?;
    Ok(ps_binom_many(
        bundles.par_iter().map(|b| &b.calibration_scores),
        bundles.iter().map(|b| b.calibration_scores.len()),
        spec.task_level(),
    ))
}

/// Second-level PS-Binom over per-task thresholds at `(α/2, δ)`.
///
/// `+∞` thresholds sort above every finite one.
pub fn meta_threshold(per_task: &[Threshold], alpha: f64, delta: f64) -> Result<Threshold> {
    if per_task.is_empty() {
        return Err(Error::NoTasks);
    }
    check_unit_open("alpha", alpha)?;
    check_unit_open("delta", delta)?;
    let mut sorted = per_task.to_vec();
    sorted.sort_unstable();
    let budget = max_valid_unchecked(sorted.len() as u64, alpha / 2.0, delta);
    Ok(select_order_statistic(&sorted, budget, |t| t))
}

/// Meta-PS with all intermediate results.
pub fn meta_calibrate<A: Sync>(
    bundles: &[TaskCalibrationBundle<A>],
    spec: &GuaranteeSpec,
) -> Result<MetaCalibration> {
    let per_task = per_task_thresholds(bundles, spec)?;
    let level = spec.meta_level();
    let threshold = meta_threshold(&per_task, spec.alpha, level.delta)?;
    Ok(MetaCalibration {
        threshold,
        per_task_thresholds: per_task,
        task_level: spec.task_level(),
        meta_level: level,
    })
}

/// Meta-PS: an `(ε, α, δ)`-meta-PAC threshold from `N` calibration tasks.
pub fn meta_ps<A: Sync>(bundles: &[TaskCalibrationBundle<A>], spec: &GuaranteeSpec) -> Result<Threshold> {
    meta_calibrate(bundles, spec).map(|m| m.threshold)
}

/// Baseline: PS-Binom on all `nN` calibration scores pooled together.
pub fn pooled_ps<A>(bundles: &[TaskCalibrationBundle<A>], eps: f64, delta: f64) -> Result<Threshold> {
    if bundles.is_empty() {
        return Err(Error::NoTasks);
    }
    let pooled = ScoreSample::pooled(bundles.iter().map(|b| &b.calibration_scores))?;
    ps_binom(&pooled, eps, delta)
}

/// Baseline: PS-Binom on labeled examples drawn from the test task itself.
pub fn ps_test(test_scores: &ScoreSample, eps: f64, delta: f64) -> Result<Threshold> {
    ps_binom(test_scores, eps, delta)
}
