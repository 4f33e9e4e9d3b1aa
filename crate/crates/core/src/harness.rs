//! Nested Monte Carlo evaluation of calibration methods.
//!
//! Each outer trial draws `N` calibration tasks (with adaptation and
//! calibration sets) and fits every method once. Each of its `I` inner trials
//! draws a fresh test task and adaptation set, shared by all methods, and
//! records whether the fitted threshold is ε-correct for it. An outer trial
//! succeeds for a method when at least a `1 - α` fraction of its inner trials
//! do.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{ser_opt_sig9, ser_sig9, sig9};
use crate::meta::{meta_ps, pooled_ps, ps_test, GuaranteeSpec, TaskCalibrationBundle};
use crate::pac::Threshold;
use crate::rng::{stream, Purpose, StreamRng};
use crate::synthetic::{adapt, draw_bundle, draw_task, AdaptedTask, Family, MetaDistribution};

/// A calibration method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    MetaPs,
    PooledPs,
    PsTest,
    /// A constant threshold, as a control.
    Fixed(Threshold),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::MetaPs => f.write_str("meta_ps"),
            Method::PooledPs => f.write_str("pooled_ps"),
            Method::PsTest => f.write_str("ps_test"),
            Method::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meta_ps" => Ok(Method::MetaPs),
            "pooled_ps" => Ok(Method::PooledPs),
            "ps_test" => Ok(Method::PsTest),
            other => {
                let value = other
                    .strip_prefix("fixed:")
                    .ok_or_else(|| Error::Config(format!("unknown method {other:?}")))?;
                let tau = match value {
                    "inf" => Threshold::INFINITY,
                    v => v
                        .parse::<f64>()
                        .ok()
                        .and_then(|x| Threshold::new(x).ok())
                        .ok_or_else(|| Error::Config(format!("bad fixed threshold {v:?}")))?,
                };
                Ok(Method::Fixed(tau))
            }
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: GuaranteeSpec,
    pub meta: MetaDistribution,
    pub outer_trials: usize,
    pub inner_trials: usize,
    /// Evaluation examples per inner trial.
    pub eval_size: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Test-task calibration budget of `ps_test`; `20 * classes` when unset.
    pub ps_test_size: Option<usize>,
    /// Selects an independent family of inner-trial streams; calibration
    /// draws do not depend on it.
    #[serde(default)]
    pub inner_stream: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.meta.validate()?;
        for (name, v) in [
            ("outer_trials", self.outer_trials),
            ("inner_trials", self.inner_trials),
            ("eval_size", self.eval_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.ps_test_size == Some(0) {
            return Err(Error::Config("ps_test_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ps_test_size(&self) -> usize {
        self.ps_test_size.unwrap_or(20 * self.meta.classes)
    }

    fn inner_rng(&self, purpose: Purpose, outer: usize, inner: usize) -> StreamRng {
        let mut rng = stream(self.seed, purpose, outer as u64, inner as u64);
        rng.set_stream(self.inner_stream);
        rng
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            spec: GuaranteeSpec {
                eps: 0.1,
                alpha: 0.2,
                delta: 0.2,
                num_tasks: 100,
                calib_size: 1000,
                adapt_size: 25,
            },
            meta: MetaDistribution::default(),
            outer_trials: 100,
            inner_trials: 50,
            eval_size: 1000,
            methods: vec![Method::MetaPs, Method::PooledPs, Method::PsTest],
            seed: 0,
            ps_test_size: None,
            inner_stream: 0,
        }
    }
}

/// Whether correctness is decided exactly or estimated from evaluation draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Exact,
    Estimate,
}

impl OracleKind {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Analytic1d => OracleKind::Exact,
            Family::Classification => OracleKind::Estimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub inner: usize,
    pub threshold: Threshold,
    pub oracle_correct: bool,
    #[serde(serialize_with = "ser_sig9")]
    pub empirical_error: f64,
    #[serde(serialize_with = "ser_opt_sig9")]
    pub empirical_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    /// The calibrated threshold; absent for `ps_test`, which calibrates per
    /// inner trial.
    pub threshold: Option<Threshold>,
    #[serde(serialize_with = "ser_sig9")]
    pub inner_success_fraction: f64,
    pub success: bool,
    pub inner: Vec<InnerRecord>,
}

/// Empirical quantiles with linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    #[serde(serialize_with = "ser_sig9")]
    pub min: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub q10: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub q25: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub q50: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub q75: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub q90: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        Some(Quantiles {
            min: v[0],
            q10: quantile_sorted(&v, 0.10),
            q25: quantile_sorted(&v, 0.25),
            q50: quantile_sorted(&v, 0.50),
            q75: quantile_sorted(&v, 0.75),
            q90: quantile_sorted(&v, 0.90),
            max: v[v.len() - 1],
        })
    }
}

/// Quantile `q` of sorted data, interpolating linearly at position `q (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    #[serde(serialize_with = "ser_sig9")]
    pub outer_success_fraction: f64,
    /// Empirical error over every inner trial.
    pub error: Option<Quantiles>,
    /// Empirical set size over every inner trial, when defined.
    pub size: Option<Quantiles>,
    pub outer: Vec<OuterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialReport {
    pub config: ExperimentConfig,
    pub oracle: OracleKind,
    pub methods: Vec<MethodReport>,
}

impl TrialReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes `report.json`, `inner.csv` and `summary.csv` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.json");
        std::fs::write(&report, self.to_json()).map_err(|e| Error::io(&report, e))?;
        let inner = dir.join("inner.csv");
        std::fs::write(&inner, self.inner_csv()).map_err(|e| Error::io(&inner, e))?;
        let summary = dir.join("summary.csv");
        std::fs::write(&summary, self.summary_csv()).map_err(|e| Error::io(&summary, e))?;
        Ok(())
    }

    pub fn inner_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "outer",
            "inner",
            "oracle_correct",
            "empirical_error",
            "empirical_size",
        ])
        .expect("in-memory write");
        for m in &self.methods {
            for o in &m.outer {
                for i in &o.inner {
                    w.write_record([
                        m.method.to_string(),
                        o.outer.to_string(),
                        i.inner.to_string(),
                        i.oracle_correct.to_string(),
                        sig9(i.empirical_error),
                        i.empirical_size.map(sig9).unwrap_or_default(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_HEADER).expect("in-memory write");
        for row in self.summary_rows() {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Rows of `summary.csv`, already formatted.
    pub fn summary_rows(&self) -> Vec<Vec<String>> {
        let cells = |q: Option<Quantiles>, with_range: bool| -> Vec<String> {
            let values = |q: Quantiles| {
                let mut v = Vec::new();
                if with_range {
                    v.push(q.min);
                }
                v.extend([q.q10, q.q25, q.q50, q.q75, q.q90]);
                if with_range {
                    v.push(q.max);
                }
                v
            };
            match q {
                Some(q) => values(q).into_iter().map(sig9).collect(),
                None => vec![String::new(); if with_range { 7 } else { 5 }],
            }
        };
        self.methods
            .iter()
            .map(|m| {
                let mut row = vec![m.method.to_string(), sig9(m.outer_success_fraction)];
                row.extend(cells(m.error, false));
                row.extend(cells(m.size, true));
                row
            })
            .collect()
    }
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "method",
    "outer_success_fraction",
    "q10",
    "q25",
    "q50",
    "q75",
    "q90",
    "size_min",
    "size_q10",
    "size_q25",
    "size_q50",
    "size_q75",
    "size_q90",
    "size_max",
];

/// Fraction of `empirical` test examples outside `F_τ`.
pub fn empirical_error<R: Rng + ?Sized>(adapted: &AdaptedTask, tau: Threshold, eval_size: usize, rng: &mut R) -> f64 {
    adapted.empirical_error(tau, eval_size, rng)
}

/// Mean prediction-set cardinality; classification tasks only.
pub fn empirical_size<R: Rng + ?Sized>(
    adapted: &AdaptedTask,
    tau: Threshold,
    eval_size: usize,
    rng: &mut R,
) -> Result<f64> {
    adapted.empirical_size(tau, eval_size, rng)
}

/// Outer-trial success rule: at least a `1 - α` fraction of inner successes.
pub fn outer_success(inner_success_fraction: f64, alpha: f64) -> bool {
    inner_success_fraction + 1e-12 >= 1.0 - alpha
}

/// Test task of one inner trial, shared by every method.
pub struct InnerTrial<'a> {
    config: &'a ExperimentConfig,
    outer: usize,
    inner: usize,
    pub task: AdaptedTask,
}

impl<'a> InnerTrial<'a> {
    pub fn draw(config: &'a ExperimentConfig, outer: usize, inner: usize) -> Self {
        let mut rng = config.inner_rng(Purpose::TestTask, outer, inner);
        let task = draw_task(&config.meta, &mut rng);
        let task = adapt(&config.meta, task, config.spec.adapt_size, &mut rng);
        InnerTrial {
            config,
            outer,
            inner,
            task,
        }
    }

    /// PS-Test threshold from a fresh labeled sample of the test task.
    pub fn ps_test_threshold(&self) -> Result<Threshold> {
        let mut rng = self.config.inner_rng(Purpose::TestCalibration, self.outer, self.inner);
        let sample = self.task.draw_scores(self.config.ps_test_size(), &mut rng)?;
        ps_test(&sample, self.config.spec.eps, self.config.spec.delta)
    }

    pub fn evaluate(&self, tau: Threshold) -> InnerRecord {
        let eps = self.config.spec.eps;
        let n = self.config.eval_size;
        // every method sees the same evaluation draws
        let mut rng = self.config.inner_rng(Purpose::Evaluation, self.outer, self.inner);
        let empirical_error = self.task.empirical_error(tau, n, &mut rng);
        let (oracle_correct, empirical_size) = match self.task.family() {
            Family::Analytic1d => (self.task.is_eps_correct(tau, eps).expect("analytic task"), None),
            Family::Classification => {
                let size = self.task.empirical_size(tau, n, &mut rng).expect("classification task");
                (empirical_error <= eps, Some(size))
            }
        };
        InnerRecord {
            inner: self.inner,
            threshold: tau,
            oracle_correct,
            empirical_error,
            empirical_size,
        }
    }
}

/// One inner trial for a fixed threshold.
pub fn run_inner_trial(tau: Threshold, config: &ExperimentConfig, outer: usize, inner: usize) -> InnerRecord {
    InnerTrial::draw(config, outer, inner).evaluate(tau)
}

/// Calibration tasks of one outer trial.
pub fn draw_calibration_tasks(config: &ExperimentConfig, outer: usize) -> Result<Vec<TaskCalibrationBundle<AdaptedTask>>> {
    (0..config.spec.num_tasks)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(config.seed, Purpose::CalibrationTask, outer as u64, j as u64);
            let task = draw_task(&config.meta, &mut rng);
            let adapted = adapt(&config.meta, task, config.spec.adapt_size, &mut rng);
            draw_bundle(&adapted, config.spec.calib_size, &mut rng)
        })
        .collect()
}

/// Thresholds every method fits on the calibration tasks of one outer trial.
pub fn calibrate_methods(
    config: &ExperimentConfig,
    bundles: &[TaskCalibrationBundle<AdaptedTask>],
) -> Result<Vec<(Method, Option<Threshold>)>> {
    let spec = &config.spec;
    config
        .methods
        .iter()
        .map(|&m| {
            let tau = match m {
                Method::MetaPs => Some(meta_ps(bundles, spec)?),
                Method::PooledPs => Some(pooled_ps(bundles, spec.eps, spec.delta)?),
                Method::PsTest => None,
                Method::Fixed(t) => Some(t),
            };
            Ok((m, tau))
        })
        .collect()
}

/// One outer trial: per-method records, in `config.methods` order.
pub fn run_outer_trial(config: &ExperimentConfig, outer: usize) -> Result<Vec<OuterRecord>> {
    let needs_calibration = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::MetaPs | Method::PooledPs));
    let bundles = if needs_calibration {
        draw_calibration_tasks(config, outer)?
    } else {
        Vec::new()
    };
    let fitted = calibrate_methods(config, &bundles)?;
    drop(bundles);

    let per_inner: Vec<Vec<InnerRecord>> = (0..config.inner_trials)
        .into_par_iter()
        .map(|i| {
            let trial = InnerTrial::draw(config, outer, i);
            fitted
                .iter()
                .map(|&(_, tau)| {
                    let tau = match tau {
                        Some(t) => t,
                        None => trial.ps_test_threshold()?,
                    };
                    Ok(trial.evaluate(tau))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    Ok(fitted
        .iter()
        .enumerate()
        .map(|(mi, &(_, threshold))| {
            let inner: Vec<InnerRecord> = per_inner.iter().map(|row| row[mi].clone()).collect();
            let hits = inner.iter().filter(|r| r.oracle_correct).count();
            let fraction = hits as f64 / inner.len() as f64;
            OuterRecord {
                outer,
                threshold,
                inner_success_fraction: fraction,
                success: outer_success(fraction, config.spec.alpha),
                inner,
            }
        })
        .collect())
}

/// Runs every outer trial (in parallel) and aggregates per method.
pub fn run_experiment(config: &ExperimentConfig) -> Result<TrialReport> {
    config.validate()?;
    let outers: Vec<Vec<OuterRecord>> = (0..config.outer_trials)
        .into_par_iter()
        .map(|o| run_outer_trial(config, o))
        .collect::<Result<_>>()?;

    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let outer: Vec<OuterRecord> = outers.iter().map(|row| row[mi].clone()).collect();
            let successes = outer.iter().filter(|o| o.success).count();
            let errors: Vec<f64> = outer
                .iter()
                .flat_map(|o| o.inner.iter().map(|i| i.empirical_error))
                .collect();
            let sizes: Vec<f64> = outer
                .iter()
                .flat_map(|o| o.inner.iter().filter_map(|i| i.empirical_size))
                .collect();
            MethodReport {
                method,
                outer_success_fraction: successes as f64 / outer.len() as f64,
                error: Quantiles::of(&errors),
                size: Quantiles::of(&sizes),
                outer,
            }
        })
        .collect();

    Ok(TrialReport {
        config: config.clone(),
        oracle: OracleKind::for_family(config.meta.family),
        methods,
    })
}

/// Outcome of checking `outer_success_fraction >= 1 - δ` up to Monte Carlo noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub method: Method,
    pub rate: f64,
    /// `1 - δ`.
    pub bar: f64,
    /// `3 sqrt(δ (1 - δ) / O)`.
    pub band: f64,
    pub pass: bool,
}

pub fn verify_report(report: &TrialReport) -> Vec<Verification> {
    let delta = report.config.spec.delta;
    let outer = report.config.outer_trials as f64;
    let bar = 1.0 - delta;
    let band = 3.0 * (delta * (1.0 - delta) / outer).sqrt();
    report
        .methods
        .iter()
        .map(|m| Verification {
            method: m.method,
            rate: m.outer_success_fraction,
            bar,
            band,
            pass: m.outer_success_fraction >= bar - band,
        })
        .collect()
}
