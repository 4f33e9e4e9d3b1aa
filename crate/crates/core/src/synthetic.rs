//! Hierarchical synthetic task models.
//!
//! `analytic-1d`: a task is a scalar `θ ~ N(μ₀, σ_task²)`. Adapting with `t`
//! draws from `N(θ, σ_w²)` gives a sample mean `m̄` (fixed at `μ₀` when
//! `t = 0`). True-label scores are `logistic(G)` with
//! `G ~ N(θ - c|m̄ - θ|, σ_s²)`, so the set of ε-correct thresholds is known in
//! closed form.
//!
//! `classification`: a task is `C` Gaussian prototypes in `R^d`. Adaptation
//! estimates each prototype from `t` shots per class and a label scores
//! `logistic(-‖x - m̂_y‖² / 2)`. Correctness can only be estimated by sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_unit_closed, Error, Result};
use crate::meta::TaskCalibrationBundle;
use crate::pac::{CorrectnessOracle, ScoreSample, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "analytic-1d")]
    Analytic1d,
    #[serde(rename = "classification")]
    Classification,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Analytic1d => "analytic-1d",
            Family::Classification => "classification",
        }
    }
}

/// Distribution over tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaDistribution {
    pub family: Family,
    /// Task-parameter location (analytic) or prototype prior mean (classification).
    pub mu0: f64,
    /// Spread of task parameters around `mu0`.
    pub sigma_task: f64,
    /// Within-task noise of adaptation draws and inputs.
    pub sigma_w: f64,
    /// Score noise on the logit scale (analytic only).
    pub sigma_s: f64,
    /// Adaptation penalty `c`.
    pub penalty: f64,
    pub classes: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of class prototypes.
    pub prototype_spread: f64,
}

impl Default for MetaDistribution {
    fn default() -> Self {
        MetaDistribution {
            family: Family::Analytic1d,
            mu0: 1.0,
            sigma_task: 0.5,
            sigma_w: 1.0,
            sigma_s: 1.0,
            penalty: 1.0,
            classes: 5,
            dim: 2,
            prototype_spread: 1.5,
        }
    }
}

impl MetaDistribution {
    pub fn classification() -> Self {
        MetaDistribution {
            family: Family::Classification,
            mu0: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spreads = [
            ("sigma_task", self.sigma_task),
            ("sigma_w", self.sigma_w),
            ("sigma_s", self.sigma_s),
            ("penalty", self.penalty),
            ("prototype_spread", self.prototype_spread),
        ];
        for (name, v) in spreads {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !self.mu0.is_finite() {
            return Err(Error::Config("mu0 must be finite".into()));
        }
        if self.family == Family::Classification {
            if self.classes < 2 {
                return Err(Error::Config("classes must be at least 2".into()));
            }
            if self.dim < 1 {
                return Err(Error::Config("dim must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticTask {
    Scalar(f64),
    Prototypes(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Adaptation {
    /// Sample mean of the adaptation draws.
    Mean(f64),
    /// Per-class empirical prototypes.
    Prototypes(Vec<Vec<f64>>),
}

/// A task after adaptation; fixes the score law of its examples.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedTask {
    pub meta: MetaDistribution,
    pub task: SyntheticTask,
    pub adaptation: Adaptation,
}

/// Scores of every label for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub label: usize,
    pub scores: Vec<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(v: f64) -> f64 {
    (v / (1.0 - v)).ln()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile by bisection on [`normal_cdf`], to `1e-10`.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn draw_task<R: Rng + ?Sized>(meta: &MetaDistribution, rng: &mut R) -> SyntheticTask {
    match meta.family {
        Family::Analytic1d => SyntheticTask::Scalar(meta.mu0 + meta.sigma_task * normal(rng)),
        Family::Classification => SyntheticTask::Prototypes(
            (0..meta.classes)
                .map(|_| {
                    (0..meta.dim)
                        .map(|_| meta.mu0 + meta.prototype_spread * normal(rng))
                        .collect()
                })
                .collect(),
        ),
    }
}

/// Adapts `task` with `t` draws (analytic) or `t` shots per class
/// (classification). `t = 0` leaves the summary at the prior mean.
pub fn adapt<R: Rng + ?Sized>(
    meta: &MetaDistribution,
    task: SyntheticTask,
    t: usize,
    rng: &mut R,
) -> AdaptedTask {
    let adaptation = match &task {
        SyntheticTask::Scalar(theta) => {
            if t == 0 {
                Adaptation::Mean(meta.mu0)
            } else {
                let sum: f64 = (0..t).map(|_| theta + meta.sigma_w * normal(rng)).sum();
                Adaptation::Mean(sum / t as f64)
            }
        }
        SyntheticTask::Prototypes(protos) => Adaptation::Prototypes(
            protos
                .iter()
                .map(|p| {
                    if t == 0 {
                        vec![meta.mu0; p.len()]
                    } else {
                        let mut acc = vec![0.0; p.len()];
                        for _ in 0..t {
                            for (a, &c) in acc.iter_mut().zip(p) {
                                *a += c + meta.sigma_w * normal(rng);
                            }
                        }
                        acc.iter().map(|a| a / t as f64).collect()
                    }
                })
                .collect(),
        ),
    };
    AdaptedTask {
        meta: *meta,
        task,
        adaptation,
    }
}

impl AdaptedTask {
    pub fn family(&self) -> Family {
        self.meta.family
    }

    fn analytic_parts(&self, op: &'static str) -> Result<(f64, f64)> {
        match (&self.task, &self.adaptation) {
            (SyntheticTask::Scalar(theta), Adaptation::Mean(mean)) => Ok((*theta, *mean)),
            _ => Err(Error::UnsupportedFamily(op, self.family().name())),
        }
    }

    /// Location `μ_G = θ - c|m̄ - θ|` of the logit-scale true-label score.
    pub fn score_location(&self) -> Result<f64> {
        let (theta, mean) = self.analytic_parts("score_location")?;
        Ok(theta - self.meta.penalty * (mean - theta).abs())
    }

    /// `P(V <= v)` for the true-label score `V`.
    pub fn true_label_score_cdf(&self, v: f64) -> Result<f64> {
        let mu = self.score_location()?;
        if v <= 0.0 {
            return Ok(0.0);
        }
        if v >= 1.0 {
            return Ok(1.0);
        }
        let sigma = self.meta.sigma_s;
        if sigma == 0.0 {
            return Ok(if v >= logistic(mu) { 1.0 } else { 0.0 });
        }
        Ok(normal_cdf((logit(v) - mu) / sigma))
    }

    /// `sup T_ε`: the ε-quantile of the true-label score.
    pub fn sup_t_eps(&self, eps: f64) -> Result<Threshold> {
        let mu = self.score_location()?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::OutOfRange {
                name: "eps",
                range: "(0, 1)",
                value: eps,
            });
        }
        Threshold::new(logistic(mu + self.meta.sigma_s * normal_quantile(eps)))
    }

    /// Exact membership `τ ∈ T_ε` (analytic family only).
    pub fn is_eps_correct(&self, tau: Threshold, eps: f64) -> Result<bool> {
        let mu = self.score_location()?;
        check_unit_closed("eps", eps)?;
        if tau == Threshold::ZERO || eps >= 1.0 {
            return Ok(true);
        }
        if tau.is_infinite() {
            return Ok(false);
        }
        if eps <= 0.0 {
            // no mass may fall below τ
            let floor = if self.meta.sigma_s == 0.0 { logistic(mu) } else { 0.0 };
            return Ok(tau.value() <= floor);
        }
        Ok(tau <= self.sup_t_eps(eps)?)
    }

    /// Monte Carlo membership: empirical error over `eval_size` fresh
    /// examples is at most `eps`. An estimate, not an oracle.
    pub fn estimate_eps_correct<R: Rng + ?Sized>(
        &self,
        tau: Threshold,
        eps: f64,
        eval_size: usize,
        rng: &mut R,
    ) -> bool {
        self.empirical_error(tau, eval_size, rng) <= eps
    }

    /// One true-label score.
    pub fn draw_score<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.adaptation {
            Adaptation::Mean(_) => {
                let mu = self.score_location().expect("analytic task");
                logistic(mu + self.meta.sigma_s * normal(rng))
            }
            Adaptation::Prototypes(_) => {
                let ex = self.draw_labeled(rng);
                ex.scores[ex.label]
            }
        }
    }

    /// One classification example with the scores of every label.
    ///
    /// # Panics
    /// On an analytic task.
    pub fn draw_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledScores {
        let (SyntheticTask::Prototypes(protos), Adaptation::Prototypes(fitted)) =
            (&self.task, &self.adaptation)
        else {
            panic!("draw_labeled on an analytic task");
        };
        let label = rng.random_range(0..protos.len());
        let x: Vec<f64> = protos[label]
            .iter()
            .map(|&c| c + self.meta.sigma_w * normal(rng))
            .collect();
        let scores = fitted
            .iter()
            .map(|m| {
                let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                logistic(-0.5 * d2)
            })
            .collect();
        LabeledScores { label, scores }
    }

    pub fn draw_labeled_scores<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<LabeledScores>> {
        if self.family() != Family::Classification {
            return Err(Error::UnsupportedFamily("labeled scores", self.family().name()));
        }
        Ok((0..n).map(|_| self.draw_labeled(rng)).collect())
    }

    /// `n` i.i.d. true-label scores.
    pub fn draw_scores<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ScoreSample> {
        ScoreSample::new((0..n).map(|_| self.draw_score(rng)).collect())
    }

    /// Fraction of `eval_size` fresh examples whose true label is outside `F_τ`.
    pub fn empirical_error<R: Rng + ?Sized>(&self, tau: Threshold, eval_size: usize, rng: &mut R) -> f64 {
        if eval_size == 0 || tau == Threshold::ZERO {
            return 0.0;
        }
        if tau.is_infinite() {
            return 1.0;
        }
        let misses = (0..eval_size).filter(|_| !tau.admits(self.draw_score(rng))).count();
        misses as f64 / eval_size as f64
    }

    /// Mean prediction-set cardinality over `eval_size` fresh examples.
    pub fn empirical_size<R: Rng + ?Sized>(&self, tau: Threshold, eval_size: usize, rng: &mut R) -> Result<f64> {
        let examples = self.draw_labeled_scores(eval_size, rng)?;
        if examples.is_empty() {
            return Ok(0.0);
        }
        let total: usize = examples
            .iter()
            .map(|ex| ex.scores.iter().filter(|&&s| tau.admits(s)).count())
            .sum();
        Ok(total as f64 / examples.len() as f64)
    }
}

/// `n` calibration scores from an adapted task, carrying the task with them.
pub fn draw_bundle<R: Rng + ?Sized>(
    adapted: &AdaptedTask,
    n: usize,
    rng: &mut R,
) -> Result<TaskCalibrationBundle<AdaptedTask>> {
    Ok(TaskCalibrationBundle {
        calibration_scores: adapted.draw_scores(n, rng)?,
        adaptation: adapted.clone(),
    })
}

/// `T_ε` of one adapted analytic task as a [`CorrectnessOracle`].
pub struct EpsCorrectness<'a> {
    task: &'a AdaptedTask,
    eps: f64,
}

impl<'a> EpsCorrectness<'a> {
    pub fn new(task: &'a AdaptedTask, eps: f64) -> Result<Self> {
        task.is_eps_correct(Threshold::ZERO, eps)?;
        Ok(EpsCorrectness { task, eps })
    }
}

impl CorrectnessOracle for EpsCorrectness<'_> {
    fn accepts(&self, tau: Threshold) -> bool {
        self.task.is_eps_correct(tau, self.eps).expect("validated")
    }

    fn supremum(&self) -> Option<Threshold> {
        self.task.sup_t_eps(self.eps).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    fn analytic(theta: f64, mean: f64, sigma_s: f64, penalty: f64) -> AdaptedTask {
        AdaptedTask {
            meta: MetaDistribution {
                sigma_s,
                penalty,
                ..Default::default()
            },
            task: SyntheticTask::Scalar(theta),
            adaptation: Adaptation::Mean(mean),
        }
    }

    #[test]
    fn normal_quantile_table() {
        assert_abs_diff_eq!(normal_quantile(0.1), -1.2815515655446004, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_meta_distribution() {
        let meta = MetaDistribution {
            sigma_task: 0.0,
            ..Default::default()
        };
        let mut rng = seeded(1);
        for _ in 0..5 {
            assert_eq!(draw_task(&meta, &mut rng), SyntheticTask::Scalar(meta.mu0));
        }
    }

    #[test]
    fn adaptation_modes() {
        let meta = MetaDistribution {
            sigma_w: 0.0,
            ..Default::default()
        };
        let mut rng = seeded(2);
        let a = adapt(&meta, SyntheticTask::Scalar(0.3), 5, &mut rng);
        assert_eq!(a.adaptation, Adaptation::Mean(0.3));
        let a = adapt(&meta, SyntheticTask::Scalar(0.3), 0, &mut rng);
        assert_eq!(a.adaptation, Adaptation::Mean(meta.mu0));
    }

    #[test]
    fn score_cdf_and_quantile() {
        let a = analytic(0.0, 0.0, 1.0, 1.0);
        assert_abs_diff_eq!(a.true_label_score_cdf(0.5).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(a.true_label_score_cdf(1.0).unwrap(), 1.0);
        assert_eq!(a.true_label_score_cdf(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(a.true_label_score_cdf(logistic(-1.2815516)).unwrap(), 0.1, epsilon = 1e-7);
        // logistic(-1.2815516) = 1 / (1 + e^1.2815516)
        assert_abs_diff_eq!(a.sup_t_eps(0.1).unwrap().value(), 0.2172862285, epsilon = 1e-9);
        assert_abs_diff_eq!(a.sup_t_eps(0.5).unwrap().value(), 0.5, epsilon = 1e-10);
        assert!(a.sup_t_eps(0.0).is_err());
        assert!(a.sup_t_eps(1.0).is_err());
    }

    #[test]
    fn penalty_off_ignores_adaptation() {
        let a = analytic(0.4, -3.0, 0.7, 0.0);
        let b = analytic(0.4, 2.0, 0.7, 0.0);
        assert_eq!(a.sup_t_eps(0.2).unwrap(), b.sup_t_eps(0.2).unwrap());
        let c = analytic(0.4, 2.0, 0.7, 1.5);
        assert!(c.sup_t_eps(0.2).unwrap() < a.sup_t_eps(0.2).unwrap());
    }

    #[test]
    fn membership_edges() {
        let a = analytic(0.2, 0.5, 1.0, 1.0);
        let sup = a.sup_t_eps(0.1).unwrap();
        assert!(a.is_eps_correct(Threshold::ZERO, 0.1).unwrap());
        assert!(!a.is_eps_correct(Threshold::INFINITY, 0.1).unwrap());
        assert!(a.is_eps_correct(sup, 0.1).unwrap());
        assert!(a.is_eps_correct(Threshold::new(sup.value() - 1e-9).unwrap(), 0.1).unwrap());
        assert!(!a.is_eps_correct(Threshold::new(sup.value() + 1e-6).unwrap(), 0.1).unwrap());
        assert!(a.is_eps_correct(Threshold::INFINITY, 1.0).unwrap());
        let oracle = EpsCorrectness::new(&a, 0.1).unwrap();
        assert_eq!(oracle.supremum(), Some(sup));
    }

    #[test]
    fn degenerate_score_noise() {
        let a = analytic(0.3, 0.3, 0.0, 1.0);
        let s = a.draw_scores(20, &mut seeded(3)).unwrap();
        assert!(s.sorted().iter().all(|&v| v == logistic(0.3)));
        assert_eq!(a.sup_t_eps(0.1).unwrap().value(), logistic(0.3));
    }

    #[test]
    fn classification_rejects_analytic_ops() {
        let meta = MetaDistribution::classification();
        let mut rng = seeded(4);
        let task = draw_task(&meta, &mut rng);
        let a = adapt(&meta, task, 3, &mut rng);
        assert!(a.sup_t_eps(0.1).is_err());
        assert!(a.is_eps_correct(Threshold::ZERO, 0.1).is_err());
        assert!(matches!(
            analytic(0.0, 0.0, 1.0, 1.0).empirical_size(Threshold::ZERO, 10, &mut rng),
            Err(Error::UnsupportedFamily(..))
        ));
        assert_eq!(a.empirical_size(Threshold::ZERO, 10, &mut rng).unwrap(), 5.0);
        assert_eq!(a.empirical_size(Threshold::INFINITY, 10, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn meta_validation() {
        assert!(MetaDistribution::default().validate().is_ok());
        let bad = MetaDistribution {
            sigma_s: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetaDistribution {
            classes: 1,
            ..MetaDistribution::classification()
        };
        assert!(bad.validate().is_err());
        let err = serde_json::from_str::<MetaDistribution>(r#"{"sigma_x": 1.0}"#);
        assert!(err.is_err());
        let m: MetaDistribution = serde_json::from_str(r#"{"family": "classification", "classes": 3}"#).unwrap();
        assert_eq!(m.classes, 3);
    }
}
