//! Prediction sets `F_τ(x) = {y : f(x, y) >= τ}` and PAC threshold selection.
//!
//! [`ps_binom`] selects the largest threshold whose calibration error count
//! passes the Clopper-Pearson test. The error count is a step function that
//! only changes at sample values, so the ascending grid search reduces to
//! picking one order statistic of the sorted sample.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binom::{cdf_unchecked, cp_unchecked};
use crate::error::{check_unit_closed, check_unit_open, Error, Result};

/// Prediction-set threshold on the extended nonnegative reals.
///
/// `0` admits every label; `+∞` admits none. Serialized as a JSON number, or
/// the string `"inf"` for the empty-set sentinel.
#[derive(Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub const ZERO: Threshold = Threshold(0.0);
    pub const INFINITY: Threshold = Threshold(f64::INFINITY);

    /// Accepts any value in `[0, +∞]`.
    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 {
            // normalizes -0.0
            Ok(Threshold(value + 0.0))
        } else {
            Err(Error::OutOfRange {
                name: "threshold",
                range: "[0, +inf]",
                value,
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Whether a label with score `score` belongs to `F_τ`.
    pub fn admits(self, score: f64) -> bool {
        score >= self.0
    }
}

impl Eq for Threshold {}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Debug for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Threshold({self})")
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            f.write_str(&crate::format::sig9(self.0))
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(crate::format::round_sig9(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ThresholdVisitor;

        impl Visitor<'_> for ThresholdVisitor {
            type Value = Threshold;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                Threshold::new(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                Threshold::new(v as f64).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                match v {
                    "inf" => Ok(Threshold::INFINITY),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(ThresholdVisitor)
    }
}

/// True-label scores of one calibration set, kept sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    sorted: Vec<f64>,
}

impl ScoreSample {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s >= 0.0))
        {
            return Err(Error::InvalidScore { index, value });
        }
        for s in &mut scores {
            *s += 0.0;
        }
        scores.sort_unstable_by(f64::total_cmp);
        Ok(ScoreSample { sorted: scores })
    }

    /// Reads a one-column CSV with header `score`. Any malformed row is an
    /// error carrying the file path and line number.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, path)
    }

    pub fn from_csv_reader(reader: impl std::io::Read, path: &Path) -> Result<Self> {
        let data_err = |line: u64, message: String| Error::Data {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| data_err(1, e.to_string()))?
            .clone();
        if headers.len() != 1 || &headers[0] != "score" {
            return Err(data_err(
                1,
                format!("expected header \"score\", found {:?}", headers.iter().collect::<Vec<_>>()),
            ));
        }
        let mut scores = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                data_err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != 1 {
                return Err(data_err(line, format!("expected 1 field, found {}", record.len())));
            }
            let value: f64 = record[0]
                .parse()
                .map_err(|_| data_err(line, format!("not a decimal number: {:?}", &record[0])))?;
            if !(value.is_finite() && value >= 0.0) {
                return Err(data_err(line, format!("score must be finite and nonnegative, got {value}")));
            }
            scores.push(value);
        }
        if scores.is_empty() {
            return Err(data_err(1, "no scores".into()));
        }
        Self::new(scores)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Merges several samples into one multiset.
    pub fn pooled<'a>(samples: impl IntoIterator<Item = &'a ScoreSample>) -> Result<Self> {
        let scores: Vec<f64> = samples
            .into_iter()
            .flat_map(|s| s.sorted.iter().copied())
            .collect();
        Self::new(scores)
    }

    /// Applies a score transform, re-sorting the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.sorted.iter().map(|&s| f(s)).collect())
    }
}

/// A (possibly adapted) score function `f(x, y)` over a finite label set.
pub trait ScoreOracle {
    type Input;
    type Label: Clone;

    fn labels(&self) -> &[Self::Label];

    fn score(&self, x: &Self::Input, y: &Self::Label) -> f64;
}

/// Membership test for the set of ε-correct thresholds of one task.
///
/// Implementations must be downward closed: accepting `τ` implies accepting
/// every `τ' <= τ`.
pub trait CorrectnessOracle {
    fn accepts(&self, tau: Threshold) -> bool;

    /// The supremum of the accepted set, when it is known in closed form.
    fn supremum(&self) -> Option<Threshold> {
        None
    }
}

/// Number of scores strictly below `tau`, i.e. calibration points whose true
/// label falls outside `F_τ`.
pub fn error_count(sample: &ScoreSample, tau: Threshold) -> usize {
    sample.sorted.partition_point(|&s| s < tau.0)
}

/// Largest error count `k` out of `m` whose Clopper-Pearson upper bound at
/// level `delta` is at most `eps`, or `None` when even `k = 0` fails.
pub fn max_valid_error_count(m: u64, eps: f64, delta: f64) -> Result<Option<u64>> {
    if m == 0 {
        return Err(Error::NoTrials);
    }
    check_unit_closed("eps", eps)?;
    check_unit_open("delta", delta)?;
    Ok(max_valid_unchecked(m, eps, delta))
}

pub(crate) fn max_valid_unchecked(m: u64, eps: f64, delta: f64) -> Option<u64> {
    // cp(k) <= ε iff F(k; m, ε) <= δ up to the bisection tolerance, and
    // F(k; m, ε) is nondecreasing in k: locate the last k with F <= δ, then
    // settle the boundary against cp itself.
    let mut guess: Option<u64> = if cdf_unchecked(0, m, eps) > delta {
        None
    } else {
        let (mut lo, mut hi) = (0u64, m);
        // invariant: F(lo) <= δ, and either hi == m or F(hi) > δ
        if cdf_unchecked(m, m, eps) <= delta {
            lo = m;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if cdf_unchecked(mid, m, eps) <= delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    };

    let passes = |k: u64| cp_unchecked(k, m, delta) <= eps;
    while let Some(k) = guess {
        if passes(k) {
            break;
        }
        guess = k.checked_sub(1);
    }
    loop {
        let next = guess.map_or(0, |k| k + 1);
        if next <= m && passes(next) {
            guess = Some(next);
        } else {
            break;
        }
    }
    guess
}

/// Picks the threshold admitted by an error budget of `k_star` out of the
/// sorted values: `0` for no budget, `+∞` when every point may be missed,
/// otherwise the `(k_star + 1)`-th smallest value.
pub(crate) fn select_order_statistic<T: Copy>(
    sorted: &[T],
    k_star: Option<u64>,
    lift: impl Fn(T) -> Threshold,
) -> Threshold {
    match k_star {
        None => Threshold::ZERO,
        Some(k) if k as usize >= sorted.len() => Threshold::INFINITY,
        Some(k) => lift(sorted[k as usize]),
    }
}

/// PAC prediction-set threshold: the largest `τ` with
/// `cp_upper_bound(error_count(sample, τ), |sample|, δ) <= ε`.
pub fn ps_binom(sample: &ScoreSample, eps: f64, delta: f64) -> Result<Threshold> {
    let k_star = max_valid_error_count(sample.len() as u64, eps, delta)?;
    Ok(ps_binom_with_budget(sample, k_star))
}

pub(crate) fn ps_binom_with_budget(sample: &ScoreSample, k_star: Option<u64>) -> Threshold {
    select_order_statistic(&sample.sorted, k_star, Threshold)
}

/// `F_τ(x)` for a score oracle over a finite label set.
pub fn prediction_set<O: ScoreOracle>(oracle: &O, tau: Threshold, x: &O::Input) -> Vec<O::Label> {
    oracle
        .labels()
        .iter()
        .filter(|y| tau.admits(oracle.score(x, y)))
        .cloned()
        .collect()
}
