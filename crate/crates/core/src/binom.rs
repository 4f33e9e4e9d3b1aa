//! Binomial tail probabilities and the one-sided Clopper-Pearson upper bound.
//!
//! The pmf is evaluated in log space with Loader's saddle-point expansion,
//! which keeps full relative precision for large `m`. Tail sums start at a log-space anchor and
//! walk away from the mode with the pmf ratio recurrence, stopping once the
//! remaining terms can no longer change the compensated sum. Only the short
//! tail on the far side of the mode is ever summed, so `m` in the millions
//! costs a few hundred terms per call.

use crate::error::{check_unit_closed, check_unit_open, Error, Result};

/// Absolute tolerance of the bisection in [`cp_upper_bound`].
pub const CP_TOLERANCE: f64 = 1e-10;

/// Relative size below which a tail term is dropped.
const TAIL_CUTOFF: f64 = 1e-18;

fn check_counts(k: u64, m: u64) -> Result<()> {
    if k > m {
        return Err(Error::CountExceedsTrials { k, m });
    }
    Ok(())
}

/// `ln n! - ((n + 1/2) ln n - n + ln(2π)/2)` for `n = 0..=15`.
#[allow(clippy::excessive_precision)]
const STIRLING_ERROR: [f64; 16] = [
    0.0,
    0.08106146679532725821967026,
    0.04134069595540929409382208,
    0.02767792568499833914878929,
    0.02079067210376509311152277,
    0.01664469118982119216319487,
    0.01387612882307074799874573,
    0.01189670994589177009505572,
    0.01041126526197209649747857,
    0.009255462182712732917728637,
    0.008330563433362871256469319,
    0.007573675487951840794972024,
    0.006942840107209529865664153,
    0.006408994188004207068439631,
    0.005951370112758847735624416,
    0.00555473355196280137103869,
];

fn stirling_error(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLING_ERROR[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, without cancellation near `x = np`.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

fn ln_pmf(k: u64, m: u64, p: f64) -> f64 {
    // caller guarantees 0 < p < 1
    let q = 1.0 - p;
    let mf = m as f64;
    if k == 0 {
        return if p < 0.1 { -deviance(mf, mf * q) - mf * p } else { mf * (-p).ln_1p() };
    }
    if k == m {
        return if q < 0.1 { -deviance(mf, mf * p) - mf * q } else { mf * p.ln() };
    }
    let kf = k as f64;
    let lc = stirling_error(m)
        - stirling_error(k)
        - stirling_error(m - k)
        - deviance(kf, mf * p)
        - deviance(mf - kf, mf * q);
    let lf = (2.0 * std::f64::consts::PI).ln() + kf.ln() + (-kf / mf).ln_1p();
    lc - 0.5 * lf
}

/// Neumaier compensated accumulator.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Probability of exactly `k` failures in `m` Bernoulli(`p`) trials.
pub fn binom_pmf(k: u64, m: u64, p: f64) -> Result<f64> {
    check_counts(k, m)?;
    check_unit_closed("p", p)?;
    Ok(pmf_unchecked(k, m, p))
}

fn pmf_unchecked(k: u64, m: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == m { 1.0 } else { 0.0 };
    }
    ln_pmf(k, m, p).exp()
}

/// `P[X <= k]` for `X ~ Binom(m, p)`.
pub fn binom_cdf(k: u64, m: u64, p: f64) -> Result<f64> {
    check_counts(k, m)?;
    check_unit_closed("p", p)?;
    Ok(cdf_unchecked(k, m, p))
}

pub(crate) fn cdf_unchecked(k: u64, m: u64, p: f64) -> f64 {
    if k >= m || p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let mode = ((m + 1) as f64 * p).floor() as u64;
    if k < mode {
        lower_tail(k, m, p)
    } else {
        (1.0 - upper_tail(k + 1, m, p)).clamp(0.0, 1.0)
    }
}

/// Sum of pmf over `0..=k`, for `k` below the mode.
fn lower_tail(k: u64, m: u64, p: f64) -> f64 {
    let odds = (1.0 - p) / p;
    let mut term = ln_pmf(k, m, p).exp();
    let mut acc = CompensatedSum::default();
    let mut j = k;
    loop {
        acc.add(term);
        if j == 0 || term == 0.0 || term < acc.value() * TAIL_CUTOFF {
            break;
        }
        // pmf(j-1) / pmf(j) = j / (m - j + 1) * (1 - p) / p
        term *= j as f64 / (m - j + 1) as f64 * odds;
        j -= 1;
    }
    acc.value().min(1.0)
}

/// Sum of pmf over `from..=m`, for `from` above the mode.
fn upper_tail(from: u64, m: u64, p: f64) -> f64 {
    let odds = p / (1.0 - p);
    let mut term = ln_pmf(from, m, p).exp();
    let mut acc = CompensatedSum::default();
    let mut j = from;
    loop {
        acc.add(term);
        if j == m || term == 0.0 || term < acc.value() * TAIL_CUTOFF {
            break;
        }
        // pmf(j+1) / pmf(j) = (m - j) / (j + 1) * p / (1 - p)
        term *= (m - j) as f64 / (j + 1) as f64 * odds;
        j += 1;
    }
    acc.value().min(1.0)
}

/// One-sided Clopper-Pearson upper bound
/// `inf { θ ∈ [0, 1] : F(k; m, θ) <= δ } ∪ {1}`.
///
/// Bisection on the decreasing map `θ ↦ F(k; m, θ)`; the result is the upper
/// end of the final bracket plus [`CP_TOLERANCE`], so it never undershoots the
/// exact bound.
pub fn cp_upper_bound(k: u64, m: u64, delta: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::NoTrials);
    }
    check_counts(k, m)?;
    check_unit_open("delta", delta)?;
    Ok(cp_unchecked(k, m, delta))
}

pub(crate) fn cp_unchecked(k: u64, m: u64, delta: f64) -> f64 {
    if k == m {
        return 1.0;
    }
    // F(k; m, 0) = 1 > δ and F(k; m, 1) = 0 <= δ
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > CP_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if cdf_unchecked(k, m, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi + CP_TOLERANCE).min(1.0)
}
