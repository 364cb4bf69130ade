//! Statistics primitives: percentiles, IQR fences, Mann–Whitney U with
//! rank-biserial correlation, D'Agostino's K² normality test, Welch's t-test
//! and empirical CDFs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{0}: empty sample")]
    Empty(&'static str),
    #[error("{what}: need at least {needed} values, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("{0}: zero variance")]
    ZeroVariance(&'static str),
    #[error("{0}: non-finite value in sample")]
    NonFinite(&'static str),
    #[error("percentile {0} outside [0, 100]")]
    BadQuantile(f64),
}

fn check_finite(values: &[f64], what: &'static str) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite(what))
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation percentile of an already sorted sample.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile `q` (0–100) by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("percentile"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(StatsError::BadQuantile(q));
    }
    check_finite(values, "percentile")?;
    Ok(percentile_sorted(&sorted(values), q))
}

pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    percentile(values, 50.0)
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("mean"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn std_dev(values: &[f64]) -> Result<f64, StatsError> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// Tukey fences `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierFence {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower: f64,
    pub upper: f64,
}

impl OutlierFence {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// Values inside the fence, in input order.
    pub fn retain(&self, values: &[f64]) -> Vec<f64> {
        values.iter().copied().filter(|v| self.contains(*v)).collect()
    }
}

pub fn iqr_fence(values: &[f64]) -> Result<OutlierFence, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            what: "iqr_fence",
            needed: 2,
            got: values.len(),
        });
    }
    check_finite(values, "iqr_fence")?;
    let s = sorted(values);
    let q1 = percentile_sorted(&s, 25.0);
    let q3 = percentile_sorted(&s, 75.0);
    let iqr = q3 - q1;
    Ok(OutlierFence {
        q1,
        q3,
        iqr,
        lower: q1 - 1.5 * iqr,
        upper: q3 + 1.5 * iqr,
    })
}

/// Outcome of a two-sample rank comparison.
///
/// `u_statistic` belongs to the first sample, so a positive `rbc` means the
/// first sample tends to be smaller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub u_statistic: f64,
    pub rbc: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub prob_first_smaller: f64,
}

/// Probability that a random draw from the first sample is smaller than one
/// from the second, given the rank-biserial correlation.
pub fn prob_first_smaller(rbc: f64) -> f64 {
    (rbc + 1.0) / 2.0
}

/// Mid-ranks (1-based) of `values`, plus the tie-correction sum Σ(t³ − t).
fn mid_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j)/2
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    (ranks, tie_sum)
}

/// Two-sided Mann–Whitney U test (normal approximation with tie and
/// continuity corrections) with rank-biserial correlation `1 − 2U/(n1·n2)`.
pub fn mann_whitney(sample1: &[f64], sample2: &[f64]) -> Result<RankTestResult, StatsError> {
    if sample1.is_empty() || sample2.is_empty() {
        return Err(StatsError::Empty("mann_whitney"));
    }
    check_finite(sample1, "mann_whitney")?;
    check_finite(sample2, "mann_whitney")?;
    let n1 = sample1.len();
    let n2 = sample2.len();
    let pooled: Vec<f64> = sample1.iter().chain(sample2).copied().collect();
    let (ranks, tie_sum) = mid_ranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let u1 = r1 - n1f * (n1f + 1.0) / 2.0;
    let pairs = n1f * n2f;
    let rbc = 1.0 - 2.0 * u1 / pairs;

    let n = n1f + n2f;
    let mu = pairs / 2.0;
    let var = pairs / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    let p_value = if var <= 0.0 || !var.is_finite() {
        1.0
    } else {
        let z = ((u1 - mu).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * standard_normal().sf(z)).min(1.0)
    };
    Ok(RankTestResult {
        u_statistic: u1,
        rbc,
        p_value,
        n1,
        n2,
        prob_first_smaller: prob_first_smaller(rbc),
    })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn central_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// D'Agostino–Pearson omnibus K² test. Returns `(K², p)` with p from the
/// χ²(2) survival function.
pub fn dagostino_k2(values: &[f64]) -> Result<(f64, f64), StatsError> {
    const MIN_N: usize = 20;
    if values.len() < MIN_N {
        return Err(StatsError::TooFew {
            what: "dagostino_k2",
            needed: MIN_N,
            got: values.len(),
        });
    }
    check_finite(values, "dagostino_k2")?;
    let (m2, m3, m4) = central_moments(values);
    if m2 <= f64::EPSILON * values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64 {
        return Err(StatsError::ZeroVariance("dagostino_k2"));
    }
    let n = values.len() as f64;

    // skewness (D'Agostino 1970)
    let b1 = m3 / m2.powf(1.5);
    let mut y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 =
        3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    if y == 0.0 {
        y = 1.0;
    }
    let ya = y / alpha;
    let z_skew = delta * (ya + (ya * ya + 1.0).sqrt()).ln();

    // kurtosis (Anscombe & Glynn 1983)
    let b2 = m4 / (m2 * m2);
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let z_kurt = if denom == 0.0 {
        f64::INFINITY
    } else {
        let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
        (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
    };

    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    // χ²(2) survival function
    let p = (-k2 / 2.0).exp();
    Ok((k2, p))
}

/// Two-sided Welch t-test. Returns `(t, p)`.
pub fn welch_t_test(sample1: &[f64], sample2: &[f64]) -> Result<(f64, f64), StatsError> {
    for s in [sample1, sample2] {
        if s.len() < 2 {
            return Err(StatsError::TooFew {
                what: "welch_t_test",
                needed: 2,
                got: s.len(),
            });
        }
        check_finite(s, "welch_t_test")?;
    }
    let (n1, n2) = (sample1.len() as f64, sample2.len() as f64);
    let m1 = sample1.iter().sum::<f64>() / n1;
    let m2 = sample2.iter().sum::<f64>() / n2;
    let v1 = sample1.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / (n1 - 1.0);
    let v2 = sample2.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / (n2 - 1.0);
    let se2 = v1 / n1 + v2 / n2;
    if se2 <= 0.0 || !se2.is_finite() {
        return Err(StatsError::ZeroVariance("welch_t_test"));
    }
    let t = (m1 - m2) / se2.sqrt();
    if t == 0.0 {
        return Ok((0.0, 1.0));
    }
    let df = se2 * se2 / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok((t, p))
}

/// Step-function empirical CDF over the distinct sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfCurve {
    pub support: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl EcdfCurve {
    /// F(x): fraction of the sample ≤ x.
    pub fn eval(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s <= x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.cumulative.iter().copied())
    }
}

pub fn ecdf(values: &[f64]) -> Result<EcdfCurve, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("ecdf"));
    }
    check_finite(values, "ecdf")?;
    let s = sorted(values);
    let n = s.len() as f64;
    let mut support = Vec::new();
    let mut cumulative = Vec::new();
    for (i, v) in s.iter().enumerate() {
        if i + 1 < s.len() && s[i + 1] == *v {
            continue;
        }
        support.push(*v);
        cumulative.push((i + 1) as f64 / n);
    }
    Ok(EcdfCurve { support, cumulative })
}
