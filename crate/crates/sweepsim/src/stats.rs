//! Statistical machinery for the verification suites: summary statistics,
//! a one-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov
//! distribution, a chi-square goodness-of-fit test with tail pooling, and
//! an exposure-based rate estimator for counting processes.

use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Why a statistic could not be computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatError {
    /// Fewer observations than the procedure needs.
    Undersized { n: usize, min: usize },
    /// A value outside the distribution's support (e.g. a negative
    /// inter-arrival time passed to an exponential test).
    OutOfSupport { value: f64 },
    /// Expected counts and observed counts disagree in length, or the
    /// expected counts cannot be pooled to the minimum cell size.
    BadBins,
}

impl fmt::Display for StatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatError::Undersized { n, min } => {
                write!(f, "sample of size {n} is below the required minimum {min}")
            }
            StatError::OutOfSupport { value } => {
                write!(f, "value {value} lies outside the distribution's support")
            }
            StatError::BadBins => write!(f, "invalid bin layout for the chi-square test"),
        }
    }
}

impl std::error::Error for StatError {}

// ─── Summary statistics ───

/// Sample mean; 0 for an empty sample.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; 0 below two observations.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Standard error of an empirical frequency `successes/trials`.
pub fn binomial_se(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Standard error of the sample variance: `sqrt((m4 - var^2) / n)` with
/// the fourth central moment and the population variance; 0 below two
/// observations.
pub fn variance_standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - var * var) / n).max(0.0).sqrt()
}

// ─── Rate estimation ───

/// Rate estimate for a counting process observed over a known exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    /// Poisson standard error `sqrt(arrivals) / exposure`.
    pub se: f64,
    pub arrivals: u64,
    pub exposure: f64,
}

/// Estimate a rate as arrivals over total exposure. Unlike a mean of
/// completed inter-arrival gaps, this is unbiased even when the exposure
/// windows end at stopping times entangled with the arrivals (the
/// censored last gap in each window is disproportionately a long one).
pub fn rate_estimate(arrivals: u64, exposure: f64) -> RateEstimate {
    assert!(exposure > 0.0, "rate estimation needs positive exposure");
    RateEstimate {
        rate: arrivals as f64 / exposure,
        se: (arrivals as f64).sqrt() / exposure,
        arrivals,
        exposure,
    }
}

// ─── Kolmogorov–Smirnov ───

/// One-sample KS test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Supremum distance between the empirical and reference CDFs.
    pub statistic: f64,
    /// Asymptotic p-value `P(K > sqrt(n) D)` from the Kolmogorov
    /// distribution (no small-sample correction).
    pub p_value: f64,
    pub n: usize,
}

/// Minimum sample size for the asymptotic KS p-value to be meaningful.
pub const KS_MIN_SAMPLE: usize = 20;

/// Survival function `P(K > x)` of the Kolmogorov distribution.
///
/// Two complementary series: the theta-function form converges fast for
/// small `x`, the alternating form for large `x`; they agree to ~14
/// digits at the crossover.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        let mut cdf = 0.0;
        for i in 1..=20u32 {
            let odd = f64::from(2 * i - 1);
            cdf += (-odd * odd * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for i in 1..=20u32 {
            let term = (-2.0 * f64::from(i * i) * x * x).exp();
            sf += if i % 2 == 1 { term } else { -term };
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

/// One-sample KS test of `sample` against a reference CDF.
///
/// The statistic is `max_i max(i/n − F(x_(i)), F(x_(i)) − (i−1)/n)` over
/// the sorted sample; the p-value is asymptotic.
pub fn ks_one_sample(
    sample: &[f64],
    cdf: impl Fn(f64) -> f64,
) -> Result<KsResult, StatError> {
    let n = sample.len();
    if n < KS_MIN_SAMPLE {
        return Err(StatError::Undersized { n, min: KS_MIN_SAMPLE });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let upper = (i + 1) as f64 / nf - f;
        let lower = f - i as f64 / nf;
        d = d.max(upper).max(lower);
    }
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(nf.sqrt() * d), n })
}

/// KS test against the unit-rate exponential CDF `1 − e^(−x)`.
pub fn ks_exp1(sample: &[f64]) -> Result<KsResult, StatError> {
    if let Some(&bad) = sample.iter().find(|&&x| !(x >= 0.0)) {
        return Err(StatError::OutOfSupport { value: bad });
    }
    ks_one_sample(sample, |x| -(-x).exp_m1())
}

/// KS test against an exponential with the given rate.
pub fn ks_exponential(sample: &[f64], rate: f64) -> Result<KsResult, StatError> {
    assert!(rate > 0.0 && rate.is_finite(), "exponential reference needs a positive rate");
    if let Some(&bad) = sample.iter().find(|&&x| !(x >= 0.0)) {
        return Err(StatError::OutOfSupport { value: bad });
    }
    ks_one_sample(sample, |x| -(-rate * x).exp_m1())
}

// ─── Chi-square goodness of fit ───

/// Chi-square test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    /// Degrees of freedom after pooling (`cells − 1`).
    pub df: u64,
    pub p_value: f64,
    /// Number of cells actually compared after pooling.
    pub cells: usize,
}

/// Minimum expected count per cell; sparser cells are pooled into their
/// left neighbor, scanning from the tail.
pub const CHI_SQUARE_MIN_EXPECTED: f64 = 5.0;

/// Chi-square goodness of fit of observed counts against expected counts
/// (same total). Cells are pooled right-to-left until every expected
/// count reaches [`CHI_SQUARE_MIN_EXPECTED`]; at least two cells must
/// survive pooling.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult, StatError> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(StatError::BadBins);
    }
    if expected.iter().any(|&e| !e.is_finite() || e < 0.0) {
        return Err(StatError::BadBins);
    }
    // Pool from the tail: the sparse cells of a discrete law live there.
    let mut obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    let mut exp: Vec<f64> = expected.to_vec();
    let mut i = obs.len();
    while i > 1 {
        i -= 1;
        if exp[i] < CHI_SQUARE_MIN_EXPECTED {
            exp[i - 1] += exp[i];
            obs[i - 1] += obs[i];
            exp.remove(i);
            obs.remove(i);
        }
    }
    if !exp.is_empty() && exp[0] < CHI_SQUARE_MIN_EXPECTED && exp.len() > 1 {
        exp[1] += exp[0];
        obs[1] += obs[0];
        exp.remove(0);
        obs.remove(0);
    }
    if exp.len() < 2 {
        return Err(StatError::BadBins);
    }
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| {
            let d = o - e;
            d * d / e
        })
        .sum();
    let df = (exp.len() - 1) as u64;
    let dist = ChiSquared::new(df as f64).expect("df >= 1 by construction");
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(ChiSquareResult { statistic, df, p_value, cells: exp.len() })
}
