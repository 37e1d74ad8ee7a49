//! Distribution fits and goodness-of-fit statistics.
//!
//! Power-law exponents are reported for the density, `P(w) ∝ w^-α`, so
//! Zipf's law is `α = 2`. Only Kolmogorov–Smirnov distances are reported;
//! samples taken from one time series are correlated, so p-values would be
//! misleading.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Laplace,
    Powerlaw,
    /// Straight line in log-log coordinates.
    Loglinear,
    /// Straight line in semi-log coordinates, `y = A e^(-k x)`.
    ExpDecay,
    /// `C = a + b / ln N`.
    CScaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub parameters: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ks_statistic: Option<f64>,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xmin: Option<f64>,
}

impl FitResult {
    fn new(family: Family, sample_count: usize) -> Self {
        Self {
            family,
            parameters: BTreeMap::new(),
            ks_statistic: None,
            sample_count,
            xmin: None,
        }
    }

    fn with(mut self, name: &str, value: f64) -> Self {
        self.parameters.insert(name.to_owned(), value);
        self
    }

    /// Looks up a fitted parameter by name. Panics on unknown names.
    pub fn param(&self, name: &str) -> f64 {
        match self.parameters.get(name) {
            Some(v) => *v,
            None => panic!("{:?} fit has no parameter `{name}`", self.family),
        }
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn ks_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_n(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("ks_statistic samples"));
    }
    Ok(ks_sorted(&sorted(samples), cdf))
}

/// Two-sample Kolmogorov–Smirnov distance between empirical distributions.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ks_two_sample samples"));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("quantile samples"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain {
            what: "q",
            value: q,
            domain: "[0, 1]",
        });
    }
    Ok(quantile_sorted(&sorted(samples), q))
}

pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Maximum-likelihood exponential fit, `rate = 1 / mean`.
pub fn fit_exponential(samples: &[f64]) -> Result<FitResult> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "exponential fit needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if let Some(&bad) = samples.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain {
            what: "exponential sample",
            value: bad,
            domain: "(0, inf)",
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let rate = 1.0 / mean;
    let ks = ks_statistic(samples, |x| 1.0 - (-rate * x).exp())?;
    let mut fit = FitResult::new(Family::Exponential, samples.len())
        .with("rate", rate)
        .with("rate_se", rate / n.sqrt());
    fit.ks_statistic = Some(ks);
    Ok(fit)
}

/// Laplace distribution function.
pub fn laplace_cdf(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Maximum-likelihood Laplace fit: location is the median, scale the mean
/// absolute deviation from it.
pub fn fit_laplace(samples: &[f64]) -> Result<FitResult> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "Laplace fit needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let v = sorted(samples);
    let n = v.len() as f64;
    let location = median_sorted(&v);
    let scale = v.iter().map(|x| (x - location).abs()).sum::<f64>() / n;
    if !(scale > 0.0) {
        return Err(Error::ZeroScale);
    }
    let ks = ks_sorted(&v, |x| laplace_cdf(x, location, scale));
    let mut fit = FitResult::new(Family::Laplace, samples.len())
        .with("location", location)
        .with("scale", scale)
        .with("location_se", scale / n.sqrt())
        .with("scale_se", scale / n.sqrt());
    fit.ks_statistic = Some(ks);
    Ok(fit)
}

pub const MIN_TAIL_SAMPLES: usize = 100;

/// Continuous maximum-likelihood (Hill) estimate of the density exponent
/// over the samples `>= xmin`: `α = 1 + m / Σ ln(x / xmin)`.
pub fn fit_powerlaw_tail(samples: &[f64], xmin: f64) -> Result<FitResult> {
    if !(xmin > 0.0) {
        return Err(Error::Domain {
            what: "xmin",
            value: xmin,
            domain: "(0, inf)",
        });
    }
    let tail: Vec<f64> = samples.iter().copied().filter(|&x| x >= xmin).collect();
    if tail.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientTail {
            found: tail.len(),
            needed: MIN_TAIL_SAMPLES,
        });
    }
    let m = tail.len() as f64;
    let log_sum: f64 = tail.iter().map(|&x| (x / xmin).ln()).sum();
    if !(log_sum > 0.0) {
        return Err(Error::ZeroScale);
    }
    let alpha = 1.0 + m / log_sum;
    let ks = ks_statistic(&tail, |x| 1.0 - (x / xmin).powf(1.0 - alpha))?;
    let mut fit = FitResult::new(Family::Powerlaw, tail.len())
        .with("alpha", alpha)
        .with("alpha_se", (alpha - 1.0) / m.sqrt());
    fit.ks_statistic = Some(ks);
    fit.xmin = Some(xmin);
    Ok(fit)
}

/// Power-law tail fit with `xmin` at the given sample quantile.
pub fn fit_powerlaw_tail_quantile(samples: &[f64], q: f64) -> Result<FitResult> {
    let xmin = quantile(samples, q)?;
    fit_powerlaw_tail(samples, xmin)
}

/// Ordinary least-squares line with the usual slope standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub residual_norm: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn slope_t(&self) -> f64 {
        self.slope / self.slope_se
    }
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::InsufficientData(format!(
            "x and y lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("regressor has zero spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let s2 = rss / (n - 2.0);
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        residual_norm: rss.sqrt(),
        r_squared,
    })
}

fn check_positive(what: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().find(|&&a| !(a > 0.0)) {
        Some(&bad) => Err(Error::Domain {
            what,
            value: bad,
            domain: "(0, inf)",
        }),
        None => Ok(()),
    }
}

/// Least-squares slope and intercept of `ln y` on `ln x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_positive("x", x)?;
    check_positive("y", y)?;
    let lx: Vec<f64> = x.iter().map(|a| a.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|a| a.ln()).collect();
    let lin = linear_regression(&lx, &ly)?;
    Ok(FitResult::new(Family::Loglinear, x.len())
        .with("slope", lin.slope)
        .with("intercept", lin.intercept)
        .with("slope_se", lin.slope_se)
        .with("r_squared", lin.r_squared))
}

/// Fits `y = A e^(-k x)` by least squares on `ln y`; reports `rate = k`.
pub fn fit_exp_decay(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_positive("y", y)?;
    let ly: Vec<f64> = y.iter().map(|a| a.ln()).collect();
    let lin = linear_regression(x, &ly)?;
    Ok(FitResult::new(Family::ExpDecay, x.len())
        .with("rate", -lin.slope)
        .with("amplitude", lin.intercept.exp())
        .with("rate_se", lin.slope_se)
        .with("r_squared", lin.r_squared))
}

/// Fits `C = a + b / ln N` by least squares.
pub fn fit_c_scaling(n_values: &[u64], c_values: &[f64]) -> Result<FitResult> {
    if n_values.len() != c_values.len() {
        return Err(Error::InsufficientData(
            "N and C value lists differ in length".into(),
        ));
    }
    let mut distinct = n_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "C scaling fit needs at least 3 distinct N, got {}",
            distinct.len()
        )));
    }
    if let Some(&bad) = n_values.iter().find(|&&n| n < 2) {
        return Err(Error::Domain {
            what: "N",
            value: bad as f64,
            domain: "[2, inf)",
        });
    }
    check_positive("C", c_values)?;
    let inv_log: Vec<f64> = n_values.iter().map(|&n| 1.0 / (n as f64).ln()).collect();
    let lin = linear_regression(&inv_log, c_values)?;
    Ok(FitResult::new(Family::CScaling, n_values.len())
        .with("a", lin.intercept)
        .with("b", lin.slope)
        .with("a_se", lin.intercept_se)
        .with("b_se", lin.slope_se)
        .with("residual_norm", lin.residual_norm))
}
