//! Closed-form steady-state oracles and empirical summaries of runs.

use serde::{Deserialize, Serialize};

use crate::dynamics::SnapshotSeries;
use crate::statfit::quantile_sorted;
use crate::{Error, Result};

/// Central moment of the given order about the sample mean.
pub fn central_moment(samples: &[f64], order: u32) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("central_moment samples"));
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData(
            "central moment needs at least 2 samples".into(),
        ));
    }
    if order == 0 {
        return Err(Error::Domain {
            what: "order",
            value: 0.0,
            domain: "[1, inf)",
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    Ok(samples
        .iter()
        .map(|x| (x - mean).powi(order as i32))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// All firms interact each step.
    NAry,
    Binary,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "lambda",
            value: lambda,
            domain: "[0, 1)",
        })
    }
}

/// Steady-state variance of firm size: `(1-λ)/(1+λ)` for all-firm
/// interaction, `(1-λ)/(1+2λ)` for binary exchange.
pub fn variance_prediction(lambda: f64, interaction: Interaction) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(match interaction {
        Interaction::NAry => (1.0 - lambda) / (1.0 + lambda),
        Interaction::Binary => (1.0 - lambda) / (1.0 + 2.0 * lambda),
    })
}

/// Large-`N` density of the redistributed amount `μ = N(1-λ)ε`:
/// exponential with rate `ψ = 1/(1-λ)`.
pub fn mu_limit_pdf(mu: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(mu >= 0.0) {
        return Err(Error::Domain {
            what: "mu",
            value: mu,
            domain: "[0, inf)",
        });
    }
    let psi = 1.0 / (1.0 - lambda);
    Ok(psi * (-psi * mu).exp())
}

/// Where the geometric rate sequence starts.
///
/// `FromZero` uses `φ_j = 1/(λ^j (1-λ))` for `j = 0..k`, so the mean is
/// `1 - λ^k → 1`. `FromOne` uses `j = 1..=k` and has mean `λ(1 - λ^k)`;
/// it is kept for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateIndexing {
    #[default]
    FromZero,
    FromOne,
}

pub const MAX_TERMS: usize = 64;

/// Number of terms whose neglected tail contributes less than `1e-9` to the
/// mean, capped at [`MAX_TERMS`].
pub fn default_truncation(lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 1;
    }
    let k = (1e-9f64.ln() / lambda.ln()).ceil();
    (k.max(1.0) as usize).min(MAX_TERMS)
}

/// Truncated steady state of the constant-`λ` reduced map: a sum of `k`
/// independent exponentials with rates `φ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypoExpSpec {
    lambda: f64,
    rates: Vec<f64>,
    // log|c_i| and sign of c_i = Π_{j≠i} φ_j / (φ_j - φ_i)
    log_weights: Vec<f64>,
    signs: Vec<f64>,
}

impl HypoExpSpec {
    pub fn new(lambda: f64, k: usize, indexing: RateIndexing) -> Result<Self> {
        check_lambda(lambda)?;
        if k == 0 {
            return Err(Error::InsufficientData(
                "hypoexponential needs k >= 1".into(),
            ));
        }
        let first = match indexing {
            RateIndexing::FromZero => 0,
            RateIndexing::FromOne => 1,
        };
        let rates: Vec<f64> = (first..first + k)
            .map(|j| 1.0 / (lambda.powi(j as i32) * (1.0 - lambda)))
            .collect();
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::Domain {
                what: "lambda",
                value: lambda,
                domain: "(0, 1) for more than one term",
            });
        }
        Self::from_rates(lambda, rates)
    }

    /// `k` from [`default_truncation`], rates indexed from zero.
    pub fn truncated(lambda: f64) -> Result<Self> {
        Self::new(lambda, default_truncation(lambda), RateIndexing::FromZero)
    }

    fn from_rates(lambda: f64, rates: Vec<f64>) -> Result<Self> {
        let k = rates.len();
        let mut log_weights = vec![0.0; k];
        let mut signs = vec![1.0; k];
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let gap = rates[j] - rates[i];
                if gap == 0.0 {
                    return Err(Error::DegenerateSpec(rates[i]));
                }
                log_weights[i] += rates[j].ln() - gap.abs().ln();
                if gap < 0.0 {
                    signs[i] = -signs[i];
                }
            }
        }
        Ok(Self {
            lambda,
            rates,
            log_weights,
            signs,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn k(&self) -> usize {
        self.rates.len()
    }

    /// Largest `|c_i|`; the alternating sums lose roughly
    /// `log10(condition)` digits.
    pub fn condition(&self) -> f64 {
        self.log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .exp()
    }

    fn weighted_sum(&self, w: f64, with_rate: bool) -> f64 {
        let mut sum = Neumaier::default();
        for ((&rate, &lw), &sign) in self.rates.iter().zip(&self.log_weights).zip(&self.signs) {
            let mut log_term = lw - rate * w;
            if with_rate {
                log_term += rate.ln();
            }
            sum.add(sign * log_term.exp());
        }
        sum.total()
    }
}

/// Density `f(w) = Σ_i φ_i e^(-φ_i w) Π_{j≠i} φ_j/(φ_j - φ_i)`.
pub fn hypoexp_pdf(w: f64, spec: &HypoExpSpec) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::Domain {
            what: "w",
            value: w,
            domain: "[0, inf)",
        });
    }
    Ok(spec.weighted_sum(w, true).max(0.0))
}

/// Distribution function `F(w) = 1 - Σ_i c_i e^(-φ_i w)`.
pub fn hypoexp_cdf(w: f64, spec: &HypoExpSpec) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::Domain {
            what: "w",
            value: w,
            domain: "[0, inf)",
        });
    }
    Ok((1.0 - spec.weighted_sum(w, false)).clamp(0.0, 1.0))
}

/// Mean of the truncated sum, `Σ_j 1/φ_j` (`1 - λ^k` when indexed from 0).
pub fn hypoexp_mean(spec: &HypoExpSpec) -> f64 {
    let mut sum = Neumaier::default();
    for r in &spec.rates {
        sum.add(1.0 / r);
    }
    sum.total()
}

#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Density,
    Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub normalization: Normalization,
    /// Samples that fell outside `[edges[0], edges[last]]`.
    pub outside: u64,
}

impl Histogram {
    fn with_edges(samples: &[f64], edges: Vec<f64>, normalization: Normalization) -> Self {
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        let mut outside = 0;
        let (lo, hi) = (edges[0], edges[bins]);
        for &x in samples {
            if !(x >= lo && x <= hi) {
                outside += 1;
                continue;
            }
            // partition_point: first edge > x
            let b = edges
                .partition_point(|&e| e <= x)
                .saturating_sub(1)
                .min(bins - 1);
            counts[b] += 1;
        }
        Self {
            edges,
            counts,
            normalization,
            outside,
        }
    }

    fn check(bins: usize, lo: f64, hi: f64) -> Result<()> {
        if bins == 0 {
            return Err(Error::InsufficientData(
                "histogram needs at least one bin".into(),
            ));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain {
                what: "histogram range",
                value: hi - lo,
                domain: "lo < hi, finite",
            });
        }
        Ok(())
    }

    pub fn linear(
        samples: &[f64],
        bins: usize,
        lo: f64,
        hi: f64,
        normalization: Normalization,
    ) -> Result<Self> {
        Self::check(bins, lo, hi)?;
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        edges[bins] = hi;
        Ok(Self::with_edges(samples, edges, normalization))
    }

    /// Logarithmically spaced bins on `[lo, hi]`, `lo > 0`.
    pub fn logarithmic(
        samples: &[f64],
        bins: usize,
        lo: f64,
        hi: f64,
        normalization: Normalization,
    ) -> Result<Self> {
        Self::check(bins, lo, hi)?;
        if !(lo > 0.0) {
            return Err(Error::Domain {
                what: "histogram lower edge",
                value: lo,
                domain: "(0, inf) for log bins",
            });
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| (a + i as f64 * step).exp()).collect();
        edges[0] = lo;
        edges[bins] = hi;
        Ok(Self::with_edges(samples, edges, normalization))
    }

    /// Linear bins spanning the sample range.
    pub fn auto_linear(samples: &[f64], bins: usize, normalization: Normalization) -> Result<Self> {
        let (lo, hi) = finite_range(samples)?;
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Self::linear(samples, bins, lo, hi, normalization)
    }

    /// Log bins spanning the positive sample range.
    pub fn auto_log(samples: &[f64], bins: usize, normalization: Normalization) -> Result<Self> {
        let positive: Vec<f64> = samples.iter().copied().filter(|&x| x > 0.0).collect();
        let (lo, hi) = finite_range(&positive)?;
        let hi = if hi > lo { hi } else { lo * 2.0 };
        Self::logarithmic(samples, bins, lo, hi, normalization)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Bin heights in the chosen normalization.
    pub fn values(&self) -> Vec<f64> {
        match self.normalization {
            Normalization::Counts => self.counts.iter().map(|&c| c as f64).collect(),
            Normalization::Density => {
                let total: u64 = self.counts.iter().sum();
                if total == 0 {
                    return vec![0.0; self.counts.len()];
                }
                self.counts
                    .iter()
                    .zip(self.edges.windows(2))
                    .map(|(&c, e)| c as f64 / (total as f64 * (e[1] - e[0])))
                    .collect()
            }
        }
    }
}

fn finite_range(samples: &[f64]) -> Result<(f64, f64)> {
    let mut it = samples.iter().copied().filter(|x| x.is_finite());
    let first = it.next().ok_or(Error::Empty("histogram samples"))?;
    Ok(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
}

/// Growth history of one firm. Ratio entries are `NaN` where `w(t) = 0`
/// and the transition index is listed in `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmGrowth {
    pub lambda: f64,
    pub mean_size: f64,
    /// `r(t) = w(t+1) / w(t)`.
    pub ratio: Vec<f64>,
    pub log_ratio: Vec<f64>,
    /// `g(t+1) = w(t+1) - w(t)`.
    pub diff: Vec<f64>,
    pub undefined: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMeasure {
    Ratio,
    LogRatio,
    Difference,
}

impl FirmGrowth {
    pub fn values(&self, measure: GrowthMeasure) -> &[f64] {
        match measure {
            GrowthMeasure::Ratio => &self.ratio,
            GrowthMeasure::LogRatio => &self.log_ratio,
            GrowthMeasure::Difference => &self.diff,
        }
    }

    /// Sample standard deviation over defined entries; `None` below two.
    pub fn sd(&self, measure: GrowthMeasure) -> Option<f64> {
        sample_sd(
            self.values(measure)
                .iter()
                .copied()
                .filter(|x| x.is_finite()),
        )
    }
}

fn sample_sd(values: impl Iterator<Item = f64>) -> Option<f64> {
    // Welford
    let (mut n, mut mean, mut m2) = (0u64, 0.0, 0.0);
    for x in values {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    (n >= 2).then(|| (m2 / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    pub firms: Vec<FirmGrowth>,
    pub transitions: usize,
}

impl GrowthSeries {
    /// Pooled defined values of `measure` over firms accepted by `keep`.
    pub fn pooled(&self, measure: GrowthMeasure, keep: impl Fn(&FirmGrowth) -> bool) -> Vec<f64> {
        self.firms
            .iter()
            .filter(|f| keep(f))
            .flat_map(|f| f.values(measure).iter().copied().filter(|x| x.is_finite()))
            .collect()
    }
}

/// Per-firm ratio, log-ratio and difference series between consecutive
/// snapshots. Needs at least two snapshots recorded with stride 1.
pub fn growth_series(series: &SnapshotSeries) -> Result<GrowthSeries> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "growth rates need at least 2 snapshots, got {}",
            series.len()
        )));
    }
    if series.config.record_stride != 1 {
        return Err(Error::StrideMismatch(series.config.record_stride as usize));
    }
    let transitions = series.len() - 1;
    let firms = (0..series.firm_count())
        .map(|i| {
            let w = series.firm_series(i);
            let mut ratio = Vec::with_capacity(transitions);
            let mut log_ratio = Vec::with_capacity(transitions);
            let mut diff = Vec::with_capacity(transitions);
            let mut undefined = Vec::new();
            for (t, pair) in w.windows(2).enumerate() {
                let (prev, next) = (pair[0], pair[1]);
                diff.push(next - prev);
                if prev > 0.0 && next > 0.0 {
                    let r = next / prev;
                    ratio.push(r);
                    log_ratio.push(next.ln() - prev.ln());
                } else {
                    ratio.push(if prev > 0.0 { 0.0 } else { f64::NAN });
                    log_ratio.push(f64::NAN);
                    undefined.push(t);
                }
            }
            FirmGrowth {
                lambda: series.lambdas.get(i).copied().unwrap_or(f64::NAN),
                mean_size: w.iter().sum::<f64>() / w.len() as f64,
                ratio,
                log_ratio,
                diff,
                undefined,
            }
        })
        .collect();
    Ok(GrowthSeries { firms, transitions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByLambda,
    ByMeanSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    /// Equal numbers of firms per bin.
    #[default]
    EqualCount,
    EqualWidth,
    /// Equal widths in `ln` of the grouping value; needs positive values.
    LogWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionOptions {
    pub grouping: Grouping,
    pub measure: GrowthMeasure,
    pub bins: usize,
    #[serde(default)]
    pub scheme: BinScheme,
    /// Only firms whose grouping value lies in `[lo, hi]` are binned.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

/// One bin of a conditional dispersion curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub lo: f64,
    pub hi: f64,
    /// Median grouping value of the firms in the bin (`None` when empty).
    pub center: Option<f64>,
    /// Median of the per-firm standard deviations (`None` when empty).
    pub sd: Option<f64>,
    pub firms: usize,
}

/// Bins firms by `λ` or by time-mean size and reports, per bin, the median
/// over firms of each firm's standard deviation of the growth measure.
/// Empty bins are kept with `None` values.
pub fn conditional_dispersion(
    gs: &GrowthSeries,
    opts: &DispersionOptions,
) -> Result<Vec<DispersionPoint>> {
    if opts.bins == 0 {
        return Err(Error::InsufficientData(
            "dispersion needs at least one bin".into(),
        ));
    }
    let mut firms: Vec<(f64, f64)> = gs
        .firms
        .iter()
        .filter_map(|f| {
            let key = match opts.grouping {
                Grouping::ByLambda => f.lambda,
                Grouping::ByMeanSize => f.mean_size,
            };
            let sd = f.sd(opts.measure)?;
            let in_range = opts.range.is_none_or(|(lo, hi)| key >= lo && key <= hi);
            (key.is_finite() && in_range).then_some((key, sd))
        })
        .collect();
    if firms.is_empty() {
        return Err(Error::Empty("no firms with a defined dispersion in range"));
    }
    firms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let keys: Vec<f64> = firms.iter().map(|f| f.0).collect();

    let edges: Vec<f64> = match opts.scheme {
        BinScheme::EqualCount => (0..=opts.bins)
            .map(|b| quantile_sorted(&keys, b as f64 / opts.bins as f64))
            .collect(),
        BinScheme::EqualWidth => {
            let (lo, hi) = opts.range.unwrap_or((keys[0], keys[keys.len() - 1]));
            (0..=opts.bins)
                .map(|b| lo + (hi - lo) * b as f64 / opts.bins as f64)
                .collect()
        }
        BinScheme::LogWidth => {
            let (lo, hi) = opts.range.unwrap_or((keys[0], keys[keys.len() - 1]));
            if !(lo > 0.0) {
                return Err(Error::Domain {
                    what: "log-width bin edge",
                    value: lo,
                    domain: "(0, inf)",
                });
            }
            let (a, z) = (lo.ln(), hi.ln());
            (0..=opts.bins)
                .map(|b| (a + (z - a) * b as f64 / opts.bins as f64).exp())
                .collect()
        }
    };

    let mut points = Vec::with_capacity(opts.bins);
    let mut start = 0;
    for b in 0..opts.bins {
        let (lo, hi) = (edges[b], edges[b + 1]);
        let last = b + 1 == opts.bins;
        let end = match opts.scheme {
            // split by rank so ties at an edge cannot empty a bin
            BinScheme::EqualCount => (keys.len() * (b + 1)) / opts.bins,
            BinScheme::EqualWidth | BinScheme::LogWidth => {
                if last {
                    keys.len()
                } else {
                    start + keys[start..].partition_point(|&k| k < hi)
                }
            }
        };
        let members = &firms[start..end];
        start = end;
        if members.is_empty() {
            points.push(DispersionPoint {
                lo,
                hi,
                center: None,
                sd: None,
                firms: 0,
            });
            continue;
        }
        let centers: Vec<f64> = members.iter().map(|m| m.0).collect();
        let mut sds: Vec<f64> = members.iter().map(|m| m.1).collect();
        sds.sort_by(f64::total_cmp);
        points.push(DispersionPoint {
            lo,
            hi,
            center: Some(quantile_sorted(&centers, 0.5)),
            sd: Some(quantile_sorted(&sds, 0.5)),
            firms: members.len(),
        });
    }
    Ok(points)
}

/// Per-firm `(1 - λ_i) mean(w_i)` and its population mean `Ĉ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEstimate {
    pub lambdas: Vec<f64>,
    pub per_firm: Vec<f64>,
    pub c_hat: f64,
}

pub fn estimate_c(series: &SnapshotSeries) -> Result<CEstimate> {
    if !series.config.turnover.is_distributed() || series.lambdas.is_empty() {
        return Err(Error::ModeMismatch);
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("no recorded snapshots".into()));
    }
    let means = firm_means(series);
    let per_firm: Vec<f64> = means
        .iter()
        .zip(&series.lambdas)
        .map(|(m, l)| (1.0 - l) * m)
        .collect();
    let c_hat = per_firm.iter().sum::<f64>() / per_firm.len() as f64;
    Ok(CEstimate {
        lambdas: series.lambdas.clone(),
        per_firm,
        c_hat,
    })
}

/// Time-mean size of every firm over the recorded snapshots.
pub fn firm_means(series: &SnapshotSeries) -> Vec<f64> {
    let mut acc = vec![0.0; series.firm_count()];
    for snap in series.snapshots() {
        acc.iter_mut().zip(snap).for_each(|(a, w)| *a += w);
    }
    let k = series.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}
