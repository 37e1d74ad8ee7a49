//! Evolution maps and the seeded run driver.
//!
//! Coupled mode is the closed economy: each step `n` firms keep a fraction
//! `λ_i` of their workforce and the rest is pooled and split among them by a
//! fresh simplex sample, so `Σ w = N` is conserved. Reduced mode replaces the
//! pool by independent exponential shocks (the `n = N` limit), and GLV mode is
//! the random multiplicative map `v(t+1) = λ(t) v(t) + a(t)`.
//!
//! One step is one interaction event regardless of `n`.

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, SimRng};
use crate::simplex::fill_simplex;
use crate::{Error, Result};

/// Coupled runs rescale `Σ w` back to exactly `N` this often.
pub const RENORMALIZE_EVERY: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnoverKind {
    /// Every firm shares one `λ`.
    Constant {
        lambda: f64,
    },
    /// `λ_i ~ uniform[0, 1)` drawn once at initialization and then frozen.
    UniformIid,
    Explicit {
        lambdas: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoverProfile {
    #[serde(flatten)]
    pub kind: TurnoverKind,
    /// Fixes `C` for the reduced distributed map instead of measuring it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_override: Option<f64>,
}

impl TurnoverProfile {
    pub fn constant(lambda: f64) -> Self {
        Self {
            kind: TurnoverKind::Constant { lambda },
            c_override: None,
        }
    }

    pub fn uniform_iid() -> Self {
        Self {
            kind: TurnoverKind::UniformIid,
            c_override: None,
        }
    }

    pub fn explicit(lambdas: Vec<f64>) -> Self {
        Self {
            kind: TurnoverKind::Explicit { lambdas },
            c_override: None,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c_override = Some(c);
        self
    }

    pub fn is_distributed(&self) -> bool {
        !matches!(self.kind, TurnoverKind::Constant { .. })
    }

    /// Per-firm turnover rates. Uniform draws consume the head of `rng`.
    pub fn resolve<R: RngCore + ?Sized>(&self, firm_count: usize, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            TurnoverKind::Constant { lambda } => vec![*lambda; firm_count],
            TurnoverKind::UniformIid => (0..firm_count).map(|_| rng.random::<f64>()).collect(),
            TurnoverKind::Explicit { lambdas } => lambdas.clone(),
        }
    }
}

/// Number of firms taking part in one coupled interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "ArityRepr", into = "ArityRepr")]
pub enum Arity {
    /// Every firm interacts at every step (`n = N`).
    #[default]
    All,
    Fixed(usize),
}

impl Arity {
    pub fn resolve(self, firm_count: usize) -> usize {
        match self {
            Arity::All => firm_count,
            Arity::Fixed(n) => n,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ArityRepr {
    Fixed(usize),
    Word(String),
}

impl TryFrom<ArityRepr> for Arity {
    type Error = String;

    fn try_from(r: ArityRepr) -> std::result::Result<Self, String> {
        match r {
            ArityRepr::Fixed(n) => Ok(Arity::Fixed(n)),
            ArityRepr::Word(w) if w == "all" => Ok(Arity::All),
            ArityRepr::Word(w) => Err(format!("arity must be an integer or \"all\", got {w:?}")),
        }
    }
}

impl From<Arity> for ArityRepr {
    fn from(a: Arity) -> Self {
        match a {
            Arity::All => ArityRepr::Word("all".into()),
            Arity::Fixed(n) => ArityRepr::Fixed(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Coupled,
    Reduced,
    Glv,
}

/// Shock distribution for the GLV map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ShockDist {
    Constant { value: f64 },
    Exponential { mean: f64 },
    Uniform { low: f64, high: f64 },
}

impl ShockDist {
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ShockDist::Constant { value } => value,
            ShockDist::Exponential { mean } => mean * exp1(rng),
            ShockDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ShockDist::Constant { value } => value,
            ShockDist::Exponential { mean } => mean,
            ShockDist::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match *self {
            ShockDist::Constant { value } => value.is_finite(),
            ShockDist::Exponential { mean } => mean.is_finite() && mean > 0.0,
            ShockDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                field,
                format!("invalid shock distribution {self:?}"),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlvSpec {
    pub lambda: ShockDist,
    pub a: ShockDist,
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyConfig {
    pub firm_count: usize,
    #[serde(default)]
    pub arity: Arity,
    pub turnover: TurnoverProfile,
    pub steps: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_stride")]
    pub record_stride: u64,
    #[serde(default)]
    pub seed: u64,
    /// Random stream id; sweeps assign one per cell.
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Defaults to one unit per firm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_sizes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glv: Option<GlvSpec>,
}

impl EconomyConfig {
    pub fn new(firm_count: usize, turnover: TurnoverProfile, steps: u64) -> Self {
        Self {
            firm_count,
            arity: Arity::All,
            turnover,
            steps,
            burn_in: 0,
            record_stride: 1,
            seed: 0,
            stream: 0,
            mode: Mode::Coupled,
            initial_sizes: None,
            glv: None,
        }
    }

    pub fn interacting(&self) -> usize {
        self.arity.resolve(self.firm_count)
    }

    pub fn validate(&self) -> Result<()> {
        let n_firms = self.firm_count;
        if n_firms < 2 {
            return Err(Error::config("firm_count", "need at least 2 firms"));
        }
        if self.mode == Mode::Coupled {
            let n = self.interacting();
            if n < 2 || n > n_firms {
                return Err(Error::config(
                    "arity",
                    format!("need 2 <= n <= N = {n_firms}, got {n}"),
                ));
            }
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "need at least one step"));
        }
        if self.burn_in > self.steps {
            return Err(Error::config(
                "burn_in",
                format!("burn_in {} exceeds steps {}", self.burn_in, self.steps),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record_stride", "must be at least 1"));
        }
        let in_range = |l: f64| (0.0..1.0).contains(&l);
        match &self.turnover.kind {
            TurnoverKind::Constant { lambda } if !in_range(*lambda) => {
                return Err(Error::config(
                    "turnover.lambda",
                    format!("turnover rate {lambda} outside [0, 1)"),
                ));
            }
            TurnoverKind::Explicit { lambdas } => {
                if lambdas.len() != n_firms {
                    return Err(Error::config(
                        "turnover.lambdas",
                        format!("expected {n_firms} rates, got {}", lambdas.len()),
                    ));
                }
                if let Some(bad) = lambdas.iter().find(|&&l| !in_range(l)) {
                    return Err(Error::config(
                        "turnover.lambdas",
                        format!("turnover rate {bad} outside [0, 1)"),
                    ));
                }
            }
            _ => {}
        }
        if let Some(c) = self.turnover.c_override {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(
                    "turnover.c_override",
                    format!("C = {c} must be positive"),
                ));
            }
        }
        if self.mode == Mode::Reduced
            && self.turnover.is_distributed()
            && self.turnover.c_override.is_none()
            && self.burn_in < 2
        {
            return Err(Error::config(
                "burn_in",
                "reduced distributed mode measures C during burn-in; need burn_in >= 2 or turnover.c_override",
            ));
        }
        if let Some(sizes) = &self.initial_sizes {
            if sizes.len() != n_firms {
                return Err(Error::config(
                    "initial_sizes",
                    format!("expected {n_firms} sizes, got {}", sizes.len()),
                ));
            }
            if sizes.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
                return Err(Error::config(
                    "initial_sizes",
                    "sizes must be finite and nonnegative",
                ));
            }
            let total: f64 = sizes.iter().sum();
            if ((total - n_firms as f64) / n_firms as f64).abs() > 1e-9 {
                return Err(Error::config(
                    "initial_sizes",
                    format!("sizes sum to {total}, expected {n_firms}"),
                ));
            }
        }
        if self.mode == Mode::Glv {
            let spec = self.glv.as_ref().ok_or_else(|| {
                Error::config("glv", "glv mode needs lambda and a shock distributions")
            })?;
            spec.lambda.validate("glv.lambda")?;
            spec.a.validate("glv.a")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub sizes: Vec<f64>,
    pub t: u64,
}

impl EnsembleState {
    pub fn uniform(firm_count: usize) -> Self {
        Self {
            sizes: vec![1.0; firm_count],
            t: 0,
        }
    }

    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }
}

/// Standard exponential variate by inversion, rejecting `u = 0`.
#[inline]
pub(crate) fn exp1<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -u.ln();
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidTurnover(lambda))
    }
}

/// Applies one redistribution among `members` with fixed `shares`:
/// `w_i <- λ_i w_i + ε_i Σ_j (1 - λ_j) w_j`, the pool taken from the
/// pre-step sizes.
pub fn redistribute(sizes: &mut [f64], lambdas: &[f64], members: &[usize], shares: &[f64]) {
    debug_assert_eq!(members.len(), shares.len());
    let pool: f64 = members.iter().map(|&j| (1.0 - lambdas[j]) * sizes[j]).sum();
    for (&i, &eps) in members.iter().zip(shares) {
        sizes[i] = lambdas[i] * sizes[i] + eps * pool;
    }
}

/// Scratch buffers reused across coupled steps.
#[derive(Debug, Default, Clone)]
pub struct CoupledScratch {
    shares: Vec<f64>,
    members: Vec<usize>,
}

/// One coupled interaction among `arity` firms chosen uniformly without
/// replacement (all firms when `arity == N`).
pub fn step_coupled<R: RngCore + ?Sized>(
    state: &mut EnsembleState,
    lambdas: &[f64],
    arity: usize,
    rng: &mut R,
    scratch: &mut CoupledScratch,
) {
    let n_firms = state.sizes.len();
    debug_assert!(arity >= 2 && arity <= n_firms);
    scratch.shares.resize(arity, 0.0);
    fill_simplex(&mut scratch.shares, rng);
    if arity == n_firms {
        let sizes = &mut state.sizes;
        let pool: f64 = sizes.iter().zip(lambdas).map(|(w, l)| (1.0 - l) * w).sum();
        for ((w, l), eps) in sizes.iter_mut().zip(lambdas).zip(&scratch.shares) {
            *w = l * *w + eps * pool;
        }
    } else {
        scratch.members.clear();
        if arity == 2 {
            let i = rng.random_range(0..n_firms);
            let mut j = rng.random_range(0..n_firms - 1);
            if j >= i {
                j += 1;
            }
            scratch.members.extend([i, j]);
        } else {
            scratch
                .members
                .extend(index::sample(rng, n_firms, arity).iter());
        }
        redistribute(&mut state.sizes, lambdas, &scratch.members, &scratch.shares);
    }
    state.t += 1;
}

/// `w_i <- λ w_i + μ_i`, `μ_i` exponential with mean `1 - λ`.
pub fn step_reduced_constant<R: RngCore + ?Sized>(
    state: &mut EnsembleState,
    lambda: f64,
    rng: &mut R,
) -> Result<()> {
    check_lambda(lambda)?;
    let scale = 1.0 - lambda;
    for w in state.sizes.iter_mut() {
        *w = lambda * *w + scale * exp1(rng);
    }
    state.t += 1;
    Ok(())
}

/// `w_i <- λ_i w_i + C μ_i`, `μ_i` standard exponential.
pub fn step_reduced_distributed<R: RngCore + ?Sized>(
    state: &mut EnsembleState,
    lambdas: &[f64],
    c: f64,
    rng: &mut R,
) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidConstant(c));
    }
    for (w, l) in state.sizes.iter_mut().zip(lambdas) {
        *w = l * *w + c * exp1(rng);
    }
    state.t += 1;
    Ok(())
}

/// `v_i <- λ(t) v_i + a(t)` with one `λ(t)` and one `a(t)` per step, shared
/// by all firms.
pub fn step_glv<R: RngCore + ?Sized>(
    state: &mut EnsembleState,
    lambda_dist: &ShockDist,
    a_dist: &ShockDist,
    rng: &mut R,
) {
    let lambda = lambda_dist.sample(rng);
    let a = a_dist.sample(rng);
    for v in state.sizes.iter_mut() {
        *v = lambda * *v + a;
    }
    state.t += 1;
}

fn renormalize(sizes: &mut [f64]) {
    let total: f64 = sizes.iter().sum();
    if total > 0.0 {
        let k = sizes.len() as f64 / total;
        sizes.iter_mut().for_each(|w| *w *= k);
    }
}

/// Recorded states of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    pub config: EconomyConfig,
    /// Resolved per-firm turnover rates (empty in GLV mode).
    pub lambdas: Vec<f64>,
    /// `C` driving the reduced distributed map, when that map ran.
    pub c_used: Option<f64>,
    pub times: Vec<u64>,
    firm_count: usize,
    data: Vec<f64>,
}

impl SnapshotSeries {
    pub fn new(config: EconomyConfig, lambdas: Vec<f64>) -> Self {
        let firm_count = config.firm_count;
        Self {
            config,
            lambdas,
            c_used: None,
            times: Vec::new(),
            firm_count,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, t: u64, sizes: &[f64]) {
        assert_eq!(sizes.len(), self.firm_count, "snapshot width mismatch");
        self.times.push(t);
        self.data.extend_from_slice(sizes);
    }

    pub fn firm_count(&self) -> usize {
        self.firm_count
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        &self.data[k * self.firm_count..(k + 1) * self.firm_count]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.firm_count.max(1))
    }

    /// Size history of one firm across recorded snapshots.
    pub fn firm_series(&self, firm: usize) -> Vec<f64> {
        self.snapshots().map(|s| s[firm]).collect()
    }

    /// Every recorded size, snapshot-major.
    pub fn pooled(&self) -> &[f64] {
        &self.data
    }
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Economy {
    cfg: EconomyConfig,
    lambdas: Vec<f64>,
    state: EnsembleState,
    rng: SimRng,
    scratch: CoupledScratch,
    c: Option<f64>,
    c_accum: (f64, u64),
}

impl Economy {
    pub fn new(cfg: &EconomyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, cfg.stream);
        let lambdas = if cfg.mode == Mode::Glv {
            Vec::new()
        } else {
            cfg.turnover.resolve(cfg.firm_count, &mut rng)
        };
        let sizes = cfg
            .initial_sizes
            .clone()
            .unwrap_or_else(|| vec![1.0; cfg.firm_count]);
        Ok(Self {
            cfg: cfg.clone(),
            lambdas,
            state: EnsembleState { sizes, t: 0 },
            rng,
            scratch: CoupledScratch::default(),
            c: cfg.turnover.c_override,
            c_accum: (0.0, 0),
        })
    }

    pub fn state(&self) -> &EnsembleState {
        &self.state
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// The frozen `C` of the reduced distributed map, once known.
    pub fn c(&self) -> Option<f64> {
        self.c
    }

    fn reduced_distributed(&self) -> bool {
        self.cfg.mode == Mode::Reduced && self.cfg.turnover.is_distributed()
    }

    pub fn step(&mut self) -> Result<()> {
        match self.cfg.mode {
            Mode::Coupled => {
                let n = self.cfg.interacting();
                step_coupled(
                    &mut self.state,
                    &self.lambdas,
                    n,
                    &mut self.rng,
                    &mut self.scratch,
                );
                if self.state.t.is_multiple_of(RENORMALIZE_EVERY) {
                    renormalize(&mut self.state.sizes);
                }
            }
            Mode::Reduced if !self.reduced_distributed() => {
                let lambda = self.lambdas[0];
                step_reduced_constant(&mut self.state, lambda, &mut self.rng)?;
            }
            Mode::Reduced => match self.c {
                Some(c) => {
                    step_reduced_distributed(&mut self.state, &self.lambdas, c, &mut self.rng)?
                }
                None => self.measure_c_step(),
            },
            Mode::Glv => {
                let spec = self.cfg.glv.expect("validated");
                step_glv(&mut self.state, &spec.lambda, &spec.a, &mut self.rng);
            }
        }
        Ok(())
    }

    /// Burn-in step for the reduced distributed map without a supplied `C`:
    /// runs the all-firm coupled map and averages `(1/N) Σ (1 - λ_i) w_i`
    /// over the second half of the burn-in window, then freezes it.
    fn measure_c_step(&mut self) {
        let n = self.cfg.firm_count;
        step_coupled(
            &mut self.state,
            &self.lambdas,
            n,
            &mut self.rng,
            &mut self.scratch,
        );
        let t = self.state.t;
        if 2 * t > self.cfg.burn_in {
            let pool: f64 = self
                .state
                .sizes
                .iter()
                .zip(&self.lambdas)
                .map(|(w, l)| (1.0 - l) * w)
                .sum();
            self.c_accum.0 += pool / n as f64;
            self.c_accum.1 += 1;
        }
        if t >= self.cfg.burn_in {
            self.c = Some(self.c_accum.0 / self.c_accum.1 as f64);
        }
    }
}

/// Runs `cfg`, calling `observe(t, sizes)` on every recorded state.
/// Returns the resolved turnover rates and the reduced-map `C`, if any.
pub fn run_observed(
    cfg: &EconomyConfig,
    mut observe: impl FnMut(u64, &[f64]),
) -> Result<(Vec<f64>, Option<f64>)> {
    let mut eco = Economy::new(cfg)?;
    for t in 1..=cfg.steps {
        eco.step()?;
        if t > cfg.burn_in && (t - cfg.burn_in).is_multiple_of(cfg.record_stride) {
            observe(t, &eco.state.sizes);
        }
    }
    let c = if eco.reduced_distributed() {
        eco.c
    } else {
        None
    };
    Ok((eco.lambdas, c))
}

/// Runs `cfg`: `burn_in` unrecorded steps, then every `record_stride`-th
/// state. Identical configs give bit-identical series.
pub fn run(cfg: &EconomyConfig) -> Result<SnapshotSeries> {
    let mut series = SnapshotSeries::new(cfg.clone(), Vec::new());
    let (lambdas, c) = run_observed(cfg, |t, sizes| series.push(t, sizes))?;
    series.lambdas = lambdas;
    series.c_used = c;
    Ok(series)
}
