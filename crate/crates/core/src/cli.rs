//! Experiment plans: loading, validation, sweeps and serialization.
//!
//! A plan is a JSON document naming a base [`EconomyConfig`], an optional
//! sweep (cartesian product of parameter axes), the artifacts to emit and an
//! output directory. Execution writes one CSV per curve or histogram, one
//! JSON per fit and a `manifest.json` that is written on success and on
//! failure. Reruns of the same plan and seed are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{
    self, conditional_dispersion, estimate_c, growth_series, BinScheme, DispersionOptions,
    DispersionPoint, Grouping, GrowthMeasure, GrowthSeries, Histogram, HypoExpSpec, Interaction,
    Normalization,
};
use crate::dynamics::{run, Arity, EconomyConfig, Mode, SnapshotSeries, TurnoverKind};
use crate::simplex::{epsilon_marginal_cdf, fill_simplex};
use crate::statfit::{self, FitResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "KINEX_OUTPUT_DIR";

pub fn version_string() -> String {
    format!("kinex v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("invalid plan field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl PlanError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        PlanError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<crate::Error> for PlanError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Config { field, reason } => PlanError::Invalid {
                field: format!("base.{field}"),
                reason,
            },
            other => PlanError::invalid("base", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Histogram,
    Growth,
    Dispersion,
    CCurve,
    Fits,
}

/// Parameters a sweep axis may vary.
pub const SWEEPABLE: &[&str] = &[
    "firm_count",
    "arity",
    "steps",
    "burn_in",
    "record_stride",
    "seed",
    "mode",
    "turnover.lambda",
    "turnover.c_override",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSettings {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub scale: BinScale,
}

fn default_bins() -> usize {
    50
}

impl Default for HistogramSettings {
    fn default() -> Self {
        Self {
            bins: default_bins(),
            scale: BinScale::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSettings {
    #[serde(default = "default_dispersion_bins")]
    pub bins: usize,
    /// Binning of the `λ` axis.
    #[serde(default)]
    pub scheme: BinScheme,
    /// Binning of the mean-size axis.
    #[serde(default = "default_size_scheme")]
    pub size_scheme: BinScheme,
    /// Upper end of the `λ` range for the ratio-dispersion curve.
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_dispersion_bins() -> usize {
    10
}

fn default_size_scheme() -> BinScheme {
    BinScheme::LogWidth
}

fn default_lambda_max() -> f64 {
    0.9
}

impl Default for DispersionSettings {
    fn default() -> Self {
        Self {
            bins: default_dispersion_bins(),
            scheme: BinScheme::EqualCount,
            size_scheme: default_size_scheme(),
            lambda_max: default_lambda_max(),
        }
    }
}

/// Step counts used when running with `--full`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleOverride {
    pub steps: u64,
    pub burn_in: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<u64>,
}

fn default_workers() -> usize {
    1
}

fn default_replicas() -> usize {
    1
}

fn default_tail_quantile() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub base: EconomyConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub outputs: Vec<Artifact>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Independent repetitions per cell; `Ĉ` is averaged over them.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub histogram: HistogramSettings,
    #[serde(default)]
    pub dispersion: DispersionSettings,
    #[serde(default = "default_tail_quantile")]
    pub tail_quantile: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<ScaleOverride>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_name() -> String {
    "plan".to_owned()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentPlan {
    /// A plan with defaults around `base`.
    pub fn new(name: impl Into<String>, base: EconomyConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            base,
            sweep: Vec::new(),
            outputs: Vec::new(),
            output_dir: default_output_dir(),
            workers: default_workers(),
            replicas: default_replicas(),
            histogram: HistogramSettings::default(),
            dispersion: DispersionSettings::default(),
            tail_quantile: default_tail_quantile(),
            full: None,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PlanError::Version(self.schema_version));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(PlanError::invalid(
                "name",
                "must be non-empty and contain no path separators",
            ));
        }
        if self.workers == 0 {
            return Err(PlanError::invalid("workers", "must be at least 1"));
        }
        if self.replicas == 0 {
            return Err(PlanError::invalid("replicas", "must be at least 1"));
        }
        if self.histogram.bins == 0 {
            return Err(PlanError::invalid("histogram.bins", "must be at least 1"));
        }
        if self.dispersion.bins == 0 {
            return Err(PlanError::invalid("dispersion.bins", "must be at least 1"));
        }
        if !(self.tail_quantile > 0.0 && self.tail_quantile < 1.0) {
            return Err(PlanError::invalid("tail_quantile", "must lie in (0, 1)"));
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if !SWEEPABLE.contains(&axis.param.as_str()) {
                return Err(PlanError::invalid(
                    format!("sweep[{i}].param"),
                    format!(
                        "`{}` is not sweepable; choose one of {SWEEPABLE:?}",
                        axis.param
                    ),
                ));
            }
            if axis.values.is_empty() {
                return Err(PlanError::invalid(
                    format!("sweep[{i}].values"),
                    "must be non-empty",
                ));
            }
        }
        for cell in self.cells()? {
            let needs_consecutive = self
                .outputs
                .iter()
                .any(|a| matches!(a, Artifact::Growth | Artifact::Dispersion));
            if needs_consecutive && cell.config.record_stride != 1 {
                return Err(PlanError::invalid(
                    "base.record_stride",
                    "growth and dispersion outputs need record_stride = 1",
                ));
            }
            if self.outputs.contains(&Artifact::Dispersion)
                && !cell.config.turnover.is_distributed()
            {
                return Err(PlanError::invalid(
                    "base.turnover",
                    "dispersion output needs a distributed turnover profile",
                ));
            }
        }
        Ok(())
    }

    /// Applies `--full` step counts.
    pub fn scale_to_full(&mut self) -> Result<(), PlanError> {
        let full = self
            .full
            .ok_or_else(|| PlanError::invalid("full", "plan has no full-scale step counts"))?;
        self.base.steps = full.steps;
        self.base.burn_in = full.burn_in;
        if let Some(s) = full.record_stride {
            self.base.record_stride = s;
        }
        Ok(())
    }

    /// Expands the sweep into validated cells (the base alone without one).
    pub fn cells(&self) -> Result<Vec<Cell>, PlanError> {
        let base = serde_json::to_value(&self.base).expect("config serializes");
        let mut assignments: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for axis in &self.sweep {
            assignments = assignments
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((axis.param.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        assignments
            .into_iter()
            .enumerate()
            .map(|(index, params)| {
                let mut value = base.clone();
                for (param, v) in &params {
                    set_path(&mut value, param, v.clone());
                }
                let mut config: EconomyConfig = serde_json::from_value(value).map_err(|e| {
                    PlanError::invalid(format!("sweep cell {index}"), e.to_string())
                })?;
                config.stream = self.base.stream + (index * self.replicas) as u64;
                config.validate().map_err(|e| match e {
                    crate::Error::Config { field, reason } => PlanError::Invalid {
                        field: if params.is_empty() {
                            format!("base.{field}")
                        } else {
                            format!("sweep cell {index} ({}): {field}", label_of(&params))
                        },
                        reason,
                    },
                    other => PlanError::invalid("base", other.to_string()),
                })?;
                Ok(Cell {
                    index,
                    label: if params.is_empty() {
                        "base".to_owned()
                    } else {
                        label_of(&params)
                    },
                    params: params.into_iter().collect(),
                    config,
                })
            })
            .collect()
    }
}

fn set_path(value: &mut Value, path: &str, v: Value) {
    let mut cur = value;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur.as_object_mut().expect("config path walks objects");
        if parts.peek().is_none() {
            obj.insert(part.to_owned(), v);
            return;
        }
        cur = obj
            .entry(part.to_owned())
            .or_insert_with(|| Value::Object(Default::default()));
    }
}

fn label_of(params: &[(String, Value)]) -> String {
    params
        .iter()
        .map(|(p, v)| {
            let key = p.rsplit('.').next().unwrap_or(p);
            let val = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            format!("{key}-{val}")
        })
        .collect::<Vec<_>>()
        .join("_")
        .replace(
            |c: char| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')),
            "",
        )
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub label: String,
    pub params: BTreeMap<String, Value>,
    pub config: EconomyConfig,
}

/// Reads and validates a plan file.
pub fn load_plan(path: impl AsRef<Path>) -> Result<ExperimentPlan, PlanError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_plan(&text, path)
}

pub fn parse_plan(text: &str, path: &Path) -> Result<ExperimentPlan, PlanError> {
    let plan: ExperimentPlan = serde_json::from_str(text).map_err(|e| PlanError::Parse {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub label: String,
    pub params: BTreeMap<String, Value>,
    pub seed: u64,
    pub stream: u64,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub version: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub plan: ExperimentPlan,
    pub cells: Vec<CellRecord>,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Outcome of [`execute`]: the manifest that was written.
pub type Execution = Manifest;

/// Runs every cell of the plan (or only the base when `sweep` is false) and
/// writes the requested artifacts. The manifest is always written; on
/// failure every other file this run produced is removed.
pub fn execute(plan: &ExperimentPlan, sweep: bool) -> anyhow::Result<Execution> {
    plan.validate()?;
    let dir = plan.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let cells = if sweep {
        plan.cells()?
    } else {
        let mut base_only = plan.clone();
        base_only.sweep.clear();
        base_only.cells()?
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()?;
    let results: Vec<anyhow::Result<CellRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| execute_cell(plan, cell, &dir))
            .collect()
    });

    let mut records = Vec::new();
    let mut written = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(rec) => {
                written.extend(rec.files.iter().cloned());
                records.push(rec);
            }
            Err(e) => {
                failure.get_or_insert_with(|| format!("{e:#}"));
                if let Some(partial) = e.downcast_ref::<PartialFiles>() {
                    written.extend(partial.0.iter().cloned());
                }
            }
        }
    }

    if failure.is_none() && plan.outputs.contains(&Artifact::CCurve) && records.len() > 1 {
        match write_c_curve(plan, &cells, &records, &dir) {
            Ok(files) => written.extend(files),
            Err(e) => failure = Some(format!("{e:#}")),
        }
    }

    if failure.is_some() {
        for f in &written {
            let _ = fs::remove_file(dir.join(f));
        }
        written.clear();
        records.iter_mut().for_each(|r| r.files.clear());
    }
    written.sort();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        name: plan.name.clone(),
        version: version_string(),
        status: if failure.is_some() {
            Status::Failed
        } else {
            Status::Success
        },
        error: failure,
        plan: plan.clone(),
        cells: records,
        files: written,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug)]
struct PartialFiles(Vec<String>);

impl std::fmt::Display for PartialFiles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} partial output file(s)", self.0.len())
    }
}

impl std::error::Error for PartialFiles {}

struct CellWriter<'a> {
    dir: &'a Path,
    prefix: String,
    files: Vec<String>,
}

impl CellWriter<'_> {
    fn name(&self, stem: &str, ext: &str) -> String {
        format!("{}_{stem}.{ext}", self.prefix)
    }

    fn csv(&mut self, stem: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let name = self.name(stem, "csv");
        write_csv(&self.dir.join(&name), header, rows)
            .map_err(|e| anyhow::anyhow!("writing {name}: {e}"))?;
        self.files.push(name);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> anyhow::Result<()> {
        let name = self.name(stem, "json");
        write_json(&self.dir.join(&name), value)
            .map_err(|e| anyhow::anyhow!("writing {name}: {e}"))?;
        self.files.push(name);
        Ok(())
    }
}

fn execute_cell(plan: &ExperimentPlan, cell: &Cell, dir: &Path) -> anyhow::Result<CellRecord> {
    let mut out = CellWriter {
        dir,
        prefix: format!("{}_{}", plan.name, cell.label),
        files: Vec::new(),
    };
    match cell_artifacts(plan, cell, &mut out) {
        Ok(c_hat) => Ok(CellRecord {
            label: cell.label.clone(),
            params: cell.params.clone(),
            seed: cell.config.seed,
            stream: cell.config.stream,
            files: out.files,
            c_hat,
        }),
        Err(e) => Err(e
            .context(format!("cell {}", cell.label))
            .context(PartialFiles(out.files))),
    }
}

fn cell_artifacts(
    plan: &ExperimentPlan,
    cell: &Cell,
    out: &mut CellWriter<'_>,
) -> anyhow::Result<Option<f64>> {
    if plan.outputs.is_empty() {
        return Ok(None);
    }
    let series = run(&cell.config)?;
    let wants = |a: Artifact| plan.outputs.contains(&a);

    if wants(Artifact::Histogram) {
        let h = size_histogram(series.pooled(), &plan.histogram)?;
        out.csv("histogram", HISTOGRAM_HEADER, &histogram_rows(&h))?;
    }

    let growth = if wants(Artifact::Growth) || wants(Artifact::Dispersion) {
        Some(growth_series(&series)?)
    } else {
        None
    };
    if let (true, Some(gs)) = (wants(Artifact::Growth), &growth) {
        out.csv("growth", GROWTH_HEADER, &growth_rows(gs))?;
        let bands = growth_diff_histograms(gs, &plan.histogram);
        out.csv("growth_diff_hist", GROWTH_HIST_HEADER, &bands)?;
    }
    if let (true, Some(gs)) = (wants(Artifact::Dispersion), &growth) {
        let (by_lambda, by_size) = dispersion_curves(gs, &plan.dispersion)?;
        out.csv(
            "dispersion_lambda",
            DISPERSION_HEADER,
            &dispersion_rows(&by_lambda),
        )?;
        out.csv(
            "dispersion_size",
            DISPERSION_HEADER,
            &dispersion_rows(&by_size),
        )?;
        if wants(Artifact::Fits) {
            let (x, y) = defined_points(&by_lambda);
            out.json("fit_sd_ratio_vs_lambda", &statfit::fit_exp_decay(&x, &y)?)?;
            let (x, y) = defined_points(&by_size);
            out.json(
                "fit_sd_log_ratio_vs_size",
                &statfit::fit_loglog_slope(&x, &y)?,
            )?;
        }
    }

    let mut c_hat = None;
    if wants(Artifact::CCurve) {
        let est = estimate_c(&series)?;
        let rows: Vec<Vec<String>> = est
            .lambdas
            .iter()
            .zip(&est.per_firm)
            .enumerate()
            .map(|(i, (l, p))| vec![i.to_string(), fmt(*l), fmt(*p)])
            .collect();
        out.csv("c_per_firm", &["firm", "lambda", "product"], &rows)?;
        let mut total = est.c_hat;
        for r in 1..plan.replicas {
            let mut cfg = cell.config.clone();
            cfg.stream += r as u64;
            total += estimate_c(&run(&cfg)?)?.c_hat;
        }
        c_hat = Some(total / plan.replicas as f64);
    }

    if wants(Artifact::Fits) {
        for (stem, fit) in size_fits(&series, plan.tail_quantile)? {
            out.json(stem, &fit)?;
        }
        if let Some(gs) = &growth {
            let low = gs.pooled(GrowthMeasure::Difference, |f| f.lambda < 0.2);
            if low.len() >= 10 {
                out.json("fit_laplace_diff_low_lambda", &statfit::fit_laplace(&low)?)?;
            }
        }
    }
    Ok(c_hat)
}

fn size_fits(
    series: &SnapshotSeries,
    tail_quantile: f64,
) -> anyhow::Result<Vec<(&'static str, FitResult)>> {
    let pooled = series.pooled();
    let mut fits = Vec::new();
    if pooled.len() >= 10 && pooled.iter().all(|&w| w > 0.0) {
        fits.push(("fit_exponential", statfit::fit_exponential(pooled)?));
    }
    if series.config.turnover.is_distributed() {
        fits.push((
            "fit_powerlaw",
            statfit::fit_powerlaw_tail_quantile(pooled, tail_quantile)?,
        ));
    }
    Ok(fits)
}

fn write_c_curve(
    plan: &ExperimentPlan,
    cells: &[Cell],
    records: &[CellRecord],
    dir: &Path,
) -> anyhow::Result<Vec<String>> {
    let mut files = Vec::new();
    let mut points: Vec<(u64, f64)> = cells
        .iter()
        .zip(records)
        .filter_map(|(c, r)| r.c_hat.map(|v| (c.config.firm_count as u64, v)))
        .collect();
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|(n, c)| vec![n.to_string(), fmt(*c), fmt(1.0 / (*n as f64).ln())])
        .collect();
    let name = format!("{}_c_curve.csv", plan.name);
    write_csv(
        &dir.join(&name),
        &["firm_count", "c_hat", "inv_log_n"],
        &rows,
    )?;
    files.push(name);
    let ns: Vec<u64> = points.iter().map(|p| p.0).collect();
    let cs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut distinct = ns.clone();
    distinct.dedup();
    if distinct.len() >= 3 {
        let name = format!("{}_c_scaling.json", plan.name);
        write_json(&dir.join(&name), &statfit::fit_c_scaling(&ns, &cs)?)?;
        files.push(name);
    }
    Ok(files)
}

pub const HISTOGRAM_HEADER: &[&str] = &["bin_lo", "bin_hi", "center", "density", "count"];
pub const GROWTH_HEADER: &[&str] = &[
    "firm",
    "lambda",
    "mean_size",
    "sd_ratio",
    "sd_log_ratio",
    "sd_diff",
    "undefined_ratios",
];
pub const GROWTH_HIST_HEADER: &[&str] = &["lambda_target", "firms", "bin_lo", "bin_hi", "density"];
pub const DISPERSION_HEADER: &[&str] = &["bin_lo", "bin_hi", "center", "sd", "firms"];

/// Marker written for missing values.
pub const MISSING: &str = "NA";

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        MISSING.to_owned()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_owned(), fmt)
}

pub fn size_histogram(samples: &[f64], settings: &HistogramSettings) -> crate::Result<Histogram> {
    match settings.scale {
        BinScale::Linear => {
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = samples
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
                .min(0.0);
            if !hi.is_finite() {
                return Err(crate::Error::Empty("histogram samples"));
            }
            Histogram::linear(
                samples,
                settings.bins,
                lo,
                if hi > lo { hi } else { lo + 1.0 },
                Normalization::Density,
            )
        }
        BinScale::Log => Histogram::auto_log(samples, settings.bins, Normalization::Density),
    }
}

pub fn histogram_rows(h: &Histogram) -> Vec<Vec<String>> {
    h.edges
        .windows(2)
        .zip(h.values())
        .zip(&h.counts)
        .map(|((e, v), c)| {
            vec![
                fmt(e[0]),
                fmt(e[1]),
                fmt(0.5 * (e[0] + e[1])),
                fmt(v),
                c.to_string(),
            ]
        })
        .collect()
}

fn growth_rows(gs: &GrowthSeries) -> Vec<Vec<String>> {
    gs.firms
        .iter()
        .enumerate()
        .map(|(i, f)| {
            vec![
                i.to_string(),
                fmt(f.lambda),
                fmt(f.mean_size),
                fmt_opt(f.sd(GrowthMeasure::Ratio)),
                fmt_opt(f.sd(GrowthMeasure::LogRatio)),
                fmt_opt(f.sd(GrowthMeasure::Difference)),
                f.undefined.len().to_string(),
            ]
        })
        .collect()
}

/// `λ` values whose difference-series distributions are tabulated.
pub const GROWTH_LAMBDA_TARGETS: &[f64] = &[0.0, 0.2, 0.4, 0.6, 0.8, 0.95];
const GROWTH_LAMBDA_HALF_WIDTH: f64 = 0.025;

fn growth_diff_histograms(gs: &GrowthSeries, settings: &HistogramSettings) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for &target in GROWTH_LAMBDA_TARGETS {
        let near =
            |f: &analytics::FirmGrowth| (f.lambda - target).abs() <= GROWTH_LAMBDA_HALF_WIDTH;
        let firms = gs.firms.iter().filter(|f| near(f)).count();
        let g = gs.pooled(GrowthMeasure::Difference, near);
        let Ok(h) = Histogram::auto_linear(&g, settings.bins, Normalization::Density) else {
            continue;
        };
        for (e, v) in h.edges.windows(2).zip(h.values()) {
            rows.push(vec![
                fmt(target),
                firms.to_string(),
                fmt(e[0]),
                fmt(e[1]),
                fmt(v),
            ]);
        }
    }
    rows
}

/// `sd(r)` against `λ` on `[0, lambda_max]` and `sd(log r)` against mean size.
pub fn dispersion_curves(
    gs: &GrowthSeries,
    settings: &DispersionSettings,
) -> crate::Result<(Vec<DispersionPoint>, Vec<DispersionPoint>)> {
    let by_lambda = conditional_dispersion(
        gs,
        &DispersionOptions {
            grouping: Grouping::ByLambda,
            measure: GrowthMeasure::Ratio,
            bins: settings.bins,
            scheme: settings.scheme,
            range: Some((0.0, settings.lambda_max)),
        },
    )?;
    let by_size = conditional_dispersion(
        gs,
        &DispersionOptions {
            grouping: Grouping::ByMeanSize,
            measure: GrowthMeasure::LogRatio,
            bins: settings.bins,
            scheme: settings.size_scheme,
            range: None,
        },
    )?;
    Ok((by_lambda, by_size))
}

fn dispersion_rows(points: &[DispersionPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                fmt(p.lo),
                fmt(p.hi),
                fmt_opt(p.center),
                fmt_opt(p.sd),
                p.firms.to_string(),
            ]
        })
        .collect()
}

/// Bin centers and dispersions of the non-empty bins.
pub fn defined_points(points: &[DispersionPoint]) -> (Vec<f64>, Vec<f64>) {
    points
        .iter()
        .filter_map(|p| Some((p.center?, p.sd?)))
        .filter(|(_, sd)| *sd > 0.0)
        .unzip()
}

/// UTF-8, comma-separated, header row, LF line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a CSV file.
pub type CsvTable = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Reads a CSV written by [`write_csv`]; `NA` cells become `None`.
pub fn read_csv(path: &Path) -> anyhow::Result<CsvTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| {
                    if s == MISSING {
                        Ok(None)
                    } else {
                        s.parse::<f64>().map(Some)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// One named check of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn within(
        name: &str,
        measured: f64,
        expected: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name: name.to_owned(),
            passed: (measured - expected).abs() <= tolerance,
            measured,
            expected,
            tolerance,
            detail: detail.into(),
        }
    }

    fn below(name: &str, measured: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed: measured < limit,
            measured,
            expected: 0.0,
            tolerance: limit,
            detail: detail.into(),
        }
    }

    fn error(name: &str, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.to_owned(),
            passed: false,
            measured: f64::NAN,
            expected: f64::NAN,
            tolerance: f64::NAN,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub plan: String,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Cap on the step count of the replay check, which runs the base twice.
const REPLAY_STEPS: u64 = 20_000;
const SIMPLEX_DRAWS: usize = 100_000;

/// Runs the invariant checks relevant to the plan's base configuration.
/// Failures are report entries, never errors.
pub fn validate(plan: &ExperimentPlan) -> ValidationReport {
    let cfg = &plan.base;
    let mut checks = Vec::new();

    let arity = cfg.interacting().min(1000);
    if cfg.mode == Mode::Coupled && arity >= 2 {
        checks.push(simplex_check(arity, cfg.seed));
    }

    let mut replay_cfg = cfg.clone();
    replay_cfg.steps = cfg.steps.min(cfg.burn_in + REPLAY_STEPS);
    checks.push(replay_check(&replay_cfg, &replay_cfg));

    match run(cfg) {
        Ok(series) if !series.is_empty() => {
            checks.extend(series_checks(&series, plan.tail_quantile))
        }
        Ok(_) => checks.push(CheckOutcome::error("run", "no snapshots recorded")),
        Err(e) => checks.push(CheckOutcome::error("run", e)),
    }
    ValidationReport {
        plan: plan.name.clone(),
        checks,
    }
}

fn simplex_check(n: usize, seed: u64) -> CheckOutcome {
    let mut rng = crate::rng::stream_rng(seed, u64::MAX);
    let mut buf = vec![0.0; n];
    let first: Vec<f64> = (0..SIMPLEX_DRAWS)
        .map(|_| {
            fill_simplex(&mut buf, &mut rng);
            buf[0]
        })
        .collect();
    match statfit::ks_statistic(&first, |x| {
        epsilon_marginal_cdf(x.clamp(0.0, 1.0), n).unwrap_or(0.0)
    }) {
        Ok(ks) => CheckOutcome::below(
            "simplex_marginal_ks",
            ks,
            0.01,
            format!("{SIMPLEX_DRAWS} draws at n = {n} vs 1 - (1 - θ)^(n-1)"),
        ),
        Err(e) => CheckOutcome::error("simplex_marginal_ks", e),
    }
}

/// Runs both configs and reports whether their snapshots are bit-identical.
pub fn replay_check(a: &EconomyConfig, b: &EconomyConfig) -> CheckOutcome {
    match (run(a), run(b)) {
        (Ok(x), Ok(y)) => {
            let same = x.times == y.times
                && x.pooled().len() == y.pooled().len()
                && x.pooled()
                    .iter()
                    .zip(y.pooled())
                    .all(|(p, q)| p.to_bits() == q.to_bits());
            CheckOutcome {
                name: "deterministic_replay".into(),
                passed: same,
                measured: if same { 0.0 } else { 1.0 },
                expected: 0.0,
                tolerance: 0.0,
                detail: format!("{} snapshots compared", x.len()),
            }
        }
        (Err(e), _) | (_, Err(e)) => CheckOutcome::error("deterministic_replay", e),
    }
}

fn series_checks(series: &SnapshotSeries, tail_quantile: f64) -> Vec<CheckOutcome> {
    let cfg = &series.config;
    let pooled = series.pooled();
    let mut checks = Vec::new();

    if cfg.mode == Mode::Coupled {
        let n = cfg.firm_count as f64;
        let drift = series
            .snapshots()
            .map(|s| ((s.iter().sum::<f64>() - n) / n).abs())
            .fold(0.0, f64::max);
        checks.push(CheckOutcome::below(
            "conservation_drift",
            drift,
            1e-9,
            "max relative deviation of Σw from N",
        ));
    }

    if let TurnoverKind::Constant { lambda } = cfg.turnover.kind {
        let interaction = match (cfg.mode, cfg.arity) {
            (Mode::Coupled, Arity::Fixed(2)) => Some(Interaction::Binary),
            (Mode::Coupled, Arity::All) | (Mode::Reduced, _) => Some(Interaction::NAry),
            _ => None,
        };
        if let Some(interaction) = interaction {
            let predicted =
                analytics::variance_prediction(lambda, interaction).expect("validated λ");
            match analytics::central_moment(pooled, 2) {
                Ok(v) => checks.push(CheckOutcome::within(
                    "variance_vs_prediction",
                    v,
                    predicted,
                    0.03 * predicted,
                    format!("{interaction:?} prediction at λ = {lambda}, ±3%"),
                )),
                Err(e) => checks.push(CheckOutcome::error("variance_vs_prediction", e)),
            }
        }
        if lambda == 0.0 && cfg.mode == Mode::Coupled {
            match statfit::fit_exponential(pooled) {
                Ok(fit) => checks.push(CheckOutcome::within(
                    "exponential_rate",
                    fit.param("rate"),
                    1.0,
                    0.03,
                    format!(
                        "pooled sizes, KS = {}",
                        fit.ks_statistic.unwrap_or(f64::NAN)
                    ),
                )),
                Err(e) => checks.push(CheckOutcome::error("exponential_rate", e)),
            }
        }
        if lambda > 0.0 && cfg.mode == Mode::Reduced {
            let ks = HypoExpSpec::truncated(lambda)
                .map_err(anyhow::Error::from)
                .and_then(|spec| {
                    Ok(statfit::ks_statistic(pooled, |w| {
                        analytics::hypoexp_cdf(w.max(0.0), &spec).unwrap_or(0.0)
                    })?)
                });
            match ks {
                Ok(ks) => checks.push(CheckOutcome::below(
                    "hypoexponential_ks",
                    ks,
                    0.01,
                    "pooled sizes vs truncated hypoexponential",
                )),
                Err(e) => checks.push(CheckOutcome::error("hypoexponential_ks", e)),
            }
        }
    } else if cfg.mode != Mode::Glv {
        match estimate_c(series) {
            Ok(est) => match statfit::linear_regression(&est.lambdas, &est.per_firm) {
                Ok(lin) => checks.push(CheckOutcome::below(
                    "c_constancy_t",
                    lin.slope_t().abs(),
                    3.0,
                    format!("|t| of slope of (1-λ)mean(w) on λ; Ĉ = {}", est.c_hat),
                )),
                Err(e) => checks.push(CheckOutcome::error("c_constancy_t", e)),
            },
            Err(e) => checks.push(CheckOutcome::error("c_constancy_t", e)),
        }
        match statfit::fit_powerlaw_tail_quantile(pooled, tail_quantile) {
            Ok(fit) => checks.push(CheckOutcome::within(
                "tail_exponent",
                fit.param("alpha"),
                2.0,
                0.15,
                format!("Hill estimate above the {tail_quantile} quantile"),
            )),
            Err(e) => checks.push(CheckOutcome::error("tail_exponent", e)),
        }
    }
    checks
}
