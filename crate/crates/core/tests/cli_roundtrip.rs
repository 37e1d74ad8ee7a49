use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use kinex::analytics::growth_series;
use kinex::analytics::GrowthMeasure;
use kinex::cli::{
    self, execute, histogram_rows, load_plan, read_csv, size_histogram, Artifact, ExperimentPlan,
    Status, MANIFEST_FILE,
};
use kinex::dynamics::{run, Arity, EconomyConfig, Mode, TurnoverProfile};

fn recipe(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("recipes")
        .join(name)
}

fn shrink(plan: &mut ExperimentPlan, steps: u64, burn_in: u64, stride: u64) {
    plan.base.steps = steps;
    plan.base.burn_in = burn_in;
    plan.base.record_stride = stride;
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn distributed_plan(dir: &Path) -> ExperimentPlan {
    let mut base = EconomyConfig::new(200, TurnoverProfile::uniform_iid(), 1500);
    base.burn_in = 1000;
    base.seed = 8;
    let mut plan = ExperimentPlan::new("dist", base);
    plan.output_dir = dir.to_owned();
    plan
}

#[test]
fn every_recipe_loads() {
    for name in ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "zipf"] {
        let plan = load_plan(recipe(&format!("{name}.json"))).unwrap();
        assert_eq!(plan.name, name);
        assert!(plan.full.is_some(), "{name} lacks full-scale counts");
        let mut full = plan.clone();
        full.scale_to_full().unwrap();
        full.validate().unwrap();
    }
}

#[test]
fn fig1_sweep_writes_six_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = load_plan(recipe("fig1.json")).unwrap();
    assert_eq!(plan.cells().unwrap().len(), 6);
    shrink(&mut plan, 3000, 2000, 100);
    plan.output_dir = dir.path().to_owned();
    let manifest = execute(&plan, true).unwrap();
    assert_eq!(manifest.status, Status::Success);
    let histograms: Vec<_> = manifest
        .files
        .iter()
        .filter(|f| f.ends_with("_histogram.csv"))
        .collect();
    assert_eq!(histograms.len(), 6);
    let lambdas: Vec<f64> = manifest
        .cells
        .iter()
        .map(|c| c.params["turnover.lambda"].as_f64().unwrap())
        .collect();
    assert_eq!(lambdas, vec![0.25, 0.25, 0.5, 0.5, 0.75, 0.75]);
}

#[test]
fn fig3_sweep_writes_c_curve_and_scaling_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = load_plan(recipe("fig3.json")).unwrap();
    shrink(&mut plan, 20, 10, 5);
    plan.output_dir = dir.path().to_owned();
    let manifest = execute(&plan, true).unwrap();
    assert_eq!(manifest.status, Status::Success, "{:?}", manifest.error);
    let (header, rows) = read_csv(&dir.path().join("fig3_c_curve.csv")).unwrap();
    assert_eq!(header, ["firm_count", "c_hat", "inv_log_n"]);
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[0][0], Some(5000.0));
    assert_eq!(rows[11][0], Some(60000.0));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fig3_c_scaling.json")).unwrap())
            .unwrap();
    assert_eq!(fit["family"], "c_scaling");
    assert!(fit["parameters"]["a"].is_number());
}

#[test]
fn empty_outputs_write_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = execute(&distributed_plan(dir.path()), false).unwrap();
    assert_eq!(manifest.status, Status::Success);
    assert!(manifest.files.is_empty());
    assert_eq!(listing(dir.path()), vec![MANIFEST_FILE.to_owned()]);
}

#[test]
fn histogram_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = distributed_plan(dir.path());
    plan.outputs = vec![Artifact::Histogram];
    execute(&plan, false).unwrap();

    let series = run(&plan.base).unwrap();
    let expected = histogram_rows(&size_histogram(series.pooled(), &plan.histogram).unwrap());
    let (header, rows) = read_csv(&dir.path().join("dist_base_histogram.csv")).unwrap();
    assert_eq!(header, cli::HISTOGRAM_HEADER);
    assert_eq!(rows.len(), expected.len());
    for (got, want) in rows.iter().zip(&expected) {
        let want: Vec<Option<f64>> = want.iter().map(|s| Some(s.parse().unwrap())).collect();
        assert_eq!(got, &want);
    }
}

#[test]
fn growth_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = distributed_plan(dir.path());
    plan.outputs = vec![Artifact::Growth];
    execute(&plan, false).unwrap();

    let gs = growth_series(&run(&plan.base).unwrap()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("dist_base_growth.csv")).unwrap();
    assert_eq!(header, cli::GROWTH_HEADER);
    for (row, firm) in rows.iter().zip(&gs.firms) {
        assert_eq!(row[1], Some(firm.lambda));
        assert_eq!(row[2], Some(firm.mean_size));
        assert_eq!(row[3], firm.sd(GrowthMeasure::Ratio));
        assert_eq!(row[4], firm.sd(GrowthMeasure::LogRatio));
        assert_eq!(row[5], firm.sd(GrowthMeasure::Difference));
    }
}

#[test]
fn computational_failure_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = EconomyConfig::new(100, TurnoverProfile::constant(0.3), 200);
    base.arity = Arity::Fixed(2);
    let mut plan = ExperimentPlan::new("broken", base);
    plan.output_dir = dir.path().to_owned();
    // C is only defined for distributed turnover.
    plan.outputs = vec![Artifact::Histogram, Artifact::CCurve];
    let manifest = execute(&plan, false).unwrap();
    assert_eq!(manifest.status, Status::Failed);
    assert!(manifest.error.as_deref().unwrap().contains("distributed"));
    assert_eq!(listing(dir.path()), vec![MANIFEST_FILE.to_owned()]);
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk["status"], "failed");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = distributed_plan(dir.path());
    plan.outputs = vec![
        Artifact::Histogram,
        Artifact::Growth,
        Artifact::Dispersion,
        Artifact::CCurve,
        Artifact::Fits,
    ];
    execute(&plan, false).unwrap();
    let first: Vec<Vec<u8>> = listing(dir.path())
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    execute(&plan, false).unwrap();
    let second: Vec<Vec<u8>> = listing(dir.path())
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    assert!(first.len() > 5);
    assert_eq!(first, second);
}

#[test]
fn validate_reports_variance_for_reduced_plan() {
    let mut base = EconomyConfig::new(1000, TurnoverProfile::constant(0.5), 2100);
    base.mode = Mode::Reduced;
    base.burn_in = 100;
    base.record_stride = 10;
    let report = cli::validate(&ExperimentPlan::new("reduced", base));
    let variance = report
        .checks
        .iter()
        .find(|c| c.name == "variance_vs_prediction")
        .unwrap();
    assert!((variance.expected - 1.0 / 3.0).abs() < 1e-15);
    assert!(variance.passed, "{variance:?}");
    assert!(report.passed(), "{report:?}");
}

fn kinex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinex"))
}

fn write_plan(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("plan.json");
    fs::write(&path, text).unwrap();
    path
}

const MINIMAL: &str = r#"{
  "base": {"firm_count": 1000, "mode": "coupled", "turnover": {"kind": "constant", "lambda": 0.0}, "steps": 10000, "burn_in": 1000, "record_stride": 10}
}"#;

#[test]
fn binary_validate_passes_for_zero_turnover() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinex()
        .arg("validate")
        .arg(write_plan(dir.path(), MINIMAL))
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    for check in [
        "conservation_drift",
        "exponential_rate",
        "deterministic_replay",
        "simplex_marginal_ks",
    ] {
        assert!(
            text.lines()
                .any(|l| l.starts_with("PASS") && l.contains(check)),
            "{check}: {text}"
        );
    }
}

#[test]
fn binary_rejects_out_of_range_turnover() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), &MINIMAL.replace("0.0}", "1.2}"));
    let out = kinex().arg("run").arg(plan).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("base.turnover.lambda"));
}

#[test]
fn binary_honours_seed_and_output_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &MINIMAL.replace("\"base\"", "\"outputs\": [\"histogram\"], \"base\""),
    );
    let out_dir = dir.path().join("elsewhere");
    let status = kinex()
        .args(["run", plan.to_str().unwrap(), "--seed", "77"])
        .env(cli::OUTPUT_DIR_ENV, &out_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["cells"][0]["seed"], 77);
    assert_eq!(manifest["plan"]["base"]["seed"], 77);
    assert!(manifest["version"].as_str().unwrap().starts_with("kinex v"));
    assert!(out_dir.join("plan_base_histogram.csv").exists());
}

#[test]
fn binary_samples_simplex() {
    let out = kinex()
        .args([
            "sample-simplex",
            "--n",
            "4",
            "--count",
            "100",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("e1,e2,e3,e4"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 100);
    assert!(rows
        .iter()
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}

#[test]
fn sweep_verb_requires_axes() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinex()
        .arg("sweep")
        .arg(write_plan(dir.path(), MINIMAL))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
