use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use kinex::cli::{self, ExperimentPlan, Status, OUTPUT_DIR_ENV};
use kinex::rng::stream_rng;
use kinex::simplex::sample_simplex;

#[derive(Parser)]
#[command(
    name = "kinex",
    version,
    about = "Coupled-turnover firm size simulations"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct PlanArgs {
    /// Path to a JSON experiment plan.
    plan: PathBuf,
    /// Override the plan's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the plan's full-scale step counts.
    #[arg(long)]
    full: bool,
    /// Override the plan's output directory.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the plan's base configuration.
    Run(PlanArgs),
    /// Run every cell of the plan's sweep.
    Sweep(PlanArgs),
    /// Check invariants on the plan's base configuration.
    Validate(PlanArgs),
    /// Print flat-simplex samples as CSV.
    SampleSimplex {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &PlanArgs) -> anyhow::Result<ExperimentPlan> {
    let mut plan = cli::load_plan(&args.plan)?;
    if let Some(seed) = args.seed {
        plan.base.seed = seed;
    }
    if args.full {
        plan.scale_to_full()?;
    }
    if let Some(dir) = &args.output_dir {
        plan.output_dir = dir.clone();
    }
    plan.validate()?;
    Ok(plan)
}

fn execute(args: &PlanArgs, sweep: bool) -> anyhow::Result<ExitCode> {
    let plan = load(args)?;
    if sweep && plan.sweep.is_empty() {
        anyhow::bail!("plan `{}` has no sweep axes; use `run`", plan.name);
    }
    let manifest = cli::execute(&plan, sweep)?;
    let dir = plan.output_dir.display();
    match manifest.status {
        Status::Success => {
            println!("{}: {} file(s) in {dir}", plan.name, manifest.files.len());
            Ok(ExitCode::SUCCESS)
        }
        Status::Failed => {
            eprintln!(
                "{}: failed: {}",
                plan.name,
                manifest.error.unwrap_or_default()
            );
            Ok(ExitCode::FAILURE)
        }
    }
}

fn validate(args: &PlanArgs) -> anyhow::Result<ExitCode> {
    let plan = load(args)?;
    let report = cli::validate(&plan);
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<24} measured={} expected={} tol={}  {}",
            c.name, c.measured, c.expected, c.tolerance, c.detail
        );
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn sample(n: usize, count: usize, seed: u64) -> anyhow::Result<ExitCode> {
    let mut rng = stream_rng(seed, 0);
    let stdout = std::io::stdout();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(stdout.lock());
    w.write_record((1..=n).map(|i| format!("e{i}")))?;
    for _ in 0..count {
        let s = sample_simplex(n, &mut rng)?;
        w.write_record(s.weights().iter().map(|x| cli::fmt(*x)))?;
    }
    w.flush()?;
    std::io::stdout().flush().context("writing samples")?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match &args.command {
        Command::Run(a) => execute(a, false),
        Command::Sweep(a) => execute(a, true),
        Command::Validate(a) => validate(a),
        Command::SampleSimplex { n, count, seed } => sample(*n, *count, *seed),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
