//! Command-line front end: run experiments, validate configs, and run the
//! oracle verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coopbandit::harness::{preset, ExperimentConfig};
use coopbandit::oracle::{run_full_suite, OracleReport, SuiteScale};
use coopbandit::Error;

/// Environment variable providing the default output directory.
const OUT_DIR_ENV: &str = "COOPBANDIT_OUT";

#[derive(Parser)]
#[command(name = "coopbandit", version, about = "Cooperative bandit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment preset or a JSON config.
    Run(RunArgs),
    /// Validate a JSON config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the oracle suite and emit its report CSV.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Preset name: exp1, exp2, exp3, or exp4.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $COOPBANDIT_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of independent runs.
    #[arg(long)]
    runs: Option<u32>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon T.
    #[arg(long)]
    horizon: Option<u64>,
    /// Worker threads (0 = default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Override the time-series stride.
    #[arg(long)]
    stride: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Report CSV path.
    #[arg(long, default_value = "oracle_report.csv")]
    out: PathBuf,
    /// Reduced instance counts for a fast check.
    #[arg(long, default_value_t = false)]
    quick: bool,
    #[arg(long, default_value_t = 20_260_101)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<Error>() {
                Some(Error::Config(_)) | Some(Error::Parameter(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            cfg.validate()?;
            println!("config ok: {}", cfg.name);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => verify_command(args),
    }
}

fn run_command(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => ExperimentConfig::from_json_file(path)?,
        (None, None) => {
            return Err(Error::Config("pass --preset or --config".into()).into());
        }
        (Some(_), Some(_)) => unreachable!("clap forbids this combination"),
    };
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(stride) = args.stride {
        cfg.record_stride = Some(stride);
    }
    let out_root = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.validate()?;

    let output = coopbandit::harness::run_experiment(&cfg, &out_root, args.jobs)?;
    println!(
        "experiment '{}' finished: {} instances",
        cfg.name,
        output.summary.len()
    );
    for row in &output.summary {
        println!(
            "  {} k={} n={} d={}: final regret {:.3} ± {:.3} over {} runs",
            row.algorithm,
            row.k,
            row.n,
            row.d,
            row.mean_final_regret,
            row.std_final_regret,
            row.runs
        );
    }
    println!("outputs in {}", output.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn verify_command(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let scale = if args.quick {
        SuiteScale::quick()
    } else {
        SuiteScale::full()
    };
    let reports = run_full_suite(&scale, args.seed)?;
    let mut csv = String::from(OracleReport::csv_header());
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    std::fs::write(&args.out, csv)?;

    let failures: Vec<&OracleReport> = reports.iter().filter(|r| !r.pass).collect();
    println!(
        "verify: {} checks, {} failures; report at {}",
        reports.len(),
        failures.len(),
        args.out.display()
    );
    for f in &failures {
        println!(
            "  FAIL {} [{}]: discrepancy {}",
            f.check, f.instance, f.discrepancy
        );
    }
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
