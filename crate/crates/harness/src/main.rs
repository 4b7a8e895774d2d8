use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmg_harness::files::{emit_plotdata, read_trajectory};
use cmg_harness::pipeline::{run_batch, run_check, run_guess, run_solve, write_batch, write_guess, write_solve};
use cmg_harness::{load_config, HarnessError, ScenarioConfig};

/// CMG spacecraft attitude trajectory optimization.
///
/// Exit codes: 0 success, 2 configuration error, 3 solver stall, 4 validation
/// failure, 1 anything else.
#[derive(Parser)]
#[command(name = "cmg", version)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file; the built-in rooftop scenario if omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the configured solver iteration limit.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Steering-law initial guess: writes guess.csv.
    Guess(Common),
    /// Guess and optimal trajectory: writes guess.csv, optimal.csv, report.json.
    Solve(Common),
    /// Re-integrates a trajectory file and checks its residuals.
    Check {
        trajectory: PathBuf,
        /// Solve report whose metrics must match the recomputed ones.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Random maneuvers on every configured geometry: writes batch.json.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Number of random maneuvers.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Plot series (q, omega, delta, h_swr, u_g, u_w) from a trajectory file.
    Plotdata {
        trajectory: PathBuf,
        #[arg(long, default_value = "plot")]
        out_dir: PathBuf,
    },
}

fn config(c: &Common) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::rooftop_default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = c.max_iters {
        cfg.solver.max_iters = n;
    }
    Ok(cfg)
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        log::info!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Guess(c) => {
            let cfg = config(&c)?;
            let run = run_guess(&cfg)?;
            announce(&[write_guess(&c.out_dir, &cfg, &run)?]);
            println!("{}", serde_json::to_string_pretty(&run.metrics).expect("metrics serialize"));
            Ok(())
        }
        Command::Solve(c) => {
            let cfg = config(&c)?;
            let run = run_solve(&cfg)?;
            announce(&write_solve(&c.out_dir, &cfg, &run)?);
            println!("{}", serde_json::to_string_pretty(&run.report.acceptance).expect("flags serialize"));
            run.status()
        }
        Command::Check { trajectory, report } => {
            let check = run_check(&trajectory, report.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&check).expect("check serializes"));
            check.into_result().map(|_| ())
        }
        Command::Batch { common, count } => {
            let cfg = config(&common)?;
            let report = run_batch(&cfg, count)?;
            announce(&[write_batch(&common.out_dir, &report)?]);
            println!("{}", serde_json::to_string_pretty(&report.table).expect("table serializes"));
            Ok(())
        }
        Command::Plotdata { trajectory, out_dir } => {
            let file = read_trajectory(&trajectory)?;
            announce(&emit_plotdata(Path::new(&out_dir), file.meta.m, &file.trajectory)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
