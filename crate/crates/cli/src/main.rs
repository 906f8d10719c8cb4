//! `lls-qaoa`: runs experiment configs and inspects result bundles.
//!
//! Exit codes: 0 success, 2 bad config or input, 3 numerical or fit
//! failure, 4 a run that did not converge under `--strict`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lls_qaoa::experiment::report;
use lls_qaoa::{run_experiment, Error, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "lls-qaoa", version, about = "QAOA pulse design for long-lived singlet order")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-start optimization of a layer schedule.
    Optimize(RunArgs),
    /// Fidelity of a given schedule.
    Evaluate(RunArgs),
    /// Re-optimized (nu, delta) fidelity map.
    Heatmap(RunArgs),
    /// Fixed-schedule map over amplitude and offset errors.
    Robustness(RunArgs),
    /// Preparation followed by detection under the same errors.
    TotalProtocol(RunArgs),
    /// Singlet-triplet Bloch trajectories.
    Trajectory(RunArgs),
    /// Evaluate a benchmark sequence.
    Baseline(RunArgs),
    /// Brute-force grid search over benchmark parameters.
    Search(RunArgs),
    /// Exponential fit of a decay curve.
    FitDecay(RunArgs),
    /// Summarize a result directory and check its hashes.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 4 if the optimizer did not converge.
    #[arg(long)]
    strict: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::FitFailure(_) | Error::ZeroNorm => 3,
        _ => 2,
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> ExitCode {
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions {
        seed: args.seed,
        kind: Some(kind),
    };
    match run_experiment(&args.config, &args.out_dir, &opts) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("wrote {}", summary.out_dir.display());
            if args.strict && !summary.manifest.converged {
                eprintln!("error: optimizer did not converge (--strict)");
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Report { out_dir } => {
            return match report(&out_dir) {
                Ok(lines) => {
                    for l in lines {
                        println!("{l}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            };
        }
        Command::Optimize(a) => (ExperimentKind::Optimize, a),
        Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
        Command::Heatmap(a) => (ExperimentKind::Heatmap, a),
        Command::Robustness(a) => (ExperimentKind::Robustness, a),
        Command::TotalProtocol(a) => (ExperimentKind::TotalProtocol, a),
        Command::Trajectory(a) => (ExperimentKind::Trajectory, a),
        Command::Baseline(a) => (ExperimentKind::Baseline, a),
        Command::Search(a) => (ExperimentKind::Search, a),
        Command::FitDecay(a) => (ExperimentKind::FitDecay, a),
    };
    run(kind, args)
}
