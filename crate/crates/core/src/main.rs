use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rflstd::sweep::{self, point::show_point, selftest::run_selftest, SweepConfig};

#[derive(Parser)]
#[command(
    name = "rflstd",
    version,
    about = "Regularized LSTD with random features: sweeps and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over N/m ratios and regularization values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output` key.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Report every diagnostic at one configuration.
    Point {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn run(cli: Cli) -> rflstd::Result<ExitCode> {
    match cli.command {
        Command::Sweep { config, out, jobs } => {
            let cfg = SweepConfig::from_file(&config)?;
            let out = out
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .ok_or_else(|| rflstd::Error::Config("no output directory: pass --out or set `output`".into()))?;
            let offset = sweep::seed_offset_from_env()?;
            let result = sweep::run_sweep(&cfg, jobs, offset)?;
            result.write_to_dir(&out)?;
            let failures = result.hard_failures();
            for p in &failures {
                eprintln!(
                    "every instance failed at ratio {} lambda {:e}: {}",
                    p.ratio,
                    p.lambda,
                    p.errors.first().map(String::as_str).unwrap_or("")
                );
            }
            eprintln!(
                "wrote {} rows to {}",
                result.rows.len(),
                out.join("sweep.csv").display()
            );
            Ok(if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Point {
            config,
            ratio,
            lambda,
            seed,
        } => {
            let cfg = SweepConfig::from_file(&config)?;
            let report = show_point(&cfg, ratio, lambda, seed)?;
            println!("{report}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let mut ok = true;
            for r in run_selftest() {
                match r.outcome {
                    Ok(()) => println!("PASS {}", r.name),
                    Err(e) => {
                        ok = false;
                        println!("FAIL {}: {e}", r.name);
                    }
                }
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
