use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sosm_cli::run::{load_config, run, Overrides};
use sosm_cli::selftest;

#[derive(Parser)]
#[command(name = "sosm", version, about = "Stationary Stokes-Onsager-Stefan-Maxwell finite element runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config.
    Run {
        config: PathBuf,
        /// Number of uniform refinements after the first mesh.
        #[arg(long)]
        refinements: Option<usize>,
        /// Flux degree k (1 or 2).
        #[arg(long)]
        degree: Option<usize>,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Accepted for symmetry with `selftest`; runs are deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomized property checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() {
    let Ok(v) = std::env::var("SOSM_THREADS") else { return };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("SOSM_THREADS ignored: {e}");
            }
        }
        _ => log::warn!("SOSM_THREADS={v:?} is not a positive integer; ignored"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    init_threads();
    match cli.command {
        Command::Run { config, refinements, degree, output, seed: _ } => {
            let overrides = Overrides { refinements, flux_degree: degree, output };
            let outcome = load_config(&config, &overrides).and_then(|cfg| run(&cfg));
            match outcome {
                Ok(o) => {
                    println!("{} ({} artifacts in {})", o.manifest.status, o.manifest.artifacts.len(), o.dir.display());
                    match o.error {
                        None => ExitCode::SUCCESS,
                        Some(e) => {
                            eprintln!("error: {e}");
                            ExitCode::from(e.exit_code() as u8)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Selftest { seed } => {
            let mut failed = false;
            for (name, r) in selftest::run_all(seed) {
                match r {
                    Ok(()) => println!("ok   {name}"),
                    Err(e) => {
                        failed = true;
                        println!("FAIL {name}: {e}");
                    }
                }
            }
            if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
