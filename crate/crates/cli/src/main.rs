//! Command-line workbench: run JSON experiment configs, reformat finished
//! runs for plotting, and exercise the built-in exact-identity checks.

mod config;
mod plotdata;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "spinlab",
    version,
    about = "Spin-dynamics workbench: freezing sweeps, pulse optimization, \
             kick decoherence, decoupling comparisons, and tomography"
)]
struct Cli {
    /// Override the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (falls back to SPINLAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; writes its tables plus record.json.
    Run {
        config: PathBuf,
        /// Parse and validate the config, then exit without running.
        #[arg(long)]
        validate_only: bool,
    },
    /// Rewrite tables of a finished run as gnuplot data plus a scene JSON.
    Plotdata {
        record: PathBuf,
        /// One of: fr_Q, fr_fig2, fr_fig3, dec_mx, sd_new, dec_tomo.
        #[arg(long)]
        figure: String,
    },
    /// Run the built-in exact-identity checks.
    Selftest,
}

fn setup_threads(cli_threads: Option<usize>) -> Result<(), String> {
    let n = match cli_threads {
        Some(n) => Some(n),
        None => match std::env::var("SPINLAB_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| format!("SPINLAB_THREADS must be a positive integer, got `{v}`"))?,
            ),
            Err(std::env::VarError::NotPresent) => None,
            Err(e) => return Err(format!("SPINLAB_THREADS: {e}")),
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err("thread count must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("cannot configure thread pool: {e}"))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> i32 {
    if let Err(msg) = setup_threads(cli.threads) {
        eprintln!("error: {msg}");
        return 2;
    }
    match cli.command {
        Command::Run { config, validate_only } => {
            let text = match fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return 2;
                }
            };
            let mut cfg = match config::parse_config(&text) {
                Ok(c) => c,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return 2;
                }
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if validate_only {
                println!("ok: {} config is valid (seed {})", cfg.experiment.kind(), cfg.seed);
                return 0;
            }
            match run::run_experiment(&cfg) {
                Ok(outcome) => {
                    println!("wrote {}", outcome.record_path.display());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Plotdata { record, figure } => match plotdata::emit_plotdata(&record, &figure) {
            Ok(files) => {
                println!("wrote {}", files.data_path.display());
                println!("wrote {}", files.scene_path.display());
                0
            }
            Err(msg) => {
                eprintln!("error: {msg}");
                2
            }
        },
        Command::Selftest => {
            let results = spinlab_core::selftest::run_selftests();
            let mut failed = 0usize;
            for r in &results {
                let tag = if r.passed { "ok  " } else { "FAIL" };
                println!("{tag} {}: {}", r.name, r.detail);
                if !r.passed {
                    failed += 1;
                }
            }
            if failed == 0 {
                println!("all {} checks passed", results.len());
                0
            } else {
                eprintln!("error: {failed} of {} checks failed", results.len());
                3
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(dispatch(cli) as u8)
}
