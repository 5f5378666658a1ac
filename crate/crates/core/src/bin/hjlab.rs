use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hjlab::cli::{report, run_in, ExperimentConfig, RunStatus};
use hjlab::Error;

/// Homogenization experiments for viscous Hamilton-Jacobi equations.
///
/// Exit status: 0 all checks passed, 1 a check failed, 2 invalid
/// configuration, 3 a pipeline stage or I/O failed.
#[derive(Parser)]
#[command(name = "hjlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its manifest.
    Run {
        config: PathBuf,
        /// Output directory; overrides the configuration and HJLAB_OUTPUT_ROOT.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads; overrides the configuration.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize a finished run and write plot data.
    Report { manifest: PathBuf },
    /// Parse and check a configuration and print its hash.
    Validate { config: PathBuf },
}

fn status_of(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Validate { config } => ExperimentConfig::load(&config).map(|cfg| {
            println!("{} ok, hash {}", config.display(), cfg.hash());
            ExitCode::SUCCESS
        }),
        Command::Run { config, output, workers } => ExperimentConfig::load(&config).and_then(|mut cfg| {
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = output.unwrap_or_else(|| cfg.resolve_output_dir());
            let m = run_in(&cfg, &out)?;
            println!("manifest: {}", m.path().display());
            for c in m.failed_checks() {
                eprintln!("FAIL {}: {}", c.name, c.detail);
            }
            Ok(match m.status {
                RunStatus::Passed => ExitCode::SUCCESS,
                RunStatus::Failed => ExitCode::from(1),
                RunStatus::Error => {
                    if let Some(f) = &m.failure {
                        eprintln!("stage `{}` failed: {}", f.stage, f.message);
                    }
                    ExitCode::from(3)
                }
            })
        }),
        Command::Report { manifest } => report(&manifest).map(|s| {
            print!("{}", s.text);
            if s.passed() {
                ExitCode::SUCCESS
            } else {
                for f in &s.failed {
                    eprintln!("failed criterion: {f}");
                }
                if s.manifest.status == RunStatus::Error {
                    ExitCode::from(3)
                } else {
                    ExitCode::from(1)
                }
            }
        }),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        status_of(&e)
    })
}
