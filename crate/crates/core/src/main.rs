use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfglab::runner::{self, ExperimentKind, EXIT_CONFIG, EXIT_NUMERICAL};

#[derive(Parser)]
#[command(name = "mfglab", version, about = "Mean field game solvers and reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and print its effective form.
    Validate { config: PathBuf },
    /// List experiment kinds.
    ListExperiments,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<20} {}", k.name(), k.summary());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match runner::parse_config(&config) {
            Ok(parsed) => {
                for key in &parsed.defaulted {
                    eprintln!("default: params.{key}");
                }
                print!("{}", parsed.config.to_json());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                code(EXIT_CONFIG)
            }
        },
        Command::Run { config, out, seed, threads } => {
            let mut parsed = match runner::parse_config(&config) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return code(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                parsed.config.seed = s;
            }
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("thread pool: {e}");
                    return code(EXIT_CONFIG);
                }
            }
            for key in &parsed.defaulted {
                eprintln!("default: params.{key}");
            }
            let dir = runner::output_dir(&parsed.config, out.as_deref());
            match runner::run(&parsed, &dir) {
                Ok(m) => {
                    for s in &m.stages {
                        let extra = s.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                        println!("{:<20} {:?} {:.2}s{extra}", s.name, s.status, s.seconds);
                    }
                    println!("manifest: {}", dir.join("manifest.json").display());
                    code(m.exit_code)
                }
                Err(e) => {
                    eprintln!("write failure: {e}");
                    code(EXIT_NUMERICAL)
                }
            }
        }
    }
}
