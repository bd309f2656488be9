use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hslag", version, about = "Run a Hamiltonian stationary Lagrangian experiment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, out_dir } = Cli::parse().command;
    hslag::run::configure_threads();
    match hslag::run::run(&config, &out_dir) {
        Ok(report) => {
            if let Some(e) = &report.error {
                eprintln!("{}: {}", e.code, e.message);
            }
            println!("{:?} {}", report.status, out_dir.display());
            ExitCode::from(report.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
