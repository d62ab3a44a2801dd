use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recoil_cli::compare::compare_files;
use recoil_cli::run::{run, RunOptions};
use recoil_cli::{Result, Scenario};

#[derive(Parser)]
#[command(name = "recoil", version, about = "Recoil-limited fidelity of trapped-ion photonic links")]
struct Cli {
    /// Sweep worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Evaluate moments in truncated Fock space instead of closed form.
    #[arg(long, global = true)]
    oracle: bool,
    /// Print a scenario file with every default filled in, then exit.
    #[arg(long)]
    emit_config_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a scenario and write its result files.
    Run { config: PathBuf },
    /// Row-by-row deltas between two result files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.emit_config_defaults {
        print!("{}", Scenario::default().to_toml());
        return Ok(());
    }
    match cli.command {
        Some(Command::Run { config }) => {
            let scenario = Scenario::load(&config)?;
            let opts = RunOptions {
                threads: cli.threads,
                oracle: cli.oracle,
            };
            let dir = config.parent().map(PathBuf::from).unwrap_or_default();
            for path in run(&scenario, &opts, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Some(Command::Compare { a, b, tol }) => compare_files(&a, &b, tol).map(|_| ()),
        None => {
            eprintln!("nothing to do; see `recoil --help`");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
