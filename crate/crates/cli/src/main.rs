//! `ota-assign` — file-driven label assignment, staged simulation sweeps,
//! matcher comparison, and proposal-generation demos.

mod commands;
mod error;
mod scene;

use clap::error::ErrorKind;
use clap::{ArgGroup, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ota-assign",
    version,
    about = "Transport-based label assignment toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign labels for one scene file and write the result as JSON
    Assign {
        /// Scene JSON file
        #[arg(long)]
        scene: PathBuf,
        /// Key-value config file (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output JSON path
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep seeds through the staged simulator and write CSV + JSON reports
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds (overrides `simulate.seeds`); runs seeds 0..N
        #[arg(long)]
        seeds: Option<u64>,
        /// Report path prefix; writes `<prefix>.csv` and `<prefix>.json`
        #[arg(long)]
        report: PathBuf,
    },
    /// Solve one scene with the transport matcher, the Hungarian matcher,
    /// and the exact enumeration oracle, and print the costs side by side
    Compare {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mix expert proposals through the gating network and report weight stats
    #[command(group(ArgGroup::new("source").required(true).args(["params", "seed"])))]
    DpgDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gate and expert-bank tensors saved by the engine
        #[arg(long)]
        params: Option<PathBuf>,
        /// Generate random gate tensors and experts from this seed instead
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };

    let result = match cli.command {
        Command::Assign { scene, config, out } => {
            commands::cmd_assign(&scene, config.as_deref(), &out)
        }
        Command::Simulate {
            config,
            seeds,
            report,
        } => commands::cmd_simulate(config.as_deref(), seeds, &report),
        Command::Compare { scene, config } => commands::cmd_compare(&scene, config.as_deref()),
        Command::DpgDemo {
            config,
            params,
            seed,
            out,
        } => commands::cmd_dpg_demo(config.as_deref(), params.as_deref(), seed, &out),
    };

    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
