use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastr_cli::commands::{self, Run};
use fastr_cli::config::{ConfigError, Resolved};
use fastr_cli::output::Format;

/// Output directory used when `--out` is not given.
const OUT_DIR_ENV: &str = "FASTR_OUT_DIR";

#[derive(Parser)]
#[command(name = "fastr", version, about = "Tunable resonator readout experiments")]
struct Cli {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $FASTR_OUT_DIR, then the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Format of the tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resonance frequency over the (tune, sense) flux plane.
    Surface,
    /// Tune a scattered array onto its frequency grid.
    Calibrate,
    /// Bit error rate of the full readout chain.
    Fidelity,
    /// Flux noise spectrum of a simulated metrology run.
    Psd,
    /// Frequency-multiplexing scaling table.
    Plan {
        /// Processor sizes in cells (perfect squares); scenario list if empty.
        n_cells: Vec<u64>,
    },
    /// Stream random bits out of every shift-register line.
    ShiftDemo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match Resolved::load(cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fastr: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let run = Run {
        config: &config,
        out_dir: &out_dir,
        format: cli.format,
    };
    let result = match &cli.command {
        Command::Surface => commands::surface(&run),
        Command::Calibrate => commands::calibrate(&run),
        Command::Fidelity => commands::fidelity(&run),
        Command::Psd => commands::psd_cmd(&run),
        Command::Plan { n_cells } => commands::plan(&run, n_cells).map(|(paths, text)| {
            print!("{text}");
            paths
        }),
        Command::ShiftDemo => commands::shift_demo(&run),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("fastr: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("fastr: {e:#}");
            ExitCode::from(1)
        }
    }
}
