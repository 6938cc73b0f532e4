// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::run::Stage;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Cell,
    Flow,
    Transport,
    Fissure,
    Ergodic,
    Sweep,
    All,
}

/// Homogenized flow and transport through thin random fissures.
#[derive(Debug, Parser)]
#[command(name = "fissurehom", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded run (bit-reproducible outputs).
    #[arg(long)]
    serial: bool,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets cell.resolution, cell.resolution_2d and flow.resolution.
    #[arg(long)]
    resolution: Option<usize>,
}

fn stages(c: Command) -> Vec<Stage> {
    match c {
        Command::Cell => vec![Stage::Cell],
        Command::Flow => vec![Stage::Flow],
        Command::Transport => vec![Stage::Transport],
        Command::Fissure => vec![Stage::Fissure],
        Command::Ergodic => vec![Stage::Ergodic],
        Command::Sweep => vec![Stage::Sweep],
        Command::All => vec![Stage::Cell, Stage::Flow, Stage::Transport, Stage::Fissure, Stage::Ergodic, Stage::Sweep],
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match config::parse_config(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
        },
        None => config::ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.display().to_string();
    }
    if let Some(n) = cli.resolution {
        cfg.cell.resolution = n;
        cfg.cell.resolution_2d = n;
        cfg.flow.resolution = n;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e}");
        return ExitCode::from(2);
    }
    if cli.serial {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("cannot configure serial mode: {e}");
            return ExitCode::from(3);
        }
    }
    // the manifest hashes the effective configuration, overrides included
    let effective = match toml::to_string(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let manifest = match run::run(&cfg, effective.as_bytes(), &stages(cli.command), cli.serial) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("output error: {e}");
            return ExitCode::from(3);
        }
    };
    for s in &manifest.steps {
        println!("{:<10} {:<13} {:>7.2}s  {}", s.name, format!("{:?}", s.status), s.seconds, s.message);
    }
    ExitCode::from(manifest.exit_code() as u8)
}
