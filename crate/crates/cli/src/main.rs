//! `ymflow`: command-line front end.
//!
//! Exit codes: 0 success, 1 acceptance criterion failed, 2 configuration
//! error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, ConfigError, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "ymflow", version, about = "Blow-up profiles and rates for the equivariant Yang-Mills heat flow")]
struct Cli {
    /// TOML file with run settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ground state Q with Lambda Q, V and Z
    GroundState {
        #[command(flatten)]
        settings: Settings,
    },
    /// Operator identities, the T_k ladder and Phi_M
    Operators {
        #[command(flatten)]
        settings: Settings,
        /// Also write each T_k as CSV next to the report
        #[arg(long)]
        dump: bool,
    },
    /// Approximate profile Q_b and its residual norms
    Profile {
        #[command(flatten)]
        settings: Settings,
        /// File name of the norms JSON, written next to --out
        #[arg(long)]
        norms: Option<PathBuf>,
    },
    /// Integrate the modulation equations from the explicit solution
    Modulate {
        #[command(flatten)]
        settings: Settings,
    },
    /// Evolve the PDE in the physical or renormalized frame
    Evolve {
        #[command(flatten)]
        settings: Settings,
    },
    /// Run acceptance criteria (all by default)
    Verify {
        /// Criterion numbers or names (constants, operators, coercivity, pde, ...)
        targets: Vec<String>,
        #[command(flatten)]
        settings: Settings,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = cli.config.as_deref();
    let ok = match &cli.command {
        Cmd::GroundState { settings } => {
            commands::ground_state(&RunConfig::resolve(Command::GroundState, file, settings)?)?;
            true
        }
        Cmd::Operators { settings, dump } => {
            commands::operators(&RunConfig::resolve(Command::Operators, file, settings)?, *dump)?;
            true
        }
        Cmd::Profile { settings, norms } => {
            commands::profile(&RunConfig::resolve(Command::Profile, file, settings)?, norms.as_deref())?;
            true
        }
        Cmd::Modulate { settings } => {
            commands::modulate(&RunConfig::resolve(Command::Modulate, file, settings)?)?;
            true
        }
        Cmd::Evolve { settings } => {
            commands::evolve(&RunConfig::resolve(Command::Evolve, file, settings)?)?;
            true
        }
        Cmd::Verify { targets, settings } => {
            commands::verify(&RunConfig::resolve(Command::Verify, file, settings)?, targets)?
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(c) = cause.downcast_ref::<ymflow_core::Error>() {
            return if c.is_numerical() { 3 } else { 2 };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
