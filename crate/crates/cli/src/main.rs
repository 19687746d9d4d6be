use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pfrecon::{commands, CliError, Config};

#[derive(Parser)]
#[command(name = "pfrecon", version, about = "Phase-field and shape reconstruction of inclusions from boundary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic boundary measurements from the configured phantom.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Phase-field reconstruction by the parabolic obstacle iteration.
    ReconstructPop {
        #[command(flatten)]
        common: Common,
        /// Measurement directory written by `generate`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Field snapshot cadence in accepted iterations.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Sharp-interface reconstruction by shape-gradient descent.
    ReconstructShape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Derivative, adjoint, solver and energy checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturb the gradient so the Taylor test must fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Phase-field reconstructions over `sweep.eps`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
}

fn load(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let summary = match cli.command {
        Command::Generate { common } => commands::generate(&load(&common)?, &common.out)?,
        Command::ReconstructPop {
            common,
            data,
            snapshot_every,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = snapshot_every {
                cfg.pop.snapshot_every = s;
            }
            commands::reconstruct_pop(&cfg, &common.out, data.as_deref())?
        }
        Command::ReconstructShape { common, data } => {
            commands::reconstruct_shape(&load(&common)?, &common.out, data.as_deref())?
        }
        Command::Verify {
            common,
            corrupt_gradient,
        } => commands::verify(&load(&common)?, &common.out, corrupt_gradient)?,
        Command::Sweep {
            common,
            data,
            snapshot_every,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = snapshot_every {
                cfg.pop.snapshot_every = s;
            }
            commands::sweep(&cfg, &common.out, data.as_deref())?
        }
    };
    print!("{}", toml::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
