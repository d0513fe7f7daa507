//! `otpatch` — entropic-OT patch/prompt losses at desk scale.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure (Sinkhorn nonconvergence aborts only under `--strict`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otpatch::error::Error;
use otpatch_cli::commands;
use otpatch_cli::config::{ModeName, RunConfig};

#[derive(Parser)]
#[command(name = "otpatch", version, about = "Optimal-transport patch/prompt guidance loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one entropic OT problem from a cost-matrix CSV (uniform marginals)
    Solve {
        /// Headerless CSV holding the cost matrix
        cost_csv: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Run gradient descent on the latent; write image, trajectory, assignment
    Optimize {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Emit the cost-plane tangent report (CSV and SVG quiver plots)
    Diagnose {
        /// Patch embeddings CSV; defaults to the configured run's final state
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Run both aggregation modes with identical seeds; write balance metrics
    Compare {
        #[command(flatten)]
        common: CommonFlags,
    },
}

#[derive(Args)]
struct CommonFlags {
    /// Run configuration file (`key = value` lines, `#` comments)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,

    /// Sinkhorn regularization strength override
    #[arg(long)]
    epsilon: Option<f64>,

    /// Aggregation mode override: ot | mean
    #[arg(long)]
    mode: Option<String>,

    /// Fail (exit 3) when Sinkhorn does not converge
    #[arg(long)]
    strict: bool,
}

impl CommonFlags {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(epsilon) = self.epsilon {
            cfg.epsilon = epsilon;
        }
        if let Some(mode) = &self.mode {
            cfg.mode = match mode.as_str() {
                "ot" => ModeName::Ot,
                "mean" => ModeName::Mean,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "--mode must be `ot` or `mean`, got `{other}`"
                    )))
                }
            };
        }
        if self.strict {
            cfg.strict = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Solve { cost_csv, common } => {
            let cfg = common.resolve()?;
            commands::cmd_solve(cost_csv, &cfg, &common.out)
        }
        Command::Optimize { common } => {
            let cfg = common.resolve()?;
            commands::cmd_optimize(&cfg, &common.out)
        }
        Command::Diagnose { embeddings, common } => {
            let cfg = common.resolve()?;
            commands::cmd_diagnose(&cfg, embeddings.as_deref(), &common.out)
        }
        Command::Compare { common } => {
            let cfg = common.resolve()?;
            commands::cmd_compare(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
