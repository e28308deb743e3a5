use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use riskpath::commands::{self, CommandOptions, Outcome, EXIT_ERROR};
use riskpath::config::RunConfig;
use riskpath::objective::FaultInjection;

/// Environment variable that overrides the output directory.
const OUT_DIR_ENV: &str = "RISKPATH_OUT_DIR";

#[derive(Parser)]
#[command(name = "riskpath", version, about = "Risk-averse state-constrained control along a penalty path")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the scenario loop. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, hide = true, default_value = "none")]
    inject_fault: Fault,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    None,
    FlipAdjointSign,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize at one penalty parameter.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Penalty parameter; defaults to the last one in the schedule.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the penalty continuation and write the path table.
    Path {
        #[command(flatten)]
        common: Common,
        /// Start every solve from the initial control instead of the previous
        /// solution.
        #[arg(long)]
        cold: bool,
    },
    /// Run the verification battery on the configured problem.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

fn output_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

fn setup(common: &Common, cold: bool) -> anyhow::Result<(RunConfig, PathBuf, CommandOptions)> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = RunConfig::load(&common.config)?;
    let out = output_dir(common, &cfg);
    let fault = match common.inject_fault {
        Fault::None => FaultInjection::None,
        Fault::FlipAdjointSign => FaultInjection::FlipAdjointSign,
    };
    Ok((cfg, out, CommandOptions { cold, fault }))
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let outcome = match cli.command {
        Command::Solve { common, gamma } => {
            let (cfg, out, opts) = setup(&common, false)?;
            let gamma = gamma.unwrap_or(*cfg.path.gammas.last().expect("schedule validated"));
            commands::cmd_solve(&cfg, gamma, &out, &opts)?
        }
        Command::Path { common, cold } => {
            let (cfg, out, opts) = setup(&common, cold)?;
            commands::cmd_path(&cfg, &out, &opts)?
        }
        Command::Verify { common } => {
            let (cfg, out, opts) = setup(&common, false)?;
            commands::cmd_verify(&cfg, &out, &opts)?
        }
    };
    Ok(outcome)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
