//! `rbsde-lab`: config-driven runs of the solvers and experiments.
//!
//! Exit status: 0 on success or PASS, 1 on a FAIL verdict or solver error,
//! 2 on usage or config errors.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rbsde_lab::config::{ExperimentConfig, Override};
use rbsde_lab::Error;

#[derive(Parser, Debug)]
#[command(name = "rbsde-lab", version, about = "Small-noise reflected FBSDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Override a config value, e.g. `--set ldp.paths=20000`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DumpFormat {
    Csv,
    Binary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the standing assumptions on a box.
    Validate(Common),
    /// Forward sup-deviation moments per ε.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Also dump the first N trajectories at every ε.
        #[arg(long, value_name = "N")]
        trajectories: Option<usize>,
    },
    /// Noiseless flow on the problem grid.
    Flow(Common),
    /// Obstacle PDE surface.
    Pde {
        #[command(flatten)]
        common: Common,
        /// Export the whole surface.
        #[arg(long, value_enum, value_name = "FORMAT")]
        pde_dump: Option<DumpFormat>,
    },
    /// Reflected BSDE by regression Monte Carlo.
    #[command(alias = "rbsde-run")]
    Rbsde {
        #[command(flatten)]
        common: Common,
        /// Also dump the first N trajectories.
        #[arg(long, value_name = "N")]
        trajectories: Option<usize>,
    },
    /// Deterministic reflected limit along the flow.
    Limit(Common),
    /// Rate of an event on X or Y.
    Rate(Common),
    /// ε-sweep of a rare-event probability with the slope verdict.
    #[command(name = "ldp-sweep")]
    LdpSweep(Common),
    /// Convergence rates of the forward and backward columns.
    Convergence(Common),
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub file_bytes: Vec<u8>,
    pub overrides: Vec<String>,
}

fn load(common: &Common) -> rbsde_lab::Result<Loaded> {
    let file_bytes = std::fs::read(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let text = String::from_utf8(file_bytes.clone())
        .map_err(|_| Error::Config(format!("{} is not UTF-8", common.config.display())))?;
    let overrides = common
        .set
        .iter()
        .map(|s| s.parse::<Override>())
        .collect::<rbsde_lab::Result<Vec<_>>>()?;
    let config = ExperimentConfig::parse_with(&text, &overrides)
        .map_err(|e| Error::Config(format!("{}: {}", common.config.display(), strip(e))))?;
    Ok(Loaded {
        config,
        file_bytes,
        overrides: common.set.clone(),
    })
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn exit_for(e: &commands::CliError) -> u8 {
    match e {
        commands::CliError::Core(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Forward { common, .. } => ("forward", common),
        Command::Flow(c) => ("flow", c),
        Command::Pde { common, .. } => ("pde", common),
        Command::Rbsde { common, .. } => ("rbsde", common),
        Command::Limit(c) => ("limit", c),
        Command::Rate(c) => ("rate", c),
        Command::LdpSweep(c) => ("ldp-sweep", c),
        Command::Convergence(c) => ("convergence", c),
    };
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: CONFIG_ERROR: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let loaded = match load(common) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), strip(e));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => commands::validate(c, &loaded),
        Command::Forward { common, trajectories } => commands::forward(common, &loaded, *trajectories),
        Command::Flow(c) => commands::flow(c, &loaded),
        Command::Pde { common, pde_dump } => commands::pde(common, &loaded, *pde_dump),
        Command::Rbsde { common, trajectories } => commands::rbsde(common, &loaded, *trajectories),
        Command::Limit(c) => commands::limit(c, &loaded),
        Command::Rate(c) => commands::rate(c, &loaded),
        Command::LdpSweep(c) => commands::ldp_sweep(c, &loaded),
        Command::Convergence(c) => commands::convergence(c, &loaded),
    };
    match result {
        Ok(outcome) => {
            println!("{name}: {}", outcome.summary);
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                println!("{name}: FAIL");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(exit_for(&e))
        }
    }
}
