//! Command-line front end: `treecast run|sweep|analyze|schedule|dump-config`.
//!
//! Exit codes: 0 on success, 2 for configuration/usage problems, 3 for I/O
//! failures. All experiment outputs are CSV files under the configured
//! output directory; diagnostics go to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use treecast::experiment::{
    build_topology, build_traffic, cmd_analyze, cmd_run, cmd_sweep, dump_config, load_config,
    ExperimentConfig, RunError, SweepAxis,
};
use treecast::scheduling::{assign_slots, window_plan, Discipline};
use treecast::simkernel::SimError;
use treecast::traffic::generate_pattern;

#[derive(Parser)]
#[command(
    name = "treecast",
    version,
    about = "Deterministic round-based simulator for TDMA data collection in tree sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment; writes per_round.csv and summary.csv
    Run {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the experiment across an axis of values; writes sweep.csv
    Sweep {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated network sizes, e.g. --nodes 32,64,1024
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<u64>>,
        /// Comma-separated traffic probabilities, e.g. --p 0.1,0.5,0.9
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate expected idle-listening estimates; writes analysis.csv
    Analyze {
        /// Path to a key=value config file (only the topology is used)
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated traffic probabilities to evaluate
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one round's slot assignment as CSV (slot,child,parent,kind)
    Schedule {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
        /// Which round's traffic pattern to schedule
        #[arg(long, default_value_t = 0)]
        round: u64,
        /// Discipline to schedule with (defaults to the first configured one)
        #[arg(long)]
        scheduler: Option<String>,
    },
    /// Print the canonical form of a config file
    DumpConfig {
        /// Path to a key=value config file
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(load_config(&text)?)
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = load(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let artifacts = cmd_run(&cfg)?;
            println!("{}", artifacts.per_round_csv.display());
            println!("{}", artifacts.summary_csv.display());
        }
        Command::Sweep {
            config,
            nodes,
            p,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let axis = match (nodes, p) {
                (Some(values), None) if !values.is_empty() => SweepAxis::Nodes(values),
                (None, Some(values)) if !values.is_empty() => SweepAxis::P(values),
                _ => {
                    return Err(treecast::ConfigError::BadValue {
                        key: "sweep".into(),
                        reason: "pass exactly one non-empty axis: --nodes or --p".into(),
                    }
                    .into())
                }
            };
            let path = cmd_sweep(&cfg, &axis)?;
            println!("{}", path.display());
        }
        Command::Analyze { config, p, out } => {
            let mut cfg = load(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let artifacts = cmd_analyze(&cfg, &p)?;
            for warning in &artifacts.warnings {
                eprintln!("warning: {warning}");
            }
            println!("{}", artifacts.analysis_csv.display());
        }
        Command::Schedule {
            config,
            round,
            scheduler,
        } => {
            let cfg = load(&config)?;
            let discipline = match scheduler {
                Some(name) => {
                    name.parse::<Discipline>()
                        .map_err(|_| treecast::ConfigError::BadValue {
                            key: "scheduler".into(),
                            reason: format!("`{name}` is not tpo|mtpo|etpo"),
                        })?
                }
                None => cfg.disciplines[0],
            };
            let tree = build_topology(&cfg)?;
            let model = build_traffic(&cfg, &tree)?;
            let pattern =
                generate_pattern(&model, &tree, round, cfg.seed).map_err(RunError::Traffic)?;
            let alive = vec![true; tree.node_count()];
            let windows = window_plan(&tree, discipline, &pattern, &alive)
                .map_err(|e| RunError::Sim(SimError::Schedule(e)))?;
            let schedule = assign_slots(&windows, &tree, discipline);
            print!("{}", schedule.dump_csv());
        }
        Command::DumpConfig { config } => {
            let cfg = load(&config)?;
            print!("{}", dump_config(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
