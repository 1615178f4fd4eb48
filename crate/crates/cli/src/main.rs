//! Command-line experiment runner. Experiments write CSV artifacts plus a
//! JSON manifest under the output directory; SVG plots are derived from
//! the CSVs unless --no-plots is given. Sweep points run in parallel up to
//! FCFP_RIS_WORKERS threads.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fcfp_core::experiments::{run_experiment, ExperimentName, ExperimentSpec, SolverKind};
use fcfp_core::scenario::load_scenario;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fcfp-ris",
    about = "RIS reflection-coefficient optimization experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its artifacts.
    Run {
        /// One of: beampattern, posterior-evolution, mse-vs-power,
        /// bcrlb-vs-power, bcrlb-vs-sinr, bcrlb-vs-rician, runtime-bench,
        /// table2.
        experiment: String,
        /// Scenario JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed (overrides the config seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Solver: pnqt, cmlt, ipga, ao, unknown-alpha.
        #[arg(long, default_value = "cmlt")]
        solver: String,
        /// Sweep values; meaning depends on the experiment (dBm, dB, Rician
        /// factor, element count).
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Desk-scale profile for fast runs.
        #[arg(long)]
        desk: bool,
        /// Skip SVG plot generation.
        #[arg(long)]
        no_plots: bool,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a scenario configuration file.
    ValidateConfig { path: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            experiment,
            config,
            seed,
            solver,
            sweep,
            desk,
            no_plots,
            out,
        } => {
            let name: ExperimentName = experiment.parse()?;
            let solver: SolverKind = solver.parse()?;
            let seed = match (seed, &config) {
                (Some(s), _) => s,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    load_scenario(&text)?.seed
                }
                (None, None) => bail!("--seed is required when no config is given"),
            };
            let spec = ExperimentSpec {
                name,
                scenario_path: config,
                solver,
                sweep,
                out_dir: out,
                seed,
                desk,
                emit_plots: !no_plots,
            };
            let manifest = run_experiment(&spec)?;
            println!(
                "{}: {} output file(s) in {} ({:.2} s)",
                manifest.experiment,
                manifest.outputs.len(),
                spec.out_dir.display(),
                manifest.wall_time_s
            );
            for status in &manifest.statuses {
                println!("  {status}");
            }
            Ok(())
        }
        Command::ValidateConfig { path } => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let scen = load_scenario(&text)?;
            println!(
                "ok: M = {}, RIS {}x{} (N = {}), K = {}, seed = {}",
                scen.bs_antennas,
                scen.geometry.n_row,
                scen.geometry.n_col,
                scen.n_elements(),
                scen.num_users(),
                scen.seed
            );
            Ok(())
        }
    }
}
