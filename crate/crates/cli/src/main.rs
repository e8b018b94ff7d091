//! `sflplan`: offline planning studies for split federated learning.

mod commands;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "sflplan",
    version,
    about = "Cut-layer and server compute planner for split federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Optimizer overrides shared by `plan` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct OptimizerFlags {
    /// Floor-only cut-layer rounding and no probe allocation for clients
    /// that train alone.
    #[arg(long, alias = "strict")]
    pub strict_paper_mode: bool,
    /// Iteration cap; overrides the scenario.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative convergence tolerance; overrides the scenario.
    #[arg(long)]
    pub conv_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the cost curves of a model profile.
    Fit {
        #[arg(long)]
        profile: PathBuf,
        /// JSON array of [forward_s, backward_s] pairs.
        #[arg(long)]
        timing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize cut-layers and server allocation for a scenario.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Plan JSON.
        #[arg(long)]
        out: PathBuf,
        /// Per-client breakdown CSV; defaults to the plan path with a .csv extension.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        optimizer: OptimizerFlags,
    },
    /// Replay a plan as a per-phase timeline.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Event CSV (client_id, phase, start_s, end_s).
        #[arg(long)]
        out: PathBuf,
        /// Per-client summary CSV; defaults to `<out stem>_summary.csv`.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// One block of training phases per epoch.
        #[arg(long)]
        expanded: bool,
    },
    /// Sweep the server budget, or the cut-layer of one client.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sweep the cut-layer of `--client` instead of the budget.
        #[arg(long, requires = "client")]
        layers: bool,
        #[arg(long)]
        client: Option<String>,
        /// Server compute for the layer sweep, GFLOPs/s; defaults to an equal share.
        #[arg(long, requires = "layers")]
        f_server: Option<f64>,
        #[command(flatten)]
        optimizer: OptimizerFlags,
    },
    /// Regenerate the bundled synthetic profile, timing samples and scenarios.
    Synth {
        /// Directory receiving `profiles/` and `scenarios/`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Seed of the profile and timing noise.
        #[arg(long, default_value_t = commands::PROFILE_SEED)]
        seed: u64,
        /// Seed of the heterogeneous client pool.
        #[arg(long, default_value_t = commands::CLIENT_SEED)]
        client_seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit {
            profile,
            timing,
            out,
        } => commands::fit(&profile, &timing, &out),
        Command::Plan {
            scenario,
            out,
            csv,
            optimizer,
        } => commands::plan(&scenario, &out, csv.as_deref(), &optimizer),
        Command::Simulate {
            scenario,
            plan,
            out,
            summary,
            rounds,
            expanded,
        } => commands::simulate(&scenario, &plan, &out, summary.as_deref(), rounds, expanded),
        Command::Sweep {
            scenario,
            out,
            layers,
            client,
            f_server,
            optimizer,
        } => {
            if layers {
                let client = client.expect("clap enforces --client");
                commands::sweep_layers(&scenario, &out, &client, f_server)
            } else {
                commands::sweep_budget(&scenario, &out, &optimizer)
            }
        }
        Command::Synth {
            out_dir,
            seed,
            client_seed,
        } => commands::synth(&out_dir, seed, client_seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
