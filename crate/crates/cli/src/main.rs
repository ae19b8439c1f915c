//! `evagraph`: train models, run structure attacks and summarize results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evagraph_core::attack::Mode;
use evagraph_core::ga::MutationKind;
use evagraph_core::gnn::ModelKind;
use evagraph_core::objectives::FitnessKind;

use crate::config::NodeSet;

#[derive(Parser, Debug)]
#[command(name = "evagraph", version, about = "Evolutionary structure attacks on graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a GCN or MLP and write its weights.
    Train(TrainArgs),
    /// Attack a trained model and write the result JSON.
    Attack(AttackArgs),
    /// Merge result files into a CSV table and plot series.
    Report(ReportArgs),
    /// Write a synthetic stochastic block model graph.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Weights output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training report path; defaults to the weights path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub objective: Option<FitnessKind>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "e-loc")]
    pub e_loc: Option<f64>,
    #[arg(long = "k-dc")]
    pub k_dc: Option<usize>,
    /// Attacked node set.
    #[arg(long)]
    pub nodes: Option<NodeSet>,
    /// Targeted mode: node to attack (repeatable).
    #[arg(long = "node")]
    pub node: Vec<usize>,
    #[arg(long = "max-budget")]
    pub max_budget: Option<usize>,
    /// Random mode: number of random candidates.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated seeds of a sweep.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Parallel runs in a sweep.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "mutation-rate")]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub mutation: Option<MutationKind>,
    #[arg(long)]
    pub joints: Option<usize>,
    #[arg(long)]
    pub elites: Option<usize>,
    #[arg(long = "t-warm")]
    pub t_warm: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "p-plus")]
    pub p_plus: Option<f64>,
    #[arg(long = "p-minus")]
    pub p_minus: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long = "final-samples")]
    pub final_samples: Option<usize>,
    #[arg(long = "p-bar")]
    pub p_bar: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output file for a single run, or directory for a sweep. Defaults to
    /// the results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Result files or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Plot series JSON output.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long = "block-size")]
    pub block_size: Option<usize>,
    #[arg(long = "p-in")]
    pub p_in: Option<f64>,
    #[arg(long = "p-out")]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, required = true)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Attack(a) => commands::attack(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
