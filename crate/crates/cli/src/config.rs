//! Run configuration: a JSON file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use evagraph_core::attack::Mode;
use evagraph_core::ga::GaConfig;
use evagraph_core::gnn::{ModelKind, TrainConfig};
use evagraph_core::graph::{Graph, Split};
use evagraph_core::objectives::FitnessSpec;
use evagraph_core::synth::SbmConfig;

pub const RESULTS_ENV: &str = "EVAGRAPH_RESULTS_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub graph: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Informational: dataset name and model kind of the run.
    pub dataset: Option<String>,
    pub model: Option<ModelKind>,
    pub train: TrainSection,
    pub ga: GaConfig,
    pub fitness: FitnessSpec,
    pub attack: AttackSection,
    pub synth: SbmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub model: ModelKind,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub dropout: Option<f64>,
    pub hidden: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: ModelKind::Gcn,
            lr: None,
            weight_decay: None,
            max_epochs: None,
            patience: None,
            dropout: None,
            hidden: None,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::for_model(self.model, seed);
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            dropout: self.dropout.unwrap_or(d.dropout),
            hidden: self.hidden.unwrap_or(d.hidden),
            ..d
        }
    }
}

/// Which nodes are attacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSet {
    #[default]
    Test,
    Val,
    Unlabeled,
    All,
}

impl NodeSet {
    pub fn select(self, g: &Graph) -> Vec<usize> {
        match self {
            NodeSet::Test => g.nodes_in(Split::Test),
            NodeSet::Val => g.nodes_in(Split::Val),
            NodeSet::Unlabeled => g.nodes_in(Split::Unlabeled),
            NodeSet::All => (0..g.num_nodes()).collect(),
        }
    }
}

impl std::str::FromStr for NodeSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "test" => Ok(NodeSet::Test),
            "val" => Ok(NodeSet::Val),
            "unlabeled" => Ok(NodeSet::Unlabeled),
            "all" => Ok(NodeSet::All),
            _ => Err(format!("unknown node set {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub mode: Mode,
    pub epsilon: f64,
    pub e_loc: Option<f64>,
    pub k_dc: usize,
    pub nodes: NodeSet,
    /// Targeted mode: attacked node ids; empty means every node of `nodes`.
    pub targets: Vec<usize>,
    pub max_budget: usize,
    /// Random mode trials; defaults to the GA's evaluation count.
    pub trials: Option<usize>,
    /// Seeds of a sweep; empty means the global seed only.
    pub seeds: Vec<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            mode: Mode::Global,
            epsilon: 0.05,
            e_loc: None,
            k_dc: 1,
            nodes: NodeSet::Test,
            targets: Vec::new(),
            max_budget: 10,
            trials: None,
            seeds: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }
}

/// Output root: `--out`, then the environment variable, then `results`.
pub fn results_dir() -> PathBuf {
    std::env::var_os(RESULTS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}
