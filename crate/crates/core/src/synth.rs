//! Stochastic block model graphs with Gaussian class-conditional features.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeData, Split};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    /// Number of blocks, one class each.
    pub blocks: usize,
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub num_features: usize,
    /// Scale of the class mean vectors.
    pub signal: f64,
    /// Standard deviation of the per-node feature noise.
    pub noise: f64,
    /// Train, validation, test and unlabeled fractions.
    pub split: [f64; 4],
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            blocks: 4,
            block_size: 50,
            p_in: 0.15,
            p_out: 0.01,
            num_features: 16,
            signal: 1.0,
            noise: 1.0,
            split: [0.1, 0.1, 0.1, 0.7],
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn num_nodes(&self) -> usize {
        self.blocks * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.blocks == 0 || self.block_size == 0 {
            return Err(Error::config("the block model needs at least one node"));
        }
        if self.num_features == 0 {
            return Err(Error::config("at least one feature is required"));
        }
        if !(self.signal.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config("feature scales must be finite and noise non-negative"));
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.split)));
        }
        Ok(())
    }
}

/// Uniformly random split assignment with the given fractions. Counts are
/// rounded down for train, validation and test; the rest is unlabeled.
pub fn exchangeable_split(n: usize, fractions: [f64; 4], seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split", 0));
    let counts: Vec<usize> = fractions[..3].iter().map(|f| (f * n as f64).floor() as usize).collect();
    let mut splits = vec![Split::Unlabeled; n];
    let mut at = 0;
    for (split, count) in [Split::Train, Split::Val, Split::Test].into_iter().zip(counts) {
        for &v in &order[at..at + count] {
            splits[v] = split;
        }
        at += count;
    }
    splits
}

/// Samples an SBM graph. Node `v` belongs to block `v / block_size`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.num_nodes();
    let d = cfg.num_features;
    let labels: Vec<usize> = (0..n).map(|v| v / cfg.block_size).collect();

    let mut rng = substream(cfg.seed, "sbm-edges", 0);
    let mut edges = Vec::new();
    for r in 0..n {
        for c in r + 1..n {
            let p = if labels[r] == labels[c] { cfg.p_in } else { cfg.p_out };
            if rng.random_bool(p) {
                edges.push((r, c));
            }
        }
    }

    let mut rng = substream(cfg.seed, "sbm-features", 0);
    let means: Vec<f64> = (0..cfg.blocks * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.signal * z
        })
        .collect();
    let mut features = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push((means[y * d + j] + cfg.noise * z) as f32);
        }
    }

    let data = NodeData {
        features,
        num_features: d,
        labels,
        num_classes: cfg.blocks,
        splits: exchangeable_split(n, cfg.split, cfg.seed),
    };
    Graph::from_edges(n, &edges, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_from_seed() {
        let cfg = SbmConfig { seed: 7, ..Default::default() };
        let a = generate_sbm(&cfg).unwrap();
        let b = generate_sbm(&cfg).unwrap();
        assert_eq!(a.num_edges(), b.num_edges());
        assert_eq!(a.col_indices(), b.col_indices());
        assert_eq!(a.node_data(), b.node_data());
        a.validate().unwrap();
        let other = generate_sbm(&SbmConfig { seed: 8, ..Default::default() }).unwrap();
        assert_ne!(a.col_indices(), other.col_indices());
    }

    #[test]
    fn edge_density_follows_block_probabilities() {
        let cfg = SbmConfig { blocks: 2, block_size: 200, p_in: 0.1, p_out: 0.02, seed: 1, ..Default::default() };
        let g = generate_sbm(&cfg).unwrap();
        let (mut inside, mut across) = (0usize, 0usize);
        for (u, v) in g.edges() {
            if g.labels()[u] == g.labels()[v] {
                inside += 1;
            } else {
                across += 1;
            }
        }
        let pairs_in = 2.0 * 200.0 * 199.0 / 2.0;
        let pairs_out = 200.0 * 200.0;
        assert!((inside as f64 - 0.1 * pairs_in).abs() < 4.0 * (pairs_in * 0.1 * 0.9f64).sqrt());
        assert!((across as f64 - 0.02 * pairs_out).abs() < 4.0 * (pairs_out * 0.02 * 0.98f64).sqrt());
    }

    #[test]
    fn split_sizes() {
        let s = exchangeable_split(200, [0.1, 0.1, 0.1, 0.7], 3);
        let count = |x: Split| s.iter().filter(|&&y| y == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test), count(Split::Unlabeled)), (20, 20, 20, 140));
        assert_eq!(s, exchangeable_split(200, [0.1, 0.1, 0.1, 0.7], 3));
    }

    #[test]
    fn infeasible_configs() {
        assert!(generate_sbm(&SbmConfig { p_in: 1.5, ..Default::default() }).is_err());
        assert!(generate_sbm(&SbmConfig { p_out: -0.1, ..Default::default() }).is_err());
        assert!(generate_sbm(&SbmConfig { split: [0.5, 0.5, 0.5, 0.0], ..Default::default() }).is_err());
        assert!(generate_sbm(&SbmConfig { blocks: 0, ..Default::default() }).is_err());
    }
}
