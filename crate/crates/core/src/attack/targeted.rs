//! Single-node attacks with increasing budgets.

use serde::{Deserialize, Serialize};

use super::objective;
use crate::error::{Error, Result};
use crate::ga::{self, init_population, Evaluator, GaConfig};
use crate::gnn::{argmax, forward, ModelWeights};
use crate::graph::{apply_flips, AttackScope, Candidate, Flip, Graph};
use crate::objectives::{FitnessKind, FitnessSpec};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedResult {
    pub node: usize,
    pub clean_correct: bool,
    /// Smallest successful budget; `None` is reported as NA.
    pub budget: Option<usize>,
    pub flips: Vec<Flip>,
    pub evaluations: usize,
}

impl TargetedResult {
    pub fn budget_label(&self) -> String {
        self.budget.map_or_else(|| "NA".to_string(), |b| b.to_string())
    }
}

fn misclassified(g: &Graph, w: &ModelWeights<f32>, node: usize, pairs: &[(usize, usize)]) -> Result<bool> {
    let z = forward(w, &apply_flips(g, pairs), None)?;
    Ok(argmax(z.row(node)) != g.labels()[node])
}

fn start(g: &Graph, w: &ModelWeights<f32>, node: usize) -> Result<Option<TargetedResult>> {
    if node >= g.num_nodes() {
        return Err(Error::config(format!("node {node} out of range")));
    }
    if misclassified(g, w, node, &[])? {
        return Ok(Some(TargetedResult { node, clean_correct: false, budget: Some(0), flips: Vec::new(), evaluations: 0 }));
    }
    Ok(None)
}

/// Tries budgets `1..=max_budget` with the tanh-margin objective and stops
/// at the first budget whose best perturbation flips the node's prediction.
pub fn attack_targeted(g: &Graph, w: &ModelWeights<f32>, node: usize, max_budget: usize, cfg: &GaConfig) -> Result<TargetedResult> {
    if let Some(done) = start(g, w, node)? {
        return Ok(done);
    }
    let spec = FitnessSpec::of(FitnessKind::TanhMargin);
    let mut evaluations = 0;
    for delta in 1..=max_budget {
        let scope = AttackScope::with_delta(g, &[node], delta, None)?;
        let run_cfg = GaConfig {
            seed: derive_seed(cfg.seed, "targeted", delta as u64),
            target_fitness: Some(f64::MIN_POSITIVE),
            ..cfg.clone()
        };
        let obj = objective(g, w, &[node], g, &[node], &spec, run_cfg.seed)?;
        let out = ga::run(g, &scope, &run_cfg, &obj)?;
        evaluations += out.evaluations;
        let pairs = out.best.distinct_pairs(g.num_nodes())?;
        if misclassified(g, w, node, &pairs)? {
            return Ok(TargetedResult { node, clean_correct: true, budget: Some(delta), flips: out.best.decode(g)?, evaluations });
        }
    }
    Ok(TargetedResult { node, clean_correct: true, budget: None, flips: Vec::new(), evaluations })
}

/// Random control for [`attack_targeted`]: `trials` random targeted
/// candidates per budget.
pub fn targeted_random_baseline(
    g: &Graph,
    w: &ModelWeights<f32>,
    node: usize,
    max_budget: usize,
    trials: usize,
    seed: u64,
) -> Result<TargetedResult> {
    if let Some(done) = start(g, w, node)? {
        return Ok(done);
    }
    let spec = FitnessSpec::of(FitnessKind::Accuracy);
    let obj = objective(g, w, &[node], g, &[node], &spec, seed)?;
    let mut evaluations = 0;
    for delta in 1..=max_budget {
        let mut rng = substream(seed, "targeted-random", delta as u64);
        let mut left = trials;
        while left > 0 {
            let batch = init_population(g.num_nodes(), &[node], delta, left.min(256), &mut rng)?;
            left -= batch.len();
            let scores = obj.evaluate(&batch)?;
            evaluations += batch.len();
            if let Some(i) = scores.iter().position(|&f| f > 0.0) {
                let c: &Candidate = &batch[i];
                return Ok(TargetedResult { node, clean_correct: true, budget: Some(delta), flips: c.decode(g)?, evaluations });
            }
        }
    }
    Ok(TargetedResult { node, clean_correct: true, budget: None, flips: Vec::new(), evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::ModelKind;
    use crate::graph::{test_util, NodeData, Split};

    /// Two triangles {0,1,2} and {3,4,5} joined by nothing, plus node 6
    /// attached only to node 0. Features are uninformative, so node 6 takes
    /// the class its neighbourhood carries.
    fn two_clusters() -> (Graph, ModelWeights<f32>) {
        let n = 7;
        let mut feats = vec![0f32; n * 2];
        for v in 0..3 {
            feats[v * 2] = 1.0;
        }
        for v in 3..6 {
            feats[v * 2 + 1] = 1.0;
        }
        let data = NodeData {
            features: feats,
            num_features: 2,
            labels: vec![0, 0, 0, 1, 1, 1, 0],
            num_classes: 2,
            splits: vec![Split::Train; n],
        };
        let g = Graph::from_edges(n, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (0, 6)], data).unwrap();
        // One hidden unit per class, identity-like weights.
        let mut w = ModelWeights::zeros(ModelKind::Gcn, 2, 2, 2);
        w.w0.set(0, 0, 1.0);
        w.w0.set(1, 1, 1.0);
        w.w1.set(0, 0, 1.0);
        w.w1.set(1, 1, 1.0);
        w.b1 = vec![0.0, 0.01];
        (g, w)
    }

    #[test]
    fn misclassified_node_needs_no_budget() {
        let (g, mut w) = two_clusters();
        w.b1 = vec![0.0, 10.0];
        let r = attack_targeted(&g, &w, 6, 3, &GaConfig { population: 8, steps: 3, ..Default::default() }).unwrap();
        assert_eq!(r.budget, Some(0));
        assert!(!r.clean_correct);
    }

    #[test]
    fn removing_the_only_edge_flips_the_node() {
        let (g, w) = two_clusters();
        let z = forward(&w, &g, None).unwrap();
        assert_eq!(argmax(z.row(6)), 0);
        // Without its edge node 6 has zero features and the bias picks class 1.
        assert!(misclassified(&g, &w, 6, &[(0, 6)]).unwrap());
        let cfg = GaConfig { population: 16, steps: 20, joints: 2, seed: 3, ..Default::default() };
        let r = attack_targeted(&g, &w, 6, 3, &cfg).unwrap();
        assert_eq!(r.budget, Some(1));
        assert!(misclassified(&g, &w, 6, &r.flips.iter().map(|f| (f.r, f.c)).collect::<Vec<_>>()).unwrap());
    }

    #[test]
    fn exhaustive_single_flip_oracle_agrees() {
        let g = test_util::graph(8, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7)]);
        let w = ModelWeights::glorot(ModelKind::Gcn, 3, 4, 2, &mut crate::rng::from_seed(11));
        let cfg = GaConfig { population: 16, steps: 30, joints: 2, seed: 1, ..Default::default() };
        for node in 0..8 {
            if misclassified(&g, &w, node, &[]).unwrap() {
                continue;
            }
            let oracle = (0..8).filter(|&v| v != node).any(|v| {
                misclassified(&g, &w, node, &[(node.min(v), node.max(v))]).unwrap()
            });
            let r = attack_targeted(&g, &w, node, 1, &cfg).unwrap();
            assert_eq!(r.budget == Some(1), oracle, "node {node}");
        }
    }
}
