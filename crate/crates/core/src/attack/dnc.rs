//! Divide and conquer: attack chunks of the attacked set one after another.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{evaluate_metrics, objective, AttackResult, Mode};
use crate::error::{Error, Result};
use crate::ga::{self, GaConfig, Telemetry};
use crate::gnn::ModelWeights;
use crate::graph::{apply_flips, AttackScope, Candidate, Graph};
use crate::objectives::FitnessSpec;
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DncPlan {
    /// Disjoint chunks covering the attacked set, in attack order. Each
    /// chunk is sorted.
    pub chunks: Vec<Vec<usize>>,
    pub budgets: Vec<usize>,
}

impl DncPlan {
    pub fn total_budget(&self) -> usize {
        self.budgets.iter().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkReport {
    pub nodes: usize,
    pub delta: usize,
    pub best_fitness: f64,
    pub flips: usize,
    pub telemetry: Vec<Telemetry>,
}

/// Random balanced partition of `scope.v_att` into `k` chunks.
///
/// Each edge incident to the attacked set is charged to the first chunk
/// (in attack order) containing one of its endpoints, and chunk `i` gets
/// `floor(epsilon * charged_i)`. The budgets therefore never sum past
/// `scope.delta`. With `k = 1` the single chunk gets exactly `scope.delta`.
pub fn plan_dnc(g: &Graph, scope: &AttackScope, k: usize, seed: u64) -> Result<DncPlan> {
    if k == 0 {
        return Err(Error::config("divide and conquer needs at least one chunk"));
    }
    if k > scope.v_att.len() {
        return Err(Error::config(format!("{k} chunks for {} attacked nodes", scope.v_att.len())));
    }
    if k == 1 {
        return Ok(DncPlan { chunks: vec![scope.v_att.clone()], budgets: vec![scope.delta] });
    }
    let mut order = scope.v_att.clone();
    order.shuffle(&mut substream(seed, "dnc-plan", 0));
    let m = order.len();
    let chunks: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            let mut c = order[i * m / k..(i + 1) * m / k].to_vec();
            c.sort_unstable();
            c
        })
        .collect();

    let mut owner = vec![usize::MAX; g.num_nodes()];
    for (i, c) in chunks.iter().enumerate() {
        for &v in c {
            owner[v] = i;
        }
    }
    let mut charged = vec![0usize; k];
    for (u, v) in g.edges() {
        let o = owner[u].min(owner[v]);
        if o != usize::MAX {
            charged[o] += 1;
        }
    }
    let mut budgets: Vec<usize> = charged.iter().map(|&e| (scope.epsilon * e as f64).floor() as usize).collect();
    // Guard against rounding when epsilon was derived from delta.
    while budgets.iter().sum::<usize>() > scope.delta {
        let i = (0..k).max_by_key(|&i| (budgets[i], std::cmp::Reverse(i))).expect("k >= 1");
        budgets[i] -= 1;
    }
    Ok(DncPlan { chunks, budgets })
}

/// Attacks the chunks of `plan` in order, each starting from the graph
/// left by the previous chunks. Chunk `0` uses `cfg.seed`, so a one-chunk
/// plan reproduces [`super::attack_global`].
pub fn attack_dnc(
    g: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    plan: &DncPlan,
    fitness: &FitnessSpec,
    cfg: &GaConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    if scope.e_loc.is_some() {
        return Err(Error::config("divide and conquer does not support a local budget"));
    }
    let mut current = g.clone();
    let mut combined: Vec<(usize, usize)> = Vec::new();
    let mut chunks = Vec::with_capacity(plan.chunks.len());
    let mut telemetry = Vec::new();
    let mut evaluations = 0;
    let mut best_fitness = f64::NEG_INFINITY;
    for (i, (nodes, &delta)) in plan.chunks.iter().zip(&plan.budgets).enumerate() {
        let chunk_cfg = GaConfig { seed: if i == 0 { cfg.seed } else { derive_seed(cfg.seed, "dnc", i as u64) }, ..cfg.clone() };
        let chunk_scope = AttackScope::with_delta(&current, nodes, delta, None)?;
        let obj = objective(&current, w, nodes, g, &scope.v_att, fitness, chunk_cfg.seed)?;
        let out = ga::run(&current, &chunk_scope, &chunk_cfg, &obj)?;
        let pairs = out.best.distinct_pairs(current.num_nodes())?;
        combined = sym_diff(&combined, &pairs);
        let next = apply_flips(&current, &pairs);
        drop(obj);
        current = next;
        evaluations += out.evaluations;
        best_fitness = out.best_fitness;
        if plan.chunks.len() == 1 {
            telemetry = out.telemetry.clone();
        }
        chunks.push(ChunkReport {
            nodes: nodes.len(),
            delta,
            best_fitness: out.best_fitness,
            flips: pairs.len(),
            telemetry: out.telemetry,
        });
    }
    let candidate = Candidate::from_pairs(&combined, g.num_nodes())?;
    let flips = candidate.decode(g)?;
    Ok(AttackResult {
        mode: Mode::Dnc,
        objective: fitness.kind,
        seed: cfg.seed,
        epsilon: scope.epsilon,
        delta: scope.delta,
        attacked_nodes: scope.v_att.len(),
        best_fitness,
        evaluations,
        candidate,
        flips,
        clean_metrics: evaluate_metrics(g, w, scope, fitness, &[], cfg.seed)?,
        attacked_metrics: evaluate_metrics(g, w, scope, fitness, &combined, cfg.seed)?,
        telemetry,
        chunks,
        config: serde_json::Value::Null,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn sym_diff(a: &[(usize, usize)], b: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = a.iter().filter(|e| b.binary_search(e).is_err()).copied().collect();
    out.extend(b.iter().filter(|e| a.binary_search(e).is_err()));
    out.sort_unstable();
    out
}
