//! Projection of candidates onto the local degree constraint.

use std::collections::{HashMap, HashSet};

use rand::Rng as _;

use super::operators::targeted_gene;
use crate::graph::{local_allowance, pi_inverse_unchecked, AttackScope, Candidate, Graph};
use crate::rng::Rng;

const REPLACEMENT_ATTEMPTS: usize = 32;
const WARMUP_ROUNDS: usize = 64;
const SCORE_NOISE: f64 = 0.05;

/// Fraction of candidates containing each gene.
#[derive(Debug, Clone, Default)]
pub struct FrequencyScores {
    freq: HashMap<u64, f64>,
}

impl FrequencyScores {
    pub fn from_population(pop: &[Candidate]) -> Self {
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for c in pop {
            for g in c.distinct_indices() {
                *counts.entry(g).or_default() += 1;
            }
        }
        let total = pop.len().max(1) as f64;
        FrequencyScores { freq: counts.into_iter().map(|(g, k)| (g, k as f64 / total)).collect() }
    }

    pub fn from_map(freq: HashMap<u64, f64>) -> Self {
        FrequencyScores { freq }
    }

    pub fn get(&self, gene: u64) -> f64 {
        self.freq.get(&gene).copied().unwrap_or(0.0)
    }
}

/// Additions charged to each node, updated flip by flip.
struct Ledger<'a> {
    base: &'a Graph,
    n: usize,
    allowance: Vec<usize>,
    growth: Vec<i64>,
    kept: Vec<u64>,
    kept_set: HashSet<u64>,
}

impl<'a> Ledger<'a> {
    fn new(base: &'a Graph, e_loc: f64) -> Self {
        let n = base.num_nodes();
        Ledger {
            base,
            n,
            allowance: (0..n).map(|v| local_allowance(e_loc, base.degree(v))).collect(),
            growth: vec![0; n],
            kept: Vec::new(),
            kept_set: HashSet::new(),
        }
    }

    fn delta_of(&self, gene: u64) -> (usize, usize, i64) {
        let (r, c) = pi_inverse_unchecked(gene, self.n);
        (r, c, if self.base.has_edge(r, c) { -1 } else { 1 })
    }

    fn fits(&self, gene: u64) -> bool {
        let (r, c, d) = self.delta_of(gene);
        d < 0 || (self.growth[r] + d <= self.allowance[r] as i64 && self.growth[c] + d <= self.allowance[c] as i64)
    }

    /// Keeps `gene` if it is a duplicate or fits the budget.
    fn try_keep(&mut self, gene: u64) -> bool {
        if self.kept_set.contains(&gene) {
            return true;
        }
        if !self.fits(gene) {
            return false;
        }
        let (r, c, d) = self.delta_of(gene);
        // Removals are free but earn no credit for later additions.
        if d > 0 {
            self.growth[r] += d;
            self.growth[c] += d;
        }
        self.kept.push(gene);
        self.kept_set.insert(gene);
        true
    }
}

/// Total degree growth beyond the allowance, using set semantics.
pub fn local_excess(cand: &Candidate, base: &Graph, e_loc: f64) -> usize {
    let n = base.num_nodes();
    let mut growth = vec![0i64; n];
    for g in cand.distinct_indices() {
        let (r, c) = pi_inverse_unchecked(g, n);
        let d = if base.has_edge(r, c) { -1 } else { 1 };
        growth[r] += d;
        growth[c] += d;
    }
    growth
        .iter()
        .enumerate()
        .map(|(v, &x)| (x - local_allowance(e_loc, base.degree(v)) as i64).max(0) as usize)
        .sum()
}

/// Random warmup removal: repeatedly drops additions incident to violating
/// nodes with probability proportional to the endpoints' excess.
fn warmup_filter(genes: &[u64], base: &Graph, e_loc: f64, rng: &mut Rng) -> Vec<bool> {
    let n = base.num_nodes();
    let allowance: Vec<i64> = (0..n).map(|v| local_allowance(e_loc, base.degree(v)) as i64).collect();
    let mut alive = vec![true; genes.len()];
    // Duplicates collapse under set semantics; only the first copy counts.
    let mut first_at: HashMap<u64, usize> = HashMap::new();
    for (i, &g) in genes.iter().enumerate() {
        first_at.entry(g).or_insert(i);
    }
    let first: Vec<bool> = genes.iter().enumerate().map(|(i, g)| first_at[g] == i).collect();
    for _ in 0..WARMUP_ROUNDS {
        let mut adds = vec![0i64; n];
        for (i, &g) in genes.iter().enumerate() {
            if !alive[i] || !first[i] {
                continue;
            }
            let (r, c) = pi_inverse_unchecked(g, n);
            if !base.has_edge(r, c) {
                adds[r] += 1;
                adds[c] += 1;
            }
        }
        let excess: Vec<i64> = (0..n).map(|v| (adds[v] - allowance[v]).max(0)).collect();
        if excess.iter().all(|&e| e == 0) {
            break;
        }
        for (i, &g) in genes.iter().enumerate() {
            if !alive[i] || !first[i] {
                continue;
            }
            let (r, c) = pi_inverse_unchecked(g, n);
            if base.has_edge(r, c) {
                continue;
            }
            let ex = excess[r] + excess[c];
            if ex > 0 && rng.random_bool((ex as f64 / (adds[r] + adds[c]) as f64).min(1.0)) {
                alive[i] = false;
            }
        }
    }
    genes.iter().map(|g| alive[first_at[g]]).collect()
}

/// Projects `cand` onto the local constraint of `scope`.
///
/// Genes are visited by descending frequency score plus a small uniform
/// jitter and kept while both endpoints stay within their allowance.
/// Only additions are charged, so a removal never makes room for an
/// addition and the net degree growth stays within the allowance. In
/// warmup mode a random excess-proportional removal runs first. Dropped
/// slots are refilled with feasible targeted draws, or with copies of kept
/// genes. The result is empty only when no gene at all fits.
pub fn local_project(
    cand: &Candidate,
    base: &Graph,
    scope: &AttackScope,
    freq: &FrequencyScores,
    rng: &mut Rng,
    warmup: bool,
) -> Candidate {
    let Some(e_loc) = scope.e_loc else {
        return cand.clone();
    };
    let genes = cand.genes();
    let allowed = if warmup { warmup_filter(genes, base, e_loc, rng) } else { vec![true; genes.len()] };

    let mut order: Vec<(f64, usize)> = genes
        .iter()
        .enumerate()
        .map(|(i, &g)| (freq.get(g) + rng.random_range(0.0..=SCORE_NOISE), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut ledger = Ledger::new(base, e_loc);
    let mut slots: Vec<Option<u64>> = vec![None; genes.len()];
    for &(_, i) in &order {
        if allowed[i] && ledger.try_keep(genes[i]) {
            slots[i] = Some(genes[i]);
        }
    }

    for slot in slots.iter_mut().filter(|s| s.is_none()) {
        for _ in 0..REPLACEMENT_ATTEMPTS {
            let g = targeted_gene(&scope.v_att, base.num_nodes(), rng);
            if !ledger.kept_set.contains(&g) && ledger.fits(g) {
                ledger.try_keep(g);
                *slot = Some(g);
                break;
            }
        }
    }
    if ledger.kept.is_empty() {
        return Candidate::empty();
    }
    let mut out = Vec::with_capacity(genes.len());
    for (k, s) in slots.into_iter().enumerate() {
        out.push(s.unwrap_or(ledger.kept[k % ledger.kept.len()]));
    }
    Candidate::new(out)
}
