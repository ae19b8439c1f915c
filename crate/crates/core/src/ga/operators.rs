//! Selection, crossover, mutation and initialization.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pair_count, pi_index_unchecked, Candidate};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationKind {
    /// Any pair of the graph.
    Uniform,
    /// A pair with one endpoint in the attacked set.
    Targeted,
    /// Like `Targeted`, skipping attacked nodes that are already won.
    #[default]
    Adaptive,
}

impl std::str::FromStr for MutationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "um" => Ok(MutationKind::Uniform),
            "targeted" | "tm" => Ok(MutationKind::Targeted),
            "adaptive" | "atm" => Ok(MutationKind::Adaptive),
            other => Err(Error::config(format!("unknown mutation kind {other:?}"))),
        }
    }
}

/// Pair `(u, v)` with `u` drawn from `from` and `v` uniform over the other
/// `n - 1` nodes, encoded as a linear index.
pub fn targeted_gene(from: &[usize], n: usize, rng: &mut Rng) -> u64 {
    let u = from[rng.random_range(0..from.len())];
    let mut v = rng.random_range(0..n - 1);
    if v >= u {
        v += 1;
    }
    pi_index_unchecked(u.min(v), u.max(v), n)
}

/// `count` candidates of `delta` targeted genes each.
pub fn init_population(n: usize, v_att: &[usize], delta: usize, count: usize, rng: &mut Rng) -> Result<Vec<Candidate>> {
    if delta > 0 && n < 2 {
        return Err(Error::config("a graph needs at least two nodes to form a pair"));
    }
    if delta > 0 && v_att.is_empty() {
        return Err(Error::config("attacked node set is empty"));
    }
    Ok((0..count)
        .map(|_| Candidate::new((0..delta).map(|_| targeted_gene(v_att, n, rng)).collect()))
        .collect())
}

/// Index of the fittest of `n_tour` uniform draws (with replacement). Ties
/// go to the lowest index.
pub fn tournament_select(fitness: &[f64], n_tour: usize, rng: &mut Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..n_tour {
        let i = rng.random_range(0..fitness.len());
        if fitness[i] > fitness[best] || (fitness[i] == fitness[best] && i < best) {
            best = i;
        }
    }
    best
}

/// `min(k, len)` distinct joint positions in `[0, len)`, ascending.
pub fn draw_joints(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut j = sample_indices(rng, len, k.min(len)).into_vec();
    j.sort_unstable();
    j
}

/// k-point crossover: gene `t` comes from `s1` when an even number of
/// joints lie strictly before `t`, otherwise from `s2`. The gene at a joint
/// stays with the segment it closes.
pub fn crossover(s1: &Candidate, s2: &Candidate, joints: &[usize]) -> Candidate {
    let (a, b) = (s1.genes(), s2.genes());
    let len = a.len().min(b.len());
    let mut child = Vec::with_capacity(a.len());
    let mut passed = 0;
    for t in 0..a.len() {
        let from_first = passed % 2 == 0;
        child.push(if from_first || t >= len { a[t] } else { b[t] });
        while passed < joints.len() && joints[passed] <= t {
            passed += 1;
        }
    }
    Candidate::new(child)
}

/// Replaces each gene independently with probability `p`.
///
/// `won` lists attacked nodes excluded from the restricted endpoint under
/// adaptive mutation. `v_att` must be sorted.
pub fn mutate(
    cand: &Candidate,
    kind: MutationKind,
    n: usize,
    v_att: &[usize],
    won: &[usize],
    p: f64,
    rng: &mut Rng,
) -> Candidate {
    let open: Vec<usize>;
    let pool: &[usize] = match kind {
        MutationKind::Adaptive if !won.is_empty() => {
            open = v_att.iter().copied().filter(|v| !won.contains(v)).collect();
            if open.is_empty() {
                v_att
            } else {
                &open
            }
        }
        _ => v_att,
    };
    let total = pair_count(n);
    let genes = cand
        .genes()
        .iter()
        .map(|&g| {
            if !rng.random_bool(p) {
                return g;
            }
            match kind {
                MutationKind::Uniform => rng.random_range(0..total),
                _ => targeted_gene(pool, n, rng),
            }
        })
        .collect();
    Candidate::new(genes)
}
