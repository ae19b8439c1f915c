//! Edge-flip perturbations, budgets and the local degree constraint.

use serde::{Deserialize, Serialize};

use super::index::{pair_count, pi_index_unchecked, pi_inverse_unchecked};
use super::{csr_from_sorted, Graph};
use crate::error::{Error, Result};

/// A proposed perturbation: `delta` linear pair indices to toggle.
///
/// Duplicates are allowed and collapse to a single flip when applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate {
    genes: Vec<u64>,
}

impl Candidate {
    pub fn new(genes: Vec<u64>) -> Self {
        Candidate { genes }
    }

    pub fn empty() -> Self {
        Candidate::default()
    }

    /// Encodes node pairs given in any orientation.
    pub fn from_pairs(pairs: &[(usize, usize)], n: usize) -> Result<Self> {
        pairs
            .iter()
            .map(|&(u, v)| super::pair_to_index(u, v, n))
            .collect::<Result<Vec<_>>>()
            .map(Candidate::new)
    }

    pub fn genes(&self) -> &[u64] {
        &self.genes
    }

    pub fn genes_mut(&mut self) -> &mut Vec<u64> {
        &mut self.genes
    }

    pub fn into_genes(self) -> Vec<u64> {
        self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let count = pair_count(n);
        match self.genes.iter().find(|&&g| g >= count) {
            Some(&g) => Err(Error::InvalidIndex { index: g, n, count }),
            None => Ok(()),
        }
    }

    /// Sorted distinct gene values.
    pub fn distinct_indices(&self) -> Vec<u64> {
        let mut idx = self.genes.clone();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Distinct pairs `(r, c)`, `r < c`, in index order.
    pub fn distinct_pairs(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        self.validate(n)?;
        Ok(self
            .distinct_indices()
            .into_iter()
            .map(|l| pi_inverse_unchecked(l, n))
            .collect())
    }

    /// Decodes the flips this candidate makes against `g`.
    pub fn decode(&self, g: &Graph) -> Result<Vec<Flip>> {
        Ok(self
            .distinct_pairs(g.num_nodes())?
            .into_iter()
            .map(|(r, c)| Flip {
                r,
                c,
                op: if g.has_edge(r, c) { FlipOp::Remove } else { FlipOp::Add },
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipOp {
    Add,
    Remove,
}

/// One decoded edge flip, `r < c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flip {
    pub r: usize,
    pub c: usize,
    pub op: FlipOp,
}

impl Flip {
    pub fn index(&self, n: usize) -> u64 {
        pi_index_unchecked(self.r, self.c, n)
    }
}

/// `A XOR P` where `P` holds each distinct gene once. The input is untouched.
pub fn apply_perturbation(g: &Graph, cand: &Candidate) -> Result<Graph> {
    let pairs = cand.distinct_pairs(g.num_nodes())?;
    Ok(apply_flips(g, &pairs))
}

/// Toggles each pair in `pairs`. Pairs must be distinct with `r < c < n`.
pub fn apply_flips(g: &Graph, pairs: &[(usize, usize)]) -> Graph {
    if pairs.is_empty() {
        return g.clone();
    }
    let n = g.num_nodes();
    let mut toggles: Vec<(usize, u32)> = Vec::with_capacity(pairs.len() * 2);
    for &(r, c) in pairs {
        debug_assert!(r < c && c < n);
        toggles.push((r, c as u32));
        toggles.push((c, r as u32));
    }
    toggles.sort_unstable();

    let mut directed: Vec<(usize, u32)> = Vec::with_capacity(g.col_indices().len() + toggles.len());
    let mut t = 0;
    for u in 0..n {
        let row = g.neighbors(u);
        let start = t;
        while t < toggles.len() && toggles[t].0 == u {
            t += 1;
        }
        let flips = &toggles[start..t];
        let (mut i, mut j) = (0, 0);
        while i < row.len() || j < flips.len() {
            match (row.get(i), flips.get(j).map(|f| f.1)) {
                (Some(&a), Some(b)) if a == b => {
                    i += 1;
                    j += 1;
                }
                (Some(&a), Some(b)) if a < b => {
                    directed.push((u, a));
                    i += 1;
                }
                (Some(_), Some(b)) | (None, Some(b)) => {
                    directed.push((u, b));
                    j += 1;
                }
                (Some(&a), None) => {
                    directed.push((u, a));
                    i += 1;
                }
                (None, None) => unreachable!(),
            }
        }
    }
    let (row_offsets, col_indices) = csr_from_sorted(n, &directed);
    g.with_adjacency(row_offsets, col_indices)
}

/// Degree increase a node of clean degree `deg` may absorb.
#[inline]
pub fn local_allowance(e_loc: f64, deg: usize) -> usize {
    (e_loc * deg as f64).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalViolations {
    /// Degree increase beyond the allowance, per node.
    pub per_node: Vec<usize>,
    pub total: usize,
}

/// Excess degree growth of `g1` over `g0` beyond `floor(e_loc * deg0)`.
pub fn count_local_violations(g0: &Graph, g1: &Graph, e_loc: f64) -> LocalViolations {
    let per_node: Vec<usize> = (0..g0.num_nodes())
        .map(|v| {
            let d0 = g0.degree(v);
            g1.degree(v).saturating_sub(d0 + local_allowance(e_loc, d0))
        })
        .collect();
    let total = per_node.iter().sum();
    LocalViolations { per_node, total }
}

/// Undirected edges with at least one endpoint in `v_att`, counted once.
pub fn incident_edge_count(g: &Graph, v_att: &[usize]) -> usize {
    let mut in_att = vec![false; g.num_nodes()];
    for &v in v_att {
        in_att[v] = true;
    }
    g.edges()
        .iter()
        .filter(|&&(u, v)| in_att[u] || in_att[v])
        .count()
}

/// The attacked node set and its budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScope {
    /// Sorted, distinct node ids.
    pub v_att: Vec<usize>,
    pub epsilon: f64,
    /// Local budget fraction; `None` disables the degree constraint.
    pub e_loc: Option<f64>,
    pub delta: usize,
}

impl AttackScope {
    /// Scope with `delta = floor(epsilon * |E[v_att : V]|)`.
    pub fn new(g: &Graph, v_att: &[usize], epsilon: f64, e_loc: Option<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::config(format!("epsilon {epsilon} outside (0, 1]")));
        }
        let v_att = Self::check_nodes(g, v_att, e_loc)?;
        let incident = incident_edge_count(g, &v_att);
        let delta = (epsilon * incident as f64).floor() as usize;
        Ok(AttackScope { v_att, epsilon, e_loc, delta })
    }

    /// Scope with an explicit budget; `epsilon` is reported relative to the
    /// incident edge count.
    pub fn with_delta(g: &Graph, v_att: &[usize], delta: usize, e_loc: Option<f64>) -> Result<Self> {
        let v_att = Self::check_nodes(g, v_att, e_loc)?;
        let incident = incident_edge_count(g, &v_att).max(1);
        Ok(AttackScope {
            v_att,
            epsilon: delta as f64 / incident as f64,
            e_loc,
            delta,
        })
    }

    fn check_nodes(g: &Graph, v_att: &[usize], e_loc: Option<f64>) -> Result<Vec<usize>> {
        if v_att.is_empty() {
            return Err(Error::config("attacked node set is empty"));
        }
        if let Some(&v) = v_att.iter().find(|&&v| v >= g.num_nodes()) {
            return Err(Error::config(format!("attacked node {v} out of range")));
        }
        if let Some(e) = e_loc {
            if e.is_nan() || e < 0.0 {
                return Err(Error::config(format!("local budget {e} must be >= 0")));
            }
        }
        let mut v = v_att.to_vec();
        v.sort_unstable();
        v.dedup();
        Ok(v)
    }

    /// Membership mask over `n` nodes.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &v in &self.v_att {
            m[v] = true;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::pi_index;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_candidate_is_identity() {
        let g = path(5);
        assert_eq!(apply_perturbation(&g, &Candidate::empty()).unwrap(), g);
    }

    #[test]
    fn duplicate_genes_flip_once() {
        let g = graph(4, &[]);
        let l = pi_index(1, 3, 4).unwrap();
        let p = apply_perturbation(&g, &Candidate::new(vec![l, l])).unwrap();
        assert_eq!(p.edges(), vec![(1, 3)]);
    }

    #[test]
    fn flipping_an_edge_removes_it() {
        let g = path(4);
        let p = apply_perturbation(&g, &Candidate::new(vec![pi_index(0, 1, 4).unwrap()])).unwrap();
        assert_eq!(p.num_edges(), g.num_edges() - 1);
        assert!(!p.has_edge(0, 1));
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn out_of_range_gene_is_rejected() {
        let g = path(4);
        assert!(matches!(
            apply_perturbation(&g, &Candidate::new(vec![6])),
            Err(Error::InvalidIndex { .. })
        ));
    }

    #[test]
    fn decode_tags_operations() {
        let g = path(4);
        let cand = Candidate::from_pairs(&[(1, 0), (0, 3), (0, 3)], 4).unwrap();
        let flips = cand.decode(&g).unwrap();
        assert_eq!(
            flips,
            vec![
                Flip { r: 0, c: 1, op: FlipOp::Remove },
                Flip { r: 0, c: 3, op: FlipOp::Add }
            ]
        );
    }

    #[test]
    fn local_violation_arithmetic() {
        // Star with centre 0 of degree 4 plus spare nodes 5..8.
        let g0 = graph(9, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let g6 = apply_flips(&g0, &[(0, 5), (0, 6)]);
        let g7 = apply_flips(&g0, &[(0, 5), (0, 6), (0, 7)]);
        assert_eq!(count_local_violations(&g0, &g0, 0.5).total, 0);
        assert_eq!(count_local_violations(&g0, &g6, 0.5).per_node[0], 0);
        assert_eq!(count_local_violations(&g0, &g7, 0.5).per_node[0], 1);
        // Leaf of degree 1: floor(0.5) = 0, so any increase violates.
        let leaf = apply_flips(&g0, &[(1, 2)]);
        let v = count_local_violations(&g0, &leaf, 0.5);
        assert_eq!(v.per_node[1], 1);
        assert_eq!(v.per_node[2], 1);
        assert_eq!(v.total, 2);
        // Removals never violate.
        let removed = apply_flips(&g0, &[(0, 1)]);
        assert_eq!(count_local_violations(&g0, &removed, 0.0).total, 0);
    }

    #[test]
    fn incident_edges() {
        let g = path(3);
        assert_eq!(incident_edge_count(&g, &[1]), 2);
        assert_eq!(incident_edge_count(&g, &[]), 0);
        assert_eq!(incident_edge_count(&g, &[0, 1, 2]), g.num_edges());
        assert_eq!(incident_edge_count(&g, &[0]), 1);
    }

    #[test]
    fn scope_budget_floors() {
        let g = path(6);
        let s = AttackScope::new(&g, &[2, 1, 2], 0.5, None).unwrap();
        assert_eq!(s.v_att, vec![1, 2]);
        assert_eq!(s.delta, 1); // floor(0.5 * 3)
        assert!(AttackScope::new(&g, &[], 0.5, None).is_err());
        assert!(AttackScope::new(&g, &[1], 0.0, None).is_err());
        assert!(AttackScope::new(&g, &[1], 1.5, None).is_err());
        assert!(AttackScope::new(&g, &[9], 0.5, None).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = (Graph, Vec<u64>)> {
        (2usize..24).prop_flat_map(|n| {
            let m = pair_count(n);
            (
                proptest::collection::vec(proptest::bool::weighted(0.2), m as usize),
                proptest::collection::vec(0..m, 0..12),
            )
                .prop_map(move |(bits, genes)| {
                    let edges: Vec<_> = (0..m)
                        .filter(|&l| bits[l as usize])
                        .map(|l| pi_inverse_unchecked(l, n))
                        .collect();
                    (graph(n, &edges), genes)
                })
        })
    }

    proptest! {
        #[test]
        fn perturbation_invariants((g, genes) in arb_graph()) {
            let cand = Candidate::new(genes);
            let p = apply_perturbation(&g, &cand).unwrap();
            p.validate().unwrap();
            // Symmetric difference equals the distinct genes and stays within budget.
            let n = g.num_nodes();
            let before: std::collections::BTreeSet<u64> =
                g.edges().iter().map(|&(r, c)| pi_index_unchecked(r, c, n)).collect();
            let after: std::collections::BTreeSet<u64> =
                p.edges().iter().map(|&(r, c)| pi_index_unchecked(r, c, n)).collect();
            let diff: Vec<u64> = before.symmetric_difference(&after).copied().collect();
            prop_assert_eq!(&diff, &cand.distinct_indices());
            prop_assert!(diff.len() <= cand.len());
            // Involution for distinct genes.
            let distinct = Candidate::new(cand.distinct_indices());
            let back = apply_perturbation(&apply_perturbation(&g, &distinct).unwrap(), &distinct).unwrap();
            prop_assert_eq!(back.row_offsets(), g.row_offsets());
            prop_assert_eq!(back.col_indices(), g.col_indices());
        }
    }
}
