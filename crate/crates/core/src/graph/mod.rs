//! Sparse undirected graphs with node features, labels and data splits.

mod container;
mod index;
mod perturb;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{Container, DType, Section, SectionData};
pub use index::{pair_count, pair_to_index, pi_index, pi_inverse, pi_inverse_batch};
pub(crate) use index::{pi_index_unchecked, pi_inverse_unchecked};
pub use perturb::{
    apply_flips, apply_perturbation, count_local_violations, incident_edge_count, local_allowance,
    AttackScope, Candidate, Flip, FlipOp, LocalViolations,
};

/// Data split a node belongs to. Splits are disjoint and cover every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unlabeled];

    pub fn mask_name(self) -> &'static str {
        match self {
            Split::Train => "mask_train",
            Split::Val => "mask_val",
            Split::Test => "mask_test",
            Split::Unlabeled => "mask_unlabeled",
        }
    }
}

/// Per-node payload that perturbations never touch.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    /// Row-major `n x d`.
    pub features: Vec<f32>,
    pub num_features: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

/// Undirected graph in CSR form. Every edge is stored in both directions,
/// rows are sorted, and there are no self-loops or duplicates.
///
/// Node data sits behind an `Arc`, so perturbed copies share features.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    data: Arc<NodeData>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
            && (Arc::ptr_eq(&self.data, &other.data) || self.data == other.data)
    }
}

impl Graph {
    /// Builds a graph from an undirected edge list. Each pair may appear in
    /// either orientation; duplicates and self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], data: NodeData) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            directed.push((u, v as u32));
            directed.push((v, u as u32));
        }
        directed.sort_unstable();
        let (row_offsets, col_indices) = csr_from_sorted(n, &directed);
        Self::from_csr(row_offsets, col_indices, data)
    }

    /// Wraps raw CSR arrays, validating every invariant.
    pub fn from_csr(row_offsets: Vec<usize>, col_indices: Vec<u32>, data: NodeData) -> Result<Self> {
        let g = Self::from_parts_unchecked(row_offsets, col_indices, Arc::new(data));
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn from_parts_unchecked(
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        data: Arc<NodeData>,
    ) -> Self {
        Graph {
            n: row_offsets.len().saturating_sub(1),
            row_offsets,
            col_indices,
            data,
        }
    }

    /// Same node data, new adjacency.
    pub(crate) fn with_adjacency(&self, row_offsets: Vec<usize>, col_indices: Vec<u32>) -> Self {
        Self::from_parts_unchecked(row_offsets, col_indices, Arc::clone(&self.data))
    }

    /// Checks symmetry, sortedness, self-loops, labels and feature shape.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |m: String| Err(Error::InvalidGraph(m));
        if self.row_offsets.first() != Some(&0) || *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return bad("row offsets do not span column indices".into());
        }
        for u in 0..n {
            let (lo, hi) = (self.row_offsets[u], self.row_offsets[u + 1]);
            if lo > hi {
                return bad(format!("row offsets decrease at row {u}"));
            }
            let row = &self.col_indices[lo..hi];
            for (i, &v) in row.iter().enumerate() {
                let v = v as usize;
                if v >= n {
                    return bad(format!("column {v} out of range in row {u}"));
                }
                if v == u {
                    return bad(format!("self-loop at node {u}"));
                }
                if i > 0 && row[i - 1] as usize >= v {
                    return bad(format!("row {u} unsorted or duplicated at column {v}"));
                }
                if !self.has_edge(v, u) {
                    return bad(format!("asymmetric pair ({u}, {v})"));
                }
            }
        }
        let d = &self.data;
        if d.features.len() != n * d.num_features {
            return bad(format!("features have {} entries, expected {} x {}", d.features.len(), n, d.num_features));
        }
        if d.labels.len() != n || d.splits.len() != n {
            return bad("labels or splits length differs from node count".into());
        }
        if let Some(&y) = d.labels.iter().find(|&&y| y >= d.num_classes) {
            return bad(format!("label {y} outside [0, {})", d.num_classes));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn num_features(&self) -> usize {
        self.data.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.row_offsets[u + 1] - self.row_offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|u| self.degree(u)).collect()
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if (v as usize) > u {
                    out.push((u, v as usize));
                }
            }
        }
        out
    }

    pub fn node_data(&self) -> &Arc<NodeData> {
        &self.data
    }

    #[inline]
    pub fn features_of(&self, u: usize) -> &[f32] {
        let d = self.data.num_features;
        &self.data.features[u * d..(u + 1) * d]
    }

    pub fn labels(&self) -> &[usize] {
        &self.data.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.data.splits
    }

    /// Sorted node ids in `split`.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&u| self.data.splits[u] == split).collect()
    }

    /// Sorted node ids whose split is any of `splits`.
    pub fn nodes_in_any(&self, splits: &[Split]) -> Vec<usize> {
        (0..self.n).filter(|&u| splits.contains(&self.data.splits[u])).collect()
    }

    /// Subgraph induced by `nodes` (renumbered in the given order), with the
    /// matching features, labels and splits.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut remap = vec![u32::MAX; self.n];
        for (i, &u) in nodes.iter().enumerate() {
            if u >= self.n {
                return Err(Error::InvalidGraph(format!("node {u} out of range")));
            }
            if remap[u] != u32::MAX {
                return Err(Error::InvalidGraph(format!("node {u} listed twice")));
            }
            remap[u] = i as u32;
        }
        let mut directed = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in self.neighbors(u) {
                let j = remap[v as usize];
                if j != u32::MAX {
                    directed.push((i, j));
                }
            }
        }
        directed.sort_unstable();
        let (row_offsets, col_indices) = csr_from_sorted(nodes.len(), &directed);
        let d = self.data.num_features;
        let mut features = Vec::with_capacity(nodes.len() * d);
        for &u in nodes {
            features.extend_from_slice(self.features_of(u));
        }
        let data = NodeData {
            features,
            num_features: d,
            labels: nodes.iter().map(|&u| self.data.labels[u]).collect(),
            num_classes: self.data.num_classes,
            splits: nodes.iter().map(|&u| self.data.splits[u]).collect(),
        };
        Ok(Self::from_parts_unchecked(row_offsets, col_indices, Arc::new(data)))
    }
}

/// CSR arrays from directed `(row, col)` entries sorted by row then column.
pub(crate) fn csr_from_sorted(n: usize, directed: &[(usize, u32)]) -> (Vec<usize>, Vec<u32>) {
    let mut row_offsets = vec![0usize; n + 1];
    for &(u, _) in directed {
        row_offsets[u + 1] += 1;
    }
    for i in 0..n {
        row_offsets[i + 1] += row_offsets[i];
    }
    let col_indices = directed.iter().map(|&(_, v)| v).collect();
    (row_offsets, col_indices)
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn data(n: usize, d: usize, c: usize) -> NodeData {
        NodeData {
            features: (0..n * d).map(|i| ((i * 7919) % 13) as f32 / 13.0 - 0.5).collect(),
            num_features: d,
            labels: (0..n).map(|i| i % c).collect(),
            num_classes: c,
            splits: (0..n)
                .map(|i| match i % 4 {
                    0 => Split::Train,
                    1 => Split::Val,
                    2 => Split::Test,
                    _ => Split::Unlabeled,
                })
                .collect(),
        }
    }

    pub fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, data(n, 3, 2)).unwrap()
    }

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        graph(n, &edges)
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn builds_symmetric_csr() {
        let g = graph(4, &[(0, 1), (2, 1), (3, 0)]);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.neighbors(0), &[1, 3]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert!(g.has_edge(1, 2) && g.has_edge(2, 1));
        assert_eq!(g.edges(), vec![(0, 1), (0, 3), (1, 2)]);
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(Graph::from_edges(3, &[(1, 1)], data(3, 3, 2)).is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)], data(3, 3, 2)).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)], data(3, 3, 2)).is_err());
    }

    #[test]
    fn rejects_asymmetric_csr() {
        let err = Graph::from_csr(vec![0, 1, 1], vec![1], data(2, 3, 2)).unwrap_err();
        assert!(err.to_string().contains("asymmetric"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let mut d = data(3, 3, 2);
        d.labels[1] = 5;
        assert!(Graph::from_edges(3, &[], d).is_err());
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = path(5);
        let sub = g.induced_subgraph(&[1, 2, 4]).unwrap();
        assert_eq!(sub.num_nodes(), 3);
        assert_eq!(sub.edges(), vec![(0, 1)]);
        assert_eq!(sub.labels(), &[1, 0, 0]);
        assert_eq!(sub.features_of(2), g.features_of(4));
        sub.validate().unwrap();
    }
}
