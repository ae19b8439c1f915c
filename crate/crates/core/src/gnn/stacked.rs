//! Batched inference over many perturbed copies of one base graph.
//!
//! `k` perturbations are evaluated as a single block-diagonal graph of `k`
//! disjoint copies. Only the rows that can influence the requested nodes
//! (the nodes themselves and their neighbours in each perturbed copy) are
//! materialized, so memory grows with `k * |receptive field|` rather than
//! `k * n`. Batches larger than `max_copies` are split into chunks.

use rayon::prelude::*;

use super::dense::{argmax, axpy};
use super::model::feature_matrix;
use super::norm::inv_sqrt_degree;
use super::{forward, Matrix, ModelKind, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::{Candidate, Graph};

pub const DEFAULT_MAX_COPIES: usize = 64;

/// Block-diagonal normalized adjacency of `copies` perturbed versions of a
/// base graph, restricted to the materialized rows.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    n: usize,
    copies: usize,
    /// Materialized global rows `copy * n + u`, ascending.
    rows: Vec<usize>,
    row_ptr: Vec<usize>,
    /// Global column ids, ascending within each row, self-loop included.
    cols: Vec<u32>,
    vals: Vec<f32>,
    /// Global row -> position in `rows`, `u32::MAX` when not materialized.
    slot: Vec<u32>,
    /// `(copy, global row)` for each requested output row.
    outputs: Vec<usize>,
}

impl BlockDiagonal {
    /// Builds the stacked operator for `base XOR flips[i]`, materializing
    /// the receptive field of `nodes` in every copy. Each flip list must
    /// hold distinct pairs `(r, c)` with `r < c`.
    pub fn build(base: &Graph, flips: &[&[(usize, usize)]], nodes: &[usize]) -> Self {
        let n = base.num_nodes();
        let copies = flips.len();
        let base_deg: Vec<i64> = (0..n).map(|u| base.degree(u) as i64).collect();
        let mut rows = Vec::new();
        let mut row_ptr = vec![0usize];
        let mut cols: Vec<u32> = Vec::new();
        let mut vals = Vec::new();
        let mut slot = vec![u32::MAX; copies * n];
        let mut outputs = Vec::with_capacity(copies * nodes.len());

        let mut deg = base_deg.clone();
        let mut needed = vec![false; n];
        let mut needed_list: Vec<usize> = Vec::new();
        let mut toggles: Vec<(u32, u32)> = Vec::new();
        let mut merged: Vec<u32> = Vec::new();
        for (copy, pairs) in flips.iter().enumerate() {
            let offset = copy * n;
            toggles.clear();
            for &(r, c) in pairs.iter() {
                toggles.push((r as u32, c as u32));
                toggles.push((c as u32, r as u32));
                let delta = if base.has_edge(r, c) { -1 } else { 1 };
                deg[r] += delta;
                deg[c] += delta;
            }
            toggles.sort_unstable();
            let toggled = |u: usize| -> &[(u32, u32)] {
                let lo = toggles.partition_point(|t| (t.0 as usize) < u);
                let hi = toggles.partition_point(|t| (t.0 as usize) <= u);
                &toggles[lo..hi]
            };

            let row_of = |u: usize, merged: &mut Vec<u32>| {
                merged.clear();
                let row = base.neighbors(u);
                let flips = toggled(u);
                let (mut i, mut j) = (0, 0);
                let mut self_done = false;
                let mut push = |v: u32, merged: &mut Vec<u32>| {
                    if !self_done && v as usize > u {
                        merged.push(u as u32);
                        self_done = true;
                    }
                    merged.push(v);
                };
                while i < row.len() || j < flips.len() {
                    let a = row.get(i).copied();
                    let b = flips.get(j).map(|t| t.1);
                    match (a, b) {
                        (Some(a), Some(b)) if a == b => {
                            i += 1;
                            j += 1;
                        }
                        (Some(a), Some(b)) if a < b => {
                            push(a, merged);
                            i += 1;
                        }
                        (_, Some(b)) => {
                            push(b, merged);
                            j += 1;
                        }
                        (Some(a), None) => {
                            push(a, merged);
                            i += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
                if !self_done {
                    merged.push(u as u32);
                }
            };

            needed_list.clear();
            for &u in nodes {
                if !needed[u] {
                    needed[u] = true;
                    needed_list.push(u);
                }
                row_of(u, &mut merged);
                for &v in &merged {
                    let v = v as usize;
                    if !needed[v] {
                        needed[v] = true;
                        needed_list.push(v);
                    }
                }
            }
            needed_list.sort_unstable();
            for &u in &needed_list {
                row_of(u, &mut merged);
                let du: f32 = inv_sqrt_degree(deg[u] as usize);
                slot[offset + u] = rows.len() as u32;
                rows.push(offset + u);
                for &v in &merged {
                    let dv: f32 = inv_sqrt_degree(deg[v as usize] as usize);
                    cols.push((offset + v as usize) as u32);
                    vals.push(du * dv);
                }
                row_ptr.push(cols.len());
                needed[u] = false;
            }
            for &u in nodes {
                outputs.push(offset + u);
            }
            for &(r, c) in pairs.iter() {
                deg[r] = base_deg[r];
                deg[c] = base_deg[c];
            }
        }
        BlockDiagonal { n, copies, rows, row_ptr, cols, vals, slot, outputs }
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    /// Rows of the full stacked operator (`copies * n`).
    pub fn num_rows(&self) -> usize {
        self.copies * self.n
    }

    pub fn num_materialized(&self) -> usize {
        self.rows.len()
    }

    /// Stored entries of materialized global row `r`, if any.
    pub fn row(&self, r: usize) -> Option<(&[u32], &[f32])> {
        let s = *self.slot.get(r)?;
        (s != u32::MAX).then(|| {
            let range = self.row_ptr[s as usize]..self.row_ptr[s as usize + 1];
            (&self.cols[range.clone()], &self.vals[range])
        })
    }

    /// GCN logits of the requested nodes for every copy. `xw` is `X W0` of
    /// the base graph.
    fn gcn_logits(&self, w: &ModelWeights<f32>, xw: &Matrix<f32>, per_copy: usize) -> Vec<Matrix<f32>> {
        let (h, c) = (w.hidden(), w.num_classes());
        let n = self.n;
        let mut hw = vec![0.0f32; self.rows.len() * c];
        hw.par_chunks_mut(c.max(1)).enumerate().for_each_init(
            || vec![0.0f32; h],
            |pre, (i, out)| {
                pre.iter_mut().for_each(|x| *x = 0.0);
                let range = self.row_ptr[i]..self.row_ptr[i + 1];
                for (&v, &a) in self.cols[range.clone()].iter().zip(&self.vals[range]) {
                    axpy(pre, a, xw.row(v as usize % n));
                }
                for (x, &b) in pre.iter_mut().zip(&w.b0) {
                    *x += b;
                }
                for (k, &x) in pre.iter().enumerate() {
                    let x = x.max(0.0);
                    if x != 0.0 {
                        axpy(out, x, w.w1.row(k));
                    }
                }
            },
        );
        let logits: Vec<Vec<f32>> = self
            .outputs
            .par_iter()
            .map(|&r| {
                let mut z = vec![0.0f32; c];
                let (cols, vals) = self.row(r).expect("output rows are materialized");
                for (&v, &a) in cols.iter().zip(vals) {
                    let s = self.slot[v as usize] as usize;
                    axpy(&mut z, a, &hw[s * c..(s + 1) * c]);
                }
                for (x, &b) in z.iter_mut().zip(&w.b1) {
                    *x += b;
                }
                z
            })
            .collect();
        if per_copy == 0 {
            return vec![Matrix::zeros(0, c); self.copies];
        }
        logits
            .chunks(per_copy)
            .map(|rows| Matrix::from_vec(rows.len(), c, rows.concat()).unwrap())
            .collect()
    }
}

/// Cached per-(weights, base graph) state for repeated perturbed inference.
#[derive(Debug, Clone)]
pub struct Inference<'a> {
    weights: &'a ModelWeights<f32>,
    base: &'a Graph,
    xw: Matrix<f32>,
    clean: Matrix<f32>,
    max_copies: usize,
}

impl<'a> Inference<'a> {
    pub fn new(weights: &'a ModelWeights<f32>, base: &'a Graph) -> Result<Self> {
        let clean = forward(weights, base, None)?;
        let xw = feature_matrix::<f32>(base).matmul(&weights.w0)?;
        Ok(Inference { weights, base, xw, clean, max_copies: DEFAULT_MAX_COPIES })
    }

    pub fn with_max_copies(mut self, max_copies: usize) -> Self {
        self.max_copies = max_copies.max(1);
        self
    }

    pub fn base(&self) -> &'a Graph {
        self.base
    }

    pub fn weights(&self) -> &'a ModelWeights<f32> {
        self.weights
    }

    /// Logits of the unperturbed base graph, all nodes.
    pub fn clean_logits(&self) -> &Matrix<f32> {
        &self.clean
    }

    pub fn clean_predictions(&self) -> Vec<usize> {
        (0..self.clean.rows()).map(|i| argmax(self.clean.row(i))).collect()
    }

    /// Logits of `nodes` for `base XOR flips[i]`, one matrix per flip list.
    pub fn logits_for_flips(&self, flips: &[&[(usize, usize)]], nodes: &[usize]) -> Vec<Matrix<f32>> {
        if self.weights.kind == ModelKind::Mlp {
            let z = self.clean.select_rows(nodes);
            return vec![z; flips.len()];
        }
        let mut out = Vec::with_capacity(flips.len());
        for chunk in flips.chunks(self.max_copies) {
            let block = BlockDiagonal::build(self.base, chunk, nodes);
            out.extend(block.gcn_logits(self.weights, &self.xw, nodes.len()));
        }
        out
    }

    pub fn logits_for_candidates(&self, cands: &[Candidate], nodes: &[usize]) -> Result<Vec<Matrix<f32>>> {
        let n = self.base.num_nodes();
        let pairs = cands
            .iter()
            .map(|c| c.distinct_pairs(n))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[(usize, usize)]> = pairs.iter().map(Vec::as_slice).collect();
        Ok(self.logits_for_flips(&refs, nodes))
    }
}

/// Logits of `nodes` for every candidate applied to `base`, evaluated as one
/// block-diagonal graph per chunk of at most `max_copies` candidates.
pub fn stacked_forward(
    w: &ModelWeights<f32>,
    base: &Graph,
    cands: &[Candidate],
    nodes: &[usize],
    max_copies: usize,
) -> Result<Vec<Matrix<f32>>> {
    if let Some(&u) = nodes.iter().find(|&&u| u >= base.num_nodes()) {
        return Err(Error::Dimension(format!("requested node {u} out of range")));
    }
    Inference::new(w, base)?
        .with_max_copies(max_copies)
        .logits_for_candidates(cands, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_util::graph;
    use crate::graph::{apply_perturbation, pi_index};

    fn weights(seed: u64) -> ModelWeights<f32> {
        let mut rng = crate::rng::from_seed(seed);
        ModelWeights::glorot(ModelKind::Gcn, 3, 16, 2, &mut rng)
    }

    #[test]
    fn single_candidate_matches_forward() {
        let g = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]);
        let w = weights(1);
        let cand = Candidate::from_pairs(&[(0, 5), (1, 2)], 6).unwrap();
        let nodes: Vec<usize> = (0..6).collect();
        let z = stacked_forward(&w, &g, std::slice::from_ref(&cand), &nodes, 8).unwrap();
        let oracle = forward(&w, &apply_perturbation(&g, &cand).unwrap(), None).unwrap();
        assert_eq!(z[0].as_slice(), oracle.as_slice());
    }

    #[test]
    fn empty_candidates_repeat_clean_logits() {
        let g = graph(5, &[(0, 1), (2, 3)]);
        let w = weights(2);
        let nodes = [4, 0, 2];
        let z = stacked_forward(&w, &g, &vec![Candidate::empty(); 3], &nodes, 2).unwrap();
        let clean = forward(&w, &g, None).unwrap().select_rows(&nodes);
        assert_eq!(z.len(), 3);
        for m in &z {
            assert_eq!(m.as_slice(), clean.as_slice());
        }
    }

    #[test]
    fn block_rows_are_offset_per_copy() {
        let g = graph(3, &[(0, 1)]);
        let a = [(1usize, 2usize)];
        let flips: Vec<&[(usize, usize)]> = vec![&[], &a];
        let block = BlockDiagonal::build(&g, &flips, &[2]);
        assert_eq!(block.num_rows(), 6);
        // Copy 0: node 2 isolated; copy 1: node 2 linked to node 1.
        assert_eq!(block.row(2).unwrap().0, &[2]);
        assert_eq!(block.row(5).unwrap().0, &[4, 5]);
        assert!(block.row(3).is_none());
    }

    #[test]
    fn invalid_gene_propagates() {
        let g = graph(4, &[]);
        let bad = Candidate::new(vec![pi_index(2, 3, 4).unwrap() + 1]);
        assert!(stacked_forward(&weights(3), &g, &[bad], &[0], 4).is_err());
    }
}
