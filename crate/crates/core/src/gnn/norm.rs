use super::{Matrix, Real};
use crate::graph::Graph;

/// Sparse `D^-1/2 (A + I) D^-1/2` with `D` the degree of `A + I`.
/// Rows list their columns in ascending order, self-loop included.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj<T> {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<T>,
}

/// `1 / sqrt(deg + 1)`; shared with the stacked path so both agree bitwise.
#[inline]
pub(crate) fn inv_sqrt_degree<T: Real>(deg: usize) -> T {
    T::from_usize(deg + 1).unwrap().sqrt().recip()
}

pub fn gcn_normalize<T: Real>(g: &Graph) -> NormAdj<T> {
    let n = g.num_nodes();
    let dinv: Vec<T> = (0..n).map(|u| inv_sqrt_degree(g.degree(u))).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.col_indices().len() + n);
    let mut vals = Vec::with_capacity(cols.capacity());
    row_ptr.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in g.neighbors(u) {
            if !self_done && v as usize > u {
                cols.push(u as u32);
                vals.push(dinv[u] * dinv[u]);
                self_done = true;
            }
            cols.push(v);
            vals.push(dinv[u] * dinv[v as usize]);
        }
        if !self_done {
            cols.push(u as u32);
            vals.push(dinv[u] * dinv[u]);
        }
        row_ptr.push(cols.len());
    }
    NormAdj { row_ptr, cols, vals }
}

impl<T: Real> NormAdj<T> {
    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, u: usize) -> (&[u32], &[T]) {
        let r = self.row_ptr[u]..self.row_ptr[u + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// `self * x`.
    pub fn spmm(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.num_rows(), x.cols());
        for u in 0..self.num_rows() {
            let (cols, vals) = self.row(u);
            let o = out.row_mut(u);
            for (&v, &a) in cols.iter().zip(vals) {
                super::dense::axpy(o, a, x.row(v as usize));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.num_rows();
        let mut m = Matrix::zeros(n, n);
        for u in 0..n {
            let (cols, vals) = self.row(u);
            for (&v, &a) in cols.iter().zip(vals) {
                m.set(u, v as usize, a);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_util::graph;

    #[test]
    fn isolated_node_is_identity() {
        let a = gcn_normalize::<f64>(&graph(1, &[]));
        assert_eq!(a.to_dense().as_slice(), &[1.0]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = gcn_normalize::<f64>(&graph(2, &[(0, 1)]));
        for &x in a.to_dense().as_slice() {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn star_entries_are_symmetric() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let a = gcn_normalize::<f64>(&g).to_dense();
        assert!((a.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((a.get(0, 1) - 1.0 / 8f64.sqrt()).abs() < 1e-12);
        assert!((a.get(1, 1) - 0.5).abs() < 1e-12);
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(a.get(u, v), a.get(v, u));
            }
        }
    }
}
