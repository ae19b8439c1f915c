//! Forward pass, cross-entropy loss and manual backpropagation.

use rand::Rng as _;

use super::dense::argmax;
use super::{gcn_normalize, Matrix, ModelKind, ModelWeights, NormAdj, Real};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;

pub(crate) fn feature_matrix<T: Real>(g: &Graph) -> Matrix<T> {
    let data = g.node_data();
    Matrix::from_vec(
        g.num_nodes(),
        data.num_features,
        data.features.iter().map(|&x| T::from(x).unwrap()).collect(),
    )
    .expect("graph features are n x d")
}

fn check_input<T: Real>(w: &ModelWeights<T>, g: &Graph) -> Result<()> {
    w.check_shapes()?;
    if g.num_features() != w.num_features() {
        return Err(Error::Dimension(format!(
            "graph has {} features, model expects {}",
            g.num_features(),
            w.num_features()
        )));
    }
    Ok(())
}

/// Inverted-dropout scale factors (`0` or `1 / (1 - p)`) for an `n x h` activation.
pub(crate) fn dropout_mask<T: Real>(n: usize, h: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - p)).unwrap();
    (0..n * h)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

/// Intermediate activations kept for the backward pass.
struct Tape<T> {
    pre: Matrix<T>,
    hidden: Matrix<T>,
    logits: Matrix<T>,
}

fn run<T: Real>(
    w: &ModelWeights<T>,
    adj: Option<&NormAdj<T>>,
    x: &Matrix<T>,
    mask: Option<&[T]>,
) -> Result<Tape<T>> {
    let xw = x.matmul(&w.w0)?;
    let mut pre = match adj {
        Some(a) => a.spmm(&xw),
        None => xw,
    };
    pre.add_row_vector(&w.b0);
    let mut hidden = pre.map(|v| v.max(T::zero()));
    if let Some(m) = mask {
        for (h, &s) in hidden.as_mut_slice().iter_mut().zip(m) {
            *h *= s;
        }
    }
    let hw = hidden.matmul(&w.w1)?;
    let mut logits = match adj {
        Some(a) => a.spmm(&hw),
        None => hw,
    };
    logits.add_row_vector(&w.b1);
    Ok(Tape { pre, hidden, logits })
}

/// Logits for every node of `g`. Dropout on the hidden layer is applied only
/// when `dropout` is given (training mode); otherwise the pass is deterministic.
pub fn forward<T: Real>(
    w: &ModelWeights<T>,
    g: &Graph,
    dropout: Option<(&mut Rng, f64)>,
) -> Result<Matrix<T>> {
    check_input(w, g)?;
    let adj = (w.kind == ModelKind::Gcn).then(|| gcn_normalize::<T>(g));
    let x = feature_matrix::<T>(g);
    let mask = dropout.map(|(rng, p)| dropout_mask::<T>(g.num_nodes(), w.hidden(), p, rng));
    Ok(run(w, adj.as_ref(), &x, mask.as_deref())?.logits)
}

/// Argmax class per node (ties toward the smallest class id).
pub fn predict(w: &ModelWeights<f32>, g: &Graph) -> Result<Vec<usize>> {
    let z = forward(w, g, None)?;
    Ok((0..z.rows()).map(|i| argmax(z.row(i))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w0: Matrix<T>,
    pub b0: Vec<T>,
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
}

/// Mean cross-entropy over rows `idx` and its gradient w.r.t. the logits.
pub fn cross_entropy_grad<T: Real>(logits: &Matrix<T>, labels: &[usize], idx: &[usize]) -> (T, Matrix<T>) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let scale = T::from_usize(idx.len().max(1)).unwrap().recip();
    let mut loss = T::zero();
    for &i in idx {
        let z = logits.row(i);
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = z.iter().map(|&v| (v - m).exp()).sum();
        let y = labels[i];
        loss += denom.ln() - (z[y] - m);
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (z[j] - m).exp() / denom * scale;
        }
        g[y] = g[y] - scale;
    }
    (loss * scale, grad)
}

/// Mean cross-entropy over `idx` and the gradient of every parameter tensor.
///
/// `adj` is the normalized adjacency for a GCN (ignored for an MLP). `mask`
/// holds inverted-dropout factors for the hidden layer, if any.
pub fn loss_and_grad<T: Real>(
    w: &ModelWeights<T>,
    adj: Option<&NormAdj<T>>,
    x: &Matrix<T>,
    labels: &[usize],
    idx: &[usize],
    mask: Option<&[T]>,
) -> Result<(T, Gradients<T>)> {
    w.check_shapes()?;
    let adj = if w.kind == ModelKind::Gcn {
        Some(adj.ok_or_else(|| Error::Dimension("GCN needs a normalized adjacency".into()))?)
    } else {
        None
    };
    let tape = run(w, adj, x, mask)?;
    let (loss, dz) = cross_entropy_grad(&tape.logits, labels, idx);

    let db1 = dz.column_sums();
    let dhw = match adj {
        Some(a) => a.spmm(&dz),
        None => dz,
    };
    let dw1 = tape.hidden.t_matmul(&dhw)?;
    let mut dpre = dhw.matmul_t(&w.w1)?;
    if let Some(m) = mask {
        for (d, &s) in dpre.as_mut_slice().iter_mut().zip(m) {
            *d *= s;
        }
    }
    for (d, &p) in dpre.as_mut_slice().iter_mut().zip(tape.pre.as_slice()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
    let db0 = dpre.column_sums();
    let dxw = match adj {
        Some(a) => a.spmm(&dpre),
        None => dpre,
    };
    let dw0 = x.t_matmul(&dxw)?;
    Ok((loss, Gradients { w0: dw0, b0: db0, w1: dw1, b1: db1 }))
}
