//! Classification fitness functions. Higher values mean a stronger attack.
//!
//! Each function reads the rows `rows` of `logits` and compares them with
//! `labels[row]`.

use crate::error::{Error, Result};
use crate::gnn::{argmax, Matrix};

fn check(rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("fitness needs a nonempty attacked node set"));
    }
    Ok(())
}

/// Misclassification rate over `rows`.
pub fn fit_accuracy(logits: &Matrix<f32>, labels: &[usize], rows: &[usize]) -> Result<f64> {
    check(rows)?;
    let wrong = rows.iter().filter(|&&i| argmax(logits.row(i)) != labels[i]).count();
    Ok(wrong as f64 / rows.len() as f64)
}

/// Accuracy over `rows` (the complement of [`fit_accuracy`]).
pub fn accuracy(logits: &Matrix<f32>, labels: &[usize], rows: &[usize]) -> Result<f64> {
    Ok(1.0 - fit_accuracy(logits, labels, rows)?)
}

/// `z_y - max_{c != y} z_c`.
pub fn margin(z: &[f32], y: usize) -> f64 {
    let best_other = z
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &v)| v as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    z[y] as f64 - best_other
}

/// Mean of `-tanh(margin)` over `rows`, in `[-1, 1]`.
pub fn fit_tanh_margin(logits: &Matrix<f32>, labels: &[usize], rows: &[usize]) -> Result<f64> {
    check(rows)?;
    if logits.cols() < 2 {
        return Err(Error::config("tanh-margin needs at least two classes"));
    }
    let total: f64 = rows.iter().map(|&i| -margin(logits.row(i), labels[i]).tanh()).sum();
    Ok(total / rows.len() as f64)
}

/// Numerically stable softmax of one logit row, in `f64`.
pub fn softmax(z: &[f32]) -> Vec<f64> {
    let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = z.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean negative log-softmax of the true class over `rows`.
pub fn fit_cross_entropy(logits: &Matrix<f32>, labels: &[usize], rows: &[usize]) -> Result<f64> {
    check(rows)?;
    let total: f64 = rows
        .iter()
        .map(|&i| {
            let z = logits.row(i);
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = z.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln() + m;
            lse - z[labels[i]] as f64
        })
        .sum();
    Ok(total / rows.len() as f64)
}
