//! Split conformal prediction with the threshold (TPS) score `1 - p_y`.

use serde::{Deserialize, Serialize};

use super::metrics::softmax;
use crate::error::{Error, Result};
use crate::gnn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `1 - softmax(z)_c`.
    #[default]
    Tps,
}

impl ScoreKind {
    pub fn score(self, probs: &[f64], class: usize) -> f64 {
        match self {
            ScoreKind::Tps => 1.0 - probs[class],
        }
    }
}

/// Calibrated conformal threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub score: ScoreKind,
    pub alpha: f64,
    pub calibration_nodes: Vec<usize>,
    pub tau: f64,
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// The `ceil((m + 1)(1 - alpha))`-th smallest score, or `+inf` when that
/// rank exceeds `m`.
pub fn conformal_calibrate(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let m = scores.len();
    if m == 0 {
        return Err(Error::config("conformal calibration needs at least one score"));
    }
    // Guard the ceiling against representation error, e.g. 10 * 0.9.
    let k = (((m + 1) as f64) * (1.0 - alpha) - 1e-9).ceil() as usize;
    if k > m {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k.max(1) - 1])
}

/// TPS scores of the true labels on `rows`.
pub fn true_class_scores(logits: &Matrix<f32>, labels: &[usize], rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&i| ScoreKind::Tps.score(&softmax(logits.row(i)), labels[i]))
        .collect()
}

/// `{c : score(c) <= tau}` for one logit row.
pub fn prediction_set(z: &[f32], tau: f64) -> Vec<usize> {
    let p = softmax(z);
    (0..p.len()).filter(|&c| ScoreKind::Tps.score(&p, c) <= tau).collect()
}

/// Coverage and mean set size of the sets built with `tau` on `rows`.
pub fn coverage_and_size(logits: &Matrix<f32>, labels: &[usize], rows: &[usize], tau: f64) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let (mut covered, mut size) = (0usize, 0usize);
    for &i in rows {
        let set = prediction_set(logits.row(i), tau);
        covered += usize::from(set.contains(&labels[i]));
        size += set.len();
    }
    let m = rows.len() as f64;
    (covered as f64 / m, size as f64 / m)
}

fn calibrate_on(logits: &Matrix<f32>, labels: &[usize], cal_rows: &[usize], alpha: f64) -> Result<f64> {
    if cal_rows.is_empty() {
        return Err(Error::config("conformal calibration set is empty"));
    }
    conformal_calibrate(&true_class_scores(logits, labels, cal_rows), alpha)
}

/// `1 - coverage` on `att_rows` after calibrating on `cal_rows` of the same logits.
pub fn fit_conformal_coverage(
    logits: &Matrix<f32>,
    labels: &[usize],
    att_rows: &[usize],
    cal_rows: &[usize],
    alpha: f64,
) -> Result<f64> {
    if att_rows.is_empty() {
        return Err(Error::config("fitness needs a nonempty attacked node set"));
    }
    let tau = calibrate_on(logits, labels, cal_rows, alpha)?;
    Ok(1.0 - coverage_and_size(logits, labels, att_rows, tau).0)
}

/// Mean prediction-set size on `att_rows` after calibrating on `cal_rows`.
pub fn fit_conformal_set_size(
    logits: &Matrix<f32>,
    labels: &[usize],
    att_rows: &[usize],
    cal_rows: &[usize],
    alpha: f64,
) -> Result<f64> {
    if att_rows.is_empty() {
        return Err(Error::config("fitness needs a nonempty attacked node set"));
    }
    let tau = calibrate_on(logits, labels, cal_rows, alpha)?;
    Ok(coverage_and_size(logits, labels, att_rows, tau).1)
}
