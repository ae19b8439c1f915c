//! Attack objectives and the evaluator that scores candidates with them.

mod conformal;
mod metrics;
mod smoothing;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga::Evaluator;
use crate::gnn::{argmax, Inference, Matrix};
use crate::graph::Candidate;

pub use conformal::{
    check_alpha, conformal_calibrate, coverage_and_size, fit_conformal_coverage, fit_conformal_set_size,
    prediction_set, true_class_scores, ConformalCalibration, ScoreKind,
};
pub use metrics::{accuracy, fit_accuracy, fit_cross_entropy, fit_tanh_margin, margin, softmax};
pub use smoothing::{
    adaptive_resample, check_pbar, find_pbar, fit_certified_ratio, smooth_predictions, smooth_probs, smoothing_sample, SmoothingCache,
    SmoothingParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessKind {
    #[default]
    Accuracy,
    CrossEntropy,
    TanhMargin,
    ConformalCoverage,
    ConformalSetSize,
    CertifiedRatio,
}

impl FitnessKind {
    pub fn name(self) -> &'static str {
        match self {
            FitnessKind::Accuracy => "accuracy",
            FitnessKind::CrossEntropy => "ce",
            FitnessKind::TanhMargin => "tanh-margin",
            FitnessKind::ConformalCoverage => "conformal-coverage",
            FitnessKind::ConformalSetSize => "conformal-size",
            FitnessKind::CertifiedRatio => "certified-ratio",
        }
    }

    pub fn is_conformal(self) -> bool {
        matches!(self, FitnessKind::ConformalCoverage | FitnessKind::ConformalSetSize)
    }
}

impl std::fmt::Display for FitnessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FitnessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "accuracy" => FitnessKind::Accuracy,
            "ce" | "cross-entropy" => FitnessKind::CrossEntropy,
            "tanh-margin" => FitnessKind::TanhMargin,
            "conformal-coverage" => FitnessKind::ConformalCoverage,
            "conformal-size" | "conformal-set-size" => FitnessKind::ConformalSetSize,
            "certified-ratio" => FitnessKind::CertifiedRatio,
            other => return Err(Error::config(format!("unknown objective {other:?}"))),
        })
    }
}

/// Smoothing parameters of the certified-ratio objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub p_plus: f64,
    pub p_minus: f64,
    /// Samples per evaluation during the search.
    pub attack_samples: usize,
    /// Samples used for the final certification.
    pub final_samples: usize,
    /// Certification threshold on the vote probability.
    pub p_bar: f64,
    /// Weight of the optional accuracy-drop penalty.
    pub lambda: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { p_plus: 0.001, p_minus: 0.4, attack_samples: 200, final_samples: 1000, p_bar: 0.7, lambda: 0.0 }
    }
}

impl SmoothingConfig {
    pub fn params(&self, samples: usize, seed: u64) -> SmoothingParams {
        SmoothingParams { p_plus: self.p_plus, p_minus: self.p_minus, samples, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.params(self.attack_samples, 0).validate()?;
        self.params(self.final_samples, 0).validate()?;
        check_pbar(self.p_bar)?;
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitnessSpec {
    pub kind: FitnessKind,
    /// Conformal miscoverage level.
    pub alpha: f64,
    pub smoothing: SmoothingConfig,
}

impl Default for FitnessSpec {
    fn default() -> Self {
        FitnessSpec { kind: FitnessKind::Accuracy, alpha: 0.1, smoothing: SmoothingConfig::default() }
    }
}

impl FitnessSpec {
    pub fn of(kind: FitnessKind) -> Self {
        FitnessSpec { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.kind == FitnessKind::CertifiedRatio {
            self.smoothing.validate()?;
        }
        Ok(())
    }

    /// Fitness of `logits`, whose first `n_att` rows are the attacked nodes
    /// and the rest the calibration nodes.
    fn score_rows(&self, logits: &Matrix<f32>, labels: &[usize], n_att: usize) -> Result<f64> {
        let att: Vec<usize> = (0..n_att).collect();
        let cal: Vec<usize> = (n_att..logits.rows()).collect();
        match self.kind {
            FitnessKind::Accuracy => fit_accuracy(logits, labels, &att),
            FitnessKind::CrossEntropy => fit_cross_entropy(logits, labels, &att),
            FitnessKind::TanhMargin => fit_tanh_margin(logits, labels, &att),
            FitnessKind::ConformalCoverage => fit_conformal_coverage(logits, labels, &att, &cal, self.alpha),
            FitnessKind::ConformalSetSize => fit_conformal_set_size(logits, labels, &att, &cal, self.alpha),
            FitnessKind::CertifiedRatio => Err(Error::config("certified ratio is scored from smoothing samples")),
        }
    }
}

struct Smoothed {
    cache: SmoothingCache,
    /// Clean-graph prediction of each attacked node.
    vote: Vec<usize>,
    clean_accuracy: f64,
}

/// Scores candidates against a fixed model and clean graph.
pub struct Objective<'a> {
    inference: Inference<'a>,
    spec: FitnessSpec,
    n_att: usize,
    /// Attacked nodes followed by calibration nodes.
    rows: Vec<usize>,
    labels: Vec<usize>,
    smoothed: Option<Smoothed>,
}

impl<'a> Objective<'a> {
    /// `calibration` is used by the conformal objectives and must be
    /// disjoint from `v_att`. The smoothing cache is drawn from `seed`.
    pub fn new(inference: Inference<'a>, spec: FitnessSpec, v_att: &[usize], calibration: &[usize], seed: u64) -> Result<Self> {
        spec.validate()?;
        if v_att.is_empty() {
            return Err(Error::config("attacked node set is empty"));
        }
        let mut rows = v_att.to_vec();
        if spec.kind.is_conformal() {
            if calibration.is_empty() {
                return Err(Error::config("conformal objectives need a calibration set"));
            }
            if calibration.iter().any(|v| v_att.contains(v)) {
                return Err(Error::config("calibration nodes overlap the attacked nodes"));
            }
            rows.extend_from_slice(calibration);
        }
        let g = inference.base();
        if let Some(&v) = rows.iter().find(|&&v| v >= g.num_nodes()) {
            return Err(Error::config(format!("node {v} out of range")));
        }
        let labels: Vec<usize> = rows.iter().map(|&v| g.labels()[v]).collect();
        let smoothed = if spec.kind == FitnessKind::CertifiedRatio {
            let params = spec.smoothing.params(spec.smoothing.attack_samples, seed);
            let clean = inference.clean_logits();
            let vote: Vec<usize> = v_att.iter().map(|&v| argmax(clean.row(v))).collect();
            let att: Vec<usize> = (0..v_att.len()).collect();
            let clean_accuracy = accuracy(&clean.select_rows(v_att), &labels, &att)?;
            Some(Smoothed { cache: smoothing_sample(g, params)?, vote, clean_accuracy })
        } else {
            None
        };
        Ok(Objective { inference, spec, n_att: v_att.len(), rows, labels, smoothed })
    }

    pub fn spec(&self) -> &FitnessSpec {
        &self.spec
    }

    pub fn inference(&self) -> &Inference<'a> {
        &self.inference
    }

    pub fn attacked(&self) -> &[usize] {
        &self.rows[..self.n_att]
    }

    fn certified_fitness(&self, s: &Smoothed, cand: &Candidate) -> Result<f64> {
        let g = self.inference.base();
        let pairs = cand.distinct_pairs(g.num_nodes())?;
        let view = s.cache.resample_pairs(g, &pairs);
        let att = self.attacked();
        let probs = smooth_probs(&self.inference, &view, att, &s.vote);
        let mut fit = fit_certified_ratio(&probs, self.spec.smoothing.p_bar)?;
        if self.spec.smoothing.lambda > 0.0 {
            let z = self.inference.logits_for_flips(&[&pairs], att).remove(0);
            let idx: Vec<usize> = (0..att.len()).collect();
            let acc = accuracy(&z, &self.labels, &idx)?;
            fit -= self.spec.smoothing.lambda * (s.clean_accuracy - acc).max(0.0);
        }
        Ok(fit)
    }

    /// Smooth vote probabilities of the attacked nodes under `cand`.
    pub fn smooth_probs_for(&self, cand: &Candidate) -> Result<Option<Vec<f64>>> {
        let Some(s) = &self.smoothed else { return Ok(None) };
        let g = self.inference.base();
        let view = s.cache.resample_pairs(g, &cand.distinct_pairs(g.num_nodes())?);
        Ok(Some(smooth_probs(&self.inference, &view, self.attacked(), &s.vote)))
    }
}

impl Evaluator for Objective<'_> {
    fn evaluate(&self, cands: &[Candidate]) -> Result<Vec<f64>> {
        if let Some(s) = &self.smoothed {
            return cands.par_iter().map(|c| self.certified_fitness(s, c)).collect();
        }
        let logits = self.inference.logits_for_candidates(cands, &self.rows)?;
        logits.iter().map(|z| self.spec.score_rows(z, &self.labels, self.n_att)).collect()
    }

    fn achieved(&self, cand: &Candidate) -> Result<Vec<usize>> {
        let att = self.attacked();
        if let Some(probs) = self.smooth_probs_for(cand)? {
            let p_bar = self.spec.smoothing.p_bar;
            return Ok(att.iter().zip(probs).filter(|(_, p)| *p < p_bar).map(|(&v, _)| v).collect());
        }
        let z = self.inference.logits_for_candidates(std::slice::from_ref(cand), &self.rows)?.remove(0);
        if self.spec.kind == FitnessKind::ConformalCoverage {
            let cal: Vec<usize> = (self.n_att..self.rows.len()).collect();
            let tau = conformal_calibrate(&true_class_scores(&z, &self.labels, &cal), self.spec.alpha)?;
            return Ok((0..self.n_att)
                .filter(|&k| !prediction_set(z.row(k), tau).contains(&self.labels[k]))
                .map(|k| att[k])
                .collect());
        }
        Ok((0..self.n_att).filter(|&k| argmax(z.row(k)) != self.labels[k]).map(|k| att[k]).collect())
    }
}
