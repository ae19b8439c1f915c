//! Attack drivers: global, local, targeted, divide-and-conquer and random
//! baseline runs, with final metrics recomputed from scratch.

mod dnc;
mod targeted;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga::{self, local_project, targeted_gene, Evaluator, FrequencyScores, GaConfig, GaOutcome, Telemetry};
use crate::gnn::{forward, Inference, Matrix, ModelWeights};
use crate::graph::{apply_flips, AttackScope, Candidate, Flip, Graph, Split};
use crate::objectives::{
    accuracy, conformal_calibrate, coverage_and_size, fit_certified_ratio, smooth_predictions, smooth_probs, smoothing_sample,
    true_class_scores, FitnessKind, FitnessSpec, Objective, SmoothingConfig,
};
use crate::rng::{derive_seed, substream};

pub use dnc::{attack_dnc, plan_dnc, ChunkReport, DncPlan};
pub use targeted::{attack_targeted, targeted_random_baseline, TargetedResult};

const BASELINE_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Global,
    Local,
    Targeted,
    Dnc,
    Random,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Global => "global",
            Mode::Local => "local",
            Mode::Targeted => "targeted",
            Mode::Dnc => "dnc",
            Mode::Random => "random",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "global" => Mode::Global,
            "local" => Mode::Local,
            "targeted" => Mode::Targeted,
            "dnc" => Mode::Dnc,
            "random" => Mode::Random,
            other => return Err(Error::config(format!("unknown attack mode {other:?}"))),
        })
    }
}

pub type Metrics = BTreeMap<String, f64>;

/// Outcome of one attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub mode: Mode,
    pub objective: FitnessKind,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: usize,
    pub attacked_nodes: usize,
    /// Best fitness seen by the search.
    pub best_fitness: f64,
    pub evaluations: usize,
    /// Best perturbation, encoded against the clean graph.
    pub candidate: Candidate,
    pub flips: Vec<Flip>,
    pub clean_metrics: Metrics,
    pub attacked_metrics: Metrics,
    pub telemetry: Vec<Telemetry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunks: Vec<ChunkReport>,
    /// Configuration echo, filled in by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    pub wall_time: f64,
}

impl AttackResult {
    /// Distinct flipped pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.flips.iter().map(|f| (f.r, f.c)).collect()
    }
}

/// Default calibration pool: unlabeled nodes outside `v_att`.
pub fn calibration_pool(g: &Graph, v_att: &[usize]) -> Vec<usize> {
    g.nodes_in(Split::Unlabeled).into_iter().filter(|v| v_att.binary_search(v).is_err()).collect()
}

/// The defender's calibration subset: a seeded random half of `pool`.
pub fn defender_calibration(pool: &[usize], seed: u64) -> Vec<usize> {
    let mut p = pool.to_vec();
    p.shuffle(&mut substream(seed, "defender", 0));
    p.truncate(pool.len().div_ceil(2));
    p.sort_unstable();
    p
}

fn smoothing_seed(seed: u64) -> u64 {
    derive_seed(seed, "smoothing", 0)
}

/// Metrics of the graph `g0 XOR pairs`, computed from scratch.
///
/// Always reports `accuracy` on the attacked nodes and the objective's
/// `fitness`. Conformal objectives add defender-side `coverage` and
/// `set_size`; the certificate objective adds `certified_ratio` and the
/// smoothed model's `smooth_accuracy` from fresh smoothing samples.
pub fn evaluate_metrics(
    g0: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    fitness: &FitnessSpec,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Metrics> {
    let g1 = apply_flips(g0, pairs);
    let z = forward(w, &g1, None)?;
    let labels = g1.labels();
    let att = &scope.v_att;
    let mut m = Metrics::new();
    m.insert("accuracy".into(), accuracy(&z, labels, att)?);
    match fitness.kind {
        FitnessKind::ConformalCoverage | FitnessKind::ConformalSetSize => {
            let pool = calibration_pool(g0, att);
            let f = conformal_fitness(&z, labels, att, &pool, fitness)?;
            m.insert("fitness".into(), f);
            let cal = defender_calibration(&pool, seed);
            let tau = conformal_calibrate(&true_class_scores(&z, labels, &cal), fitness.alpha)?;
            let (coverage, size) = coverage_and_size(&z, labels, att, tau);
            m.insert("coverage".into(), coverage);
            m.insert("set_size".into(), size);
        }
        FitnessKind::CertifiedRatio => {
            let s = &fitness.smoothing;
            let clean = forward(w, g0, None)?;
            let vote: Vec<usize> = att.iter().map(|&v| crate::gnn::argmax(clean.row(v))).collect();
            let cache = smoothing_sample(&g1, s.params(s.final_samples, derive_seed(seed, "smoothing-final", 0)))?;
            let inference = Inference::new(w, &g1)?;
            let probs = smooth_probs(&inference, &cache, att, &vote);
            let uncertified = fit_certified_ratio(&probs, s.p_bar)?;
            m.insert("fitness".into(), uncertified);
            m.insert("certified_ratio".into(), 1.0 - uncertified);
            let smooth = smooth_predictions(&inference, &cache, att);
            let hits = att.iter().zip(&smooth).filter(|&(&v, &y)| labels[v] == y).count();
            m.insert("smooth_accuracy".into(), hits as f64 / att.len() as f64);
        }
        kind => {
            let f = match kind {
                FitnessKind::Accuracy => crate::objectives::fit_accuracy(&z, labels, att),
                FitnessKind::CrossEntropy => crate::objectives::fit_cross_entropy(&z, labels, att),
                _ => crate::objectives::fit_tanh_margin(&z, labels, att),
            }?;
            m.insert("fitness".into(), f);
        }
    }
    Ok(m)
}

fn conformal_fitness(z: &Matrix<f32>, labels: &[usize], att: &[usize], pool: &[usize], spec: &FitnessSpec) -> Result<f64> {
    match spec.kind {
        FitnessKind::ConformalCoverage => crate::objectives::fit_conformal_coverage(z, labels, att, pool, spec.alpha),
        _ => crate::objectives::fit_conformal_set_size(z, labels, att, pool, spec.alpha),
    }
}

/// Builds the evaluator for `scope` on `base`.
pub fn objective<'a>(
    base: &'a Graph,
    w: &'a ModelWeights<f32>,
    v_att: &[usize],
    calibration_from: &Graph,
    all_att: &[usize],
    fitness: &FitnessSpec,
    seed: u64,
) -> Result<Objective<'a>> {
    let pool = if fitness.kind.is_conformal() { calibration_pool(calibration_from, all_att) } else { Vec::new() };
    if fitness.kind.is_conformal() && pool.is_empty() {
        return Err(Error::config("conformal attacks need unlabeled nodes outside the attacked set"));
    }
    Objective::new(Inference::new(w, base)?, fitness.clone(), v_att, &pool, smoothing_seed(seed))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mode: Mode,
    g: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    fitness: &FitnessSpec,
    seed: u64,
    outcome: GaOutcome,
    started: Instant,
) -> Result<AttackResult> {
    let pairs = outcome.best.distinct_pairs(g.num_nodes())?;
    let flips = outcome.best.decode(g)?;
    debug_assert!(flips.len() <= scope.delta);
    Ok(AttackResult {
        mode,
        objective: fitness.kind,
        seed,
        epsilon: scope.epsilon,
        delta: scope.delta,
        attacked_nodes: scope.v_att.len(),
        best_fitness: outcome.best_fitness,
        evaluations: outcome.evaluations,
        candidate: outcome.best,
        flips,
        clean_metrics: evaluate_metrics(g, w, scope, fitness, &[], seed)?,
        attacked_metrics: evaluate_metrics(g, w, scope, fitness, &pairs, seed)?,
        telemetry: outcome.telemetry,
        chunks: Vec::new(),
        config: serde_json::Value::Null,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn run_search(g: &Graph, w: &ModelWeights<f32>, scope: &AttackScope, fitness: &FitnessSpec, cfg: &GaConfig) -> Result<GaOutcome> {
    if fitness.kind == FitnessKind::CertifiedRatio && fitness.smoothing.p_bar <= 0.5 + 1e-3 {
        log::warn!("p_bar {} leaves almost nothing to attack", fitness.smoothing.p_bar);
    }
    let obj = objective(g, w, &scope.v_att, g, &scope.v_att, fitness, cfg.seed)?;
    ga::run(g, scope, cfg, &obj)
}

/// Unconstrained attack with budget `scope.delta`; any local budget in
/// `scope` is ignored.
pub fn attack_global(g: &Graph, w: &ModelWeights<f32>, scope: &AttackScope, fitness: &FitnessSpec, cfg: &GaConfig) -> Result<AttackResult> {
    let started = Instant::now();
    let scope = AttackScope { e_loc: None, ..scope.clone() };
    let outcome = run_search(g, w, &scope, fitness, cfg)?;
    finish(Mode::Global, g, w, &scope, fitness, cfg.seed, outcome, started)
}

/// Attack under the local degree constraint of `scope.e_loc`.
pub fn attack_local(g: &Graph, w: &ModelWeights<f32>, scope: &AttackScope, fitness: &FitnessSpec, cfg: &GaConfig) -> Result<AttackResult> {
    if scope.e_loc.is_none() {
        return Err(Error::config("local attacks need a local budget"));
    }
    let started = Instant::now();
    let outcome = run_search(g, w, scope, fitness, cfg)?;
    finish(Mode::Local, g, w, scope, fitness, cfg.seed, outcome, started)
}

/// Global attack on the conformal coverage or set-size objective.
pub fn attack_conformal(
    g: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    alpha: f64,
    kind: FitnessKind,
    cfg: &GaConfig,
) -> Result<AttackResult> {
    if !kind.is_conformal() {
        return Err(Error::config(format!("{kind} is not a conformal objective")));
    }
    attack_global(g, w, scope, &FitnessSpec { kind, alpha, ..Default::default() }, cfg)
}

/// Global attack on the certified ratio of the smoothed model.
pub fn attack_certificate(
    g: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    smoothing: SmoothingConfig,
    cfg: &GaConfig,
) -> Result<AttackResult> {
    let spec = FitnessSpec { kind: FitnessKind::CertifiedRatio, smoothing, ..Default::default() };
    attack_global(g, w, scope, &spec, cfg)
}

/// Best of `trials` random targeted candidates, drawn from one stream so a
/// longer run extends a shorter one.
pub fn attack_random_baseline(
    g: &Graph,
    w: &ModelWeights<f32>,
    scope: &AttackScope,
    fitness: &FitnessSpec,
    trials: usize,
    seed: u64,
) -> Result<AttackResult> {
    let started = Instant::now();
    if trials == 0 {
        return Err(Error::config("the random baseline needs at least one trial"));
    }
    let n = g.num_nodes();
    if scope.delta > 0 && n < 2 {
        return Err(Error::config("a graph needs at least two nodes to form a pair"));
    }
    let obj = objective(g, w, &scope.v_att, g, &scope.v_att, fitness, seed)?;
    let mut rng = substream(seed, "random-baseline", 0);
    let empty = FrequencyScores::default();
    let mut best = (f64::NEG_INFINITY, Candidate::empty());
    let mut drawn = 0;
    while drawn < trials {
        let batch: Vec<Candidate> = (drawn..trials.min(drawn + BASELINE_BATCH))
            .map(|_| {
                let c = Candidate::new((0..scope.delta).map(|_| targeted_gene(&scope.v_att, n, &mut rng)).collect());
                if scope.e_loc.is_some() {
                    local_project(&c, g, scope, &empty, &mut rng, false)
                } else {
                    c
                }
            })
            .collect();
        drawn += batch.len();
        for (c, f) in batch.iter().zip(obj.evaluate(&batch)?) {
            if f > best.0 {
                best = (f, c.clone());
            }
        }
    }
    let outcome = GaOutcome { best: best.1, best_fitness: best.0, generations: 0, evaluations: trials, telemetry: Vec::new() };
    finish(Mode::Random, g, w, scope, fitness, seed, outcome, started)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{train, ModelKind, TrainConfig};
    use crate::graph::count_local_violations;
    use crate::synth::{generate_sbm, SbmConfig};

    pub(crate) fn trained() -> (Graph, ModelWeights<f32>) {
        let g = generate_sbm(&SbmConfig { blocks: 3, block_size: 30, p_in: 0.2, p_out: 0.02, seed: 5, ..Default::default() }).unwrap();
        let cfg = TrainConfig { max_epochs: 60, ..TrainConfig::for_model(ModelKind::Gcn, 1) };
        let w = train(&g, &cfg).unwrap().weights().clone();
        (g, w)
    }

    fn small_ga(seed: u64) -> GaConfig {
        GaConfig { population: 24, steps: 8, joints: 4, seed, ..Default::default() }
    }

    #[test]
    fn zero_budget_keeps_clean_metrics() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::with_delta(&g, &att, 0, None).unwrap();
        let r = attack_global(&g, &w, &scope, &FitnessSpec::default(), &small_ga(1)).unwrap();
        assert!(r.flips.is_empty());
        assert_eq!(r.clean_metrics, r.attacked_metrics);
    }

    #[test]
    fn results_are_self_consistent() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::new(&g, &att, 0.2, None).unwrap();
        for kind in [FitnessKind::Accuracy, FitnessKind::TanhMargin, FitnessKind::ConformalCoverage] {
            let spec = FitnessSpec::of(kind);
            let r = attack_global(&g, &w, &scope, &spec, &small_ga(2)).unwrap();
            assert!(r.flips.len() <= scope.delta);
            let again = evaluate_metrics(&g, &w, &scope, &spec, &r.pairs(), r.seed).unwrap();
            assert_eq!(again, r.attacked_metrics);
            assert!(r.flips.iter().all(|f| att.contains(&f.r) || att.contains(&f.c)));
            if kind != FitnessKind::ConformalCoverage {
                assert_eq!(r.attacked_metrics["fitness"], r.best_fitness);
            }
        }
    }

    #[test]
    fn local_attack_has_no_violations() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::new(&g, &att, 0.3, Some(0.5)).unwrap();
        let r = attack_local(&g, &w, &scope, &FitnessSpec::default(), &small_ga(3)).unwrap();
        let g1 = apply_flips(&g, &r.pairs());
        assert_eq!(count_local_violations(&g, &g1, 0.5).total, 0);
        assert!(attack_local(&g, &w, &AttackScope { e_loc: None, ..scope }, &FitnessSpec::default(), &small_ga(3)).is_err());
    }

    #[test]
    fn zero_local_budget_only_removes() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::new(&g, &att, 0.3, Some(0.0)).unwrap();
        let r = attack_local(&g, &w, &scope, &FitnessSpec::default(), &small_ga(4)).unwrap();
        assert!(r.flips.iter().all(|f| f.op == crate::graph::FlipOp::Remove));
    }

    #[test]
    fn baseline_prefix_dominance() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::new(&g, &att, 0.2, None).unwrap();
        let spec = FitnessSpec::of(FitnessKind::TanhMargin);
        let few = attack_random_baseline(&g, &w, &scope, &spec, 10, 6).unwrap();
        let many = attack_random_baseline(&g, &w, &scope, &spec, 300, 6).unwrap();
        assert!(many.best_fitness >= few.best_fitness);
        let zero = AttackScope::with_delta(&g, &att, 0, None).unwrap();
        let r = attack_random_baseline(&g, &w, &zero, &spec, 1, 6).unwrap();
        assert_eq!(r.clean_metrics, r.attacked_metrics);
    }

    #[test]
    fn conformal_metrics_are_reported() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::new(&g, &att, 0.1, None).unwrap();
        let r = attack_conformal(&g, &w, &scope, 0.1, FitnessKind::ConformalSetSize, &small_ga(5)).unwrap();
        assert!(r.clean_metrics.contains_key("coverage"));
        assert!(r.attacked_metrics["set_size"] >= 1.0);
        assert!(attack_conformal(&g, &w, &scope, 0.1, FitnessKind::Accuracy, &small_ga(5)).is_err());
    }

    #[test]
    fn certificate_with_zero_rates_certifies_everything() {
        let (g, w) = trained();
        let att = g.nodes_in(Split::Test);
        let scope = AttackScope::with_delta(&g, &att, 0, None).unwrap();
        let s = SmoothingConfig { p_plus: 0.0, p_minus: 0.0, attack_samples: 5, final_samples: 5, ..Default::default() };
        let r = attack_certificate(&g, &w, &scope, s, &small_ga(6)).unwrap();
        assert_eq!(r.clean_metrics["certified_ratio"], 1.0);
    }
}
