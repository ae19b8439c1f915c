//! Genetic search over sparse edge-flip candidates.
//!
//! A generation keeps the elite candidates, breeds the rest through
//! tournament selection, k-point crossover and mutation, optionally
//! projects children onto the local degree constraint and evaluates only
//! the new candidates. All randomness for slot `i` of generation `t` comes
//! from its own substream, so results do not depend on thread scheduling.

mod operators;
mod project;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttackScope, Candidate, Graph};
use crate::rng::substream;

pub use operators::{crossover, draw_joints, init_population, mutate, targeted_gene, tournament_select, MutationKind};
pub use project::{local_excess, local_project, FrequencyScores};

/// Scores candidates. Higher is a stronger attack.
pub trait Evaluator: Sync {
    fn evaluate(&self, cands: &[Candidate]) -> Result<Vec<f64>>;

    /// Attacked nodes already won under `cand`; adaptive mutation stops
    /// targeting them.
    fn achieved(&self, _cand: &Candidate) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }
}

/// Adapts a closure into an [`Evaluator`] that scores one candidate at a time.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&Candidate) -> f64 + Sync> Evaluator for FnEvaluator<F> {
    fn evaluate(&self, cands: &[Candidate]) -> Result<Vec<f64>> {
        Ok(cands.iter().map(&self.0).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub steps: usize,
    pub mutation_rate: f64,
    pub tournament: usize,
    pub joints: usize,
    pub mutation: MutationKind,
    /// Defaults to `population / 16`.
    pub elites: Option<usize>,
    /// Generations that use random warmup projection.
    pub t_warm: usize,
    pub seed: u64,
    /// Stop as soon as the best fitness reaches this value.
    pub target_fitness: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 1024,
            steps: 500,
            mutation_rate: 0.01,
            tournament: 2,
            joints: 30,
            mutation: MutationKind::Adaptive,
            elites: None,
            t_warm: 0,
            seed: 0,
            target_fitness: None,
        }
    }
}

impl GaConfig {
    pub fn elite_count(&self) -> usize {
        self.elites.unwrap_or(self.population / 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::config("population must be at least 2"));
        }
        if self.elite_count() > self.population {
            return Err(Error::config("elite count exceeds the population"));
        }
        if self.joints == 0 {
            return Err(Error::config("crossover needs at least one joint"));
        }
        if self.tournament == 0 {
            return Err(Error::config("tournament size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::config(format!("mutation rate {} outside [0, 1]", self.mutation_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub candidates: Vec<Candidate>,
    pub fitness: Vec<f64>,
    pub generation: usize,
    pub best: Candidate,
    pub best_fitness: f64,
}

impl Population {
    /// Evaluates `candidates` and records the best one (lowest index on ties).
    pub fn evaluated(candidates: Vec<Candidate>, eval: &dyn Evaluator) -> Result<Self> {
        let fitness = eval.evaluate(&candidates)?;
        if fitness.len() != candidates.len() {
            return Err(Error::Dimension("evaluator returned the wrong number of scores".into()));
        }
        let top = best_index(&fitness);
        Ok(Population {
            best: candidates[top].clone(),
            best_fitness: fitness[top],
            candidates,
            fitness,
            generation: 0,
        })
    }

    pub fn mean_fitness(&self) -> f64 {
        self.fitness.iter().sum::<f64>() / self.fitness.len() as f64
    }

    /// Reorders by fitness, descending; equal fitness keeps index order.
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| self.fitness[b].total_cmp(&self.fitness[a]).then(a.cmp(&b)));
        self.candidates = order.iter().map(|&i| self.candidates[i].clone()).collect();
        self.fitness = order.iter().map(|&i| self.fitness[i]).collect();
    }
}

fn best_index(fitness: &[f64]) -> usize {
    let mut best = 0;
    for (i, &f) in fitness.iter().enumerate() {
        if f > fitness[best] {
            best = i;
        }
    }
    best
}

fn slot_stream(seed: u64, generation: usize, slot: usize) -> crate::rng::Rng {
    substream(seed, "ga-slot", ((generation as u64) << 32) | slot as u64)
}

/// Initial population for `scope`, projected when a local budget is set.
pub fn initial_population(g: &Graph, scope: &AttackScope, cfg: &GaConfig, eval: &dyn Evaluator) -> Result<Population> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, "ga-init", 0);
    let mut cands = init_population(g.num_nodes(), &scope.v_att, scope.delta, cfg.population, &mut rng)?;
    if scope.e_loc.is_some() {
        let freq = FrequencyScores::from_population(&cands);
        cands = cands
            .iter()
            .map(|c| local_project(c, g, scope, &freq, &mut rng, cfg.t_warm > 0))
            .collect();
    }
    Population::evaluated(cands, eval)
}

/// Produces the next generation.
pub fn step(pop: Population, g: &Graph, scope: &AttackScope, cfg: &GaConfig, eval: &dyn Evaluator) -> Result<Population> {
    let mut pop = pop;
    pop.sort();
    let size = pop.candidates.len();
    let elites = cfg.elite_count().min(size);
    let generation = pop.generation + 1;
    let won = match cfg.mutation {
        MutationKind::Adaptive => eval.achieved(&pop.candidates[0])?,
        _ => Vec::new(),
    };
    let freq = scope.e_loc.map(|_| FrequencyScores::from_population(&pop.candidates));
    let warmup = generation <= cfg.t_warm;
    let n = g.num_nodes();

    let children: Vec<Candidate> = (elites..size)
        .map(|slot| {
            let mut rng = slot_stream(cfg.seed, generation, slot);
            let a = tournament_select(&pop.fitness, cfg.tournament, &mut rng);
            let b = tournament_select(&pop.fitness, cfg.tournament, &mut rng);
            let joints = draw_joints(pop.candidates[a].len(), cfg.joints, &mut rng);
            let child = crossover(&pop.candidates[a], &pop.candidates[b], &joints);
            let child = mutate(&child, cfg.mutation, n, &scope.v_att, &won, cfg.mutation_rate, &mut rng);
            match &freq {
                Some(f) => local_project(&child, g, scope, f, &mut rng, warmup),
                None => child,
            }
        })
        .collect();
    let scores = eval.evaluate(&children)?;
    if scores.len() != children.len() {
        return Err(Error::Dimension("evaluator returned the wrong number of scores".into()));
    }

    pop.candidates.truncate(elites);
    pop.fitness.truncate(elites);
    if let Some(i) = (!scores.is_empty()).then(|| best_index(&scores)) {
        if scores[i] > pop.best_fitness {
            pop.best_fitness = scores[i];
            pop.best = children[i].clone();
        }
    }
    pop.candidates.extend(children);
    pop.fitness.extend(scores);
    pop.generation = generation;
    Ok(pop)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Candidate,
    pub best_fitness: f64,
    pub generations: usize,
    /// Candidates scored, elites counted once.
    pub evaluations: usize,
    pub telemetry: Vec<Telemetry>,
}

fn record(pop: &Population, g: &Graph, scope: &AttackScope) -> Telemetry {
    let violations = match scope.e_loc {
        Some(e) => pop.candidates.iter().map(|c| local_excess(c, g, e)).sum(),
        None => 0,
    };
    Telemetry {
        generation: pop.generation,
        best_fitness: pop.best_fitness,
        mean_fitness: pop.mean_fitness(),
        violations,
    }
}

/// Runs the search for `cfg.steps` generations.
pub fn run(g: &Graph, scope: &AttackScope, cfg: &GaConfig, eval: &dyn Evaluator) -> Result<GaOutcome> {
    cfg.validate()?;
    if scope.delta == 0 {
        let pop = Population::evaluated(vec![Candidate::empty()], eval)?;
        return Ok(GaOutcome {
            telemetry: vec![record(&pop, g, scope)],
            best: pop.best,
            best_fitness: pop.best_fitness,
            generations: 0,
            evaluations: 1,
        });
    }
    let mut pop = initial_population(g, scope, cfg, eval)?;
    let mut telemetry = vec![record(&pop, g, scope)];
    let mut evaluations = pop.candidates.len();
    let fresh = cfg.population - cfg.elite_count().min(cfg.population);
    let reached = |p: &Population| cfg.target_fitness.is_some_and(|t| p.best_fitness >= t);
    while pop.generation < cfg.steps && !reached(&pop) {
        pop = step(pop, g, scope, cfg, eval)?;
        evaluations += fresh;
        let t = record(&pop, g, scope);
        log::debug!("generation {} best {:.4} mean {:.4}", t.generation, t.best_fitness, t.mean_fitness);
        telemetry.push(t);
    }
    Ok(GaOutcome { best: pop.best, best_fitness: pop.best_fitness, generations: pop.generation, evaluations, telemetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{pi_inverse, test_util};

    /// Fitness counts genes whose pair touches node 0.
    fn touches_zero(n: usize) -> FnEvaluator<impl Fn(&Candidate) -> f64 + Sync> {
        FnEvaluator(move |c: &Candidate| {
            c.distinct_indices().iter().filter(|&&l| pi_inverse(l, n).unwrap().0 == 0).count() as f64
        })
    }

    fn small_cfg(seed: u64) -> GaConfig {
        GaConfig { population: 32, steps: 30, joints: 3, seed, mutation: MutationKind::Uniform, mutation_rate: 0.1, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        assert_eq!(GaConfig::default().elite_count(), 64);
        assert!(GaConfig { population: 1, ..Default::default() }.validate().is_err());
        assert!(GaConfig { joints: 0, ..Default::default() }.validate().is_err());
        assert!(GaConfig { mutation_rate: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn best_so_far_never_decreases_and_runs_repeat() {
        let g = test_util::path(12);
        let v: Vec<usize> = (0..12).collect();
        let scope = AttackScope::with_delta(&g, &v, 4, None).unwrap();
        let eval = touches_zero(12);
        let a = run(&g, &scope, &small_cfg(9), &eval).unwrap();
        let b = run(&g, &scope, &small_cfg(9), &eval).unwrap();
        assert!(a.telemetry.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
        assert_eq!(a.telemetry, b.telemetry);
        assert_eq!(a.best, b.best);
        assert!(a.best_fitness >= 3.0);
    }

    #[test]
    fn all_elites_is_a_fixed_point() {
        let g = test_util::path(8);
        let scope = AttackScope::with_delta(&g, &[0, 1], 3, None).unwrap();
        let cfg = GaConfig { population: 8, elites: Some(8), ..small_cfg(1) };
        let eval = touches_zero(8);
        let pop = initial_population(&g, &scope, &cfg, &eval).unwrap();
        let mut sorted = pop.clone();
        sorted.sort();
        let next = step(pop, &g, &scope, &cfg, &eval).unwrap();
        assert_eq!(next.candidates, sorted.candidates);
        assert_eq!(next.fitness, sorted.fitness);
    }

    #[test]
    fn zero_budget_evaluates_the_clean_graph() {
        let g = test_util::path(5);
        let scope = AttackScope::with_delta(&g, &[0], 0, None).unwrap();
        let out = run(&g, &scope, &small_cfg(0), &FnEvaluator(|c: &Candidate| c.len() as f64 + 0.5)).unwrap();
        assert!(out.best.is_empty());
        assert_eq!(out.best_fitness, 0.5);
    }

    #[test]
    fn target_fitness_stops_early() {
        let g = test_util::path(12);
        let v: Vec<usize> = (0..12).collect();
        let scope = AttackScope::with_delta(&g, &v, 2, None).unwrap();
        let cfg = GaConfig { steps: 500, target_fitness: Some(1.0), ..small_cfg(3) };
        let out = run(&g, &scope, &cfg, &touches_zero(12)).unwrap();
        assert!(out.generations < 500);
        assert!(out.best_fitness >= 1.0);
    }
}
