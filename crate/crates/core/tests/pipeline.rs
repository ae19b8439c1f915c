//! Synthetic graph to trained model to attack, checked against full
//! recomputation.

use approx::assert_abs_diff_eq;

use evagraph_core::attack::{attack_dnc, attack_global, attack_local, attack_random_baseline, plan_dnc, AttackResult};
use evagraph_core::ga::GaConfig;
use evagraph_core::gnn::{argmax, forward, train, ModelKind, ModelWeights, TrainConfig};
use evagraph_core::graph::{apply_flips, count_local_violations, AttackScope, FlipOp, Split};
use evagraph_core::objectives::{FitnessKind, FitnessSpec};
use evagraph_core::synth::{generate_sbm, SbmConfig};
use evagraph_core::Graph;

fn setup() -> (Graph, ModelWeights<f32>, Vec<usize>) {
    let g = generate_sbm(&SbmConfig { blocks: 3, block_size: 40, signal: 0.5, seed: 8, ..Default::default() }).unwrap();
    let w = train(&g, &TrainConfig::for_model(ModelKind::Gcn, 8)).unwrap().weights().clone();
    let test = g.nodes_in(Split::Test);
    (g, w, test)
}

fn small(seed: u64) -> GaConfig {
    GaConfig { population: 24, steps: 8, seed, ..Default::default() }
}

fn recomputed_accuracy(g: &Graph, w: &ModelWeights<f32>, r: &AttackResult, nodes: &[usize]) -> f64 {
    let z = forward(w, &apply_flips(g, &r.pairs()), None).unwrap();
    nodes.iter().filter(|&&v| argmax(z.row(v)) == g.labels()[v]).count() as f64 / nodes.len() as f64
}

#[test]
fn global_attack_reports_recomputed_metrics() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.1, None).unwrap();
    let r = attack_global(&g, &w, &scope, &FitnessSpec::of(FitnessKind::CrossEntropy), &small(1)).unwrap();
    assert!(r.flips.len() <= scope.delta);
    assert_abs_diff_eq!(r.attacked_metrics["accuracy"], recomputed_accuracy(&g, &w, &r, &test), epsilon = 1e-12);
    for f in &r.flips {
        assert_eq!(f.op == FlipOp::Remove, g.has_edge(f.r, f.c));
    }
    // every generation starts from the best so far
    assert!(r.telemetry.windows(2).all(|p| p[1].best_fitness >= p[0].best_fitness));
}

#[test]
fn same_seed_same_result() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.1, None).unwrap();
    let spec = FitnessSpec::default();
    let a = attack_global(&g, &w, &scope, &spec, &small(3)).unwrap();
    let b = attack_global(&g, &w, &scope, &spec, &small(3)).unwrap();
    assert_eq!(a.candidate, b.candidate);
    assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
}

#[test]
fn local_attack_respects_degree_budget() {
    let (g, w, test) = setup();
    for e_loc in [0.0, 0.25, 0.5] {
        let scope = AttackScope::new(&g, &test, 0.2, Some(e_loc)).unwrap();
        let r = attack_local(&g, &w, &scope, &FitnessSpec::default(), &small(2)).unwrap();
        let g1 = apply_flips(&g, &r.pairs());
        assert_eq!(count_local_violations(&g, &g1, e_loc).total, 0, "e_loc {e_loc}");
    }
}

#[test]
fn one_chunk_matches_global() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.1, None).unwrap();
    let spec = FitnessSpec::of(FitnessKind::TanhMargin);
    let plan = plan_dnc(&g, &scope, 1, 4).unwrap();
    let a = attack_dnc(&g, &w, &scope, &plan, &spec, &small(4)).unwrap();
    let b = attack_global(&g, &w, &scope, &spec, &small(4)).unwrap();
    assert_eq!(a.candidate.distinct_indices(), b.candidate.distinct_indices());
    assert_eq!(a.flips, b.flips);
    assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
    assert_eq!(a.attacked_metrics, b.attacked_metrics);
}

#[test]
fn chunk_budgets_stay_within_total() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.15, None).unwrap();
    for k in 1..=4 {
        let plan = plan_dnc(&g, &scope, k, 5).unwrap();
        assert!(plan.total_budget() <= scope.delta);
        let mut covered: Vec<usize> = plan.chunks.concat();
        covered.sort_unstable();
        assert_eq!(covered, scope.v_att);
        let r = attack_dnc(&g, &w, &scope, &plan, &FitnessSpec::default(), &small(5)).unwrap();
        assert!(r.flips.len() <= scope.delta);
    }
}

#[test]
fn random_baseline_uses_its_trials() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.1, None).unwrap();
    let r = attack_random_baseline(&g, &w, &scope, &FitnessSpec::default(), 300, 6).unwrap();
    assert_eq!(r.evaluations, 300);
    assert!(r.flips.len() <= scope.delta);
    assert_abs_diff_eq!(r.attacked_metrics["accuracy"], recomputed_accuracy(&g, &w, &r, &test), epsilon = 1e-12);
}

#[test]
fn result_json_round_trips() {
    let (g, w, test) = setup();
    let scope = AttackScope::new(&g, &test, 0.1, None).unwrap();
    let r = attack_global(&g, &w, &scope, &FitnessSpec::default(), &small(7)).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: AttackResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back.candidate, r.candidate);
    assert_eq!(back.flips, r.flips);
    assert_eq!(back.clean_metrics, r.clean_metrics);
}
