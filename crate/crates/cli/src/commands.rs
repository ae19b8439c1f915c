//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use evagraph_core::attack::{
    attack_dnc, attack_global, attack_local, attack_random_baseline, attack_targeted, plan_dnc, AttackResult, Mode,
};
use evagraph_core::gnn::{train as train_model, ModelWeights};
use evagraph_core::graph::AttackScope;
use evagraph_core::objectives::FitnessKind;
use evagraph_core::synth::generate_sbm;
use evagraph_core::Graph;

use crate::config::{results_dir, RunConfig};
use crate::{AttackArgs, ReportArgs, SynthArgs, TrainArgs};

/// Invalid flag combination; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "graph".into())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.graph {
        cfg.graph = Some(g);
    }
    if let Some(m) = a.model {
        cfg.train.model = m;
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = Some(e);
    }
    if a.lr.is_some() {
        cfg.train.lr = a.lr;
    }
    if a.patience.is_some() {
        cfg.train.patience = a.patience;
    }
    let graph_path = cfg.graph.clone().ok_or_else(|| usage("train needs --graph"))?;
    let out = cfg.out.clone().ok_or_else(|| usage("train needs --out"))?;
    let g = Graph::read_grph(&graph_path)?;
    let tc = cfg.train.resolve(cfg.seed);
    let report = train_model(&g, &tc)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    report.weights().write(&out)?;
    let report_path = a.report.unwrap_or_else(|| out.with_extension("json"));
    write_json(&report_path, &json!({ "config": tc, "report": report }))?;
    println!(
        "train {:.4}  val {:.4}  test {:.4}  (best epoch {}, {} epochs)",
        report.train_acc, report.val_acc, report.test_acc, report.best_epoch, report.epochs_run
    );
    Ok(())
}

fn apply_attack_flags(cfg: &mut RunConfig, a: &AttackArgs) {
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(cfg.seed, a.common.seed);
    set!(cfg.attack.mode, a.mode);
    set!(cfg.fitness.kind, a.objective);
    set!(cfg.attack.epsilon, a.epsilon);
    set!(cfg.attack.k_dc, a.k_dc);
    set!(cfg.attack.nodes, a.nodes);
    set!(cfg.attack.max_budget, a.max_budget);
    set!(cfg.ga.population, a.population);
    set!(cfg.ga.steps, a.steps);
    set!(cfg.ga.mutation_rate, a.mutation_rate);
    set!(cfg.ga.mutation, a.mutation);
    set!(cfg.ga.joints, a.joints);
    set!(cfg.ga.t_warm, a.t_warm);
    set!(cfg.fitness.alpha, a.alpha);
    set!(cfg.fitness.smoothing.p_plus, a.p_plus);
    set!(cfg.fitness.smoothing.p_minus, a.p_minus);
    set!(cfg.fitness.smoothing.attack_samples, a.samples);
    set!(cfg.fitness.smoothing.final_samples, a.final_samples);
    set!(cfg.fitness.smoothing.p_bar, a.p_bar);
    set!(cfg.fitness.smoothing.lambda, a.lambda);
    if a.e_loc.is_some() {
        cfg.attack.e_loc = a.e_loc;
    }
    if a.elites.is_some() {
        cfg.ga.elites = a.elites;
    }
    if a.trials.is_some() {
        cfg.attack.trials = a.trials;
    }
    if !a.node.is_empty() {
        cfg.attack.targets = a.node.clone();
    }
    if !a.seeds.is_empty() {
        cfg.attack.seeds = a.seeds.clone();
    }
    if let Some(g) = &a.graph {
        cfg.graph = Some(g.clone());
    }
    if let Some(w) = &a.weights {
        cfg.weights = Some(w.clone());
    }
}

fn check_attack(cfg: &RunConfig) -> Result<()> {
    let at = &cfg.attack;
    match at.mode {
        Mode::Local if at.e_loc.is_none() => return Err(usage("--mode local needs --e-loc")),
        Mode::Dnc if at.e_loc.is_some() => return Err(usage("--mode dnc does not take --e-loc")),
        Mode::Dnc if at.k_dc == 0 => return Err(usage("--k-dc must be at least 1")),
        Mode::Global if at.e_loc.is_some() => return Err(usage("--e-loc needs --mode local")),
        Mode::Targeted if cfg.fitness.kind != FitnessKind::Accuracy && cfg.fitness.kind != FitnessKind::TanhMargin => {
            return Err(usage("targeted attacks always use the tanh-margin objective"))
        }
        _ => {}
    }
    if at.mode != Mode::Targeted && !at.targets.is_empty() {
        return Err(usage("--node only applies to --mode targeted"));
    }
    if !(at.epsilon > 0.0 && at.epsilon <= 1.0) {
        return Err(usage(format!("--epsilon {} outside (0, 1]", at.epsilon)));
    }
    cfg.ga.validate()?;
    cfg.fitness.validate()?;
    Ok(())
}

/// Runs one seeded attack and returns the result document.
pub fn run_attack(cfg: &RunConfig, g: &Graph, w: &ModelWeights<f32>) -> Result<Value> {
    let at = &cfg.attack;
    let ga = evagraph_core::ga::GaConfig { seed: cfg.seed, ..cfg.ga.clone() };
    let v_att = at.nodes.select(g);
    let echo = serde_json::to_value(cfg)?;
    if at.mode == Mode::Targeted {
        let started = std::time::Instant::now();
        let targets = if at.targets.is_empty() { v_att } else { at.targets.clone() };
        let results = targets
            .iter()
            .map(|&v| attack_targeted(g, w, v, at.max_budget, &ga))
            .collect::<evagraph_core::Result<Vec<_>>>()?;
        let na = results.iter().filter(|r| r.budget.is_none()).count();
        let budgets: Vec<String> = results.iter().map(|r| r.budget_label()).collect();
        return Ok(json!({
            "mode": "targeted",
            "seed": cfg.seed,
            "max_budget": at.max_budget,
            "na_count": na,
            "budgets": budgets,
            "results": results,
            "config": echo,
            "wall_time": started.elapsed().as_secs_f64(),
        }));
    }
    let e_loc = if at.mode == Mode::Local { at.e_loc } else { None };
    let scope = AttackScope::new(g, &v_att, at.epsilon, e_loc)?;
    let mut result: AttackResult = match at.mode {
        Mode::Global => attack_global(g, w, &scope, &cfg.fitness, &ga)?,
        Mode::Local => attack_local(g, w, &scope, &cfg.fitness, &ga)?,
        Mode::Dnc => {
            let plan = plan_dnc(g, &scope, at.k_dc, cfg.seed)?;
            attack_dnc(g, w, &scope, &plan, &cfg.fitness, &ga)?
        }
        Mode::Random => {
            let fresh = ga.population - ga.elite_count().min(ga.population);
            let trials = at.trials.unwrap_or(ga.population + ga.steps * fresh);
            attack_random_baseline(g, w, &scope, &cfg.fitness, trials, cfg.seed)?
        }
        Mode::Targeted => unreachable!("handled above"),
    };
    result.config = echo;
    Ok(serde_json::to_value(result)?)
}

fn result_name(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}-{}-eps{}-seed{}.json",
        cfg.dataset.as_deref().unwrap_or("graph"),
        cfg.model.map_or_else(|| "model".to_string(), |m| m.to_string()),
        cfg.attack.mode,
        cfg.fitness.kind,
        cfg.attack.epsilon,
        cfg.seed
    )
}

pub fn attack(a: AttackArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_attack_flags(&mut cfg, &a);
    check_attack(&cfg)?;
    let graph_path = cfg.graph.clone().ok_or_else(|| usage("attack needs --graph"))?;
    let weights_path = cfg.weights.clone().ok_or_else(|| usage("attack needs --weights"))?;
    let g = Graph::read_grph(&graph_path)?;
    let w = ModelWeights::read(&weights_path)?;
    if w.num_features() != g.num_features() || w.num_classes() != g.num_classes() {
        bail!(
            "weights expect {} features and {} classes, graph has {} and {}",
            w.num_features(),
            w.num_classes(),
            g.num_features(),
            g.num_classes()
        );
    }
    cfg.dataset.get_or_insert_with(|| dataset_name(&graph_path));
    cfg.model = Some(w.kind);
    cfg.out = None;

    let seeds = if cfg.attack.seeds.is_empty() { vec![cfg.seed] } else { cfg.attack.seeds.clone() };
    let sweep = seeds.len() > 1;
    let runs: Vec<RunConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            c.attack.seeds.clear();
            c
        })
        .collect();
    let single_file = a.out.clone().filter(|p| !sweep && p.extension().is_some_and(|e| e == "json"));
    let dir = a.out.clone().unwrap_or_else(results_dir);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs.max(1)).build()?;
    let docs: Vec<(RunConfig, Value)> = pool.install(|| {
        runs.into_par_iter()
            .map(|c| run_attack(&c, &g, &w).map(|d| (c, d)))
            .collect::<Result<Vec<_>>>()
    })?;
    for (c, doc) in docs {
        let path = single_file.clone().unwrap_or_else(|| dir.join(result_name(&c)));
        write_json(&path, &doc)?;
        summarize(&doc, &path);
    }
    Ok(())
}

fn summarize(doc: &Value, path: &Path) {
    if doc["mode"] == "targeted" {
        println!("seed {}: NA {}  -> {}", doc["seed"], doc["na_count"], path.display());
        return;
    }
    let key = primary_metric(doc["objective"].as_str().unwrap_or("accuracy"));
    println!(
        "seed {}: {} {:.4} -> {:.4}, {} flips  -> {}",
        doc["seed"],
        key,
        doc["clean_metrics"][key].as_f64().unwrap_or(f64::NAN),
        doc["attacked_metrics"][key].as_f64().unwrap_or(f64::NAN),
        doc["flips"].as_array().map_or(0, Vec::len),
        path.display()
    );
}

/// Metric shown in reports for each objective.
pub fn primary_metric(objective: &str) -> &'static str {
    match objective {
        "conformal_coverage" | "conformal-coverage" => "coverage",
        "conformal_set_size" | "conformal-size" => "set_size",
        "certified_ratio" | "certified-ratio" => "certified_ratio",
        _ => "accuracy",
    }
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no result files found");
    }
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub dataset: String,
    pub model: String,
    pub objective: String,
    pub epsilon: f64,
    pub seed: u64,
    pub clean: f64,
    pub attacked: f64,
}

pub fn load_rows(inputs: &[PathBuf]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for f in collect_inputs(inputs)? {
        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let doc: Value = serde_json::from_str(&text).with_context(|| format!("malformed result file {}", f.display()))?;
        if doc["mode"] == "targeted" {
            log::warn!("skipping targeted result {}", f.display());
            continue;
        }
        let r: AttackResult =
            serde_json::from_value(doc).with_context(|| format!("malformed result file {}", f.display()))?;
        let key = primary_metric(&r.objective.to_string());
        let text_of = |k: &str| r.config[k].as_str().map(str::to_string).unwrap_or_else(|| "unknown".into());
        rows.push(Row {
            dataset: text_of("dataset"),
            model: text_of("model"),
            objective: r.objective.to_string(),
            epsilon: r.epsilon,
            seed: r.seed,
            clean: r.clean_metrics.get(key).copied().unwrap_or(f64::NAN),
            attacked: r.attacked_metrics.get(key).copied().unwrap_or(f64::NAN),
        });
    }
    if rows.is_empty() {
        bail!("inputs hold no non-targeted attack results");
    }
    Ok(rows)
}

/// Mean clean and attacked metric per objective and epsilon.
pub fn plot_series(rows: &[Row]) -> Value {
    let mut groups: BTreeMap<String, BTreeMap<String, (f64, Vec<&Row>)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(r.objective.clone())
            .or_default()
            .entry(format!("{:020.10}", r.epsilon))
            .or_insert((r.epsilon, Vec::new()))
            .1
            .push(r);
    }
    let series: serde_json::Map<String, Value> = groups
        .into_iter()
        .map(|(objective, points)| {
            let pts: Vec<Value> = points
                .into_values()
                .map(|(eps, rs)| {
                    let k = rs.len() as f64;
                    json!({
                        "epsilon": eps,
                        "runs": rs.len(),
                        "clean": rs.iter().map(|r| r.clean).sum::<f64>() / k,
                        "attacked": rs.iter().map(|r| r.attacked).sum::<f64>() / k,
                    })
                })
                .collect();
            (objective, Value::Array(pts))
        })
        .collect();
    json!({ "series": series })
}

pub fn report(a: ReportArgs) -> Result<()> {
    let rows = load_rows(&a.inputs)?;
    let sink: Box<dyn std::io::Write> = match &a.csv {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    if let Some(p) = &a.plot {
        write_json(p, &plot_series(&rows))?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?.synth;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        };
    }
    set!(blocks);
    set!(block_size);
    set!(p_in);
    set!(p_out);
    set!(signal);
    set!(noise);
    if let Some(d) = a.features {
        cfg.num_features = d;
    }
    let g = generate_sbm(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    g.write_grph(&a.out)?;
    println!(
        "{} nodes, {} edges, {} features, {} classes -> {}",
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        g.num_classes(),
        a.out.display()
    );
    Ok(())
}
