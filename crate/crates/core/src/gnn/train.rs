//! Inductive full-batch training with Adam and early stopping.
//!
//! The model is fit on the subgraph induced by the training nodes and
//! selected on validation accuracy over the subgraph induced by
//! train + validation nodes. Test nodes and their edges are never seen.

use serde::{Deserialize, Serialize};

use super::dense::argmax;
use super::model::{dropout_mask, feature_matrix};
use super::{forward, gcn_normalize, loss_and_grad, Matrix, ModelKind, ModelWeights, HIDDEN};
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults per architecture: dropout 0.5 for the GCN, 0.2 for the MLP.
    pub fn for_model(model: ModelKind, seed: u64) -> Self {
        TrainConfig {
            model,
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 300,
            patience: 50,
            dropout: match model {
                ModelKind::Gcn => 0.5,
                ModelKind::Mlp => 0.2,
            },
            hidden: HIDDEN,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden == 0 || self.max_epochs == 0 {
            return Err(Error::config("hidden width and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(skip)]
    pub weights: Option<ModelWeights<f32>>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl TrainReport {
    pub fn weights(&self) -> &ModelWeights<f32> {
        self.weights.as_ref().expect("report carries weights")
    }
}

/// Fraction of `nodes` whose argmax prediction equals the label.
pub fn accuracy_on(w: &ModelWeights<f32>, g: &Graph, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let z = forward(w, g, None)?;
    let labels = g.labels();
    let hits = nodes.iter().filter(|&&u| argmax(z.row(u)) == labels[u]).count();
    Ok(hits as f64 / nodes.len() as f64)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]], lr: f32, wd: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (x, &gx) in p.iter_mut().zip(g.iter()) {
                let gx = gx + wd * *x;
                self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * gx;
                self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * gx * gx;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *x -= lr * mhat / (vhat.sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Trains a model on `g` and returns the weights of the epoch with the best
/// validation accuracy (earliest on ties). Deterministic given `cfg.seed`.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let train_nodes = g.nodes_in(Split::Train);
    let val_nodes = g.nodes_in(Split::Val);
    if train_nodes.is_empty() || val_nodes.is_empty() {
        return Err(Error::config("training and validation masks must be nonempty"));
    }
    let g_train = g.induced_subgraph(&train_nodes)?;
    let tv_nodes = g.nodes_in_any(&[Split::Train, Split::Val]);
    let g_val = g.induced_subgraph(&tv_nodes)?;
    let val_local: Vec<usize> = (0..tv_nodes.len())
        .filter(|&i| g_val.splits()[i] == Split::Val)
        .collect();

    let mut init_rng = rng::substream(cfg.seed, "train-init", 0);
    let mut drop_rng = rng::substream(cfg.seed, "train-dropout", 0);
    let (d, c) = (g.num_features(), g.num_classes());
    let mut w = ModelWeights::<f32>::glorot(cfg.model, d, cfg.hidden, c, &mut init_rng);

    let x: Matrix<f32> = feature_matrix(&g_train);
    let adj = (cfg.model == ModelKind::Gcn).then(|| gcn_normalize::<f32>(&g_train));
    let all: Vec<usize> = (0..g_train.num_nodes()).collect();
    let n_params = d * cfg.hidden + cfg.hidden + cfg.hidden * c + c;
    let mut adam = Adam::new(n_params);

    let mut best = (f64::NEG_INFINITY, 0usize, w.clone());
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mask = (cfg.dropout > 0.0)
            .then(|| dropout_mask::<f32>(g_train.num_nodes(), cfg.hidden, cfg.dropout, &mut drop_rng));
        let (_, grads) = loss_and_grad(&w, adj.as_ref(), &x, g_train.labels(), &all, mask.as_deref())?;
        adam.step(
            &mut [w.w0.as_mut_slice(), &mut w.b0, w.w1.as_mut_slice(), &mut w.b1],
            &[grads.w0.as_slice(), &grads.b0, grads.w1.as_slice(), &grads.b1],
            cfg.lr as f32,
            cfg.weight_decay as f32,
        );
        let val_acc = accuracy_on(&w, &g_val, &val_local)?;
        if val_acc > best.0 {
            best = (val_acc, epoch, w.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (val_acc, best_epoch, weights) = best;
    if !weights.is_finite() {
        return Err(Error::config("training diverged to non-finite weights"));
    }
    let train_acc = accuracy_on(&weights, &g_train, &all)?;
    let test_acc = accuracy_on(&weights, g, &g.nodes_in(Split::Test))?;
    log::info!(
        "trained {} for {epochs_run} epochs: best epoch {best_epoch}, train {train_acc:.4}, val {val_acc:.4}, test {test_acc:.4}",
        cfg.model
    );
    Ok(TrainReport { weights: Some(weights), best_epoch, epochs_run, train_acc, val_acc, test_acc })
}
