use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::{adamw_step, cosine_lr, AdamState, EarlyStopper};
use super::splits::validation_split;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::featurize::Sample4D;
use crate::matching::{argmax_rows, logits_graph, similarity_logits, Logits};
use crate::model::{HeadKind, Model, Pass};
use crate::rng;
use crate::text_bank::TextBank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    /// `None` when the validation split is empty; early stopping then
    /// monitors `train_acc`.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best monitored epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_acc: f64,
    pub stopped_early: bool,
    pub n_fit: usize,
    pub n_val: usize,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Accuracy over folds: mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Metrics {
    pub fn from_folds(per_fold: Vec<f64>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::Empty("fold accuracies"));
        }
        if let Some(&a) = per_fold.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::OutOfRange(format!("accuracy {a}")));
        }
        let n = per_fold.len() as f64;
        let mean = per_fold.iter().sum::<f64>() / n;
        let std = if per_fold.len() < 2 {
            0.0
        } else {
            (per_fold.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { per_fold, mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub acc: f64,
    pub predictions: Vec<usize>,
}

/// Class scores for a batch of head outputs: similarity logits against the
/// bank for a matching head, the outputs themselves for a linear head.
fn class_scores(model: &Model, rows: Vec<Vec<f64>>, bank: Option<&TextBank>) -> Result<Logits> {
    match model.cfg.head {
        HeadKind::Matching => {
            let bank = bank.ok_or(Error::TextBank("a matching head needs a text bank".into()))?;
            let id = model.params.id("logit_scale").expect("matching head has a logit scale");
            let tau = (-model.params.value(id).item()).exp();
            similarity_logits(&rows, bank, tau)
        }
        HeadKind::Linear { classes } => {
            let n = rows.len();
            Logits::new(n, classes, rows.into_iter().flatten().collect())
        }
    }
}

/// Eval-mode accuracy of `model` on `samples`.
pub fn evaluate(model: &Model, bank: Option<&TextBank>, samples: &[&Sample4D], batch: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let rows = model.predict_rows(samples, batch)?;
    let logits = class_scores(model, rows, bank)?;
    let predictions = argmax_rows(&logits);
    let correct = predictions.iter().zip(samples).filter(|(p, s)| **p == s.label_index).count();
    Ok(Evaluation {
        correct,
        total: samples.len(),
        acc: correct as f64 / samples.len() as f64,
        predictions,
    })
}

/// Differentiable class logits for a training batch.
fn batch_logits(model: &Model, g: &mut Graph, batch: &[&Sample4D], bank: Option<&TextBank>, pass: &mut Pass) -> Result<Var> {
    let (de, psd) = model.inputs(g, batch)?;
    let out = model.forward(g, de, psd, pass)?;
    match model.cfg.head {
        HeadKind::Matching => {
            let bank = bank.ok_or(Error::TextBank("a matching head needs a text bank".into()))?;
            let scale = model.logit_scale(g).expect("matching head has a logit scale");
            logits_graph(g, out, bank, scale)
        }
        HeadKind::Linear { .. } => Ok(out),
    }
}

/// Trains a fresh model on `samples[train_idx]`. A seeded
/// `val_fraction` share of those indices is held out for early stopping;
/// the parameters of the best validation epoch are returned.
pub fn train(
    samples: &[Sample4D],
    train_idx: &[usize],
    bank: Option<&TextBank>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let (HeadKind::Matching, Some(b)) = (&cfg.model.head, bank) {
        if b.dim() != cfg.model.proj_dim {
            return Err(Error::shape(
                "train",
                format!("bank dim {} vs proj_dim {}", b.dim(), cfg.model.proj_dim),
            ));
        }
    }
    let mut model = Model::new(cfg.model.clone(), rng::derive_seed(seed, &[1]))?;
    let (fit, val) = validation_split(train_idx, cfg.val_fraction, rng::derive_seed(seed, &[2]));
    let val_refs: Vec<&Sample4D> = val.iter().map(|&i| &samples[i]).collect();
    let mut state = AdamState::new(&model.params);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let hyper = cfg.adam();
    let mut best: ParamStore = model.params.clone();
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut stopped_early = false;
    let mut order = fit.clone();
    for epoch in 1..=cfg.max_epochs {
        let lr = cosine_lr(epoch - 1, cfg.lr0, cfg.lr_min, cfg.max_epochs)?;
        order.shuffle(&mut rng::rng(seed, &[3, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample4D> = chunk.iter().map(|&i| &samples[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|s| s.label_index).collect();
            let mut g = Graph::new();
            let mut pass = Pass::train(rng::rng(seed, &[4, epoch as u64, b as u64]));
            let logits = batch_logits(&model, &mut g, &batch, bank, &mut pass)?;
            let lv = g.value(logits);
            let k = lv.last_dim();
            let pred = argmax_rows(&Logits::new(batch.len(), k, lv.data.clone())?);
            correct += pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
            let loss = g.cross_entropy(logits, &targets)?;
            loss_sum += g.value(loss).item() * batch.len() as f64;
            g.backward(loss)?;
            step += 1;
            adamw_step(&mut model.params, &g.param_grads(), &mut state, step, lr, &hyper)?;
        }
        let train_acc = correct as f64 / fit.len().max(1) as f64;
        let val_acc = if val_refs.is_empty() {
            None
        } else {
            Some(evaluate(&model, bank, &val_refs, cfg.eval_batch)?.acc)
        };
        history.push(EpochRecord {
            epoch,
            lr,
            loss: loss_sum / fit.len().max(1) as f64,
            train_acc,
            val_acc,
        });
        let decision = stopper.observe(epoch, val_acc.unwrap_or(train_acc));
        if decision.improved {
            best = model.params.clone();
        }
        if decision.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch(),
        best_acc: stopper.best().unwrap_or(0.0),
        stopped_early,
        n_fit: fit.len(),
        n_val: val.len(),
    })
}
