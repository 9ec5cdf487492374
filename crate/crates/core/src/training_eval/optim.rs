use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.003,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One decoupled-weight-decay Adam update at step `t ≥ 1`:
/// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`. Parameters absent from `grads`
/// are treated as having zero gradient.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[(ParamId, &[f64])],
    state: &mut AdamState,
    t: u64,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if t == 0 {
        return Err(Error::OutOfRange("adam step 0".into()));
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("adamw_step", "optimizer state does not match parameters"));
    }
    for &(id, g) in grads {
        if g.len() != params.value(id).numel() {
            return Err(Error::shape(
                "adamw_step",
                format!("gradient of {} has {} values", params.name(id), g.len()),
            ));
        }
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    let decay = 1.0 - lr * hyper.weight_decay;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let g = grads.iter().find(|(p, _)| *p == id).map(|(_, g)| *g);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for (j, p) in params.value_mut(id).data.iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *p = *p * decay - lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π t / max_epochs))` for `0 ≤ t ≤ max_epochs`.
pub fn cosine_lr(t: usize, lr0: f64, lr_min: f64, max_epochs: usize) -> Result<f64> {
    if t > max_epochs || max_epochs == 0 {
        return Err(Error::OutOfRange(format!("epoch {t} of {max_epochs}")));
    }
    let c = (std::f64::consts::PI * t as f64 / max_epochs as f64).cos();
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + c))
}

/// Patience-based stopping on validation accuracy. Only a strict
/// improvement resets patience, so the best epoch is the first one to reach
/// the best accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Records the accuracy of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, acc: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| acc > b);
        if improved {
            self.best = Some(acc);
            self.best_epoch = epoch;
            self.since = 0;
        } else {
            self.since += 1;
        }
        StopDecision {
            improved,
            stop: self.since >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn cosine_points() {
        assert_eq!(cosine_lr(0, 1e-4, 0.0, 300).unwrap(), 1e-4);
        assert_eq!(cosine_lr(300, 1e-4, 0.0, 300).unwrap(), 0.0);
        assert_eq!(cosine_lr(150, 1e-4, 0.0, 300).unwrap(), 5e-5);
        assert!(cosine_lr(301, 1e-4, 0.0, 300).is_err());
    }

    #[test]
    fn zero_grad_is_pure_decay() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = p.value(id).data.clone();
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        adamw_step(&mut p, &[(id, &[0.0; 3])], &mut s, 1, lr, &AdamHyper::default()).unwrap();
        for (a, b) in p.value(id).data.iter().zip(&before) {
            assert_eq!(*a, b * (1.0 - lr * 0.003));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &[(id, &[3.0, -0.2])], &mut s, 1, 0.01, &AdamHyper::default()).unwrap();
        // m̂/√v̂ = sign(g), up to ε.
        assert!((p.value(id).data[0] + 0.01).abs() < 1e-9);
        assert!((p.value(id).data[1] - 0.01).abs() < 1e-9);
        assert!(adamw_step(&mut p, &[(id, &[1.0])], &mut s, 2, 0.01, &AdamHyper::default()).is_err());
    }

    #[test]
    fn patience_one_stops_after_two_flat_epochs() {
        let mut e = EarlyStopper::new(1);
        assert_eq!(e.observe(1, 0.5), StopDecision { improved: true, stop: false });
        assert_eq!(e.observe(2, 0.5), StopDecision { improved: false, stop: true });
        assert_eq!(e.best_epoch(), 1);
    }
}
