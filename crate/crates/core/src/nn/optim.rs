use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainHyper;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update every trainable tensor in place from its attached gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::shape("optimizer state does not match parameter store"));
        }
        for e in store.entries().iter().filter(|e| e.trainable) {
            if e.tensor.grad().is_none() {
                return Err(Error::MissingGradient(e.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            if !e.trainable {
                continue;
            }
            let g = e.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, gi), mi), vi) in e.tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Multiply the learning rate by `factor` after `patience` epochs without
/// an improvement larger than `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReduceLrOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
    best: f64,
    wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(factor: f64, patience: usize, min_delta: f64, min_lr: f64) -> Self {
        Self { factor, patience, min_delta, min_lr, best: f64::INFINITY, wait: 0 }
    }

    /// Returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best - self.min_delta {
            self.best = metric;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, wait: 0 }
    }

    /// Returns true when training should stop.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best - self.min_delta {
            self.best = metric;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    /// Running minimum of the validation curve.
    pub fn best_val_curve(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.val_loss
            .iter()
            .map(|v| {
                best = best.min(*v);
                best
            })
            .collect()
    }
}

/// Mini-batch Adam loop with plateau decay, early stopping and restoration
/// of the best validation weights.
///
/// `step` computes the loss of one batch and attaches gradients to `store`;
/// `validate` returns the validation loss in evaluation mode.
pub fn fit<S, V>(store: &mut ParamStore, hyper: &TrainHyper, n_train: usize, mut step: S, mut validate: V) -> Result<TrainReport>
where
    S: FnMut(&mut ParamStore, &[usize], &mut ChaCha8Rng) -> Result<f64>,
    V: FnMut(&mut ParamStore) -> Result<f64>,
{
    if n_train == 0 {
        return Err(Error::Empty("training set"));
    }
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam = Adam::new(hyper.learning_rate);
    let mut plateau = ReduceLrOnPlateau::new(
        hyper.plateau_factor,
        hyper.plateau_patience,
        hyper.early_stop_min_delta,
        hyper.min_learning_rate,
    );
    let mut stopper = EarlyStopping::new(hyper.early_stop_patience, hyper.early_stop_min_delta);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut report = TrainReport { best_val: f64::INFINITY, ..Default::default() };
    let mut best = store.snapshot();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            store.zero_grad();
            let loss = step(store, batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("batch loss {loss}") });
            }
            adam.step(store)?;
            total += loss * batch.len() as f64;
        }
        if !store.all_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite parameters".into() });
        }
        let train = total / n_train as f64;
        let val = validate(store)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("validation loss {val}") });
        }
        log::debug!("epoch {epoch}: train {train:.6} val {val:.6} lr {:.2e}", adam.lr);
        report.train_loss.push(train);
        report.val_loss.push(val);
        report.learning_rate.push(adam.lr);
        if val < report.best_val {
            report.best_val = val;
            report.best_epoch = epoch;
            best = store.snapshot();
        }
        adam.lr = plateau.observe(val, adam.lr);
        if stopper.observe(val) {
            report.stopped_early = true;
            break;
        }
    }
    store.restore(&best)?;
    store.zero_grad();
    Ok(report)
}
