//! Loss, parameter and input gradients, and the Adam training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Classifier, Logits, Model, ModelError};
use crate::rng::substream;

/// Pixel-scale step for input gradients.
pub const INPUT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged to {loss} at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−log softmax(logits)[label]`; `label` must index `logits`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Softmax cross-entropy in nats.
pub fn loss(logits: &Logits, label: usize) -> Result<f64, GradError> {
    let classes = logits.values().len();
    if label >= classes {
        return Err(GradError::BadLabel { label, classes });
    }
    Ok(cross_entropy(logits.values(), label))
}

/// Batch-averaged parameter gradient of the loss.
pub fn param_grad(model: &Model, batch: &[(Vec<f64>, usize)]) -> Result<Vec<f64>, GradError> {
    if batch.is_empty() {
        return Err(GradError::EmptyBatch);
    }
    Ok(model.param_grad(batch)?)
}

/// `∂L/∂pixel` of the undefended model by central differences with
/// step [`INPUT_FD_STEP`].
pub fn input_grad<C: Classifier + ?Sized>(model: &C, image: &[f64], label: usize) -> Vec<f64> {
    model.fd_input_grad(image, label, INPUT_FD_STEP)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Something the training loop can optimize.
pub trait Trainable: Sync {
    type Input: Sync;

    fn n_params(&self) -> usize;

    /// Frozen parameters keep their initial value.
    fn is_trainable(&self, _index: usize) -> bool {
        true
    }

    fn logits(&self, theta: &[f64], x: &Self::Input) -> Vec<f64>;

    /// Loss and its gradient for one sample.
    fn loss_grad(&self, theta: &[f64], x: &Self::Input, label: usize) -> (f64, Vec<f64>);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 15,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            train_size: 500,
            test_size: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GradError> {
        let bad = |m: &str| Err(GradError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if self.batch_size == 0 || self.train_size == 0 || self.test_size == 0 {
            return bad("batch and subset sizes must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam needs betas in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in theta.iter_mut().zip(grad).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub curve: Vec<EpochStats>,
}

pub struct LabeledSet<'a, I> {
    pub inputs: &'a [I],
    pub labels: &'a [usize],
}

impl<'a, I> LabeledSet<'a, I> {
    pub fn new(inputs: &'a [I], labels: &'a [usize]) -> Self {
        assert_eq!(inputs.len(), labels.len(), "one label per input");
        Self { inputs, labels }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy over a set.
pub fn evaluate<T: Trainable>(model: &T, theta: &[f64], set: &LabeledSet<'_, T::Input>) -> (f64, f64) {
    if set.inputs.is_empty() {
        return (0.0, 0.0);
    }
    let rows: Vec<(f64, bool)> = set
        .inputs
        .par_iter()
        .zip(set.labels.par_iter())
        .map(|(x, &y)| {
            let logits = model.logits(theta, x);
            (cross_entropy(&logits, y), argmax(&logits) == y)
        })
        .collect();
    let n = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = rows.iter().filter(|r| r.1).count() as f64 / n;
    (loss, acc)
}

/// Minibatch Adam. Batches are drawn from the `train` substream of
/// `cfg.seed`; per-sample gradients run in parallel and are reduced in
/// batch order, so reruns are bit-identical. The recorded epoch loss is
/// the full training-set loss after the epoch.
pub fn train<T: Trainable>(
    model: &T,
    init: Vec<f64>,
    train_set: &LabeledSet<'_, T::Input>,
    test_set: &LabeledSet<'_, T::Input>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, GradError> {
    cfg.validate()?;
    if train_set.inputs.is_empty() {
        return Err(GradError::EmptyBatch);
    }
    let n_params = model.n_params();
    if init.len() != n_params {
        return Err(ModelError::ParamLength {
            expected: n_params,
            got: init.len(),
        }
        .into());
    }
    let mask: Vec<bool> = (0..n_params).map(|i| model.is_trainable(i)).collect();
    let mut theta = init;
    let mut adam = Adam::new(n_params, cfg);
    let mut rng = substream(cfg.seed, "train");
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| model.loss_grad(&theta, &train_set.inputs[i], train_set.labels[i]))
                .collect();
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for (l, g) in &rows {
                batch_loss += l;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / rows.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(GradError::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            for (g, &m) in grad.iter_mut().zip(&mask) {
                *g = if m { *g * scale } else { 0.0 };
            }
            adam.step(&mut theta, &grad);
        }
        let (loss, train_acc) = evaluate(model, &theta, train_set);
        if !loss.is_finite() {
            return Err(GradError::Diverged {
                epoch,
                step: order.len().div_ceil(cfg.batch_size),
                loss,
            });
        }
        let test_acc = evaluate(model, &theta, test_set).1;
        log::info!("epoch {epoch}: loss {loss:.4} train {train_acc:.3} test {test_acc:.3}");
        curve.push(EpochStats {
            epoch,
            loss,
            train_acc,
            test_acc,
        });
    }
    Ok(TrainOutcome { theta, curve })
}

pub const CURVE_HEADER: [&str; 4] = ["epoch", "loss", "train_acc", "test_acc"];

pub fn write_curve_csv<W: Write>(curve: &[EpochStats], out: W) -> Result<(), GradError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER).map_err(csv_io)?;
    for s in curve {
        w.write_record([
            s.epoch.to_string(),
            s.loss.to_string(),
            s.train_acc.to_string(),
            s.test_acc.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_curve_csv(curve: &[EpochStats], path: &Path) -> Result<(), GradError> {
    write_curve_csv(curve, std::fs::File::create(path)?)
}

fn csv_io(e: csv::Error) -> GradError {
    GradError::Io(std::io::Error::other(e))
}

/// Two-feature logistic model with logits `(0, w·x + b)`.
pub struct LogisticToy;

impl Trainable for LogisticToy {
    type Input = [f64; 2];

    fn n_params(&self) -> usize {
        3
    }

    fn logits(&self, theta: &[f64], x: &[f64; 2]) -> Vec<f64> {
        vec![0.0, theta[0] * x[0] + theta[1] * x[1] + theta[2]]
    }

    fn loss_grad(&self, theta: &[f64], x: &[f64; 2], label: usize) -> (f64, Vec<f64>) {
        let logits = self.logits(theta, x);
        let p = softmax(&logits)[1];
        let d = p - if label == 1 { 1.0 } else { 0.0 };
        (cross_entropy(&logits, label), vec![d * x[0], d * x[1], d])
    }
}
