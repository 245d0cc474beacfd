//! Optimizers and the epoch loop.

use std::fmt;
use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{AugmentSpec, DatasetManifest, InMemoryDataset, Normalization, Preprocess, Split};
use crate::error::{Error, Result};
use crate::models::{ForwardOptions, ModelGraph, ModelKind};
use crate::ops::{self, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd { momentum } => write!(f, "sgd(momentum={momentum})"),
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                write!(f, "adam(beta1={beta1}, beta2={beta2}, eps={epsilon})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentSpec>,
    /// Draw one augmentation per sample up front instead of once per epoch.
    pub augment_once: bool,
}

impl TrainConfig {
    /// Adam, batch 16, 10 epochs; learning rate 1e-3 (1e-4 for DenseNet).
    pub fn for_model(model: ModelKind) -> Self {
        TrainConfig {
            model,
            epochs: 10,
            batch_size: 16,
            learning_rate: if model == ModelKind::DenseNet { 1e-4 } else { 1e-3 },
            optimizer: OptimizerKind::adam(),
            seed: 0,
            augment: Some(AugmentSpec::default()),
            augment_once: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// `v ← momentum·v + g; w ← w − lr·v`.
pub fn sgd_step(w: &mut [f32], g: &[f32], v: &mut [f32], lr: f64, momentum: f64) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        let nv = momentum * *v as f64 + g as f64;
        *v = nv as f32;
        *w = (*w as f64 - lr * nv) as f32;
    }
}

/// Bias-corrected Adam update; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    w: &mut [f32],
    g: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..w.len() {
        let g = g[i] as f64;
        let nm = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let nv = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = nm as f32;
        v[i] = nv as f32;
        let update = lr * (nm / c1) / ((nv / c2).sqrt() + epsilon);
        w[i] = (w[i] as f64 - update) as f32;
    }
}

/// Optimizer state for every trainable parameter of one model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &ModelGraph) -> Self {
        let zeros = |on: bool| -> Vec<Option<Tensor>> {
            model
                .params()
                .iter()
                .map(|p| (on && p.trainable).then(|| p.value.zeros_like()))
                .collect()
        };
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        Optimizer {
            kind,
            lr,
            step: 0,
            first: zeros(true),
            second: zeros(adam),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, model: &mut ModelGraph) {
        self.step += 1;
        let t = self.step;
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.first[i].as_mut().expect("state for trainable parameter");
            let g = p.grad.data();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    sgd_step(p.value.data_mut(), g, m.data_mut(), self.lr, momentum);
                }
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let v = self.second[i].as_mut().expect("adam second moment");
                    let g = g.to_vec();
                    adam_step(
                        p.value.data_mut(),
                        &g,
                        m.data_mut(),
                        v.data_mut(),
                        t,
                        self.lr,
                        beta1,
                        beta2,
                        epsilon,
                    );
                }
            }
        }
        model.params_mut().zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc`, 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            s += &format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::persistence::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Consecutive index chunks of `batch`. A trailing chunk of one sample is
/// folded into its predecessor so train-mode batch norm always sees N ≥ 2.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// One forward/backward/update on a batch. Returns the mean loss and the
/// number of correct train-mode predictions.
pub fn train_step(
    model: &mut ModelGraph,
    optimizer: &mut Optimizer,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let pass = model.forward_on(
        &mut tape,
        x,
        Mode::Train,
        ForwardOptions {
            track_params: true,
            ..ForwardOptions::default()
        },
    )?;
    let loss = tape.cross_entropy(pass.logits, labels)?;
    let loss_value = tape.value(loss).item()? as f64;
    let correct = count_correct(tape.value(pass.logits), labels);
    if !loss_value.is_finite() {
        return Ok((loss_value, correct));
    }
    let grads = tape.backward(loss)?;
    model.accumulate_grads(&pass, &grads);
    model.commit_running_stats(pass.running_updates());
    optimizer.step(model);
    Ok((loss_value, correct))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// Softmax probability of class 1 per sample.
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Eval-mode pass over a dataset in fixed order.
pub fn evaluate(model: &ModelGraph, data: &InMemoryDataset, norm: &Normalization, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, labels) = data.batch(chunk, norm, None)?;
        let logits = model.forward(&x, Mode::Eval)?;
        let (l, probs) = ops::cross_entropy(&logits, &labels)?;
        loss += l as f64 * chunk.len() as f64;
        let k = logits.shape()[1];
        for (row, p) in logits.data().chunks(k).zip(probs.data().chunks(k)) {
            predictions.push(argmax(row));
            scores.push(p[1.min(k - 1)] as f64);
        }
    }
    let labels = data.labels().to_vec();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        scores,
        predictions,
        labels,
    })
}

pub fn preprocess_for(model: &ModelGraph) -> Preprocess {
    let s = model.input_spec();
    Preprocess::new(s.channels, s.height, s.width)
}

/// Loss and accuracy of `model` on one manifest split.
pub fn evaluate_accuracy(model: &ModelGraph, manifest: &DatasetManifest, split: Split) -> Result<(f64, f64)> {
    let pre = preprocess_for(model);
    let data = InMemoryDataset::from_manifest(manifest, split, &pre)?;
    let e = evaluate(model, &data, &pre.norm, 32)?;
    Ok((e.loss, e.accuracy))
}

/// Runs the epoch loop. `observer` sees each record as it is appended and
/// may stop training early.
pub fn fit_with_observer(
    model: &mut ModelGraph,
    train: &InMemoryDataset,
    val: &InMemoryDataset,
    norm: &Normalization,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let offline;
    let (train, online) = match (&config.augment, config.augment_once) {
        (Some(spec), true) => {
            offline = train.augmented_once(spec, config.seed)?;
            (&offline, None)
        }
        (spec, _) => (train, spec.as_ref()),
    };
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, range) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let idx = &order[range];
            let aug = online.map(|s| (s, config.seed, epoch));
            let (x, labels) = train.batch(idx, norm, aug)?;
            let (loss, c) = train_step(model, &mut optimizer, &x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            log::debug!("epoch {epoch} batch {} loss {loss:.6}", b + 1);
            loss_sum += loss * idx.len() as f64;
            correct += c;
        }
        let v = evaluate(model, val, norm, config.batch_size.max(32))?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        history.records.push(record);
        if observer(&record).is_break() {
            break;
        }
    }
    Ok(history)
}

pub fn fit(
    model: &mut ModelGraph,
    train: &InMemoryDataset,
    val: &InMemoryDataset,
    norm: &Normalization,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    fit_with_observer(model, train, val, norm, config, &mut |_| ControlFlow::Continue(()))
}

/// Loads the train and val splits of `manifest` at the model's input size
/// and trains on them.
pub fn train(model: &mut ModelGraph, manifest: &DatasetManifest, config: &TrainConfig) -> Result<TrainHistory> {
    let pre = preprocess_for(model);
    let train_set = InMemoryDataset::from_manifest(manifest, Split::Train, &pre)?;
    let val_set = InMemoryDataset::from_manifest(manifest, Split::Val, &pre)?;
    if val_set.is_empty() {
        return Err(Error::Dataset("manifest has no validation rows".into()));
    }
    fit(model, &train_set, &val_set, &pre.norm, config)
}
