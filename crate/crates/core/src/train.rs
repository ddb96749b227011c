//! Training loop with class-balanced batches, early stopping and best-epoch
//! restore.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregate::{evaluate_labels, EvalReport};
use crate::data::{Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::LossSpec;
use crate::nn::{argmax, softmax, LayerSpec, Matrix, Mode, Network, DEFAULT_DROPOUT};
use crate::optim::{OptimSpec, OptimState};
use crate::rng::derive_seed;
use crate::sampling::ProportionalSampler;

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub monitor: Monitor,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            patience: 50,
            min_delta: 0.02,
            monitor: Monitor::ValLoss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub optim: OptimSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: EarlyStopping,
    /// Layers with index below this value are never updated.
    #[serde(default)]
    pub freeze_below_layer: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub seed: u64,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

impl TrainConfig {
    /// Binary detection: Adam (lr 1e-3, wd 1e-3), batch 16, plain CE.
    pub fn detection() -> Self {
        TrainConfig {
            loss: LossSpec::plain(),
            optim: OptimSpec::adam(1e-3, 1e-3),
            batch_size: 16,
            max_epochs: 500,
            early_stop: EarlyStopping::default(),
            freeze_below_layer: None,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    /// Four-class subtyping: SGD (lr 1e-3, wd 1e-3, momentum 0.9), batch 64,
    /// smoothed CE with ε = 0.2.
    pub fn mutation() -> Self {
        TrainConfig {
            loss: LossSpec::smooth(0.2),
            optim: OptimSpec::sgd(1e-3, 1e-3, 0.9),
            batch_size: 64,
            max_epochs: 500,
            early_stop: EarlyStopping::default(),
            freeze_below_layer: None,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "detection" => Some(Self::detection()),
            "mutation" => Some(Self::mutation()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.early_stop.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if !(self.early_stop.min_delta >= 0.0) {
            return Err(Error::config("min_delta", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochRecord {
    pub fn monitored(&self, monitor: Monitor) -> f64 {
        match monitor {
            Monitor::ValLoss => self.val_loss,
            Monitor::ValAccuracy => self.val_acc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// `epoch,train_loss,train_acc,val_loss,val_acc`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
        s
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    /// One-line JSON: best epoch, stop reason and the metrics at the best
    /// and last epochs.
    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "epochs_run": self.epochs.len() - 1,
            "best": self.best(),
            "last": self.epochs.last(),
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Tracks a monitored metric for early stopping and checkpoint restore.
///
/// An epoch is a significant improvement only when it beats the running best
/// (the best value seen so far) by strictly more than `min_delta`; patience
/// counts epochs since the last significant improvement. Smaller gains still
/// move the running best, and the running-best epoch is the one restored.
#[derive(Debug, Clone)]
pub struct ImprovementTracker {
    higher_is_better: bool,
    min_delta: f64,
    running_best: Option<f64>,
    best_epoch: usize,
    significant_epoch: usize,
    seen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Improvement {
    /// Strictly better than every earlier epoch.
    pub new_best: bool,
    /// Better than the running best by more than `min_delta`.
    pub significant: bool,
}

impl ImprovementTracker {
    pub fn new(monitor: Monitor, min_delta: f64) -> Self {
        ImprovementTracker {
            higher_is_better: monitor == Monitor::ValAccuracy,
            min_delta,
            running_best: None,
            best_epoch: 0,
            significant_epoch: 0,
            seen: 0,
        }
    }

    /// Records the next epoch's value.
    pub fn update(&mut self, value: f64) -> Improvement {
        let epoch = self.seen;
        self.seen += 1;
        let Some(best) = self.running_best else {
            self.running_best = Some(value);
            self.best_epoch = epoch;
            self.significant_epoch = epoch;
            return Improvement {
                new_best: true,
                significant: true,
            };
        };
        let gain = if self.higher_is_better { value - best } else { best - value };
        let new_best = gain > 0.0;
        let significant = gain > self.min_delta;
        if new_best {
            self.running_best = Some(value);
            self.best_epoch = epoch;
        }
        if significant {
            self.significant_epoch = epoch;
        }
        Improvement { new_best, significant }
    }

    /// Epoch holding the best monitored value so far (earliest on ties).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn last_significant_epoch(&self) -> usize {
        self.significant_epoch
    }

    pub fn epochs_since_significant(&self) -> usize {
        self.seen.saturating_sub(1) - self.significant_epoch
    }
}

/// Decides whether training should stop after the last recorded epoch.
pub fn early_stop_check(history: &[EpochRecord], policy: &EarlyStopping) -> StopDecision {
    let values: Vec<f64> = history.iter().map(|r| r.monitored(policy.monitor)).collect();
    early_stop_check_values(&values, policy)
}

pub fn early_stop_check_values(values: &[f64], policy: &EarlyStopping) -> StopDecision {
    let mut tracker = ImprovementTracker::new(policy.monitor, policy.min_delta);
    for &v in values {
        tracker.update(v);
    }
    if !values.is_empty() && tracker.epochs_since_significant() >= policy.patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Features of the given cells stacked as a matrix.
pub fn gather_features(ds: &Dataset, positions: &[usize]) -> Matrix {
    let d = ds.dim();
    let mut data = Vec::with_capacity(positions.len() * d);
    for &i in positions {
        data.extend_from_slice(&ds.cells()[i].features);
    }
    Matrix::from_vec(positions.len(), d, data).expect("rows have dataset dimension")
}

pub fn feature_matrix(ds: &Dataset) -> Matrix {
    let d = ds.dim();
    let mut data = Vec::with_capacity(ds.len() * d);
    for c in ds.cells() {
        data.extend_from_slice(&c.features);
    }
    Matrix::from_vec(ds.len(), d, data).expect("rows have dataset dimension")
}

fn check_compat(net: &Network, ds: &Dataset) -> Result<()> {
    if net.input_dim() != ds.dim() {
        return Err(Error::Shape(format!(
            "network expects {} features, dataset has D={}",
            net.input_dim(),
            ds.dim()
        )));
    }
    if net.output_dim() != ds.num_classes() {
        return Err(Error::Shape(format!(
            "network has {} outputs, dataset has K={}",
            net.output_dim(),
            ds.num_classes()
        )));
    }
    Ok(())
}

/// Mean loss and accuracy of an eval-mode pass over `ds`.
pub fn loss_and_accuracy(net: &Network, ds: &Dataset, loss: &LossSpec, exec: Execution) -> Result<(f64, f64)> {
    check_compat(net, ds)?;
    if ds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let logits = net.logits_with(&feature_matrix(ds), exec)?;
    let labels = ds.labels();
    let per = loss.per_sample(&logits, &labels)?;
    let correct = logits
        .row_iter()
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let n = ds.len() as f64;
    Ok((per.iter().sum::<f64>() / n, correct as f64 / n))
}

/// Trains a network on `train`, monitoring `val`, and returns the parameters
/// of the best epoch together with the full history. Epoch 0 is an
/// evaluation of the freshly initialised network.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    layers: &[LayerSpec],
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    train_with(train_set, val_set, layers, config, Execution::default())
}

pub fn train_with(
    train_set: &Dataset,
    val_set: &Dataset,
    layers: &[LayerSpec],
    config: &TrainConfig,
    exec: Execution,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    if train_set.label_space() != val_set.label_space() || train_set.dim() != val_set.dim() {
        return Err(Error::LabelSpaceMismatch(format!(
            "train is {}/D={}, validation is {}/D={}",
            train_set.label_space().keyword(),
            train_set.dim(),
            val_set.label_space().keyword(),
            val_set.dim()
        )));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let mut net = Network::init(layers, derive_seed(config.seed, &[INIT_STREAM]))?
        .with_dropout(config.dropout)?;
    check_compat(&net, train_set)?;
    if let Some(f) = config.freeze_below_layer {
        if f > net.layers.len() {
            return Err(Error::config(
                "freeze_below_layer",
                format!("{f} exceeds the {} layers", net.layers.len()),
            ));
        }
    }
    let sampler = ProportionalSampler::new(train_set, config.batch_size, derive_seed(config.seed, &[BATCH_STREAM]))?;
    let mut optim = OptimState::new(config.optim, &net)?;
    let policy = config.early_stop;
    let mut tracker = ImprovementTracker::new(policy.monitor, policy.min_delta);

    let evaluate = |net: &Network, epoch: usize| -> Result<EpochRecord> {
        let (train_loss, train_acc) = loss_and_accuracy(net, train_set, &config.loss, exec)?;
        let (val_loss, val_acc) = loss_and_accuracy(net, val_set, &config.loss, exec)?;
        Ok(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        })
    };

    let first = evaluate(&net, 0)?;
    tracker.update(first.monitored(policy.monitor));
    let mut epochs = vec![first];
    let mut best = net.clone();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        for (b, batch) in sampler.epoch(epoch as u64).enumerate() {
            let x = gather_features(train_set, &batch);
            let y: Vec<usize> = batch.iter().map(|&i| train_set.cells()[i].label).collect();
            let seed = derive_seed(config.seed, &[DROPOUT_STREAM, epoch as u64, b as u64]);
            let (logits, trace) = net.forward(&x, Mode::Train, seed)?;
            let out = config.loss.evaluate(&logits, &y)?;
            let grads = net.backward(&trace, &out.grad)?;
            optim.step(&mut net, &grads, config.freeze_below_layer)?;
        }
        let record = evaluate(&net, epoch)?;
        let value = record.monitored(policy.monitor);
        epochs.push(record);
        if !value.is_finite() {
            return Err(Error::NumericInput(format!("monitored metric diverged at epoch {epoch}")));
        }
        if tracker.update(value).new_best {
            best = net.clone();
        }
        if tracker.epochs_since_significant() >= policy.patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch: tracker.best_epoch(),
            stop_reason,
        },
    ))
}

/// Per-cell eval-mode predictions over a dataset.
#[derive(Debug, Clone)]
pub struct InstancePredictions {
    /// Argmax class per cell, lowest index on ties.
    pub predicted: Vec<usize>,
    pub probabilities: Matrix,
}

pub fn predict(net: &Network, ds: &Dataset, exec: Execution) -> Result<InstancePredictions> {
    if net.input_dim() != ds.dim() {
        return Err(Error::Shape(format!(
            "network expects {} features, dataset has D={}",
            net.input_dim(),
            ds.dim()
        )));
    }
    let logits = net.logits_with(&feature_matrix(ds), exec)?;
    let predicted = logits.row_iter().map(argmax).collect();
    Ok(InstancePredictions {
        predicted,
        probabilities: softmax(&logits),
    })
}

#[derive(Debug, Clone)]
pub struct InstanceEvaluation {
    pub predictions: InstancePredictions,
    pub report: EvalReport,
}

/// Predicts every cell and scores the predictions against the cell labels.
pub fn evaluate_instances(net: &Network, ds: &Dataset, exec: Execution) -> Result<InstanceEvaluation> {
    check_compat(net, ds)?;
    let predictions = predict(net, ds, exec)?;
    let report = evaluate_labels(&ds.labels(), &predictions.predicted, ds.num_classes())?;
    Ok(InstanceEvaluation { predictions, report })
}

/// The label space a network's output layer corresponds to.
pub fn output_space(net: &Network) -> Option<LabelSpace> {
    LabelSpace::for_class_count(net.output_dim())
}
