//! Fixed-budget minibatch training and evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_sequence, split_stratified, Dataset, EncodingMode, HealthState, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{argmax, batch_loss_and_grads, forward, init_params, ModelConfig, ModelParams, Sample};
use crate::numerics::softmax;
use crate::optim::{adam_step, clip_global_norm, AdamState};

/// Stream index of the shuffling generator; parameter init uses stream 0.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_threshold: f64,
    /// Overrides the model's own `l2_lambda` during training.
    pub l2_lambda: f64,
    pub seed: u64,
    /// Test accuracy is recorded every this many epochs and on the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            batch_size: 32,
            lr: 0.001,
            clip_threshold: 1.0,
            l2_lambda: 0.001,
            seed: 42,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold.is_finite()) {
            return Err(Error::Config(format!("clip_threshold must be positive, got {}", self.clip_threshold)));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config(format!("l2_lambda must be non-negative, got {}", self.l2_lambda)));
        }
        Ok(())
    }
}

/// Statistics recorded after an epoch's last update. Training loss and
/// accuracy come from a full pass over the training set in its original
/// order, so they describe the parameters at the end of the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,loss,train_acc,test_acc`; the last cell is empty on epochs
    /// without a test evaluation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,train_acc,test_acc")?;
        for e in &self.epochs {
            let test = e.test_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", e.epoch, e.loss, e.train_acc, test)?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Standardises and encodes every record of `ds`.
pub fn encode_dataset(ds: &Dataset, standardizer: &Standardizer, mode: EncodingMode) -> Result<Vec<Sample>> {
    ds.records
        .iter()
        .map(|r| {
            Ok(Sample {
                x: encode_sequence(&standardizer.apply(r), mode)?,
                label: r.label.index(),
            })
        })
        .collect()
}

/// Mean cross-entropy (without the L2 term) and accuracy.
fn loss_and_accuracy(params: &ModelParams, cfg: &ModelConfig, samples: &[Sample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let logits = forward(params, cfg, &s.x)?;
        let (l, _) = crate::layers::cross_entropy(&logits, s.label)?;
        loss += l;
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn accuracy(params: &ModelParams, cfg: &ModelConfig, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    loss_and_accuracy(params, cfg, samples).map(|(_, a)| a)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    /// The model configuration with the training L2 strength applied.
    pub config: ModelConfig,
    pub history: TrainHistory,
}

pub fn train(model_cfg: &ModelConfig, train_cfg: &TrainConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<Trained> {
    train_with(model_cfg, train_cfg, train_set, test_set, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch is recorded.
pub fn train_with(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trained> {
    train_cfg.validate()?;
    let mut cfg = model_cfg.clone();
    cfg.l2_lambda = train_cfg.l2_lambda;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut params = init_params(&cfg)?;
    let mut adam = AdamState::new(&params, train_cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut batch = Vec::with_capacity(train_cfg.batch_size);

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let mut step = batch_loss_and_grads(&params, &cfg, &batch)?;
            if !step.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            clip_global_norm(&mut step.grads, train_cfg.clip_threshold)?;
            adam_step(&mut params, &step.grads, &mut adam)?;
        }

        let (data_loss, train_acc) = loss_and_accuracy(&params, &cfg, train_set)?;
        let loss = data_loss + crate::model::l2_penalty(&params, cfg.l2_lambda);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(train_cfg.batch_size),
            });
        }
        let test_acc = if !test_set.is_empty() && (epoch % train_cfg.eval_every == 0 || epoch == train_cfg.max_epochs) {
            Some(loss_and_accuracy(&params, &cfg, test_set)?.1)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss,
            train_acc,
            test_acc,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }

    Ok(Trained {
        params,
        config: cfg,
        history,
    })
}

pub fn class_names() -> Vec<&'static str> {
    HealthState::ALL.iter().map(|s| s.as_str()).collect()
}

/// Class probabilities for each record.
pub fn predict_dataset(
    params: &ModelParams,
    cfg: &ModelConfig,
    standardizer: &Standardizer,
    features: impl IntoIterator<Item = [f64; crate::data::NUM_FEATURES]>,
) -> Result<Vec<Vec<f64>>> {
    features
        .into_iter()
        .map(|f| {
            let x = encode_sequence(&standardizer.transform(&f), EncodingMode::Features)?;
            Ok(softmax(&forward(params, cfg, &x)?))
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, standardizer: &Standardizer, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let proba = predict_dataset(params, cfg, standardizer, ds.records.iter().map(|r| r.features()))?;
    let labels: Vec<usize> = ds.records.iter().map(|r| r.label.index()).collect();
    EvalReport::from_probabilities(&labels, &proba, &class_names())
}

/// Everything needed to rerun a split-train-evaluate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub history: TrainHistory,
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
}

/// Stratified split (seeded by the training seed), standardisation fitted on
/// the training side, training, and evaluation of both sides.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<Experiment> {
    let (train_set, test_set) = split_stratified(ds, cfg.test_fraction, cfg.train.seed)?;
    let standardizer = Standardizer::fit(&train_set.records)?;
    let train_samples = encode_dataset(&train_set, &standardizer, EncodingMode::Features)?;
    let test_samples = encode_dataset(&test_set, &standardizer, EncodingMode::Features)?;
    let trained = train_with(&cfg.model, &cfg.train, &train_samples, &test_samples, on_epoch)?;
    let train_report = evaluate(&trained.params, &trained.config, &standardizer, &train_set)?;
    let test_report = evaluate(&trained.params, &trained.config, &standardizer, &test_set)?;
    Ok(Experiment {
        params: trained.params,
        config: trained.config,
        standardizer,
        history: trained.history,
        train_set,
        test_set,
        train_report,
        test_report,
    })
}
