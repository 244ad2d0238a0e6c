//! MLP decoder over embedding-augmented features.
//!
//! The default network has eight hidden layers of widths 256, 128, …, 2
//! with Leaky ReLU activations and optional dropout, and a single output
//! with a sigmoid (binary targets) or ReLU (regression targets). Training
//! uses Adam on mini-batches with an L2 penalty on the weights and early
//! stopping on a validation carve-out.

mod features;
mod mlp;

use std::collections::BTreeSet;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use features::{
    fuse_individual_context, Continuous, ContinuousStat, EmbeddingContext, FeatureEncoder, FeatureMode,
    FeatureVector,
};
pub use mlp::{sigmoid, Adam, Gradients, Hidden, Layer, Mlp, Output, SparseBatch};

use crate::data_model::{LabeledInstance, PerfField, SplitSpec, Target};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 8] = [256, 128, 64, 32, 16, 8, 4, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Regression,
}

impl Task {
    pub fn for_target(target: Target) -> Self {
        if target.is_binary() {
            Task::Binary
        } else {
            Task::Regression
        }
    }

    fn output(self) -> Output {
        match self {
            Task::Binary => Output::Sigmoid,
            Task::Regression => Output::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub l2_beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            leaky_slope: 0.01,
            dropout: 0.1,
            l2_beta: 1e-7,
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_beta >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive and l2_beta non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

fn batch_of(features: &[FeatureVector], width: usize, rows: &[usize]) -> Result<SparseBatch> {
    SparseBatch::from_rows(
        width,
        rows.iter().map(|&r| (features[r].indices.as_slice(), features[r].values.as_slice())),
    )
}

/// Builds a CSR batch from feature vectors, checking their width.
pub fn to_batch(features: &[FeatureVector], width: usize) -> Result<SparseBatch> {
    if let Some(bad) = features.iter().find(|f| f.len != width) {
        return Err(Error::DimensionMismatch(format!(
            "feature vector of length {} but model expects {width}",
            bad.len
        )));
    }
    let all: Vec<usize> = (0..features.len()).collect();
    batch_of(features, width, &all)
}

fn output_bias(task: Task, targets: &[f64]) -> f64 {
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    match task {
        Task::Binary => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
        Task::Regression => mean,
    }
}

/// Trains a network on encoded features.
pub fn train_network(
    features: &[FeatureVector],
    targets: &[f64],
    task: Task,
    config: &TrainConfig,
) -> Result<(Mlp, TrainingLog)> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::Empty("no training instances".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature vectors vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite target {bad}")));
    }
    if task == Task::Binary {
        let pos = targets.iter().filter(|&&t| t > 0.5).count();
        if pos == 0 || pos == targets.len() {
            return Err(Error::SingleClass);
        }
    }
    let width = features[0].len;
    let full = to_batch(features, width)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if features.len() >= 10 {
        (features.len() as f64 * config.validation_fraction).round() as usize
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_batch = full.select(val_idx);
    let val_y: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();
    let train_y_all: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();

    let mut sizes = vec![width];
    sizes.extend_from_slice(&config.hidden_sizes);
    sizes.push(1);
    let mut net = Mlp::new(
        &sizes,
        Hidden::LeakyRelu {
            slope: config.leaky_slope,
        },
        task.output(),
        rng.random(),
    )?;
    net.layers.last_mut().expect("output layer").b[0] = output_bias(task, &train_y_all);
    let mut adam = Adam::new(net.n_params(), config.learning_rate);

    let eval_loss = |net: &Mlp, batch: &SparseBatch, y: &[f64]| -> Result<f64> {
        Ok(net.data_loss(&net.logits(batch)?, y))
    };
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let xb = full.select(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut rng));
            let (loss, grads) = net.loss_and_gradients(&xb, &yb, config.l2_beta, dropout)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "loss {loss} at epoch {epoch}, batch {b} ({} rows)",
                    chunk.len()
                )));
            }
            adam.step(&mut net, &grads);
            if !net.all_finite() {
                return Err(Error::NonFiniteLoss(format!("parameters became non-finite at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let validation_loss = if n_val > 0 {
            eval_loss(&net, &val_batch, &val_y)?
        } else {
            train_loss
        };
        if !validation_loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("validation loss {validation_loss} at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_loss:.6} validation {validation_loss:.6}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    info!("training finished: best epoch {best_epoch}, validation loss {best_loss:.6}");
    Ok((
        best,
        TrainingLog {
            epochs,
            best_epoch,
            best_validation_loss: best_loss,
            stopped_early,
        },
    ))
}

/// A trained decoder with everything needed to encode new instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub target: Target,
    pub task: Task,
    pub encoder: FeatureEncoder,
    pub network: Mlp,
    pub config: TrainConfig,
    /// Identifier of the factorization run the embeddings came from.
    pub factor_run_id: Option<String>,
    /// Train/test partition the model was fitted on.
    pub split: Option<SplitSpec>,
    pub log: TrainingLog,
}

impl DecoderModel {
    pub fn mode(&self) -> FeatureMode {
        self.encoder.mode
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.network.sizes()
    }

    pub fn predict_instances(
        &self,
        instances: &[LabeledInstance],
        ctx: Option<&EmbeddingContext<'_>>,
    ) -> Result<Vec<f64>> {
        let features = self.encoder.encode_batch(instances, ctx)?;
        predict(self, &features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

/// Fits the encoder on `train`, encodes it and trains the network.
///
/// `ctx` must be given in embedding mode.
pub fn train(
    train: &[LabeledInstance],
    ctx: Option<&EmbeddingContext<'_>>,
    mode: FeatureMode,
    target: Target,
    excluded: &BTreeSet<PerfField>,
    n_champions: usize,
    config: &TrainConfig,
) -> Result<DecoderModel> {
    let rank = ctx.map_or(0, |c| c.factors.rank());
    let encoder = FeatureEncoder::fit(train, mode, target, excluded, rank, n_champions)?;
    let features = encoder.encode_batch(train, ctx)?;
    let targets: Vec<f64> = train.iter().map(|i| target.value(i)).collect();
    let task = Task::for_target(target);
    let (network, log) = train_network(&features, &targets, task, config)?;
    Ok(DecoderModel {
        target,
        task,
        encoder,
        network,
        config: config.clone(),
        factor_run_id: None,
        split: None,
        log,
    })
}

/// Forward pass without dropout. Binary models return probabilities,
/// regression models non-negative values.
pub fn predict(model: &DecoderModel, features: &[FeatureVector]) -> Result<Vec<f64>> {
    model.network.predict(&to_batch(features, model.network.input_size())?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Denominator floor of [`gradient_check`].
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Compares backpropagated gradients of the full objective (mean data loss
/// plus `l2_beta · Σ w²`) with central differences of step `step`, over at
/// most `max_params` parameters sampled with `seed`. Dropout is off.
///
/// The relative error of a pair is `|a − n| / max(|a|, |n|, 1e-6)`; the
/// floor keeps rounding noise on near-zero gradients from dominating.
pub fn gradient_check(
    net: &Mlp,
    features: &[FeatureVector],
    targets: &[f64],
    l2_beta: f64,
    step: f64,
    max_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    let batch = to_batch(features, net.input_size())?;
    let (_, grads) = net.loss_and_gradients(&batch, targets, l2_beta, None)?;
    let analytic = grads.flat();
    let mut picks: Vec<usize> = (0..analytic.len()).collect();
    if picks.len() > max_params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        picks.shuffle(&mut rng);
        picks.truncate(max_params);
        picks.sort_unstable();
    }
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for &p in &picks {
        let original = *probe.params_mut().nth(p).expect("index in range");
        *probe.params_mut().nth(p).unwrap() = original + step;
        let up = probe.objective(&batch, targets, l2_beta)?;
        *probe.params_mut().nth(p).unwrap() = original - step;
        let down = probe.objective(&batch, targets, l2_beta)?;
        *probe.params_mut().nth(p).unwrap() = original;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[p];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_relative_error: worst,
        checked: picks.len(),
    })
}
