//! Training: stratified validation split, the epoch loop with seeded
//! shuffling, Adam updates, and best-validation-loss checkpointing.

use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{argmax, Model, NnError};
use crate::tensor::{stack, Graph, Mode, Tensor, TensorError};

mod adam;
mod checkpoint;
mod loss;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use loss::{categorical_cross_entropy, LOG_CLAMP};

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig(String),
    EmptyDataset(&'static str),
    /// A probability row failed its sum-to-one (or one-hot) precondition.
    NotDistribution {
        what: &'static str,
        row: usize,
        sum: f64,
    },
    LossShapeMismatch {
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    OptimizerShapeMismatch {
        detail: String,
    },
    NonFiniteGradient {
        param: String,
    },
    /// Loss became NaN/Inf; training aborts with the failing location.
    DivergedLoss {
        epoch: u32,
        batch: usize,
    },
    Tensor(TensorError),
    Nn(NnError),
    Checkpoint(CheckpointError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::EmptyDataset(which) => write!(f, "{which} dataset is empty"),
            TrainError::NotDistribution { what, row, sum } => {
                write!(f, "{what} row {row} sums to {sum}, expected 1")
            }
            TrainError::LossShapeMismatch { pred, target } => {
                write!(f, "loss shapes disagree: pred {pred:?}, target {target:?}")
            }
            TrainError::OptimizerShapeMismatch { detail } => {
                write!(f, "optimizer shape mismatch: {detail}")
            }
            TrainError::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter '{param}'")
            }
            TrainError::DivergedLoss { epoch, batch } => {
                write!(f, "loss diverged at epoch {epoch}, batch {batch}")
            }
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Nn(e) => write!(f, "{e}"),
            TrainError::Checkpoint(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Nn(e)
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}

/// One preprocessed training example: a `(1, H, W)` unit-range image tensor
/// plus its class label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Spiral-branch defaults (learning rate 5e-4).
    pub fn spiral() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            epochs: 150,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            validation_fraction: 0.2,
            checkpoint_path: None,
        }
    }

    /// Wave-branch defaults (learning rate 1e-4).
    pub fn wave() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            ..Self::spiral()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch losses and accuracies, 1-based epoch numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Render a run history as `epoch,train_loss,train_acc,val_loss,val_acc` CSV.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc
        ));
    }
    out
}

/// Stratified split into (train, validation) index sets: within each class
/// the items are shuffled with a class-specific seeded RNG and `fraction` of
/// them (at least one) moves to the validation side.
pub fn stratified_split_indices(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if labels.is_empty() {
        return Err(TrainError::EmptyDataset("split input"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let max_label = *labels.iter().max().unwrap();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in 0..=max_label {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9e3779b9));
        indices.shuffle(&mut rng);
        let n_val = ((indices.len() as f64 * fraction).round() as usize)
            .clamp(1, indices.len().saturating_sub(1).max(1));
        for (rank, &idx) in indices.iter().enumerate() {
            if rank < n_val {
                val.push(idx);
            } else {
                train.push(idx);
            }
        }
    }
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("train side of split"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyDataset("validation side of split"));
    }
    Ok((train, val))
}

/// Sample-level wrapper around [`stratified_split_indices`].
pub fn stratified_split(
    items: &[Sample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let labels: Vec<usize> = items.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = stratified_split_indices(&labels, fraction, seed)?;
    Ok((
        train_idx.iter().map(|&i| items[i].clone()).collect(),
        val_idx.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Tracks the minimum validation loss; `observe` reports strict improvements.
#[derive(Clone, Copy, Debug, Default)]
pub struct BestTracker {
    best: Option<(u32, f64)>,
}

impl BestTracker {
    pub fn observe(&mut self, epoch: u32, val_loss: f64) -> bool {
        match self.best {
            Some((_, best)) if val_loss >= best => false,
            _ => {
                self.best = Some((epoch, val_loss));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(u32, f64)> {
        self.best
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; labels.len() * classes];
    for (row, &label) in labels.iter().enumerate() {
        data[row * classes + label] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data).expect("shape matches")
}

/// Mean loss and accuracy of a model over a sample set, in inference mode.
pub fn evaluate_loss(
    model: &Model<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let classes = model.config().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let graph: Graph<f32> = Graph::new();
        let bound = model.bind(&graph);
        let mut probs = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for sample in chunk {
            let x = graph.constant(sample.image.clone());
            let p = bound.forward(&x, Mode::Infer, &mut rng)?;
            let values: Vec<f64> = p.value().data().iter().map(|&v| v as f64).collect();
            if argmax(&values) == sample.label {
                correct += 1;
            }
            probs.push(p);
            labels.push(sample.label);
        }
        let stacked = stack(&probs)?;
        let targets = graph.constant(one_hot(&labels, classes));
        let loss = categorical_cross_entropy(&stacked, &targets)?;
        loss_sum += loss.value().item() as f64 * chunk.len() as f64;
    }
    Ok((
        loss_sum / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Train with seeded per-epoch shuffling and Adam. Dropout is active in the
/// training passes only; after each epoch the validation loss is evaluated in
/// inference mode and the checkpoint is refreshed whenever it strictly
/// improves. Returns the best checkpoint (not the last) plus the full history.
pub fn train_model(
    model: &mut Model<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochStats>), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let classes = model.config().num_classes;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd80f_00d5);
    let mut state = AdamState::new(model.params());
    let mut tracker = BestTracker::default();
    let mut best_ckpt: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs as u32 {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let graph: Graph<f32> = Graph::new();
            let bound = model.bind(&graph);
            let mut probs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = &train_set[i];
                let x = graph.constant(sample.image.clone());
                let p = bound.forward(&x, Mode::Train, &mut dropout_rng)?;
                let values: Vec<f64> = p.value().data().iter().map(|&v| v as f64).collect();
                if argmax(&values) == sample.label {
                    correct += 1;
                }
                probs.push(p);
                labels.push(sample.label);
            }
            let stacked = stack(&probs)?;
            let targets = graph.constant(one_hot(&labels, classes));
            let loss = categorical_cross_entropy(&stacked, &targets)?;
            let loss_value = loss.value().item() as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss_value * chunk.len() as f64;
            loss.backward()?;
            let grads: Vec<Option<Tensor<f32>>> =
                bound.param_vars().iter().map(|v| v.grad()).collect();
            adam_step(
                model.params_mut(),
                &grads,
                &mut state,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.epsilon,
            )?;
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_loss, val_acc) = evaluate_loss(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch, batch: 0 });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        if tracker.observe(epoch, val_loss) {
            let ckpt = Checkpoint::from_model(model, val_loss, epoch);
            if let Some(path) = &cfg.checkpoint_path {
                save_checkpoint(&ckpt, path)?;
            }
            best_ckpt = Some(ckpt);
        }
    }

    Ok((
        best_ckpt.expect("at least one epoch ran, so one checkpoint exists"),
        history,
    ))
}
