//! Supervised training: class-balanced loss, AdamW, step-decay schedule and
//! validation monitoring.

mod loss;
mod optim;

pub use loss::{class_balanced_bce, LossConfig};
pub use optim::{lr_at, AdamW, AdamWConfig};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentationConfig, DataError, DatasetManifest, FramePair};
use crate::eval::{confusion_at_threshold, Confusion, EvalError, ProbabilityMap};
use crate::image::batch_tensor;
use crate::network::{crackpropnet_forward, save_weights, Network, NetworkError, NetworkWeights};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient for `{name}` at element {index}; step rejected")]
    NonFiniteGradient { name: String, index: usize },
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },
    #[error("{0} has no ground-truth edge map")]
    MissingLabels(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Epochs between learning-rate halvings.
    pub lr_period: usize,
    pub val_threshold: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    /// Stop once validation F-1 reaches this value.
    pub target_f1: Option<f64>,
    /// Receives `best.cpnw` and `last.cpnw` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            epochs: 40,
            base_lr: 5e-5,
            lr_period: 5,
            val_threshold: 0.5,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            target_f1: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(TrainError::Config(format!("bad learning rate {}", self.base_lr)));
        }
        if !(self.val_threshold > 0.0 && self.val_threshold < 1.0) {
            return Err(TrainError::Config(format!(
                "validation threshold {} outside (0, 1)",
                self.val_threshold
            )));
        }
        self.augmentation.validate().map_err(TrainError::Config)?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-pair loss over the epoch.
    pub train_loss: f64,
    pub val_f1: f64,
    pub is_best: bool,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}, {:e}, {:.6}, {:.6}, {}",
            self.epoch, self.lr, self.train_loss, self.val_f1, self.is_best as u8
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().filter(|e| e.is_best).next_back()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch, lr, train_loss, val_f1, is_best")?;
        for e in &self.epochs {
            writeln!(out, "{}", e.to_line())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: NetworkWeights,
    pub last: NetworkWeights,
    pub log: TrainingLog,
}

fn labels<'a>(pairs: &'a [FramePair], what: &str) -> Result<Vec<&'a [u8]>, TrainError> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.gt
                .as_ref()
                .map(|g| g.data.as_slice())
                .ok_or_else(|| TrainError::MissingLabels(format!("{what} pair {i}")))
        })
        .collect()
}

/// Pooled confusion of the edge output at one threshold.
pub fn validation_confusion(
    net: &Network,
    weights: &NetworkWeights,
    pairs: &[FramePair],
    threshold: f64,
) -> Result<Confusion, TrainError> {
    let mut total = Confusion::default();
    for (i, pair) in pairs.iter().enumerate() {
        let gt = pair
            .gt
            .as_ref()
            .ok_or_else(|| TrainError::MissingLabels(format!("validation pair {i}")))?;
        let r = batch_tensor(&[&pair.reference]);
        let d = batch_tensor(&[&pair.deformed]);
        let (_, _, prob) = net.infer(weights, &r, &d)?;
        let c = confusion_at_threshold(&ProbabilityMap::from_network(&prob)[0], gt, threshold)?;
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    Ok(total)
}

/// Forward and backward pass on one batch; returns the summed loss over the
/// batch and the parameter gradients.
pub fn batch_gradients(
    net: &Network,
    weights: &NetworkWeights,
    reference: Tensor<f32>,
    deformed: Tensor<f32>,
    gts: &[&[u8]],
    loss: &LossConfig,
) -> Result<(f64, BTreeMap<String, Vec<f32>>), TrainError> {
    let mut tape = Tape::<f32>::new();
    let params = net.bind(&mut tape, weights, true)?;
    let r = tape.constant(reference);
    let d = tape.constant(deformed);
    let out = crackpropnet_forward(net, &mut tape, &params, r, d)?;
    let logits = tape.value(out.edge_logits);
    let per = logits.len() / gts.len().max(1);
    if per * gts.len() != logits.len() {
        return Err(TrainError::Shape(format!(
            "{} edge logits for a batch of {}",
            logits.len(),
            gts.len()
        )));
    }
    let mut total = 0.0;
    let mut seed = Vec::with_capacity(logits.len());
    for (chunk, gt) in logits.data().chunks(per).zip(gts) {
        let (l, g) = class_balanced_bce(chunk, gt, loss)?;
        total += l;
        seed.extend(g);
    }
    tape.backward(out.edge_logits, &seed)?;
    let grads = params
        .iter()
        .map(|(name, &v)| {
            let g = tape
                .take_grad(v)
                .unwrap_or_else(|| vec![0.0; tape.value(v).len()]);
            (name.clone(), g)
        })
        .collect();
    Ok((total, grads))
}

/// Trains from `initial`, returning the best-by-validation and last weights.
/// `on_epoch` sees every log record as it is produced.
pub fn train(
    net: &Network,
    initial: NetworkWeights,
    train_pairs: &[FramePair],
    val_pairs: &[FramePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if val_pairs.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    initial.check_against(net)?;
    let train_gt = labels(train_pairs, "training")?;
    labels(val_pairs, "validation")?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut weights = initial;
    let mut best = weights.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.base_lr, cfg.lr_period);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<_> = idx
                .iter()
                .map(|&i| augment(&train_pairs[i], &cfg.augmentation.sample(&mut rng)))
                .collect();
            let (w, h) = (augmented[0].width, augmented[0].height);
            let stack = |f: fn(&crate::data::AugmentedPair) -> &Vec<f32>| {
                let data: Vec<f32> = augmented.iter().flat_map(|a| f(a).iter().copied()).collect();
                Tensor::new(&[augmented.len(), 3, h, w], data)
            };
            let reference = stack(|a| &a.reference)?;
            let deformed = stack(|a| &a.deformed)?;
            let gts: Vec<&[u8]> = augmented
                .iter()
                .zip(idx)
                .map(|(a, &i)| a.gt.as_ref().map_or(train_gt[i], |g| g.data.as_slice()))
                .collect();
            let (loss, grads) = batch_gradients(net, &weights, reference, deformed, &gts, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss".into(),
                    epoch,
                    batch,
                });
            }
            opt.step(&mut weights, &grads, lr).map_err(|e| match e {
                TrainError::NonFiniteGradient { name, .. } => TrainError::NonFinite {
                    what: format!("gradient of `{name}`"),
                    epoch,
                    batch,
                },
                e => e,
            })?;
            epoch_loss += loss;
        }

        let val_f1 = validation_confusion(net, &weights, val_pairs, cfg.val_threshold)?.f1();
        let is_best = val_f1 > best_f1;
        if is_best {
            best_f1 = val_f1;
            best = weights.clone();
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / train_pairs.len() as f64,
            val_f1,
            is_best,
        };
        on_epoch(&record);
        log.epochs.push(record);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_weights(&weights, &dir.join("last.cpnw"))?;
            if is_best {
                save_weights(&best, &dir.join("best.cpnw"))?;
            }
        }
        if cfg.target_f1.is_some_and(|t| val_f1 >= t) {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        last: weights,
        log,
    })
}

/// Loads every pair of a manifest.
pub fn load_all(manifest: &DatasetManifest) -> Result<Vec<FramePair>, TrainError> {
    (0..manifest.len())
        .map(|i| manifest.load_pair(i).map_err(TrainError::from))
        .collect()
}
