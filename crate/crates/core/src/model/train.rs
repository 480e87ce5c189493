use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward_backward, ForwardMode};
use super::optim::optimizer_step;
use super::{encode_beat_target, encode_tempo_target, FrameTargets, ModelError, OptimizerState, TcnWeights};
use crate::eval::{infer_reference_tempo, ClipAnnotation};
use crate::frontend::{augment_fps, AudioClip, FrontendConfig, Spectrogram};

/// Frame rate the tempo bins refer to. Spectrograms rendered at another rate
/// get their tempo label rescaled so that beat periods in frames map to the
/// same bin as at this rate.
pub const REFERENCE_FPS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Cap on the global gradient L2 norm.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0015,
            clip_norm: 0.5,
            max_epochs: 150,
            early_stop_patience: 20,
            lookahead_k: 5,
            lookahead_alpha: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 1234,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0) {
            return bad("lookahead_alpha must be in (0, 1]");
        }
        if self.lookahead_k == 0 {
            return bad("lookahead_k must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub spectrogram: Spectrogram,
    pub targets: FrameTargets,
}

/// Examples for one annotated clip, one per frame rate in `fps_set`.
pub fn build_examples(
    clip: &AudioClip,
    annotation: &ClipAnnotation,
    frontend: &FrontendConfig,
    fps_set: &[f64],
    tempo_bins: usize,
) -> Result<Vec<TrainingExample>, ModelError> {
    let bpm = match annotation.reference_bpm {
        Some(b) => b,
        None => infer_reference_tempo(annotation).map_err(|e| ModelError::Annotation(e.to_string()))?,
    };
    augment_fps(clip, frontend, fps_set)?
        .into_iter()
        .map(|spectrogram| {
            let fps = spectrogram.fps();
            let beat = encode_beat_target(&annotation.beat_times, spectrogram.num_frames(), fps)?;
            let tempo = encode_tempo_target(bpm * REFERENCE_FPS / fps, tempo_bins)?;
            Ok(TrainingExample { spectrogram, targets: FrameTargets { beat, tempo } })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Best monitored loss up to and including this epoch.
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Weights from the epoch with the lowest monitored loss.
    pub weights: TcnWeights,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a monitored loss (lower is better).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, since_best: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

fn mean_loss(weights: &TcnWeights, examples: &[TrainingExample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in examples {
        let out = super::forward(weights, &ex.spectrogram, ForwardMode::Inference)?;
        total += super::multitask_loss(&out, &ex.targets)?.total;
    }
    Ok(total / examples.len() as f64)
}

pub fn train(
    weights: TcnWeights,
    dataset: &[TrainingExample],
    cfg: &TrainingConfig,
    validation: &[TrainingExample],
) -> Result<TrainingOutcome, ModelError> {
    train_with_observer(weights, dataset, cfg, validation, |_| {})
}

/// Batch-size-1 training over variable-length sequences, shuffled each epoch
/// with a seeded RNG. Early stopping monitors the validation loss, or the
/// training loss when `validation` is empty.
pub fn train_with_observer(
    mut weights: TcnWeights,
    dataset: &[TrainingExample],
    cfg: &TrainingConfig,
    validation: &[TrainingExample],
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainingOutcome, ModelError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut state = OptimizerState::for_weights(&weights);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience.max(1));
    let mut best = weights.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &dataset[i];
            let (loss, mut grads, _) =
                forward_backward(&weights, &ex.spectrogram, &ex.targets, ForwardMode::Training(&mut dropout_rng))?;
            if !loss.total.is_finite() {
                return Err(ModelError::DivergedLoss { epoch });
            }
            total += loss.total;
            optimizer_step(&mut state, &mut weights, &mut grads, cfg)?;
        }
        let train_loss = total / dataset.len() as f64;
        let val_loss = if validation.is_empty() { train_loss } else { mean_loss(&weights, validation)? };
        if !val_loss.is_finite() {
            return Err(ModelError::DivergedLoss { epoch });
        }
        let decision = stopper.update(val_loss);
        if decision == StopDecision::Improved {
            best = weights.clone();
            best_epoch = epoch;
        }
        let record = EpochRecord { epoch, train_loss, val_loss, best_val_loss: stopper.best() };
        observer(&record);
        history.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    best.quantize_f32();
    Ok(TrainingOutcome { weights: best, history, best_epoch, stopped_early })
}

/// `epoch,train_loss,val_loss` rows, one per completed epoch.
pub fn write_history_csv(history: &[EpochRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}
