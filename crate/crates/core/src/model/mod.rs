//! Multitask temporal convolutional network.
//!
//! The network maps a spectrogram to a per-frame beat activation and a
//! softmax over 1-BPM tempo bins. It is a stack of non-causal dilated
//! convolutions with ELU, residual connections (where the channel count is
//! preserved) and spatial dropout. The beat head is a per-frame linear
//! projection with a sigmoid; the tempo head averages the final feature map
//! over time and projects to `tempo_bins` logits.
//!
//! Everything here is computed in `f64`. Published weights (from
//! [`init_model`] and [`train`]) are rounded to `f32` so that the on-disk
//! format round-trips them exactly.

mod loss;
mod network;
mod optim;
mod targets;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, Tensor};

pub use loss::{multitask_loss, LossOutput};
pub use network::{backward, forward, forward_backward, forward_cached, ForwardCache, ForwardMode, Gradients, ModelOutput};
pub use optim::{clip_global_norm, optimizer_step, OptimizerState, StepReport};
pub use targets::{encode_beat_target, encode_targets, encode_tempo_target, FrameTargets};
pub use train::{
    build_examples, train, train_with_observer, write_history_csv, EarlyStopping, EpochRecord,
    StopDecision, TrainingConfig, TrainingExample, TrainingOutcome, REFERENCE_FPS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("optimizer state does not match the parameters: {0}")]
    StateShapeMismatch(String),
    #[error("beat at {time} s falls outside the {frames}-frame clip")]
    BeatOutOfRange { time: f64, frames: usize },
    #[error("tempo {bpm} BPM outside the {bins} tempo bins")]
    TempoOutOfRange { bpm: f64, bins: usize },
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("frontend error: {0}")]
    Frontend(#[from] crate::frontend::FrontendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    /// Spectrogram band count expected at the input.
    pub input_bands: usize,
    pub num_layers: usize,
    pub kernel_size: usize,
    pub num_filters: usize,
    pub dilations: Vec<usize>,
    pub dropout_rate: f64,
    /// Tempo bins; bin `b` stands for `b` BPM.
    pub tempo_bins: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            input_bands: 81,
            num_layers: 11,
            kernel_size: 5,
            num_filters: 16,
            dilations: (0..11).map(|i| 1 << i).collect(),
            dropout_rate: 0.1,
            tempo_bins: 300,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_layers == 0 || self.num_layers != self.dilations.len() {
            return bad(format!("num_layers {} vs {} dilations", self.num_layers, self.dilations.len()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.num_filters == 0 || self.input_bands == 0 {
            return bad("num_filters and input_bands must be positive".into());
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.tempo_bins < 2 {
            return bad("need at least two tempo bins".into());
        }
        Ok(())
    }

    /// Input channels of layer `layer`.
    pub fn layer_inputs(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_bands
        } else {
            self.num_filters
        }
    }

    /// Name and shape of every trainable tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.num_filters;
        let mut shapes = Vec::with_capacity(2 * self.num_layers + 4);
        for l in 0..self.num_layers {
            shapes.push((format!("tcn.{l}.kernel"), vec![c, self.layer_inputs(l), self.kernel_size]));
            shapes.push((format!("tcn.{l}.bias"), vec![c]));
        }
        shapes.push(("beat.weight".into(), vec![1, c]));
        shapes.push(("beat.bias".into(), vec![1]));
        shapes.push(("tempo.weight".into(), vec![self.tempo_bins, c]));
        shapes.push(("tempo.bias".into(), vec![self.tempo_bins]));
        shapes
    }
}

/// Frames of input that influence one output frame: `1 + (k - 1) * sum(dilations)`.
pub fn receptive_field(cfg: &TcnConfig) -> usize {
    1 + (cfg.kernel_size - 1) * cfg.dilations.iter().sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnWeights {
    config: TcnConfig,
    params: Vec<Tensor>,
}

impl TcnWeights {
    pub fn from_tensors(config: TcnConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&params) {
            if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, got {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::ShapeMismatch(format!("{name} has non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    /// All-zero weights; useful as a reference model.
    pub fn zeros(config: TcnConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = config.parameter_shapes().into_iter().map(|(n, s)| Tensor::zeros(n, s)).collect();
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Shapes must not change.
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|t| t.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.iter_mut().map(|t| t.data.as_mut_slice()).collect()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.params {
            t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let dil = self.config.dilations.iter().map(|&d| d as f64).collect::<Vec<_>>();
        let mut out = vec![
            Tensor { name: "config.dilations".into(), shape: vec![dil.len()], data: dil },
            Tensor { name: "config.dropout_rate".into(), shape: vec![1], data: vec![self.config.dropout_rate] },
        ];
        out.extend(self.params.iter().cloned());
        out
    }

    pub fn from_container(mut tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let take = |tensors: &mut Vec<Tensor>, name: &str| {
            let i = tensors.iter().position(|t| t.name == name);
            i.map(|i| tensors.remove(i))
                .ok_or_else(|| ModelError::ShapeMismatch(format!("missing tensor {name}")))
        };
        let dilations: Vec<usize> = take(&mut tensors, "config.dilations")?.data.iter().map(|&d| d as usize).collect();
        let dropout_rate = take(&mut tensors, "config.dropout_rate")?.data.first().copied().unwrap_or(0.0);
        let kernel0 = tensors
            .iter()
            .find(|t| t.name == "tcn.0.kernel")
            .ok_or_else(|| ModelError::ShapeMismatch("missing tensor tcn.0.kernel".into()))?;
        if kernel0.shape.len() != 3 {
            return Err(ModelError::ShapeMismatch("tcn.0.kernel must have rank 3".into()));
        }
        let tempo_bins = tensors
            .iter()
            .find(|t| t.name == "tempo.bias")
            .map(|t| t.len())
            .ok_or_else(|| ModelError::ShapeMismatch("missing tensor tempo.bias".into()))?;
        let config = TcnConfig {
            input_bands: kernel0.shape[1],
            num_layers: dilations.len(),
            kernel_size: kernel0.shape[2],
            num_filters: kernel0.shape[0],
            dilations,
            // f32 storage; recover the usual decimal value.
            dropout_rate: ((dropout_rate * 1e6).round() / 1e6),
            tempo_bins,
        };
        Self::from_tensors(config, tensors)
    }
}

/// Seeded scaled-uniform initialization: every tensor of a layer draws from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_model(cfg: &TcnConfig, seed: u64) -> Result<TcnWeights, ModelError> {
    let mut weights = TcnWeights::zeros(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.kernel_size;
    for t in weights.tensors_mut() {
        let fan_in = match t.name.as_str() {
            n if n.starts_with("tcn.") => {
                let layer: usize = n.split('.').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
                cfg.layer_inputs(layer) * k
            }
            _ => cfg.num_filters,
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
    }
    weights.quantize_f32();
    Ok(weights)
}

pub fn save_weights(weights: &TcnWeights, path: impl AsRef<Path>) -> Result<(), ModelError> {
    Ok(container::write_file(path, &weights.to_tensors())?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<TcnWeights, ModelError> {
    TcnWeights::from_container(container::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TcnConfig {
        TcnConfig {
            input_bands: 6,
            num_layers: 2,
            kernel_size: 3,
            num_filters: 4,
            dilations: vec![1, 2],
            dropout_rate: 0.1,
            tempo_bins: 300,
        }
    }

    #[test]
    fn receptive_field_closed_form() {
        assert_eq!(receptive_field(&TcnConfig::default()), 8189);
        let one = TcnConfig { num_layers: 1, dilations: vec![1], ..Default::default() };
        assert_eq!(receptive_field(&one), 5);
        let pointwise = TcnConfig { kernel_size: 1, ..Default::default() };
        assert_eq!(receptive_field(&pointwise), 1);
    }

    #[test]
    fn parameter_count_matches_tensor_count() {
        let cfg = TcnConfig::default();
        let w = init_model(&cfg, 7).unwrap();
        // Counted tensor by tensor rather than by the layer formula.
        let counted: usize = w.tensors().iter().map(|t| t.data.len()).sum();
        let (k, c) = (cfg.kernel_size, cfg.num_filters);
        let formula = (0..cfg.num_layers).map(|l| k * cfg.layer_inputs(l) * c + c).sum::<usize>()
            + (c + 1)
            + (c * cfg.tempo_bins + cfg.tempo_bins);
        assert_eq!(counted, formula);
        assert_eq!(w.num_parameters(), 6496 + 10 * 1296 + 17 + 5100);
    }

    #[test]
    fn init_is_seeded() {
        let a = init_model(&tiny(), 1).unwrap();
        assert_eq!(a, init_model(&tiny(), 1).unwrap());
        assert_ne!(a, init_model(&tiny(), 2).unwrap());
        assert!(a.tensors().iter().flat_map(|t| &t.data).all(|&v| v == v as f32 as f64));
    }

    #[test]
    fn config_validation() {
        assert!(TcnConfig { kernel_size: 4, ..Default::default() }.validate().is_err());
        assert!(TcnConfig { num_layers: 3, ..Default::default() }.validate().is_err());
        assert!(TcnConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(init_model(&TcnConfig { num_filters: 0, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn container_round_trip_restores_config() {
        let w = init_model(&tiny(), 3).unwrap();
        let back = TcnWeights::from_container(w.to_tensors()).unwrap();
        assert_eq!(back, w);
        let mut missing = w.to_tensors();
        missing.retain(|t| t.name != "tempo.bias");
        assert!(TcnWeights::from_container(missing).is_err());
    }
}
