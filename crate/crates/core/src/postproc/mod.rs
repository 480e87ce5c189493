//! Decoding beat and tempo activations into tempo estimates and beat times.
//!
//! Tempo can come straight from the tempo head ([`detect_tempo`]), from the
//! beat activation ([`acf_tempo`], [`comb_tempo`], [`dbn_tempo`]), or from a
//! decoded beat sequence ([`crf_beats`], [`dbn_beats`], [`comb_beats`]
//! followed by [`infer_tempo_from_beats`]). [`Pipeline`] names the seven
//! combinations.
//!
//! All argmax ties go to the smallest lag or the earliest frame.

mod beats;
mod dbn;
mod pipeline;
mod tempo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beats::{comb_beats, crf_beats};
pub use dbn::{dbn_beats, dbn_decode, dbn_tempo, DbnPath};
pub use pipeline::{run_pipeline, Pipeline};
pub use tempo::{acf_scores, acf_tempo, comb_scores, comb_tempo, detect_tempo, infer_tempo_from_beats};

/// Estimates with confidence below this are flagged as unreliable.
pub const LOW_CONFIDENCE: f64 = 0.2;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("activation too short: {len} frames, need at least {required}")]
    InsufficientLength { len: usize, required: usize },
    #[error("activation is flat (all zero)")]
    FlatActivation,
    #[error("need at least 2 beats, got {0}")]
    TooFewBeats(usize),
    #[error("tempo activation has {bins} bins, which does not cover {bpm_max} BPM")]
    RangeUncovered { bins: usize, bpm_max: f64 },
    #[error("invalid activation: {0}")]
    InvalidActivation(String),
    #[error("invalid beat sequence: {0}")]
    InvalidBeats(String),
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("method '{0}' needs a tempo activation")]
    MissingTempoActivation(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
}

/// Per-frame beat probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatActivation {
    values: Vec<f64>,
    fps: f64,
}

impl BeatActivation {
    pub fn new(values: Vec<f64>, fps: f64) -> Result<Self, PostprocError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(PostprocError::InvalidActivation(format!("fps must be positive, got {fps}")));
        }
        if values.is_empty() {
            return Err(PostprocError::InvalidActivation("no frames".into()));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(PostprocError::InvalidActivation(format!("value {} at frame {i} outside [0, 1]", values[i])));
        }
        Ok(Self { values, fps })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with `frames` zero frames prepended.
    pub fn delayed(&self, frames: usize) -> Self {
        let mut values = vec![0.0; frames];
        values.extend_from_slice(&self.values);
        Self { values, fps: self.fps }
    }

    /// Copy with every value multiplied by `factor` (clamped to [0, 1]).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(), fps: self.fps }
    }
}

/// Probability mass over 1-BPM bins; bin `b` is `b` BPM.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoActivation {
    mass: Vec<f64>,
}

impl TempoActivation {
    pub fn new(mass: Vec<f64>) -> Result<Self, PostprocError> {
        if mass.is_empty() {
            return Err(PostprocError::InvalidActivation("no tempo bins".into()));
        }
        if mass.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(PostprocError::InvalidActivation("tempo mass must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(PostprocError::InvalidActivation(format!("tempo mass sums to {total}")));
        }
        Ok(Self { mass })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, PostprocError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(PostprocError::InvalidActivation("tempo weights must have a positive sum".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// Beat times in seconds, strictly ascending and non-negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeatSequence {
    times: Vec<f64>,
}

impl BeatSequence {
    pub fn new(times: Vec<f64>) -> Result<Self, PostprocError> {
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(PostprocError::InvalidBeats(format!("bad beat time {t}")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(PostprocError::InvalidBeats(format!("beats not ascending: {} then {}", w[0], w[1])));
        }
        Ok(Self { times })
    }

    pub(crate) fn from_frames(frames: &[usize], fps: f64) -> Self {
        Self { times: frames.iter().map(|&n| n as f64 / fps).collect() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn intervals(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// One decimal-seconds value per line.
    pub fn to_text(&self) -> String {
        self.times.iter().map(|t| format!("{t:.6}\n")).collect()
    }

    /// Parses one time per line; blank lines and `#` comments are skipped.
    /// Lines with several columns use the first one.
    pub fn from_text(text: &str) -> Result<Self, PostprocError> {
        let mut times = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let field = line.split_whitespace().next().unwrap_or("");
            let t: f64 = field
                .parse()
                .map_err(|_| PostprocError::InvalidBeats(format!("line {}: cannot parse '{field}'", i + 1)))?;
            times.push(t);
        }
        Self::new(times)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TempoMethod {
    Direct,
    Acf,
    Comb,
    Dbn,
    BeatInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TempoEstimate {
    pub bpm: f64,
    pub confidence: f64,
    pub method: TempoMethod,
    /// Set when the raw estimate fell outside the BPM range and was clamped.
    pub clamped: bool,
}

impl TempoEstimate {
    pub fn is_low_confidence(&self) -> bool {
        self.confidence < LOW_CONFIDENCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub comb_alpha: f64,
    pub dbn_tempo_change_prob: f64,
    pub dbn_tempo_penalty: f64,
    /// Width in bins of the Hamming kernel applied to tempo histograms.
    pub smoothing_width: usize,
    /// Length in seconds of the Hamming window applied to beat activations
    /// before ACF and comb scoring; 0 disables it.
    pub activation_smoothing: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            bpm_min: 40.0,
            bpm_max: 250.0,
            comb_alpha: 0.79,
            dbn_tempo_change_prob: 0.02,
            dbn_tempo_penalty: 100.0,
            smoothing_width: 7,
            activation_smoothing: 0.14,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        let bad = |m: &str| Err(PostprocError::InvalidConfig(m.to_string()));
        if !(self.bpm_min > 0.0 && self.bpm_min < self.bpm_max && self.bpm_max.is_finite()) {
            return bad("need 0 < bpm_min < bpm_max");
        }
        if !(self.comb_alpha > 0.0 && self.comb_alpha < 1.0) {
            return bad("comb_alpha must be in (0, 1)");
        }
        if !(self.dbn_tempo_change_prob > 0.0 && self.dbn_tempo_change_prob < 1.0) {
            return bad("dbn_tempo_change_prob must be in (0, 1)");
        }
        if !(self.dbn_tempo_penalty >= 0.0) {
            return bad("dbn_tempo_penalty must be non-negative");
        }
        if self.smoothing_width == 0 {
            return bad("smoothing_width must be at least 1");
        }
        if !(self.activation_smoothing >= 0.0 && self.activation_smoothing.is_finite()) {
            return bad("activation_smoothing must be non-negative");
        }
        Ok(())
    }

    /// Beat periods in whole frames covering the BPM range at `fps`.
    pub fn lag_range(&self, fps: f64) -> LagRange {
        let min = (60.0 * fps / self.bpm_max).ceil().max(1.0) as usize;
        let max = (60.0 * fps / self.bpm_min).floor() as usize;
        LagRange { min, max: max.max(min) }
    }
}

/// Inclusive range of beat periods in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagRange {
    pub min: usize,
    pub max: usize,
}

impl LagRange {
    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.min..=self.max
    }

    pub fn len(&self) -> usize {
        self.max - self.min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Shared precondition of the beat-activation decoders.
fn check_activation(act: &BeatActivation, cfg: &DecoderConfig) -> Result<LagRange, PostprocError> {
    cfg.validate()?;
    let lags = cfg.lag_range(act.fps());
    let required = 2 * lags.min;
    if act.len() < required {
        return Err(PostprocError::InsufficientLength { len: act.len(), required });
    }
    Ok(lags)
}

/// Symmetric Hamming window of `width` points, normalized to unit sum.
fn hamming(width: usize) -> Vec<f64> {
    if width == 1 {
        return vec![1.0];
    }
    let w: Vec<f64> = (0..width)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (width - 1) as f64).cos())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Zero-padded convolution of the activation with a normalized Hamming
/// window of `seconds` (rounded to an odd number of frames).
pub fn smooth_activation(values: &[f64], fps: f64, seconds: f64) -> Vec<f64> {
    let width = (seconds * fps).round() as usize | 1;
    if width <= 1 {
        return values.to_vec();
    }
    let h = hamming(width);
    let half = width / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (lo..=hi).map(|j| values[j] * h[j + half - i]).sum()
        })
        .collect()
}

/// Index of the maximum; earliest index on ties. NaN never wins.
fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_validation() {
        assert!(BeatActivation::new(vec![0.0, 1.0, 0.5], 100.0).is_ok());
        assert!(BeatActivation::new(vec![1.5], 100.0).is_err());
        assert!(BeatActivation::new(vec![], 100.0).is_err());
        assert!(BeatActivation::new(vec![0.5], 0.0).is_err());
        assert!(BeatActivation::new(vec![f64::NAN], 100.0).is_err());
        assert!(TempoActivation::new(vec![0.5, 0.5]).is_ok());
        assert!(TempoActivation::new(vec![0.5, 0.6]).is_err());
        assert!(TempoActivation::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn beat_sequence_text_round_trip() {
        let b = BeatSequence::new(vec![0.0, 0.5, 1.25]).unwrap();
        assert_eq!(BeatSequence::from_text(&b.to_text()).unwrap(), b);
        let parsed = BeatSequence::from_text("# beats\n0.5 1\n\n1.0\t2\n").unwrap();
        assert_eq!(parsed.times(), &[0.5, 1.0]);
        assert!(BeatSequence::from_text("1.0\n0.5\n").is_err());
        assert!(BeatSequence::from_text("abc\n").is_err());
        assert!(BeatSequence::new(vec![-0.1]).is_err());
    }

    #[test]
    fn lag_range_at_100_fps() {
        let lags = DecoderConfig::default().lag_range(100.0);
        assert_eq!((lags.min, lags.max), (24, 150));
    }

    #[test]
    fn smoothing_window() {
        let h = hamming(7);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(h[0], h[6]);
        let mut impulse = vec![0.0; 31];
        impulse[15] = 1.0;
        let s = smooth_activation(&impulse, 100.0, 0.14);
        // 14 frames rounds up to an odd width of 15.
        assert_eq!(s.iter().filter(|&&v| v > 0.0).count(), 15);
        assert_eq!(argmax(s.iter().copied()).unwrap().0, 15);
        assert_eq!(smooth_activation(&impulse, 100.0, 0.0), impulse);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), Some((1, 3.0)));
        assert_eq!(argmax(std::iter::empty()), None);
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        assert!(DecoderConfig { bpm_min: 300.0, ..Default::default() }.validate().is_err());
        assert!(DecoderConfig { comb_alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(DecoderConfig { smoothing_width: 0, ..Default::default() }.validate().is_err());
    }
}
