//! Tempo accuracy metrics, dataset manifests, segmentation, splits and
//! evaluation reports.

mod io;
mod report;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::frontend::FrontendError;
use crate::model::ModelError;
use crate::postproc::{infer_tempo_from_beats, BeatSequence, DecoderConfig, PostprocError};

pub use io::{
    read_activation, read_annotation, write_activation, write_annotation, DatasetManifest, ManifestEntry,
};
pub use report::{
    average_aggregates, evaluate, ActivationSource, Activations, EvalOptions, EvalRecord, EvalReport,
    FileActivationSource, MethodAggregate, ModelActivationSource,
};

/// Relative tolerance of [`acc1`].
pub const ACC1_TOLERANCE: f64 = 0.04;
/// Tempo multiples accepted by [`acc2`].
pub const ACC2_FACTORS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("tempo must be positive (got {estimated} vs {annotated})")]
    NonPositiveTempo { estimated: f64, annotated: f64 },
    #[error("need at least 2 beats to infer a tempo, got {0}")]
    TooFewBeats(usize),
    #[error("manifest too small: {0}")]
    ManifestTooSmall(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("invalid activation file {path}: {message}")]
    InvalidActivationFile { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
}

/// Ground-truth beats for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipAnnotation {
    pub clip_id: String,
    /// Seconds, strictly ascending.
    pub beat_times: Vec<f64>,
    /// Stored tempo; inferred from the beats when absent.
    pub reference_bpm: Option<f64>,
}

impl ClipAnnotation {
    pub fn new(clip_id: impl Into<String>, beat_times: Vec<f64>, reference_bpm: Option<f64>) -> Result<Self, EvalError> {
        BeatSequence::new(beat_times.clone()).map_err(|e| EvalError::InvalidAnnotation(e.to_string()))?;
        if let Some(bpm) = reference_bpm {
            if !(bpm > 0.0 && bpm.is_finite()) {
                return Err(EvalError::InvalidAnnotation(format!("reference bpm must be positive, got {bpm}")));
            }
        }
        Ok(Self { clip_id: clip_id.into(), beat_times, reference_bpm })
    }

    /// Stored tempo, or the median-IBI tempo of the beats.
    pub fn tempo(&self) -> Result<f64, EvalError> {
        match self.reference_bpm {
            Some(bpm) => Ok(bpm),
            None => infer_reference_tempo(self),
        }
    }
}

fn check_positive(estimated: f64, annotated: f64) -> Result<(), EvalError> {
    if estimated > 0.0 && annotated > 0.0 && estimated.is_finite() && annotated.is_finite() {
        Ok(())
    } else {
        Err(EvalError::NonPositiveTempo { estimated, annotated })
    }
}

/// `|estimated - annotated| <= 4% of annotated`, boundary included.
pub fn acc1(estimated: f64, annotated: f64) -> Result<bool, EvalError> {
    check_positive(estimated, annotated)?;
    Ok(within(estimated, annotated))
}

fn within(estimated: f64, annotated: f64) -> bool {
    (estimated - annotated).abs() <= ACC1_TOLERANCE * annotated
}

/// [`acc1`] against the annotated tempo times 1/3, 1/2, 1, 2 or 3.
pub fn acc2(estimated: f64, annotated: f64) -> Result<bool, EvalError> {
    check_positive(estimated, annotated)?;
    Ok(ACC2_FACTORS.iter().any(|f| within(estimated, f * annotated)))
}

/// `60 / median(IBI)` over the annotated beats, without range clamping.
pub fn infer_reference_tempo(annotation: &ClipAnnotation) -> Result<f64, EvalError> {
    let beats = BeatSequence::new(annotation.beat_times.clone()).map_err(|e| EvalError::InvalidAnnotation(e.to_string()))?;
    let unbounded = DecoderConfig { bpm_min: f64::MIN_POSITIVE, bpm_max: f64::MAX, ..Default::default() };
    match infer_tempo_from_beats(&beats, &unbounded) {
        Ok(est) => Ok(est.bpm),
        Err(PostprocError::TooFewBeats(n)) => Err(EvalError::TooFewBeats(n)),
        Err(e) => Err(e.into()),
    }
}

/// A window `[start, end)` of a longer recording with its re-based beats.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub annotation: ClipAnnotation,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Cut points at the annotated beat nearest each multiple of `target`
/// seconds (the multiple itself when there are no beats). The earlier beat
/// wins a tie. Returns every window, including short ones.
pub fn segment_bounds(duration: f64, annotation: &ClipAnnotation, target: f64) -> Vec<(f64, f64)> {
    if !(duration > 0.0 && target > 0.0) {
        return Vec::new();
    }
    let mut cuts = vec![0.0];
    let mut m = 1;
    while (m as f64) * target < duration {
        let goal = m as f64 * target;
        let cut = annotation
            .beat_times
            .iter()
            .copied()
            .fold(None, |best: Option<f64>, t| match best {
                Some(b) if (b - goal).abs() <= (t - goal).abs() => Some(b),
                _ => Some(t),
            })
            .unwrap_or(goal);
        if cut > *cuts.last().unwrap() && cut < duration {
            cuts.push(cut);
        }
        m += 1;
    }
    cuts.push(duration);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Beat-aligned segments of roughly `target` seconds; segments shorter than
/// `min_len` are dropped. Beats are re-based to each segment start and ids
/// get a `_segNNN` suffix.
pub fn segment_clips(duration: f64, annotation: &ClipAnnotation, target: f64, min_len: f64) -> Vec<Segment> {
    segment_bounds(duration, annotation, target)
        .into_iter()
        .enumerate()
        .filter(|(_, (s, e))| e - s >= min_len)
        .map(|(i, (start, end))| {
            let beat_times = annotation
                .beat_times
                .iter()
                .filter(|&&t| t >= start && t < end)
                .map(|t| t - start)
                .collect();
            Segment {
                start,
                end,
                annotation: ClipAnnotation {
                    clip_id: format!("{}_seg{i:03}", annotation.clip_id),
                    beat_times,
                    reference_bpm: annotation.reference_bpm,
                },
            }
        })
        .collect()
}

/// SplitMix64 (Steele, Lea & Flood). Fixed here so that splits are
/// reproducible independently of any library version.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

/// Sorts the ids, shuffles them with Fisher-Yates driven by
/// [`SplitMix64`] (`j = next % (i + 1)` for `i` from the top down), and puts
/// the first `round(ratio * N)` into the training side. Both sides are kept
/// non-empty.
pub fn split_ids(ids: &[String], ratio: f64, seed: u64) -> Result<SplitSpec, EvalError> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(EvalError::InvalidManifest("duplicate clip ids".into()));
    }
    if ids.len() < 2 {
        return Err(EvalError::ManifestTooSmall(format!("{} entries, need at least 2 to split", ids.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidManifest(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let n = order.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let test_ids = order.split_off(n_train);
    Ok(SplitSpec { train_ids: order, test_ids, seed, ratio })
}

pub fn split_train_test(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitSpec, EvalError> {
    split_ids(&manifest.ids(), ratio, seed)
}
