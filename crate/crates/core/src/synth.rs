//! Synthetic click tracks and beat activations with known ground truth, and
//! a brute-force tempo oracle.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    write_activation, write_annotation, ActivationSource, Activations, ClipAnnotation, DatasetManifest, EvalError,
    ManifestEntry,
};
use crate::frontend::{wav_duration, write_wav, AudioClip, FrontendError};
use crate::postproc::{BeatActivation, TempoActivation};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("activation too short: {len} frames, need at least {required}")]
    InsufficientLength { len: usize, required: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickTrackSpec {
    pub bpm: f64,
    /// Seconds.
    pub duration: f64,
    pub sample_rate: u32,
    pub click_freq: f64,
    /// Seconds.
    pub click_len: f64,
    /// Standard deviation of the Gaussian beat displacement, seconds.
    pub timing_jitter_std: f64,
    pub seed: u64,
}

impl Default for ClickTrackSpec {
    fn default() -> Self {
        Self {
            bpm: 120.0,
            duration: 10.0,
            sample_rate: 44_100,
            click_freq: 1000.0,
            click_len: 0.02,
            timing_jitter_std: 0.0,
            seed: 0,
        }
    }
}

impl ClickTrackSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.bpm > 0.0 && self.bpm < 1000.0) {
            return bad(format!("bpm must be in (0, 1000), got {}", self.bpm));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.click_freq > 0.0 && self.click_len > 0.0) {
            return bad("click_freq and click_len must be positive".into());
        }
        if !(self.timing_jitter_std >= 0.0) {
            return bad("timing_jitter_std must be non-negative".into());
        }
        Ok(())
    }
}

/// Grid `phase + k * 60 / bpm` below `duration`, each time displaced by
/// seeded Gaussian jitter. Displaced times outside `[0, duration)` or out of
/// order are dropped.
fn jittered_grid(bpm: f64, phase: f64, duration: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = (jitter > 0.0).then(|| Normal::new(0.0, jitter).expect("valid std"));
    let mut times: Vec<f64> = Vec::new();
    for k in 0.. {
        let t = phase + k as f64 * 60.0 / bpm;
        if t >= duration {
            break;
        }
        let t = t + normal.as_ref().map_or(0.0, |n| n.sample(rng));
        if t >= 0.0 && t < duration && times.last().is_none_or(|&p| t > p) {
            times.push(t);
        }
    }
    times
}

/// Decaying sinusoid bursts (amplitude 0.5, decay constant `click_len / 4`)
/// at every beat, over silence.
pub fn gen_click_track(spec: &ClickTrackSpec) -> Result<(AudioClip, ClipAnnotation), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beats = jittered_grid(spec.bpm, 0.0, spec.duration, spec.timing_jitter_std, &mut rng);
    let sr = spec.sample_rate as f64;
    let n = (spec.duration * sr).round() as usize;
    let click_samples = (spec.click_len * sr).round() as usize;
    let tau = spec.click_len / 4.0;
    let click: Vec<f64> = (0..click_samples)
        .map(|i| {
            let t = i as f64 / sr;
            0.5 * (-t / tau).exp() * (2.0 * std::f64::consts::PI * spec.click_freq * t).sin()
        })
        .collect();
    let mut samples = vec![0.0; n];
    for &t in &beats {
        let start = (t * sr).round() as usize;
        for (s, c) in samples.iter_mut().skip(start).zip(&click) {
            *s += c;
        }
    }
    let clip = AudioClip::new(samples, spec.sample_rate)?;
    let annotation = ClipAnnotation::new(format!("click_{}bpm", spec.bpm), beats, Some(spec.bpm))?;
    Ok((clip, annotation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticActivationSpec {
    pub bpm: f64,
    pub fps: f64,
    /// Seconds.
    pub duration: f64,
    /// Triangle half-width in frames.
    pub pulse_width: usize,
    pub noise_std: f64,
    /// Time of the first beat, seconds.
    pub phase: f64,
    /// Standard deviation of the Gaussian beat displacement, seconds.
    pub timing_jitter_std: f64,
    pub seed: u64,
}

impl Default for SyntheticActivationSpec {
    fn default() -> Self {
        Self {
            bpm: 120.0,
            fps: 100.0,
            duration: 10.0,
            pulse_width: 1,
            noise_std: 0.0,
            phase: 0.0,
            timing_jitter_std: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticActivationSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if !(self.bpm > 0.0 && self.bpm < 1000.0) {
            return bad("bpm must be in (0, 1000)");
        }
        if !(self.fps > 0.0 && self.duration > 0.0 && self.duration.is_finite()) {
            return bad("fps and duration must be positive");
        }
        if self.pulse_width < 1 {
            return bad("pulse_width must be at least 1");
        }
        if !(self.noise_std >= 0.0 && self.timing_jitter_std >= 0.0 && self.phase >= 0.0) {
            return bad("noise_std, timing_jitter_std and phase must be non-negative");
        }
        Ok(())
    }
}

/// Adds a triangle of height 1 and half-width `width` centred on each beat
/// frame, combining overlaps with `max`.
fn draw_pulses(values: &mut [f64], beats: &[f64], fps: f64, width: usize) {
    let n = values.len() as i64;
    for &t in beats {
        let c = (t * fps + 0.5).floor() as i64;
        for d in -(width as i64)..=(width as i64) {
            let i = c + d;
            if (0..n).contains(&i) {
                let v = 1.0 - d.unsigned_abs() as f64 / (width + 1) as f64;
                let slot = &mut values[i as usize];
                *slot = slot.max(v);
            }
        }
    }
}

/// Triangular pulses at the (jittered) beat frames plus Gaussian noise,
/// clipped to [0, 1]. The annotation holds the jittered beat times.
pub fn gen_activation(spec: &SyntheticActivationSpec) -> Result<(BeatActivation, ClipAnnotation), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beats = jittered_grid(spec.bpm, spec.phase, spec.duration, spec.timing_jitter_std, &mut rng);
    let frames = (spec.duration * spec.fps).ceil() as usize;
    let mut values = vec![0.0; frames];
    draw_pulses(&mut values, &beats, spec.fps, spec.pulse_width);
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("valid std");
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let act = BeatActivation::new(values, spec.fps).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let annotation = ClipAnnotation::new(format!("act_{}bpm", spec.bpm), beats, Some(spec.bpm))?;
    Ok((act, annotation))
}

/// Tempo oracle: scores every whole-frame lag between `60 fps / bpm_max`
/// and `60 fps / bpm_min` by autocorrelation normalized by signal energy,
/// each computed by its own loop over frames, and returns `60 fps / best`.
/// The smallest lag wins ties, so a flat input gives the top of the range.
pub fn brute_force_tempo(act: &BeatActivation, bpm_min: f64, bpm_max: f64) -> Result<f64, SynthError> {
    if !(bpm_min > 0.0 && bpm_min < bpm_max) {
        return Err(SynthError::InvalidSpec("need 0 < bpm_min < bpm_max".into()));
    }
    let a = act.values();
    let fps = act.fps();
    let lag_min = ((60.0 * fps / bpm_max).ceil() as usize).max(1);
    let lag_max = (60.0 * fps / bpm_min).floor() as usize;
    if a.len() < 2 * lag_min {
        return Err(SynthError::InsufficientLength { len: a.len(), required: 2 * lag_min });
    }
    let mut energy = 0.0;
    for x in a {
        energy += x * x;
    }
    let mut best_lag = lag_min;
    let mut best_score = f64::NEG_INFINITY;
    for lag in lag_min..=lag_max {
        let mut r = 0.0;
        let mut n = 0;
        while n + lag < a.len() {
            r += a[n] * a[n + lag];
            n += 1;
        }
        let score = if energy > 0.0 { r / energy } else { 0.0 };
        if score > best_score {
            best_score = score;
            best_lag = lag;
        }
    }
    Ok(60.0 * fps / best_lag as f64)
}

/// Activations built from the annotated beats instead of a model: unit
/// triangles at each beat and a tempo distribution voted by the inter-beat
/// intervals.
#[derive(Debug, Clone)]
pub struct OracleActivationSource {
    pub fps: f64,
    pub pulse_width: usize,
    pub tempo_bins: usize,
}

impl Default for OracleActivationSource {
    fn default() -> Self {
        Self { fps: 100.0, pulse_width: 1, tempo_bins: 300 }
    }
}

impl OracleActivationSource {
    pub fn beat_activation(&self, annotation: &ClipAnnotation, duration: f64) -> Result<BeatActivation, EvalError> {
        let frames = ((duration * self.fps).ceil() as usize).max(1);
        let mut values = vec![0.0; frames];
        draw_pulses(&mut values, &annotation.beat_times, self.fps, self.pulse_width);
        Ok(BeatActivation::new(values, self.fps)?)
    }

    /// Each interval votes for `60 / ibi`, split linearly between the two
    /// nearest bins. `None` with fewer than two beats.
    pub fn tempo_activation(&self, annotation: &ClipAnnotation) -> Option<TempoActivation> {
        let mut weights = vec![0.0; self.tempo_bins];
        for w in annotation.beat_times.windows(2) {
            let bpm = 60.0 / (w[1] - w[0]);
            let lo = bpm.floor();
            if lo < 0.0 || lo as usize + 1 >= self.tempo_bins {
                continue;
            }
            let frac = bpm - lo;
            weights[lo as usize] += 1.0 - frac;
            weights[lo as usize + 1] += frac;
        }
        TempoActivation::from_weights(weights).ok()
    }
}

impl ActivationSource for OracleActivationSource {
    fn activations(&self, manifest: &DatasetManifest, entry: &ManifestEntry, annotation: &ClipAnnotation) -> Result<Activations, EvalError> {
        let audio = manifest.resolve(&entry.audio);
        let duration = match wav_duration(&audio) {
            Ok(d) => d,
            Err(FrontendError::FileNotFound(_)) => annotation.beat_times.last().map_or(1.0, |t| t + 1.0),
            Err(e) => return Err(e.into()),
        };
        Ok(Activations { beat: self.beat_activation(annotation, duration)?, tempo: self.tempo_activation(annotation) })
    }
}

/// Writes `clipNNN.wav` and `clipNNN.beats` for every spec into `dir`,
/// plus `clipNNN.act` oracle activations when `with_activations` is set, and
/// a `manifest.json` referencing them with relative paths.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    name: &str,
    specs: &[ClickTrackSpec],
    with_activations: bool,
) -> Result<DatasetManifest, SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let oracle = OracleActivationSource::default();
    let mut entries = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = format!("clip{i:03}");
        let (clip, mut annotation) = gen_click_track(spec)?;
        annotation.clip_id = id.clone();
        let audio = format!("{id}.wav");
        let beats = format!("{id}.beats");
        write_wav(dir.join(&audio), &clip)?;
        write_annotation(dir.join(&beats), &annotation)?;
        let activation = if with_activations {
            let file = format!("{id}.act");
            write_activation(dir.join(&file), &oracle.beat_activation(&annotation, spec.duration)?)?;
            Some(file.into())
        } else {
            None
        };
        entries.push(ManifestEntry { id, audio: audio.into(), beats: beats.into(), bpm: Some(spec.bpm), activation });
    }
    let mut manifest = DatasetManifest::new(name, entries)?;
    manifest.save(dir.join("manifest.json"))?;
    manifest.base_dir = dir.to_path_buf();
    Ok(manifest)
}
