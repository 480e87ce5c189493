//! Audio decoding and log-filterbank spectrograms.
//!
//! Frames are placed at sample positions `round(t * sample_rate / fps)`, so
//! non-integer hops (44100 / 95) do not accumulate drift. Each frame is a
//! Hann-windowed FFT whose magnitudes are pooled by triangular filters with
//! logarithmically spaced centers and compressed with `ln(x + log_offset)`.

use std::path::Path;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The only sample rate the front-end accepts; inputs are not resampled.
pub const REQUIRED_SAMPLE_RATE: u32 = 44_100;

/// Frame rates used for training-time augmentation.
pub const AUGMENT_FPS: [f64; 3] = [95.0, 100.0, 105.0];

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("clip too short: {samples} samples, need at least one hop of {hop}")]
    ClipTooShort { samples: usize, hop: usize },
    #[error("invalid frontend config: {0}")]
    InvalidConfig(String),
    #[error("unsupported sample rate {0} Hz (expected {REQUIRED_SAMPLE_RATE} Hz)")]
    UnsupportedSampleRate(u32),
}

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FrontendError> {
        if sample_rate == 0 {
            return Err(FrontendError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(FrontendError::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of the samples in `[start, end)` seconds, clamped to the clip.
    pub fn slice_seconds(&self, start: f64, end: f64) -> AudioClip {
        let sr = self.sample_rate as f64;
        let a = ((start * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = ((end * sr).round().max(0.0) as usize).clamp(a, self.samples.len());
        AudioClip { samples: self.samples[a..b].to_vec(), sample_rate: self.sample_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    /// Frames per second.
    pub fps: f64,
    /// FFT window length in samples (power of two).
    pub window_size: usize,
    pub num_bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added before the logarithm; silence maps to `ln(log_offset)`.
    pub log_offset: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { fps: 100.0, window_size: 2048, num_bands: 81, fmin: 30.0, fmax: 17_000.0, log_offset: 1.0 }
    }
}

impl FrontendConfig {
    pub fn with_fps(&self, fps: f64) -> Self {
        Self { fps, ..self.clone() }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FrontendError> {
        let bad = |msg: String| Err(FrontendError::InvalidConfig(msg));
        let sr = sample_rate as f64;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !self.window_size.is_power_of_two() || self.window_size < 2 {
            return bad(format!("window_size must be a power of two, got {}", self.window_size));
        }
        if (self.window_size as f64) < sr / self.fps {
            return bad(format!(
                "window_size {} shorter than the hop {:.1} at {} fps",
                self.window_size,
                sr / self.fps,
                self.fps
            ));
        }
        if self.num_bands == 0 {
            return bad("num_bands must be at least 1".into());
        }
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax <= sr / 2.0) {
            return bad(format!(
                "need 0 < fmin < fmax <= {}, got fmin={} fmax={}",
                sr / 2.0,
                self.fmin,
                self.fmax
            ));
        }
        if !(self.log_offset.is_finite() && self.log_offset > 0.0) {
            return bad(format!("log_offset must be positive, got {}", self.log_offset));
        }
        Ok(())
    }
}

/// Frames x bands matrix of log filterbank magnitudes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    num_frames: usize,
    num_bands: usize,
    fps: f64,
    band_centers: Vec<f64>,
}

impl Spectrogram {
    pub fn from_parts(
        values: Vec<f64>,
        num_frames: usize,
        num_bands: usize,
        fps: f64,
        band_centers: Vec<f64>,
    ) -> Result<Self, FrontendError> {
        if values.len() != num_frames * num_bands {
            return Err(FrontendError::InvalidConfig(format!(
                "{} values for a {num_frames}x{num_bands} spectrogram",
                values.len()
            )));
        }
        if band_centers.len() != num_bands {
            return Err(FrontendError::InvalidConfig("band_centers length mismatch".into()));
        }
        if !(fps > 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(FrontendError::InvalidConfig("non-finite spectrogram or fps".into()));
        }
        Ok(Self { values, num_frames, num_bands, fps, band_centers })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }
    pub fn num_bands(&self) -> usize {
        self.num_bands
    }
    pub fn fps(&self) -> f64 {
        self.fps
    }
    pub fn band_centers(&self) -> &[f64] {
        &self.band_centers
    }
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_bands..(t + 1) * self.num_bands]
    }

    /// Per-band mean over all frames.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.num_bands];
        for t in 0..self.num_frames {
            for (m, v) in mean.iter_mut().zip(self.frame(t)) {
                *m += v;
            }
        }
        let n = self.num_frames.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Copy shifted forward in time by `shift` frames, padding the start with
    /// the silence value and dropping frames past the original length.
    pub fn shifted(&self, shift: usize, fill: f64) -> Self {
        let mut values = vec![fill; self.values.len()];
        let keep = self.num_frames.saturating_sub(shift) * self.num_bands;
        values[shift.min(self.num_frames) * self.num_bands..].copy_from_slice(&self.values[..keep]);
        Self { values, ..self.clone() }
    }
}

/// Number of frames for `num_samples` at `fps`: `ceil(num_samples * fps / sample_rate)`.
pub fn frame_count(num_samples: usize, sample_rate: u32, fps: f64) -> usize {
    (num_samples as f64 * fps / sample_rate as f64).ceil() as usize
}

/// Hop length in samples, `round(sample_rate / fps)`.
pub fn hop_length(sample_rate: u32, fps: f64) -> usize {
    (sample_rate as f64 / fps).round() as usize
}

/// Triangular filters over FFT bins, each normalized to unit area.
#[derive(Debug, Clone)]
pub struct Filterbank {
    centers: Vec<f64>,
    /// (first bin, weights) per band.
    bands: Vec<(usize, Vec<f64>)>,
}

impl Filterbank {
    pub fn new(num_bands: usize, fmin: f64, fmax: f64, window_size: usize, sample_rate: u32) -> Self {
        let num_bins = window_size / 2 + 1;
        let bin_hz = sample_rate as f64 / window_size as f64;
        let ratio = if num_bands > 1 { (fmax / fmin).powf(1.0 / (num_bands - 1) as f64) } else { 2.0 };
        // num_bands + 2 points: one extra edge below fmin and above fmax.
        let points: Vec<f64> = (0..num_bands + 2).map(|i| fmin * ratio.powi(i as i32 - 1)).collect();
        let centers = points[1..=num_bands].to_vec();

        let bands = (0..num_bands)
            .map(|b| {
                let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
                let first = ((lo / bin_hz).floor().max(0.0) as usize).min(num_bins - 1);
                let last = ((hi / bin_hz).ceil() as usize).min(num_bins - 1);
                let mut weights: Vec<f64> = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f <= mid { (f - lo) / (mid - lo) } else { (hi - f) / (hi - mid) };
                        w.max(0.0)
                    })
                    .collect();
                let sum: f64 = weights.iter().sum();
                if sum > 0.0 {
                    weights.iter_mut().for_each(|w| *w /= sum);
                    (first, weights)
                } else {
                    // Narrower than one bin: take the bin nearest the center.
                    let nearest = ((mid / bin_hz).round() as usize).min(num_bins - 1);
                    (nearest, vec![1.0])
                }
            })
            .collect();
        Self { centers, bands }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// Weight of FFT bin `bin` in band `band`.
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let (first, w) = &self.bands[band];
        if bin < *first {
            0.0
        } else {
            w.get(bin - first).copied().unwrap_or(0.0)
        }
    }

    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&magnitudes[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Symmetric Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable STFT + filterbank pipeline for one configuration.
pub struct SpectrogramProcessor {
    cfg: FrontendConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Filterbank,
}

impl SpectrogramProcessor {
    pub fn new(cfg: &FrontendConfig, sample_rate: u32) -> Result<Self, FrontendError> {
        if sample_rate != REQUIRED_SAMPLE_RATE {
            return Err(FrontendError::UnsupportedSampleRate(sample_rate));
        }
        cfg.validate(sample_rate)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.window_size);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window: hann_window(cfg.window_size),
            fft,
            filterbank: Filterbank::new(cfg.num_bands, cfg.fmin, cfg.fmax, cfg.window_size, sample_rate),
        })
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    pub fn process(&self, clip: &AudioClip) -> Result<Spectrogram, FrontendError> {
        if clip.sample_rate() != self.sample_rate {
            return Err(FrontendError::UnsupportedSampleRate(clip.sample_rate()));
        }
        let hop = hop_length(self.sample_rate, self.cfg.fps);
        if clip.len() < hop.max(1) {
            return Err(FrontendError::ClipTooShort { samples: clip.len(), hop });
        }
        let n = self.cfg.window_size;
        let half = (n / 2) as i64;
        let frames = frame_count(clip.len(), self.sample_rate, self.cfg.fps);
        let bands = self.cfg.num_bands;
        let step = self.sample_rate as f64 / self.cfg.fps;
        let samples = clip.samples();

        let mut values = vec![0.0; frames * bands];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mags = vec![0.0; n / 2 + 1];
        for t in 0..frames {
            let center = (t as f64 * step).round() as i64;
            for (i, c) in buf.iter_mut().enumerate() {
                let idx = center - half + i as i64;
                let s = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] } else { 0.0 };
                *c = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            let row = &mut values[t * bands..(t + 1) * bands];
            self.filterbank.apply(&mags, row);
            for v in row.iter_mut() {
                *v = (*v + self.cfg.log_offset).ln();
            }
        }
        Spectrogram::from_parts(values, frames, bands, self.cfg.fps, self.filterbank.centers().to_vec())
    }
}

pub fn compute_spectrogram(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Spectrogram, FrontendError> {
    SpectrogramProcessor::new(cfg, clip.sample_rate())?.process(clip)
}

/// One spectrogram of the same audio per frame rate in `fps_set`.
pub fn augment_fps(
    clip: &AudioClip,
    cfg: &FrontendConfig,
    fps_set: &[f64],
) -> Result<Vec<Spectrogram>, FrontendError> {
    if fps_set.is_empty() {
        return Err(FrontendError::InvalidConfig("fps_set must not be empty".into()));
    }
    fps_set.iter().map(|&fps| compute_spectrogram(clip, &cfg.with_fps(fps))).collect()
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), downmixed to mono.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip, FrontendError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(e, path))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if !matches!(spec.bits_per_sample, 8 | 16 | 24 | 32) {
                return Err(FrontendError::UnsupportedEncoding(format!(
                    "{}-bit integer PCM",
                    spec.bits_per_sample
                )));
            }
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound_error(e, path))?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(FrontendError::UnsupportedEncoding(format!(
                    "{}-bit float PCM",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound_error(e, path))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

fn map_hound_error(err: hound::Error, path: &Path) -> FrontendError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            FrontendError::FileNotFound(path.display().to_string())
        }
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            FrontendError::MalformedHeader(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(e) => FrontendError::Io(e),
        hound::Error::Unsupported => {
            FrontendError::UnsupportedEncoding(format!("{}: compressed or unknown format", path.display()))
        }
        other => FrontendError::MalformedHeader(format!("{}: {other}", path.display())),
    }
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), FrontendError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(e) => FrontendError::Io(e),
        other => FrontendError::InvalidAudio(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in clip.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

/// Duration in seconds read from a WAV header without decoding samples.
pub fn wav_duration(path: impl AsRef<Path>) -> Result<f64, FrontendError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(e, path))?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}
