use super::ModelError;
use crate::eval::{infer_reference_tempo, ClipAnnotation};

/// Training targets for one spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    /// Per-frame beat weight in [0, 1].
    pub beat: Vec<f64>,
    /// Distribution over tempo bins.
    pub tempo: Vec<f64>,
}

/// 1.0 at frame `round(t * fps)` of each beat and 0.5 on the two adjacent
/// frames. Rounding is half away from zero, so 52.5 maps to 53.
pub fn encode_beat_target(beat_times: &[f64], num_frames: usize, fps: f64) -> Result<Vec<f64>, ModelError> {
    let mut target = vec![0.0; num_frames];
    for &t in beat_times {
        let frame = (t * fps).round();
        if !(t >= 0.0) || frame >= num_frames as f64 {
            return Err(ModelError::BeatOutOfRange { time: t, frames: num_frames });
        }
        let frame = frame as usize;
        target[frame] = 1.0;
        for n in [frame.wrapping_sub(1), frame + 1] {
            if let Some(v) = target.get_mut(n) {
                *v = f64::max(*v, 0.5);
            }
        }
    }
    Ok(target)
}

/// 0.5 at bin `round(bpm)` and 0.25 on each neighbour; neighbours outside
/// the bin range are dropped and the rest renormalized.
pub fn encode_tempo_target(bpm: f64, tempo_bins: usize) -> Result<Vec<f64>, ModelError> {
    let bin = bpm.round();
    if !(bpm > 0.0) || bin >= tempo_bins as f64 {
        return Err(ModelError::TempoOutOfRange { bpm, bins: tempo_bins });
    }
    let bin = bin as usize;
    let mut target = vec![0.0; tempo_bins];
    target[bin] = 0.5;
    if bin > 0 {
        target[bin - 1] = 0.25;
    }
    if bin + 1 < tempo_bins {
        target[bin + 1] = 0.25;
    }
    let sum: f64 = target.iter().sum();
    target.iter_mut().for_each(|v| *v /= sum);
    Ok(target)
}

/// Targets for an annotated clip rendered at `fps`. The tempo label is the
/// stored reference BPM, or the median-IBI tempo when none is stored.
pub fn encode_targets(
    annotation: &ClipAnnotation,
    num_frames: usize,
    fps: f64,
    tempo_bins: usize,
) -> Result<FrameTargets, ModelError> {
    let bpm = match annotation.reference_bpm {
        Some(bpm) => bpm,
        None => infer_reference_tempo(annotation).map_err(|e| ModelError::Annotation(e.to_string()))?,
    };
    Ok(FrameTargets {
        beat: encode_beat_target(&annotation.beat_times, num_frames, fps)?,
        tempo: encode_tempo_target(bpm, tempo_bins)?,
    })
}
