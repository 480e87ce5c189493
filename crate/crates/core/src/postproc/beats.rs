use super::tempo::{acf_scores, best_lag, comb_scores};
use super::{argmax, BeatActivation, BeatSequence, DecoderConfig, PostprocError, LOG_FLOOR};

/// Maximum a-posteriori beat chain. Each beat contributes `log(act[n])`; each
/// gap `g` between consecutive beats contributes `-(g - l)^2 / (2 sigma^2)`
/// with `l` the ACF period and `sigma = l / 8`. Gaps are limited to the lag
/// range. The first beat must fall within `l + l/4` frames of the start and
/// the last within the same distance of the end, otherwise the best chain
/// would be a single beat.
pub fn crf_beats(act: &BeatActivation, cfg: &DecoderConfig) -> Result<BeatSequence, PostprocError> {
    let (lags, scores) = acf_scores(act, cfg)?;
    let period = best_lag(lags, &scores);
    let values = act.values();
    let frames = values.len();
    let edge = period + (period as f64 / 4.0).round() as usize;
    let sigma = period as f64 / 8.0;
    let pair: Vec<f64> = lags
        .iter()
        .map(|g| {
            let d = g as f64 - period as f64;
            -d * d / (2.0 * sigma * sigma)
        })
        .collect();

    let mut score = vec![f64::NEG_INFINITY; frames];
    let mut prev = vec![usize::MAX; frames];
    for n in 0..frames {
        let mut best = if n <= edge { 0.0 } else { f64::NEG_INFINITY };
        let mut from = usize::MAX;
        // Largest gap first so the earliest predecessor wins ties.
        for g in lags.iter().rev() {
            if g > n {
                continue;
            }
            let s = score[n - g] + pair[g - lags.min];
            if s > best {
                best = s;
                from = n - g;
            }
        }
        if best > f64::NEG_INFINITY {
            score[n] = values[n].max(LOG_FLOOR).ln() + best;
            prev[n] = from;
        }
    }

    let tail_start = frames.saturating_sub(edge + 1);
    let (offset, _) = argmax(score[tail_start..].iter().copied()).expect("non-empty tail");
    let mut n = tail_start + offset;
    let mut beats = vec![n];
    while prev[n] != usize::MAX {
        n = prev[n];
        beats.push(n);
    }
    beats.reverse();
    Ok(BeatSequence::from_frames(&beats, act.fps()))
}

/// Regular grid at the comb-filter period, phased to the strongest
/// activation sum, with each grid point moved to the activation maximum
/// within a tenth of a period.
pub fn comb_beats(act: &BeatActivation, cfg: &DecoderConfig) -> Result<BeatSequence, PostprocError> {
    let (lags, scores) = comb_scores(act, cfg)?;
    let period = best_lag(lags, &scores);
    let values = act.values();
    let frames = values.len();
    let phase_scores = (0..period.min(frames)).map(|p| values[p..].iter().step_by(period).sum::<f64>());
    let (phase, _) = argmax(phase_scores).expect("period is positive");
    let radius = (period as f64 / 10.0).round() as usize;
    let beats: Vec<usize> = (phase..frames)
        .step_by(period)
        .map(|g| {
            let lo = g.saturating_sub(radius);
            let hi = (g + radius).min(frames - 1);
            lo + argmax(values[lo..=hi].iter().copied()).expect("non-empty window").0
        })
        .collect();
    Ok(BeatSequence::from_frames(&beats, act.fps()))
}
