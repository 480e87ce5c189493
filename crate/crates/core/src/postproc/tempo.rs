use super::{
    argmax, check_activation, hamming, smooth_activation, BeatActivation, BeatSequence, DecoderConfig, LagRange,
    PostprocError, TempoActivation, TempoEstimate, TempoMethod,
};

/// Tempo read off the tempo head: Hamming-smoothed histogram, argmax in the
/// BPM range, parabolic refinement of the peak.
pub fn detect_tempo(activation: &TempoActivation, cfg: &DecoderConfig) -> Result<TempoEstimate, PostprocError> {
    cfg.validate()?;
    let mass = activation.mass();
    let hi = cfg.bpm_max.floor() as usize;
    let lo = cfg.bpm_min.ceil() as usize;
    if mass.len() <= hi {
        return Err(PostprocError::RangeUncovered { bins: mass.len(), bpm_max: cfg.bpm_max });
    }
    let smoothed = smooth_histogram(mass, cfg.smoothing_width);
    let (offset, peak) = argmax(smoothed[lo..=hi].iter().copied()).expect("non-empty range");
    let b = lo + offset;
    let mut bpm = b as f64;
    if b > 0 && b + 1 < smoothed.len() {
        let (l, c, r) = (smoothed[b - 1], smoothed[b], smoothed[b + 1]);
        let denom = 2.0 * (2.0 * c - l - r);
        if denom > 0.0 {
            bpm += ((r - l) / denom).clamp(-0.5, 0.5);
        }
    }
    let in_range: f64 = smoothed[lo..=hi].iter().sum();
    let clamped = bpm < cfg.bpm_min || bpm > cfg.bpm_max;
    Ok(TempoEstimate {
        bpm: bpm.clamp(cfg.bpm_min, cfg.bpm_max),
        confidence: if in_range > 0.0 { peak / in_range } else { 0.0 },
        method: TempoMethod::Direct,
        clamped,
    })
}

/// Same-length convolution with a normalized Hamming kernel; near the edges
/// the kernel is truncated and renormalized. Mirror-image taps are summed
/// before weighting so a symmetric input gives an exactly symmetric output.
fn smooth_histogram(mass: &[f64], width: usize) -> Vec<f64> {
    let width = width | 1;
    if width == 1 {
        return mass.to_vec();
    }
    let h = hamming(width);
    let half = width / 2;
    let n = mass.len();
    (0..n)
        .map(|i| {
            let mut acc = h[half] * mass[i];
            let mut norm = h[half];
            for j in 1..=half {
                let left = i.checked_sub(j).map(|k| mass[k]);
                let right = mass.get(i + j).copied();
                let pair = left.unwrap_or(0.0) + right.unwrap_or(0.0);
                acc += h[half + j] * pair;
                norm += h[half + j] * (left.is_some() as u8 + right.is_some() as u8) as f64;
            }
            acc / norm
        })
        .collect()
}

/// Unnormalized autocorrelation `r[l] = sum_n s[n] s[n + l]` of the smoothed
/// activation for every lag in range (0 for lags beyond the signal).
pub fn acf_scores(act: &BeatActivation, cfg: &DecoderConfig) -> Result<(LagRange, Vec<f64>), PostprocError> {
    let lags = check_activation(act, cfg)?;
    let s = smooth_activation(act.values(), act.fps(), cfg.activation_smoothing);
    let scores = lags
        .iter()
        .map(|l| if l >= s.len() { 0.0 } else { s[..s.len() - l].iter().zip(&s[l..]).map(|(a, b)| a * b).sum() })
        .collect();
    Ok((lags, scores))
}

pub fn acf_tempo(act: &BeatActivation, cfg: &DecoderConfig) -> Result<TempoEstimate, PostprocError> {
    let (lags, scores) = acf_scores(act, cfg)?;
    Ok(lag_estimate(act.fps(), lags, &scores, TempoMethod::Acf))
}

/// Resonance of a feedback comb `y[n] = s[n] + alpha y[n - l]` at every lag:
/// `mean_n s[n] y[n]` on the smoothed activation.
pub fn comb_scores(act: &BeatActivation, cfg: &DecoderConfig) -> Result<(LagRange, Vec<f64>), PostprocError> {
    let lags = check_activation(act, cfg)?;
    if act.values().iter().all(|&v| v == 0.0) {
        return Err(PostprocError::FlatActivation);
    }
    let s = smooth_activation(act.values(), act.fps(), cfg.activation_smoothing);
    let mut y = vec![0.0; s.len()];
    let scores = lags
        .iter()
        .map(|l| {
            y.copy_from_slice(&s);
            for n in l..y.len() {
                y[n] += cfg.comb_alpha * y[n - l];
            }
            s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / s.len() as f64
        })
        .collect();
    Ok((lags, scores))
}

pub fn comb_tempo(act: &BeatActivation, cfg: &DecoderConfig) -> Result<TempoEstimate, PostprocError> {
    let (lags, scores) = comb_scores(act, cfg)?;
    Ok(lag_estimate(act.fps(), lags, &scores, TempoMethod::Comb))
}

pub(super) fn best_lag(lags: LagRange, scores: &[f64]) -> usize {
    lags.min + argmax(scores.iter().copied()).map_or(0, |(i, _)| i)
}

fn lag_estimate(fps: f64, lags: LagRange, scores: &[f64], method: TempoMethod) -> TempoEstimate {
    let (i, peak) = argmax(scores.iter().copied()).expect("lag range is never empty");
    let total: f64 = scores.iter().sum();
    TempoEstimate {
        bpm: 60.0 * fps / (lags.min + i) as f64,
        confidence: if total > 0.0 { (peak / total).clamp(0.0, 1.0) } else { 0.0 },
        method,
        clamped: false,
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `60 / median(IBI)`, clamped to the BPM range. Confidence is the share of
/// intervals within 10% of the median.
pub fn infer_tempo_from_beats(beats: &BeatSequence, cfg: &DecoderConfig) -> Result<TempoEstimate, PostprocError> {
    cfg.validate()?;
    if beats.len() < 2 {
        return Err(PostprocError::TooFewBeats(beats.len()));
    }
    let ibis = beats.intervals();
    let mut sorted = ibis.clone();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let raw = 60.0 / med;
    let close = ibis.iter().filter(|&&d| (d - med).abs() <= 0.1 * med).count();
    Ok(TempoEstimate {
        bpm: raw.clamp(cfg.bpm_min, cfg.bpm_max),
        confidence: close as f64 / ibis.len() as f64,
        method: TempoMethod::BeatInference,
        clamped: raw < cfg.bpm_min || raw > cfg.bpm_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulses(period: usize, first: usize, frames: usize) -> BeatActivation {
        let mut v = vec![0.0; frames];
        for n in (first..frames).step_by(period) {
            v[n] = 1.0;
        }
        BeatActivation::new(v, 100.0).unwrap()
    }

    fn mass_around(centre: usize, values: &[f64]) -> TempoActivation {
        let mut m = vec![0.0; 300];
        let half = values.len() / 2;
        for (i, v) in values.iter().enumerate() {
            m[centre + i - half] = *v;
        }
        TempoActivation::from_weights(m).unwrap()
    }

    #[test]
    fn direct_detection() {
        let cfg = DecoderConfig::default();
        assert_eq!(detect_tempo(&mass_around(120, &[1.0]), &cfg).unwrap().bpm, 120.0);
        assert_eq!(detect_tempo(&mass_around(120, &[0.2, 0.5, 0.2]), &cfg).unwrap().bpm, 120.0);
        let raw = DecoderConfig { smoothing_width: 1, ..Default::default() };
        let est = detect_tempo(&mass_around(120, &[0.2, 0.5, 0.3]), &raw).unwrap();
        // Vertex of the parabola through (119, .2), (120, .5), (121, .3).
        let expected = 120.0 + (0.3 - 0.2) / (2.0 * (2.0 * 0.5 - 0.2 - 0.3));
        assert!((est.bpm - expected).abs() < 1e-12);
        assert!((est.bpm - 120.1).abs() < 1e-12);
        assert_eq!(est.method, TempoMethod::Direct);
    }

    #[test]
    fn detection_ignores_out_of_range_peaks() {
        let mut m = vec![0.0; 300];
        m[280] = 0.7;
        m[100] = 0.3;
        let est = detect_tempo(&TempoActivation::new(m).unwrap(), &DecoderConfig::default()).unwrap();
        assert_eq!(est.bpm, 100.0);
        let narrow = TempoActivation::new(vec![1.0 / 200.0; 200]).unwrap();
        assert!(matches!(
            detect_tempo(&narrow, &DecoderConfig::default()),
            Err(PostprocError::RangeUncovered { .. })
        ));
    }

    #[test]
    fn acf_on_impulse_trains() {
        let cfg = DecoderConfig::default();
        assert_eq!(acf_tempo(&impulses(50, 0, 1000), &cfg).unwrap().bpm, 120.0);
        assert_eq!(acf_tempo(&impulses(30, 0, 1000), &cfg).unwrap().bpm, 200.0);
        let short = BeatActivation::new(vec![0.0; 47], 100.0).unwrap();
        assert_eq!(
            acf_tempo(&short, &cfg),
            Err(PostprocError::InsufficientLength { len: 47, required: 48 })
        );
    }

    #[test]
    fn acf_matches_direct_sum() {
        let cfg = DecoderConfig { activation_smoothing: 0.0, ..Default::default() };
        let act = impulses(37, 5, 600);
        let (lags, scores) = acf_scores(&act, &cfg).unwrap();
        let v = act.values();
        for (i, l) in lags.iter().enumerate() {
            let mut r = 0.0;
            for n in 0..v.len() {
                if n + l < v.len() {
                    r += v[n] * v[n + l];
                }
            }
            assert_eq!(scores[i], r);
        }
    }

    #[test]
    fn comb_on_impulse_trains() {
        let cfg = DecoderConfig::default();
        assert_eq!(comb_tempo(&impulses(50, 0, 1000), &cfg).unwrap().bpm, 120.0);
        let zero = BeatActivation::new(vec![0.0; 500], 100.0).unwrap();
        assert_eq!(comb_tempo(&zero, &cfg), Err(PostprocError::FlatActivation));
    }

    #[test]
    fn comb_survives_uniform_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut v = impulses(50, 0, 1000).values().to_vec();
        for x in &mut v {
            *x = (*x + rng.random_range(0.0..0.05)).min(1.0);
        }
        let act = BeatActivation::new(v, 100.0).unwrap();
        assert_eq!(comb_tempo(&act, &DecoderConfig::default()).unwrap().bpm, 120.0);
    }

    #[test]
    fn beat_inference() {
        let cfg = DecoderConfig::default();
        let grid = BeatSequence::new((0..=20).map(|k| k as f64 * 0.5).collect()).unwrap();
        let est = infer_tempo_from_beats(&grid, &cfg).unwrap();
        assert_eq!((est.bpm, est.confidence, est.clamped), (120.0, 1.0, false));

        assert_eq!(
            infer_tempo_from_beats(&BeatSequence::new(vec![1.0]).unwrap(), &cfg),
            Err(PostprocError::TooFewBeats(1))
        );

        let mut times = vec![0.0];
        for k in 0..10 {
            let step = if k == 4 { 1.0 } else { 0.5 };
            times.push(times.last().unwrap() + step);
        }
        let est = infer_tempo_from_beats(&BeatSequence::new(times).unwrap(), &cfg).unwrap();
        assert_eq!(est.bpm, 120.0);
        assert!((est.confidence - 0.9).abs() < 1e-12);

        let slow = BeatSequence::new(vec![0.0, 2.0, 4.0]).unwrap();
        let est = infer_tempo_from_beats(&slow, &cfg).unwrap();
        assert_eq!((est.bpm, est.clamped), (40.0, true));
    }
}
