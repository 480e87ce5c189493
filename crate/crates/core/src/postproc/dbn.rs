//! Tempo/phase state-space model decoded with Viterbi.
//!
//! A state is `(tau, phi)`: the beat period in frames and the number of
//! frames until the next beat. `phi` counts down by one per frame; at
//! `phi = 0` a beat is emitted and the model restarts at `(tau', tau' - 1)`,
//! keeping `tau` with probability `1 - p` or jumping to another period with
//! log-probability `log p - lambda |log(tau' / tau)|`.
//!
//! Only restart states have more than one predecessor, so each period keeps
//! its phase scores in a ring buffer indexed by `(phi + n) mod tau`. A frame
//! advance then leaves every non-restart score in place, and backpointers
//! are stored for restart states only.

use super::{check_activation, BeatActivation, BeatSequence, DecoderConfig, PostprocError, TempoEstimate, TempoMethod, LOG_FLOOR};

/// Optimal state sequence: per-frame period and phase, and the frames where
/// a beat occurs (phase 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DbnPath {
    pub periods: Vec<usize>,
    pub phases: Vec<usize>,
    pub beat_frames: Vec<usize>,
}

pub fn dbn_decode(act: &BeatActivation, cfg: &DecoderConfig) -> Result<DbnPath, PostprocError> {
    let lags = check_activation(act, cfg)?;
    let values = act.values();
    let frames = values.len();
    let taus: Vec<usize> = lags.iter().collect();
    let n_tau = taus.len();

    // Beat observations relative to a non-beat one; the non-beat term is the
    // same for every state and drops out of the argmax.
    let beat_gain: Vec<f64> =
        values.iter().map(|&a| a.max(LOG_FLOOR).ln() - (1.0 - a).max(LOG_FLOOR).ln()).collect();

    let stay = (1.0 - cfg.dbn_tempo_change_prob).ln();
    let change = cfg.dbn_tempo_change_prob.ln();
    // trans[from * n_tau + to]
    let mut trans = vec![0.0; n_tau * n_tau];
    for (i, &from) in taus.iter().enumerate() {
        for (j, &to) in taus.iter().enumerate() {
            trans[i * n_tau + j] = if i == j {
                stay
            } else {
                change - cfg.dbn_tempo_penalty * (to as f64 / from as f64).ln().abs()
            };
        }
    }

    let mut rings: Vec<Vec<f64>> = taus.iter().map(|&t| vec![0.0; t]).collect();
    for ring in &mut rings {
        ring[0] = beat_gain[0];
    }
    let mut backptr = vec![u16::MAX; frames * n_tau];
    let mut beat_scores = vec![0.0; n_tau];
    let mut restart = vec![0.0; n_tau];

    for n in 1..frames {
        // Scores of the beat states at frame n - 1, which feed the restarts.
        for (i, &tau) in taus.iter().enumerate() {
            beat_scores[i] = rings[i][(n - 1) % tau];
        }
        for j in 0..n_tau {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n_tau {
                let s = beat_scores[i] + trans[i * n_tau + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            restart[j] = best;
            backptr[n * n_tau + j] = arg as u16;
        }
        for (j, &tau) in taus.iter().enumerate() {
            // Restart state (tau, tau - 1) at frame n sits where (tau, 0) was at n - 1.
            rings[j][(n - 1) % tau] = restart[j];
            rings[j][n % tau] += beat_gain[n];
        }
    }

    // Best final state; ties go to the smallest period, then smallest phase.
    let last = frames - 1;
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (i, &tau) in taus.iter().enumerate() {
        for phi in 0..tau {
            let s = rings[i][(phi + last) % tau];
            if s > best.0 {
                best = (s, i, phi);
            }
        }
    }

    let (_, mut i, mut phi) = best;
    let mut periods = vec![0; frames];
    let mut phases = vec![0; frames];
    let mut beat_frames = Vec::new();
    for n in (0..frames).rev() {
        periods[n] = taus[i];
        phases[n] = phi;
        if phi == 0 {
            beat_frames.push(n);
        }
        if n == 0 {
            break;
        }
        if phi + 1 == taus[i] {
            i = backptr[n * n_tau + i] as usize;
            phi = 0;
        } else {
            phi += 1;
        }
    }
    beat_frames.reverse();
    Ok(DbnPath { periods, phases, beat_frames })
}

pub fn dbn_beats(act: &BeatActivation, cfg: &DecoderConfig) -> Result<BeatSequence, PostprocError> {
    let path = dbn_decode(act, cfg)?;
    Ok(BeatSequence::from_frames(&path.beat_frames, act.fps()))
}

/// Tempo of the period the optimal path spends the most frames in. The
/// confidence is the mean activation on the path's beats minus the mean
/// elsewhere, clamped to [0, 1].
pub fn dbn_tempo(act: &BeatActivation, cfg: &DecoderConfig) -> Result<TempoEstimate, PostprocError> {
    let path = dbn_decode(act, cfg)?;
    let lags = cfg.lag_range(act.fps());
    let mut counts = vec![0usize; lags.len()];
    for &tau in &path.periods {
        counts[tau - lags.min] += 1;
    }
    let (mode, _) = counts.iter().enumerate().fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
    let tau = lags.min + mode;

    let values = act.values();
    let mut on_beat = vec![false; values.len()];
    path.beat_frames.iter().for_each(|&n| on_beat[n] = true);
    let mean = |want: bool| {
        let sel: Vec<f64> = values.iter().zip(&on_beat).filter(|(_, &b)| b == want).map(|(v, _)| *v).collect();
        if sel.is_empty() {
            0.0
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    };
    Ok(TempoEstimate {
        bpm: 60.0 * act.fps() / tau as f64,
        confidence: (mean(true) - mean(false)).clamp(0.0, 1.0),
        method: TempoMethod::Dbn,
        clamped: false,
    })
}
