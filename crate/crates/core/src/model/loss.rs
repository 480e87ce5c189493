use super::{FrameTargets, ModelError, ModelOutput};

const PROB_FLOOR: f64 = 1e-12;

/// Multitask loss value and its gradients with respect to the head logits
/// (pre-sigmoid beat logits, pre-softmax tempo logits).
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    /// Mean per-frame binary cross-entropy.
    pub beat_term: f64,
    /// Categorical cross-entropy of the tempo distribution.
    pub tempo_term: f64,
    pub beat_logit_grad: Vec<f64>,
    pub tempo_logit_grad: Vec<f64>,
}

/// Mean binary cross-entropy on the beat head (soft labels) plus categorical
/// cross-entropy on the tempo head, weighted 1:1.
pub fn multitask_loss(output: &ModelOutput, targets: &FrameTargets) -> Result<LossOutput, ModelError> {
    let beat = output.beat_activation.values();
    let tempo = output.tempo_activation.mass();
    if beat.len() != targets.beat.len() || tempo.len() != targets.tempo.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "output ({} frames, {} bins) vs targets ({} frames, {} bins)",
            beat.len(),
            tempo.len(),
            targets.beat.len(),
            targets.tempo.len()
        )));
    }
    let frames = beat.len() as f64;

    let mut beat_term = 0.0;
    let mut beat_logit_grad = Vec::with_capacity(beat.len());
    for (&p, &y) in beat.iter().zip(&targets.beat) {
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        if y > 0.0 {
            beat_term -= y * pc.ln();
        }
        if y < 1.0 {
            beat_term -= (1.0 - y) * (1.0 - pc).ln();
        }
        beat_logit_grad.push((p - y) / frames);
    }
    beat_term /= frames;

    let mut tempo_term = 0.0;
    for (&q, &t) in tempo.iter().zip(&targets.tempo) {
        if t > 0.0 {
            tempo_term -= t * q.max(f64::MIN_POSITIVE).ln();
        }
    }
    let tempo_logit_grad = tempo.iter().zip(&targets.tempo).map(|(q, t)| q - t).collect();

    Ok(LossOutput { total: beat_term + tempo_term, beat_term, tempo_term, beat_logit_grad, tempo_logit_grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::{BeatActivation, TempoActivation};

    fn output(beat: Vec<f64>, tempo: Vec<f64>) -> ModelOutput {
        ModelOutput {
            beat_activation: BeatActivation::new(beat, 100.0).unwrap(),
            tempo_activation: TempoActivation::new(tempo).unwrap(),
        }
    }

    #[test]
    fn uniform_tempo_against_one_hot_is_ln_300() {
        let mut onehot = vec![0.0; 300];
        onehot[120] = 1.0;
        let out = output(vec![0.5; 4], vec![1.0 / 300.0; 300]);
        let targets = FrameTargets { beat: vec![0.5; 4], tempo: onehot };
        let loss = multitask_loss(&out, &targets).unwrap();
        assert!((loss.tempo_term - 300f64.ln()).abs() < 1e-12);
        assert!((loss.tempo_term - 5.7038).abs() < 1e-4);
    }

    #[test]
    fn matching_output_gives_target_entropy() {
        let beat = vec![0.0, 0.5, 1.0, 0.5, 0.0, 0.25];
        let mut tempo = vec![0.0; 300];
        tempo[119] = 0.25;
        tempo[120] = 0.5;
        tempo[121] = 0.25;
        let targets = FrameTargets { beat: beat.clone(), tempo: tempo.clone() };
        let loss = multitask_loss(&output(beat.clone(), tempo), &targets).unwrap();

        let h = |p: f64| if p == 0.0 || p == 1.0 { 0.0 } else { -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) };
        let beat_entropy = beat.iter().map(|&p| h(p)).sum::<f64>() / beat.len() as f64;
        let tempo_entropy = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((loss.beat_term - beat_entropy).abs() < 1e-9);
        assert!((loss.tempo_term - tempo_entropy).abs() < 1e-12);
        assert!(loss.beat_logit_grad.iter().all(|&g| g == 0.0));
        assert!(loss.tempo_logit_grad.iter().all(|&g| g == 0.0));

        // Any other output costs more.
        let worse = output(vec![0.3; 6], vec![1.0 / 300.0; 300]);
        assert!(multitask_loss(&worse, &targets).unwrap().total > loss.total);
    }

    #[test]
    fn shape_mismatch() {
        let out = output(vec![0.5; 3], vec![0.5, 0.5]);
        let targets = FrameTargets { beat: vec![0.0; 4], tempo: vec![0.5, 0.5] };
        assert!(matches!(multitask_loss(&out, &targets), Err(ModelError::ShapeMismatch(_))));
    }
}
