//! Rectified Adam wrapped in Lookahead, with global gradient-norm clipping.

use super::{Gradients, ModelError, TcnWeights, TrainingConfig};

/// Variance-rectification threshold: at or below it the update falls back to
/// bias-corrected momentum without adaptive scaling.
const RHO_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    /// Whether the adaptive (rectified) update was used.
    pub rectified: bool,
    /// Whether this step synchronized the slow weights.
    pub synced: bool,
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    slow: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[&[f64]]) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            slow: params.iter().map(|p| p.to_vec()).collect(),
        }
    }

    pub fn for_weights(weights: &TcnWeights) -> Self {
        let slices: Vec<&[f64]> = weights.tensors().iter().map(|t| t.data.as_slice()).collect();
        Self::new(&slices)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slow_weights(&self) -> &[Vec<f64>] {
        &self.slow
    }

    fn check_shapes(&self, params: &[&mut [f64]], grads: &Gradients) -> Result<(), ModelError> {
        let ok = params.len() == self.slow.len()
            && grads.0.len() == self.slow.len()
            && params.iter().zip(&self.slow).zip(&grads.0).all(|((p, s), g)| p.len() == s.len() && g.len() == s.len());
        if ok {
            Ok(())
        } else {
            Err(ModelError::StateShapeMismatch(format!(
                "state has {} tensors, got {} parameters / {} gradients",
                self.slow.len(),
                params.len(),
                grads.0.len()
            )))
        }
    }

    /// Clip, rectified-Adam update, then Lookahead synchronization every
    /// `lookahead_k` steps. `grads` is clipped in place.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &mut Gradients,
        cfg: &TrainingConfig,
    ) -> Result<StepReport, ModelError> {
        self.check_shapes(params, grads)?;
        let grad_norm = clip_global_norm(grads, cfg.clip_norm);
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bias2;
        let rectified = rho_t > RHO_THRESHOLD;
        let rect = if rectified {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
        } else {
            0.0
        };

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let update = if rectified {
                    let v_hat = (v[i] / bias2).sqrt();
                    rect * m_hat / (v_hat + cfg.epsilon)
                } else {
                    m_hat
                };
                p[i] -= cfg.learning_rate * update;
            }
        }

        let synced = cfg.lookahead_k > 0 && self.step.is_multiple_of(cfg.lookahead_k as u64);
        if synced {
            for (p, s) in params.iter_mut().zip(&mut self.slow) {
                for (pi, si) in p.iter_mut().zip(s.iter_mut()) {
                    *si += cfg.lookahead_alpha * (*pi - *si);
                    *pi = *si;
                }
            }
        }
        Ok(StepReport { step: self.step, grad_norm, clipped_norm: grads.global_norm(), rectified, synced })
    }
}

pub fn optimizer_step(
    state: &mut OptimizerState,
    weights: &mut TcnWeights,
    grads: &mut Gradients,
    cfg: &TrainingConfig,
) -> Result<StepReport, ModelError> {
    let mut params = weights.param_slices_mut();
    state.step(&mut params, grads, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_rescales_to_the_cap() {
        // Norm sqrt(1.2^2 + 1.6^2) = 2.0.
        let mut g = Gradients(vec![vec![1.2], vec![1.6]]);
        let before = clip_global_norm(&mut g, 0.5);
        assert!((before - 2.0).abs() < 1e-15);
        assert!((g.global_norm() - 0.5).abs() < 1e-9);
        assert!((g.0[0][0] - 0.3).abs() < 1e-15 && (g.0[1][0] - 0.4).abs() < 1e-15);

        let mut small = Gradients(vec![vec![0.1, 0.1]]);
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small.0, vec![vec![0.1, 0.1]]);
    }

    #[test]
    fn state_shape_checked() {
        let mut state = OptimizerState::new(&[&[0.0, 0.0]]);
        let mut p = vec![0.0; 3];
        let mut grads = Gradients(vec![vec![1.0; 3]]);
        let res = state.step(&mut [p.as_mut_slice()], &mut grads, &TrainingConfig::default());
        assert!(matches!(res, Err(ModelError::StateShapeMismatch(_))));
    }

    #[test]
    fn early_steps_are_unrectified() {
        let cfg = TrainingConfig::default();
        let mut x = vec![0.0];
        let mut state = OptimizerState::new(&[&x]);
        let mut flags = Vec::new();
        for _ in 0..8 {
            let mut g = Gradients(vec![vec![0.1]]);
            flags.push(state.step(&mut [x.as_mut_slice()], &mut g, &cfg).unwrap().rectified);
        }
        // rho_t: 1.0, 2.0, 3.0, 4.0 (just below), then above 4 from step 5.
        assert_eq!(flags, vec![false, false, false, false, true, true, true, true]);
    }
}
