use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{loss, FrameTargets, LossOutput, ModelError, TcnConfig, TcnWeights};
use crate::frontend::Spectrogram;
use crate::postproc::{BeatActivation, TempoActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub beat_activation: BeatActivation,
    pub tempo_activation: TempoActivation,
}

/// Dropout is only applied in training mode, drawing masks from the given RNG.
pub enum ForwardMode<'a> {
    Inference,
    Training(&'a mut ChaCha8Rng),
}

/// Per-tensor gradients, aligned with [`TcnWeights::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(weights: &TcnWeights) -> Self {
        Self(weights.tensors().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

struct LayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    /// Per-channel dropout scale (0 or 1/(1-p)); `None` when dropout is off.
    mask: Option<Vec<f64>>,
}

/// Intermediate values kept for backpropagation.
pub struct ForwardCache {
    frames: usize,
    layers: Vec<LayerCache>,
    features: Vec<f64>,
    pooled: Vec<f64>,
}

impl ForwardCache {
    /// Time-averaged final feature map (the tempo head input).
    pub fn pooled_features(&self) -> &[f64] {
        &self.pooled
    }

    /// Final feature map, frames x filters.
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Kernel `[out][in][k]` rearranged to `[k][in][out]` so the inner loop runs over outputs.
fn taps_major(kernel: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; kernel.len()];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                w[(j * cin + i) * cout + o] = kernel[(o * cin + i) * k + j];
            }
        }
    }
    w
}

/// Frame ranges `t` for which `t + offset` is inside `[0, frames)`.
fn valid_range(frames: usize, offset: i64) -> std::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (frames as i64 - offset.max(0)).max(0) as usize;
    lo.min(hi)..hi
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    frames: usize,
    cin: usize,
    cout: usize,
    kernel: &[f64],
    bias: &[f64],
    k: usize,
    dilation: usize,
) -> Vec<f64> {
    let w = taps_major(kernel, cout, cin, k);
    let mut z = Vec::with_capacity(frames * cout);
    for _ in 0..frames {
        z.extend_from_slice(bias);
    }
    let half = (k / 2) as i64;
    for j in 0..k {
        let offset = (j as i64 - half) * dilation as i64;
        let wj = &w[j * cin * cout..(j + 1) * cin * cout];
        for t in valid_range(frames, offset) {
            let s = (t as i64 + offset) as usize;
            let xrow = &x[s * cin..(s + 1) * cin];
            let zrow = &mut z[t * cout..(t + 1) * cout];
            for (i, &xi) in xrow.iter().enumerate() {
                let wrow = &wj[i * cout..(i + 1) * cout];
                for (zo, &wo) in zrow.iter_mut().zip(wrow) {
                    *zo += xi * wo;
                }
            }
        }
    }
    z
}

/// Accumulates kernel/bias gradients and returns the gradient w.r.t. the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    dz: &[f64],
    frames: usize,
    cin: usize,
    cout: usize,
    kernel: &[f64],
    k: usize,
    dilation: usize,
    dkernel: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let w = taps_major(kernel, cout, cin, k);
    let mut dw = vec![0.0; w.len()];
    let mut dx = vec![0.0; frames * cin];
    for row in dz.chunks_exact(cout) {
        for (b, g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let half = (k / 2) as i64;
    for j in 0..k {
        let offset = (j as i64 - half) * dilation as i64;
        let base = j * cin * cout;
        for t in valid_range(frames, offset) {
            let s = (t as i64 + offset) as usize;
            let dzrow = &dz[t * cout..(t + 1) * cout];
            for i in 0..cin {
                let xi = x[s * cin + i];
                let idx = base + i * cout;
                let wrow = &w[idx..idx + cout];
                let dwrow = &mut dw[idx..idx + cout];
                let mut acc = 0.0;
                for ((dwo, &wo), &g) in dwrow.iter_mut().zip(wrow).zip(dzrow) {
                    *dwo += xi * g;
                    acc += wo * g;
                }
                dx[s * cin + i] += acc;
            }
        }
    }
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                dkernel[(o * cin + i) * k + j] += dw[(j * cin + i) * cout + o];
            }
        }
    }
    dx
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_input(cfg: &TcnConfig, spec: &Spectrogram) -> Result<(), ModelError> {
    if spec.num_bands() != cfg.input_bands {
        return Err(ModelError::ShapeMismatch(format!(
            "spectrogram has {} bands, model expects {}",
            spec.num_bands(),
            cfg.input_bands
        )));
    }
    if spec.num_frames() == 0 {
        return Err(ModelError::ShapeMismatch("empty spectrogram".into()));
    }
    Ok(())
}

fn forward_impl(
    weights: &TcnWeights,
    spec: &Spectrogram,
    mode: ForwardMode<'_>,
    keep_cache: bool,
) -> Result<(ModelOutput, Option<ForwardCache>), ModelError> {
    let cfg = weights.config();
    check_input(cfg, spec)?;
    let frames = spec.num_frames();
    let c = cfg.num_filters;
    let params = weights.tensors();
    let mut rng = match mode {
        ForwardMode::Training(rng) if cfg.dropout_rate > 0.0 => Some(rng),
        _ => None,
    };

    let mut h = spec.values().to_vec();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let cin = cfg.layer_inputs(l);
        let pre = conv_forward(
            &h,
            frames,
            cin,
            c,
            &params[2 * l].data,
            &params[2 * l + 1].data,
            cfg.kernel_size,
            cfg.dilations[l],
        );
        let mask = rng.as_mut().map(|rng| {
            let keep = 1.0 / (1.0 - cfg.dropout_rate);
            (0..c).map(|_| if rng.random::<f64>() < cfg.dropout_rate { 0.0 } else { keep }).collect::<Vec<_>>()
        });
        let mut out = Vec::with_capacity(frames * c);
        for row in pre.chunks_exact(c) {
            for (o, &z) in row.iter().enumerate() {
                let y = elu(z) * mask.as_ref().map_or(1.0, |m| m[o]);
                out.push(y);
            }
        }
        if cin == c {
            for (o, x) in out.iter_mut().zip(&h) {
                *o += x;
            }
        }
        let input = std::mem::replace(&mut h, out);
        if keep_cache {
            layers.push(LayerCache { input, pre, mask });
        }
    }

    let nl = 2 * cfg.num_layers;
    let (bw, bb) = (&params[nl].data, params[nl + 1].data[0]);
    let beat: Vec<f64> = h
        .chunks_exact(c)
        .map(|row| sigmoid(row.iter().zip(bw).map(|(a, b)| a * b).sum::<f64>() + bb))
        .collect();

    let mut pooled = vec![0.0; c];
    for row in h.chunks_exact(c) {
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= frames as f64);
    let (tw, tb) = (&params[nl + 2].data, &params[nl + 3].data);
    let logits: Vec<f64> = tb
        .iter()
        .enumerate()
        .map(|(b, bias)| bias + tw[b * c..(b + 1) * c].iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>())
        .collect();
    let tempo = softmax(&logits);

    let output = ModelOutput {
        beat_activation: BeatActivation::new(beat, spec.fps())
            .map_err(|e| ModelError::ShapeMismatch(e.to_string()))?,
        tempo_activation: TempoActivation::new(tempo).map_err(|e| ModelError::ShapeMismatch(e.to_string()))?,
    };
    let cache = keep_cache.then_some(ForwardCache { frames, layers, features: h, pooled });
    Ok((output, cache))
}

pub fn forward(weights: &TcnWeights, spec: &Spectrogram, mode: ForwardMode<'_>) -> Result<ModelOutput, ModelError> {
    forward_impl(weights, spec, mode, false).map(|(o, _)| o)
}

/// Forward pass that also returns the cache needed by [`backward`].
pub fn forward_cached(
    weights: &TcnWeights,
    spec: &Spectrogram,
    mode: ForwardMode<'_>,
) -> Result<(ModelOutput, ForwardCache), ModelError> {
    forward_impl(weights, spec, mode, true).map(|(o, c)| (o, c.expect("cache requested")))
}

/// Backpropagates head-logit gradients through the network.
pub fn backward(
    weights: &TcnWeights,
    cache: &ForwardCache,
    beat_logit_grad: &[f64],
    tempo_logit_grad: &[f64],
) -> Result<Gradients, ModelError> {
    let cfg = weights.config();
    let (frames, c) = (cache.frames, cfg.num_filters);
    if beat_logit_grad.len() != frames || tempo_logit_grad.len() != cfg.tempo_bins {
        return Err(ModelError::ShapeMismatch("logit gradients do not match the cached pass".into()));
    }
    let params = weights.tensors();
    let mut grads = Gradients::zeros_like(weights);
    let nl = 2 * cfg.num_layers;

    // Beat head.
    let bw = &params[nl].data;
    let mut dh = vec![0.0; frames * c];
    for (t, &g) in beat_logit_grad.iter().enumerate() {
        let row = &cache.features[t * c..(t + 1) * c];
        for o in 0..c {
            grads.0[nl][o] += g * row[o];
            dh[t * c + o] += g * bw[o];
        }
        grads.0[nl + 1][0] += g;
    }

    // Tempo head through the average pool.
    let tw = &params[nl + 2].data;
    let mut dpooled = vec![0.0; c];
    for (b, &g) in tempo_logit_grad.iter().enumerate() {
        grads.0[nl + 3][b] += g;
        for o in 0..c {
            grads.0[nl + 2][b * c + o] += g * cache.pooled[o];
            dpooled[o] += g * tw[b * c + o];
        }
    }
    for row in dh.chunks_exact_mut(c) {
        for (d, p) in row.iter_mut().zip(&dpooled) {
            *d += p / frames as f64;
        }
    }

    for l in (0..cfg.num_layers).rev() {
        let layer = &cache.layers[l];
        let cin = cfg.layer_inputs(l);
        let mut dz = vec![0.0; frames * c];
        for (i, (dzi, &z)) in dz.iter_mut().zip(&layer.pre).enumerate() {
            let m = layer.mask.as_ref().map_or(1.0, |m| m[i % c]);
            *dzi = dh[i] * m * elu_grad(z);
        }
        let (head, tail) = grads.0.split_at_mut(2 * l + 1);
        let mut dx = conv_backward(
            &layer.input,
            &dz,
            frames,
            cin,
            c,
            &params[2 * l].data,
            cfg.kernel_size,
            cfg.dilations[l],
            &mut head[2 * l],
            &mut tail[0],
        );
        if cin == c {
            for (d, r) in dx.iter_mut().zip(&dh) {
                *d += r;
            }
        }
        dh = dx;
    }
    Ok(grads)
}

/// Forward pass, multitask loss and gradients in one call.
pub fn forward_backward(
    weights: &TcnWeights,
    spec: &Spectrogram,
    targets: &FrameTargets,
    mode: ForwardMode<'_>,
) -> Result<(LossOutput, Gradients, ModelOutput), ModelError> {
    let (output, cache) = forward_cached(weights, spec, mode)?;
    let loss = loss::multitask_loss(&output, targets)?;
    let grads = backward(weights, &cache, &loss.beat_logit_grad, &loss.tempo_logit_grad)?;
    Ok((loss, grads, output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use rand::SeedableRng;

    fn random_spec(frames: usize, bands: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..frames * bands).map(|_| rng.random_range(0.0..2.0)).collect();
        Spectrogram::from_parts(values, frames, bands, 100.0, vec![1.0; bands]).unwrap()
    }

    fn small_cfg() -> TcnConfig {
        TcnConfig {
            input_bands: 5,
            num_layers: 3,
            kernel_size: 3,
            num_filters: 4,
            dilations: vec![1, 2, 4],
            dropout_rate: 0.2,
            tempo_bins: 300,
        }
    }

    #[test]
    fn output_shapes_and_normalization() {
        let w = init_model(&small_cfg(), 0).unwrap();
        for frames in [1, 2, 17, 64] {
            let out = forward(&w, &random_spec(frames, 5, frames as u64), ForwardMode::Inference).unwrap();
            assert_eq!(out.beat_activation.len(), frames);
            assert!(out.beat_activation.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let sum: f64 = out.tempo_activation.mass().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_model_gives_uniform_tempo() {
        let w = TcnWeights::zeros(TcnConfig::default()).unwrap();
        let out = forward(&w, &random_spec(20, 81, 1), ForwardMode::Inference).unwrap();
        for &m in out.tempo_activation.mass() {
            assert!((m - 1.0 / 300.0).abs() < 1e-15);
        }
        assert!(out.beat_activation.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn band_mismatch_is_rejected() {
        let w = init_model(&small_cfg(), 0).unwrap();
        assert!(matches!(
            forward(&w, &random_spec(10, 6, 0), ForwardMode::Inference),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let w = init_model(&small_cfg(), 0).unwrap();
        let spec = random_spec(30, 5, 3);
        let a = forward(&w, &spec, ForwardMode::Inference).unwrap();
        let b = forward(&w, &spec, ForwardMode::Inference).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outs: Vec<_> =
            (0..8).map(|_| forward(&w, &spec, ForwardMode::Training(&mut rng)).unwrap()).collect();
        assert!(outs.iter().any(|o| o != &a));
    }

    #[test]
    fn conv_matches_naive_definition() {
        let (frames, cin, cout, k, d) = (9, 2, 3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..frames * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel: Vec<f64> = (0..cout * cin * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let z = conv_forward(&x, frames, cin, cout, &kernel, &bias, k, d);
        for t in 0..frames {
            for o in 0..cout {
                let mut expect = bias[o];
                for j in 0..k {
                    let s = t as i64 + (j as i64 - 1) * d as i64;
                    if (0..frames as i64).contains(&s) {
                        for i in 0..cin {
                            expect += kernel[(o * cin + i) * k + j] * x[s as usize * cin + i];
                        }
                    }
                }
                assert!((z[t * cout + o] - expect).abs() < 1e-12);
            }
        }
    }
}
