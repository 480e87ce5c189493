//! Python bindings. The extension module is importable as `tempokit`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use tempokit::eval::{
    evaluate, split_ids, split_train_test, ActivationSource, DatasetManifest, EvalError, EvalOptions,
    FileActivationSource, ModelActivationSource,
};
use tempokit::frontend::{compute_spectrogram, load_audio, AudioClip, FrontendConfig, FrontendError};
use tempokit::model::{forward, init_model, load_weights, save_weights, ForwardMode, ModelError, TcnConfig, TcnWeights};
use tempokit::postproc::{
    comb_beats, crf_beats, dbn_beats, run_pipeline, BeatActivation, DecoderConfig, Pipeline, PostprocError,
    TempoActivation,
};
use tempokit::synth::{gen_activation, gen_click_track, ClickTrackSpec, OracleActivationSource, SynthError, SyntheticActivationSpec};

create_exception!(tempokit, TempokitError, PyException);

fn data_err(e: impl std::fmt::Display) -> PyErr {
    TempokitError::new_err(e.to_string())
}

fn frontend_err(e: FrontendError) -> PyErr {
    match e {
        FrontendError::FileNotFound(_) | FrontendError::Io(_) => PyIOError::new_err(e.to_string()),
        FrontendError::InvalidConfig(_) => PyValueError::new_err(e.to_string()),
        e => data_err(e),
    }
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Container(tempokit::container::ContainerError::Io(_)) => PyIOError::new_err(e.to_string()),
        ModelError::Frontend(f) => frontend_err(f),
        ModelError::InvalidConfig(_) => PyValueError::new_err(e.to_string()),
        e => data_err(e),
    }
}

fn postproc_err(e: PostprocError) -> PyErr {
    match e {
        PostprocError::UnknownMethod(_) | PostprocError::InvalidConfig(_) => PyValueError::new_err(e.to_string()),
        e => data_err(e),
    }
}

fn eval_err(e: EvalError) -> PyErr {
    match e {
        EvalError::MissingFile(_) | EvalError::Io { .. } => PyIOError::new_err(e.to_string()),
        EvalError::UnknownMethod(_) => PyValueError::new_err(e.to_string()),
        EvalError::Frontend(f) => frontend_err(f),
        EvalError::Model(m) => model_err(m),
        e => data_err(e),
    }
}

fn synth_err(e: SynthError) -> PyErr {
    match e {
        SynthError::InvalidSpec(_) => PyValueError::new_err(e.to_string()),
        SynthError::Io(_) => PyIOError::new_err(e.to_string()),
        e => data_err(e),
    }
}

fn decoder_config(json: Option<&str>) -> PyResult<DecoderConfig> {
    let cfg: DecoderConfig = match json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("decoder config: {e}")))?,
        None => DecoderConfig::default(),
    };
    cfg.validate().map_err(postproc_err)?;
    Ok(cfg)
}

fn methods_from(name: &str) -> PyResult<Vec<Pipeline>> {
    if name == "all" {
        Ok(Pipeline::ALL.to_vec())
    } else {
        Ok(vec![name.parse::<Pipeline>().map_err(postproc_err)?])
    }
}

#[pyclass(frozen, name = "TempoEstimate", module = "tempokit")]
struct PyTempoEstimate {
    #[pyo3(get)]
    bpm: f64,
    #[pyo3(get)]
    confidence: f64,
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    clamped: bool,
}

#[pymethods]
impl PyTempoEstimate {
    #[getter]
    fn low_confidence(&self) -> bool {
        self.confidence < tempokit::postproc::LOW_CONFIDENCE
    }

    fn __repr__(&self) -> String {
        format!("TempoEstimate(bpm={:.3}, confidence={:.3}, method='{}')", self.bpm, self.confidence, self.method)
    }
}

/// Network outputs for one clip.
#[pyclass(frozen, name = "Prediction", module = "tempokit")]
struct PyPrediction {
    #[pyo3(get)]
    beat_activation: Vec<f64>,
    #[pyo3(get)]
    tempo_activation: Vec<f64>,
    #[pyo3(get)]
    fps: f64,
}

#[pymethods]
impl PyPrediction {
    /// Runs a pipeline ("direct", "acf-estimate", ...) on these outputs.
    #[pyo3(signature = (method = "direct", decoder_config = None))]
    fn tempo(&self, method: &str, decoder_config: Option<&str>) -> PyResult<PyTempoEstimate> {
        estimate_tempo(self.beat_activation.clone(), self.fps, method, Some(self.tempo_activation.clone()), decoder_config)
    }
}

#[pyclass(frozen, name = "Model", module = "tempokit")]
struct PyModel {
    weights: TcnWeights,
    frontend: FrontendConfig,
}

#[pymethods]
impl PyModel {
    /// Randomly initialised network with the default architecture.
    #[staticmethod]
    #[pyo3(signature = (seed = 1234))]
    fn init(seed: u64) -> PyResult<Self> {
        let weights = init_model(&TcnConfig::default(), seed).map_err(model_err)?;
        Ok(Self { weights, frontend: FrontendConfig::default() })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let weights = load_weights(&path).map_err(model_err)?;
        let frontend = FrontendConfig { num_bands: weights.config().input_bands, ..Default::default() };
        Ok(Self { weights, frontend })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_weights(&self.weights, &path).map_err(model_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.weights.num_parameters()
    }

    #[getter]
    fn receptive_field(&self) -> usize {
        tempokit::model::receptive_field(self.weights.config())
    }

    fn predict_file(&self, py: Python<'_>, path: PathBuf) -> PyResult<PyPrediction> {
        let clip = load_audio(&path).map_err(frontend_err)?;
        py.detach(|| self.run(&clip))
    }

    #[pyo3(signature = (samples, sample_rate = 44_100))]
    fn predict(&self, py: Python<'_>, samples: Vec<f64>, sample_rate: u32) -> PyResult<PyPrediction> {
        let clip = AudioClip::new(samples, sample_rate).map_err(frontend_err)?;
        py.detach(|| self.run(&clip))
    }

    fn __repr__(&self) -> String {
        format!("Model(parameters={})", self.weights.num_parameters())
    }
}

impl PyModel {
    fn run(&self, clip: &AudioClip) -> PyResult<PyPrediction> {
        let spec = compute_spectrogram(clip, &self.frontend).map_err(frontend_err)?;
        let out = forward(&self.weights, &spec, ForwardMode::Inference).map_err(model_err)?;
        Ok(PyPrediction {
            beat_activation: out.beat_activation.values().to_vec(),
            tempo_activation: out.tempo_activation.mass().to_vec(),
            fps: spec.fps(),
        })
    }
}

#[pyfunction]
fn acc1(estimated: f64, annotated: f64) -> PyResult<bool> {
    tempokit::eval::acc1(estimated, annotated).map_err(eval_err)
}

#[pyfunction]
fn acc2(estimated: f64, annotated: f64) -> PyResult<bool> {
    tempokit::eval::acc2(estimated, annotated).map_err(eval_err)
}

/// Names accepted by `estimate_tempo` and `evaluate_manifest`.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Pipeline::ALL.iter().map(|p| p.name()).collect()
}

/// Tempo from a beat activation (and, for "direct", a tempo activation).
/// `decoder_config` is an optional JSON object overriding decoder settings.
#[pyfunction]
#[pyo3(signature = (beat_activation, fps = 100.0, method = "acf-estimate", tempo_activation = None, decoder_config = None))]
fn estimate_tempo(
    beat_activation: Vec<f64>,
    fps: f64,
    method: &str,
    tempo_activation: Option<Vec<f64>>,
    decoder_config: Option<&str>,
) -> PyResult<PyTempoEstimate> {
    let method: Pipeline = method.parse().map_err(postproc_err)?;
    let cfg = self::decoder_config(decoder_config)?;
    let beat = BeatActivation::new(beat_activation, fps).map_err(postproc_err)?;
    let tempo = tempo_activation.map(TempoActivation::new).transpose().map_err(postproc_err)?;
    let est = run_pipeline(method, &beat, tempo.as_ref(), &cfg).map_err(postproc_err)?;
    Ok(PyTempoEstimate {
        bpm: est.bpm,
        confidence: est.confidence,
        method: method.name().to_string(),
        clamped: est.clamped,
    })
}

/// Beat times in seconds from a beat activation; `decoder` is "crf", "dbn" or "comb".
#[pyfunction]
#[pyo3(signature = (beat_activation, fps = 100.0, decoder = "dbn", decoder_config = None))]
fn track_beats(beat_activation: Vec<f64>, fps: f64, decoder: &str, decoder_config: Option<&str>) -> PyResult<Vec<f64>> {
    let cfg = self::decoder_config(decoder_config)?;
    let act = BeatActivation::new(beat_activation, fps).map_err(postproc_err)?;
    let beats = match decoder {
        "crf" => crf_beats(&act, &cfg),
        "dbn" => dbn_beats(&act, &cfg),
        "comb" => comb_beats(&act, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown beat decoder '{other}'"))),
    }
    .map_err(postproc_err)?;
    Ok(beats.times().to_vec())
}

/// Log-filterbank spectrogram as a list of frames.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 44_100, fps = 100.0))]
fn spectrogram(samples: Vec<f64>, sample_rate: u32, fps: f64) -> PyResult<Vec<Vec<f64>>> {
    let clip = AudioClip::new(samples, sample_rate).map_err(frontend_err)?;
    let spec = compute_spectrogram(&clip, &FrontendConfig::default().with_fps(fps)).map_err(frontend_err)?;
    Ok((0..spec.num_frames()).map(|t| spec.frame(t).to_vec()).collect())
}

/// Returns `(samples, beat_times)` at 44.1 kHz.
#[pyfunction]
#[pyo3(signature = (bpm, duration = 10.0, jitter = 0.0, seed = 0))]
fn click_track(bpm: f64, duration: f64, jitter: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = ClickTrackSpec { bpm, duration, timing_jitter_std: jitter, seed, ..Default::default() };
    let (clip, ann) = gen_click_track(&spec).map_err(synth_err)?;
    Ok((clip.samples().to_vec(), ann.beat_times))
}

/// Returns `(activation, beat_times)`.
#[pyfunction]
#[pyo3(signature = (bpm, fps = 100.0, duration = 10.0, noise_std = 0.0, jitter = 0.0, phase = 0.0, seed = 0))]
fn synthetic_activation(
    bpm: f64,
    fps: f64,
    duration: f64,
    noise_std: f64,
    jitter: f64,
    phase: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = SyntheticActivationSpec { bpm, fps, duration, noise_std, timing_jitter_std: jitter, phase, seed, ..Default::default() };
    let (act, ann) = gen_activation(&spec).map_err(synth_err)?;
    Ok((act.values().to_vec(), ann.beat_times))
}

/// Returns `(train_ids, test_ids)`.
#[pyfunction]
#[pyo3(signature = (ids, ratio = 0.8, seed = 1234))]
fn split(ids: Vec<String>, ratio: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    let s = split_ids(&ids, ratio, seed).map_err(eval_err)?;
    Ok((s.train_ids, s.test_ids))
}

/// Evaluates a manifest and returns the report as a dict. `source` is
/// "oracle", "activations" or the path of a weights file.
#[pyfunction]
#[pyo3(signature = (manifest, source = "oracle", method = "all", all_clips = false, split_ratio = 0.8, split_seed = 1234, threads = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate_manifest<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    source: &str,
    method: &str,
    all_clips: bool,
    split_ratio: f64,
    split_seed: u64,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let methods = methods_from(method)?;
    let manifest = DatasetManifest::load(&manifest).map_err(eval_err)?;
    let ids = if all_clips {
        manifest.ids()
    } else {
        split_train_test(&manifest, split_ratio, split_seed).map_err(eval_err)?.test_ids
    };
    let src: Box<dyn ActivationSource> = match source {
        "oracle" => Box::new(OracleActivationSource::default()),
        "activations" => Box::new(FileActivationSource { default_fps: 100.0 }),
        path => Box::new(ModelActivationSource { weights: load_weights(path).map_err(model_err)?, frontend: FrontendConfig::default() }),
    };
    let opts = EvalOptions { threads, ..Default::default() };
    let report = py.detach(|| evaluate(&manifest, &ids, &methods, src.as_ref(), &opts)).map_err(eval_err)?;
    py.import("json")?.call_method1("loads", (report.to_json(),))
}

#[pymodule]
#[pyo3(name = "tempokit")]
fn tempokit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TempokitError", m.py().get_type::<TempokitError>())?;
    m.add_class::<PyTempoEstimate>()?;
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(acc1, m)?)?;
    m.add_function(wrap_pyfunction!(acc2, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tempo, m)?)?;
    m.add_function(wrap_pyfunction!(track_beats, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(click_track, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_activation, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_manifest, m)?)?;
    Ok(())
}
