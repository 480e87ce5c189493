use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{acc1, acc2, ClipAnnotation, DatasetManifest, EvalError, ManifestEntry};
use crate::frontend::{compute_spectrogram, load_audio, FrontendConfig, FrontendError};
use crate::model::{forward, ForwardMode, TcnWeights};
use crate::postproc::{run_pipeline, BeatActivation, DecoderConfig, Pipeline, TempoActivation};

/// Model outputs for one clip, however they were obtained.
#[derive(Debug, Clone)]
pub struct Activations {
    pub beat: BeatActivation,
    /// Needed only by [`Pipeline::Direct`].
    pub tempo: Option<TempoActivation>,
}

pub trait ActivationSource: Sync {
    fn activations(
        &self,
        manifest: &DatasetManifest,
        entry: &ManifestEntry,
        annotation: &ClipAnnotation,
    ) -> Result<Activations, EvalError>;
}

/// Runs the network on each clip's audio.
pub struct ModelActivationSource {
    pub weights: TcnWeights,
    pub frontend: FrontendConfig,
}

impl ActivationSource for ModelActivationSource {
    fn activations(&self, manifest: &DatasetManifest, entry: &ManifestEntry, _: &ClipAnnotation) -> Result<Activations, EvalError> {
        let audio = load_audio(manifest.resolve(&entry.audio)).map_err(|e| match e {
            FrontendError::FileNotFound(p) => EvalError::MissingFile(p),
            e => e.into(),
        })?;
        let spec = compute_spectrogram(&audio, &self.frontend)?;
        let out = forward(&self.weights, &spec, ForwardMode::Inference)?;
        Ok(Activations { beat: out.beat_activation, tempo: Some(out.tempo_activation) })
    }
}

/// Reads the activation file named by each entry's `activation` field.
pub struct FileActivationSource {
    /// Frame rate for files without an `# fps=` header.
    pub default_fps: f64,
}

impl ActivationSource for FileActivationSource {
    fn activations(&self, manifest: &DatasetManifest, entry: &ManifestEntry, _: &ClipAnnotation) -> Result<Activations, EvalError> {
        let path = entry
            .activation
            .as_ref()
            .ok_or_else(|| EvalError::InvalidManifest(format!("clip '{}' has no activation file", entry.id)))?;
        let beat = super::read_activation(manifest.resolve(path), self.default_fps)?;
        Ok(Activations { beat, tempo: None })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub decoder: DecoderConfig,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub clip_id: String,
    pub method: Pipeline,
    /// `None` when the clip failed.
    pub estimated_bpm: Option<f64>,
    pub confidence: Option<f64>,
    pub reference_bpm: f64,
    pub acc1: bool,
    pub acc2: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodAggregate {
    pub clips: usize,
    pub failures: usize,
    pub acc1_rate: f64,
    pub acc2_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub records: Vec<EvalRecord>,
    /// Keyed by method name.
    pub aggregates: BTreeMap<String, MethodAggregate>,
}

impl EvalReport {
    /// Sorts records by clip id then method and recomputes the aggregates.
    pub fn from_records(dataset: impl Into<String>, mut records: Vec<EvalRecord>) -> Self {
        records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id).then(a.method.cmp(&b.method)));
        let mut groups: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry(r.method.name().to_string()).or_default().push(r);
        }
        let aggregates = groups
            .into_iter()
            .map(|(name, rs)| {
                let n = rs.len();
                let rate = |f: fn(&EvalRecord) -> bool| rs.iter().filter(|r| f(r)).count() as f64 / n as f64;
                let agg = MethodAggregate {
                    clips: n,
                    failures: rs.iter().filter(|r| r.error.is_some()).count(),
                    acc1_rate: rate(|r| r.acc1),
                    acc2_rate: rate(|r| r.acc2),
                };
                (name, agg)
            })
            .collect();
        Self { dataset: dataset.into(), records, aggregates }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per method, in pipeline order.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}", self.dataset);
        let _ = writeln!(out, "{:<14} {:>6} {:>6} {:>6} {:>7}", "method", "acc1", "acc2", "clips", "failed");
        for p in Pipeline::ALL {
            if let Some(a) = self.aggregates.get(p.name()) {
                let _ = writeln!(
                    out,
                    "{:<14} {:>6.3} {:>6.3} {:>6} {:>7}",
                    p.name(),
                    a.acc1_rate,
                    a.acc2_rate,
                    a.clips,
                    a.failures
                );
            }
        }
        out
    }
}

/// Mean rates over repeated runs (for example several training seeds);
/// clip and failure counts are summed.
pub fn average_aggregates(reports: &[EvalReport]) -> BTreeMap<String, MethodAggregate> {
    let mut sums: BTreeMap<String, (MethodAggregate, usize)> = BTreeMap::new();
    for report in reports {
        for (name, a) in &report.aggregates {
            let e = sums
                .entry(name.clone())
                .or_insert((MethodAggregate { clips: 0, failures: 0, acc1_rate: 0.0, acc2_rate: 0.0 }, 0));
            e.0.clips += a.clips;
            e.0.failures += a.failures;
            e.0.acc1_rate += a.acc1_rate;
            e.0.acc2_rate += a.acc2_rate;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(name, (mut a, n))| {
            a.acc1_rate /= n as f64;
            a.acc2_rate /= n as f64;
            (name, a)
        })
        .collect()
}

fn failed(clip_id: &str, method: Pipeline, reference_bpm: f64, error: String) -> EvalRecord {
    EvalRecord {
        clip_id: clip_id.to_string(),
        method,
        estimated_bpm: None,
        confidence: None,
        reference_bpm,
        acc1: false,
        acc2: false,
        error: Some(error),
    }
}

fn evaluate_clip(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    annotation: &ClipAnnotation,
    reference_bpm: f64,
    methods: &[Pipeline],
    source: &dyn ActivationSource,
    cfg: &DecoderConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    let acts = match source.activations(manifest, entry, annotation) {
        Ok(a) => a,
        Err(e @ EvalError::MissingFile(_)) => return Err(e),
        Err(e) => return Ok(methods.iter().map(|&m| failed(&entry.id, m, reference_bpm, e.to_string())).collect()),
    };
    methods
        .iter()
        .map(|&method| {
            Ok(match run_pipeline(method, &acts.beat, acts.tempo.as_ref(), cfg) {
                Ok(est) => EvalRecord {
                    clip_id: entry.id.clone(),
                    method,
                    estimated_bpm: Some(est.bpm),
                    confidence: Some(est.confidence),
                    reference_bpm,
                    acc1: acc1(est.bpm, reference_bpm)?,
                    acc2: acc2(est.bpm, reference_bpm)?,
                    error: None,
                },
                Err(e) => failed(&entry.id, method, reference_bpm, e.to_string()),
            })
        })
        .collect()
}

/// Scores every method on the clips in `test_ids`. The reference tempo is the
/// stored `bpm` or the median-IBI tempo of the annotation. Clips whose
/// activations or decoders fail count as misses and carry the error text.
pub fn evaluate(
    manifest: &DatasetManifest,
    test_ids: &[String],
    methods: &[Pipeline],
    source: &dyn ActivationSource,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    opts.decoder.validate()?;
    if test_ids.is_empty() {
        return Err(EvalError::ManifestTooSmall("test split is empty".into()));
    }
    if methods.is_empty() {
        return Err(EvalError::UnknownMethod(String::new()));
    }
    let mut clips = Vec::with_capacity(test_ids.len());
    for id in test_ids {
        let entry = manifest
            .entry(id)
            .ok_or_else(|| EvalError::InvalidManifest(format!("clip '{id}' not in manifest")))?;
        let annotation = manifest.annotation(entry)?;
        let reference = annotation.tempo()?;
        clips.push((entry, annotation, reference));
    }

    let run = || -> Result<Vec<Vec<EvalRecord>>, EvalError> {
        clips
            .par_iter()
            .map(|(entry, ann, reference)| evaluate_clip(manifest, entry, ann, *reference, methods, source, &opts.decoder))
            .collect()
    };
    let per_clip = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| EvalError::InvalidManifest(format!("cannot start worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(EvalReport::from_records(manifest.dataset.clone(), per_clip.into_iter().flatten().collect()))
}
