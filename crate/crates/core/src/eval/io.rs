use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClipAnnotation, EvalError};
use crate::postproc::{BeatActivation, BeatSequence};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            EvalError::MissingFile(path.display().to_string())
        } else {
            EvalError::Io { path: path.display().to_string(), source }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub beats: PathBuf,
    pub bpm: Option<f64>,
    /// Precomputed beat activation, used instead of running a model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<PathBuf>,
}

/// Relative paths in a manifest are resolved against the manifest's own
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self, EvalError> {
        let m = Self { dataset: dataset.into(), entries, base_dir: PathBuf::new() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(EvalError::InvalidManifest(format!("duplicate clip id '{}'", e.id)));
            }
            if let Some(bpm) = e.bpm {
                if !(bpm > 0.0 && bpm.is_finite()) {
                    return Err(EvalError::InvalidManifest(format!("clip '{}' has non-positive bpm", e.id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let mut m: Self = serde_json::from_str(text)?;
        m.base_dir = base_dir.into();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn annotation(&self, entry: &ManifestEntry) -> Result<ClipAnnotation, EvalError> {
        read_annotation(self.resolve(&entry.beats), &entry.id, entry.bpm)
    }
}

/// Beats file: one time in seconds per line (extra columns ignored).
pub fn read_annotation(path: impl AsRef<Path>, clip_id: &str, bpm: Option<f64>) -> Result<ClipAnnotation, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let beats = BeatSequence::from_text(&text)
        .map_err(|e| EvalError::InvalidAnnotation(format!("{}: {e}", path.display())))?;
    ClipAnnotation::new(clip_id, beats.times().to_vec(), bpm)
}

pub fn write_annotation(path: impl AsRef<Path>, annotation: &ClipAnnotation) -> Result<(), EvalError> {
    let path = path.as_ref();
    let beats = BeatSequence::new(annotation.beat_times.clone())?;
    // Shortest round-trip form, so reading back gives the same values.
    let text: String = beats.times().iter().map(|t| format!("{t}\n")).collect();
    fs::write(path, text).map_err(io_err(path))
}

/// Activation file: an optional `# fps=<value>` header, then one value per
/// line. Without a header `default_fps` is used.
pub fn read_activation(path: impl AsRef<Path>, default_fps: f64) -> Result<BeatActivation, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| EvalError::InvalidActivationFile { path: path.display().to_string(), message };
    let mut fps = default_fps;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("fps=") {
                fps = v.trim().parse().map_err(|_| bad(format!("bad fps header '{v}'")))?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| bad(format!("line {}: cannot parse '{line}'", i + 1)))?);
    }
    BeatActivation::new(values, fps).map_err(|e| bad(e.to_string()))
}

pub fn write_activation(path: impl AsRef<Path>, act: &BeatActivation) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = format!("# fps={}\n", act.fps());
    for v in act.values() {
        out.push_str(&format!("{v:.6}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_json_shape() {
        let text = r#"{"dataset": "demo", "entries": [
            {"id": "a", "audio": "a.wav", "beats": "a.beats", "bpm": 120},
            {"id": "b", "audio": "/abs/b.wav", "beats": "b.beats", "bpm": null, "activation": "b.act"}
        ]}"#;
        let m = DatasetManifest::from_json(text, "/data").unwrap();
        assert_eq!(m.ids(), vec!["a", "b"]);
        assert_eq!(m.entries[0].bpm, Some(120.0));
        assert_eq!(m.resolve(&m.entries[0].audio), PathBuf::from("/data/a.wav"));
        assert_eq!(m.resolve(&m.entries[1].audio), PathBuf::from("/abs/b.wav"));
        let back = DatasetManifest::from_json(&m.to_json(), "/data").unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"bpm\": null"));
    }

    #[test]
    fn manifest_rejects_duplicates_and_unknown_fields() {
        let dup = r#"{"dataset": "d", "entries": [
            {"id": "a", "audio": "a.wav", "beats": "a.txt", "bpm": null},
            {"id": "a", "audio": "b.wav", "beats": "b.txt", "bpm": null}]}"#;
        assert!(matches!(DatasetManifest::from_json(dup, ""), Err(EvalError::InvalidManifest(_))));
        let extra = r#"{"dataset": "d", "entries": [], "x": 1}"#;
        assert!(matches!(DatasetManifest::from_json(extra, ""), Err(EvalError::Json(_))));
    }

    #[test]
    fn activation_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        let act = BeatActivation::new(vec![0.0, 0.25, 1.0], 95.0).unwrap();
        write_activation(&path, &act).unwrap();
        assert_eq!(read_activation(&path, 100.0).unwrap(), act);

        fs::write(&path, "0.5\n0.1\n").unwrap();
        assert_eq!(read_activation(&path, 100.0).unwrap().fps(), 100.0);
        fs::write(&path, "0.5\n2.0\n").unwrap();
        assert!(matches!(read_activation(&path, 100.0), Err(EvalError::InvalidActivationFile { .. })));
        assert!(matches!(read_activation(dir.path().join("nope"), 100.0), Err(EvalError::MissingFile(_))));
    }

    #[test]
    fn annotation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.txt");
        let a = ClipAnnotation::new("c", vec![0.5, 1.0, 1.5], None).unwrap();
        write_annotation(&path, &a).unwrap();
        assert_eq!(read_annotation(&path, "c", None).unwrap(), a);
    }
}
