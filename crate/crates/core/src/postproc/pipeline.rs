use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    acf_tempo, comb_beats, comb_tempo, crf_beats, dbn_beats, dbn_tempo, detect_tempo, infer_tempo_from_beats,
    BeatActivation, DecoderConfig, PostprocError, TempoActivation, TempoEstimate,
};

/// The seven ways of turning model outputs into a tempo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Direct,
    AcfEstimate,
    DbnEstimate,
    CombEstimate,
    CrfInfer,
    DbnInfer,
    CombInfer,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::Direct,
        Pipeline::AcfEstimate,
        Pipeline::DbnEstimate,
        Pipeline::CombEstimate,
        Pipeline::CrfInfer,
        Pipeline::DbnInfer,
        Pipeline::CombInfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Direct => "direct",
            Pipeline::AcfEstimate => "acf-estimate",
            Pipeline::DbnEstimate => "dbn-estimate",
            Pipeline::CombEstimate => "comb-estimate",
            Pipeline::CrfInfer => "crf-infer",
            Pipeline::DbnInfer => "dbn-infer",
            Pipeline::CombInfer => "comb-infer",
        }
    }

    pub fn needs_tempo_activation(self) -> bool {
        self == Pipeline::Direct
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = PostprocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PostprocError::UnknownMethod(s.to_string()))
    }
}

/// Runs one pipeline. `tempo` is only consulted by [`Pipeline::Direct`].
pub fn run_pipeline(
    pipeline: Pipeline,
    beat: &BeatActivation,
    tempo: Option<&TempoActivation>,
    cfg: &DecoderConfig,
) -> Result<TempoEstimate, PostprocError> {
    match pipeline {
        Pipeline::Direct => {
            let tempo = tempo.ok_or_else(|| PostprocError::MissingTempoActivation(pipeline.name().into()))?;
            detect_tempo(tempo, cfg)
        }
        Pipeline::AcfEstimate => acf_tempo(beat, cfg),
        Pipeline::DbnEstimate => dbn_tempo(beat, cfg),
        Pipeline::CombEstimate => comb_tempo(beat, cfg),
        Pipeline::CrfInfer => infer_tempo_from_beats(&crf_beats(beat, cfg)?, cfg),
        Pipeline::DbnInfer => infer_tempo_from_beats(&dbn_beats(beat, cfg)?, cfg),
        Pipeline::CombInfer => infer_tempo_from_beats(&comb_beats(beat, cfg)?, cfg),
    }
}
