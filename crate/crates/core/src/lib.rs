//! # tempokit
//!
//! Tempo estimation for solo-instrument recordings.
//!
//! A multitask temporal convolutional network turns a log-filterbank
//! spectrogram into two activations: a per-frame beat activation and a
//! distribution over 1-BPM tempo bins. Tempo is then obtained along one of
//! three routes:
//!
//! 1. decode beats from the beat activation (CRF, DBN or comb filter) and
//!    infer the tempo from the inter-beat intervals,
//! 2. estimate the tempo directly from the beat activation (ACF, DBN or comb
//!    filter),
//! 3. detect the tempo from the tempo activation.
//!
//! ```text
//! WAV -> frontend::compute_spectrogram -> model::forward -> postproc::* -> eval::acc1/acc2
//! ```
//!
//! The [`synth`] module generates click tracks and activations with known
//! ground truth, which is what the test suites verify against.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod container;
pub mod eval;
pub mod frontend;
pub mod model;
pub mod postproc;
pub mod synth;

pub use eval::{acc1, acc2, ClipAnnotation, DatasetManifest, EvalReport, SplitSpec};
pub use frontend::{AudioClip, FrontendConfig, Spectrogram};
pub use model::{ModelOutput, TcnConfig, TcnWeights, TrainingConfig};
pub use postproc::{
    BeatActivation, BeatSequence, DecoderConfig, Pipeline, TempoActivation, TempoEstimate,
};
