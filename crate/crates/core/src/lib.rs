//! Vocal-style speaker embeddings from raw 8 kHz audio.
//!
//! A learned 1-D convolutional filterbank turns waveform frames into feature
//! sequences; a 2-D convolutional + GRU reference encoder summarizes them, and
//! attention over a bank of style tokens yields a unit-norm embedding trained
//! with a triplet loss. Around the model sit a seeded synthetic-speaker
//! corpus, a verification toolkit (DET, EER, TMR@FMR, minDCF, score fusion)
//! and spectrogram / pitch / embedding-space analysis.

pub mod analysis;
pub mod audio;
pub mod error;
pub mod frontend;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod style_encoder;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
