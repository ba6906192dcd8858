//! Acoustic front-end: WAV ingestion, MFCC extraction, and the binary `FMX`
//! feature-matrix file format.

mod fmx;
mod mfcc;
mod wav;

pub use fmx::{read_features, write_features};
pub use mfcc::{
    frame_count, mel_filterbank, mfcc, mfcc_stages, MelFilterbank, MfccConfig, MfccStages,
};
pub use wav::{read_wav, write_wav_f32, write_wav_pcm16, WavAudio};

use thiserror::Error;

/// Errors from audio parsing, feature extraction, and FMX files.
#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },
    #[error("unsupported WAV encoding: {encoding} (supported: PCM 16-bit, IEEE float 32-bit)")]
    UnsupportedEncoding { encoding: String },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("audio too short: {samples} samples, need at least {frame_samples} for one frame")]
    AudioTooShort { samples: usize, frame_samples: usize },
    #[error("invalid feature config: {detail}")]
    InvalidConfig { detail: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("refusing to write a feature matrix with zero frames")]
    EmptyMatrix,
}

/// A `T×F` matrix of per-frame acoustic features, row-major.
///
/// `frame_shift_ms` is carried along so frame indices can be mapped back to
/// time when aligning labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub num_frames: usize,
    pub num_features: usize,
    pub values: Vec<f32>,
    pub frame_shift_ms: u32,
}

impl FeatureMatrix {
    pub fn new(
        num_frames: usize,
        num_features: usize,
        values: Vec<f32>,
        frame_shift_ms: u32,
    ) -> Result<Self, FeatureError> {
        if values.len() != num_frames * num_features {
            return Err(FeatureError::InvalidConfig {
                detail: format!(
                    "{} values for a {num_frames}x{num_features} matrix",
                    values.len()
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                what: "feature matrix".into(),
            });
        }
        Ok(FeatureMatrix {
            num_frames,
            num_features,
            values,
            frame_shift_ms,
        })
    }

    /// One frame's feature vector.
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.num_features..(t + 1) * self.num_features]
    }

    /// Frames `[start, end)` as a new matrix.
    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        debug_assert!(start <= end && end <= self.num_frames);
        FeatureMatrix {
            num_frames: end - start,
            num_features: self.num_features,
            values: self.values[start * self.num_features..end * self.num_features].to_vec(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}
