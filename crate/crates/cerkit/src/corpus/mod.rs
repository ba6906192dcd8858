//! Data model for diarized, emotion-labeled conversations.
//!
//! Covers segment-file ingestion, frame-level label alignment, synthetic
//! corpus generation with controllable emotional inertia, session-based
//! cross-validation splits, and interlocutor index assignment.

mod align;
mod parse;
mod splits;
mod store;
mod synth;

pub use align::{align_labels_to_frames, speaker_index_assign, DEFAULT_FRAME_LENGTH_MS};
pub use parse::{parse_segments, parse_segments_str, ParsedSegments};
pub use splits::{loso_splits, Fold};
pub use store::{
    corpus_fingerprint, load_corpus, save_corpus, CorpusManifest, ManifestEntry, StoredCorpus,
    MANIFEST_VERSION,
};
pub use synth::synth_corpus;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix};

/// The five classification targets plus the ignore class.
///
/// `Ignore` marks frames and segments excluded from both the loss and the
/// metrics; it never appears in the model's output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionLabel {
    Angry,
    Frustration,
    Happy,
    Neutral,
    Sad,
    Ignore,
}

impl EmotionLabel {
    /// The model's output classes, in fixed reporting order.
    pub const CLASSES: [EmotionLabel; 5] = [
        EmotionLabel::Angry,
        EmotionLabel::Frustration,
        EmotionLabel::Happy,
        EmotionLabel::Neutral,
        EmotionLabel::Sad,
    ];

    /// Class index in `[0, 5)`, or `None` for `Ignore`.
    pub fn class_index(self) -> Option<usize> {
        match self {
            EmotionLabel::Angry => Some(0),
            EmotionLabel::Frustration => Some(1),
            EmotionLabel::Happy => Some(2),
            EmotionLabel::Neutral => Some(3),
            EmotionLabel::Sad => Some(4),
            EmotionLabel::Ignore => None,
        }
    }

    pub fn from_class_index(i: usize) -> EmotionLabel {
        Self::CLASSES[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "Angry",
            EmotionLabel::Frustration => "Frustration",
            EmotionLabel::Happy => "Happy",
            EmotionLabel::Neutral => "Neutral",
            EmotionLabel::Sad => "Sad",
            EmotionLabel::Ignore => "Ignore",
        }
    }

    /// Parse a label string; unknown labels yield `None` so callers can map
    /// them to `Ignore` with a warning.
    pub fn parse(s: &str) -> Option<EmotionLabel> {
        match s.to_ascii_lowercase().as_str() {
            "angry" | "ang" => Some(EmotionLabel::Angry),
            "frustration" | "fru" | "frustrated" => Some(EmotionLabel::Frustration),
            "happy" | "hap" => Some(EmotionLabel::Happy),
            "neutral" | "neu" => Some(EmotionLabel::Neutral),
            "sad" => Some(EmotionLabel::Sad),
            "ignore" => Some(EmotionLabel::Ignore),
            _ => None,
        }
    }
}

/// One diarized, labeled stretch of a conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub speaker: String,
    pub label: EmotionLabel,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t_s: f64) -> bool {
        self.start_s <= t_s && t_s < self.end_s
    }
}

/// A diarized, emotion-labeled conversation with (optionally resolved)
/// acoustic features. Segments are non-overlapping and sorted by start time.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub id: String,
    pub session: String,
    pub segments: Vec<Segment>,
    pub features: Option<FeatureMatrix>,
}

impl Conversation {
    /// Validate segment ordering/overlap and the non-empty speaker set.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.segments.is_empty() {
            return Err(CorpusError::Validation {
                detail: format!("conversation {:?} has no segments", self.id),
            });
        }
        for seg in &self.segments {
            if !(seg.start_s >= 0.0 && seg.start_s < seg.end_s) {
                return Err(CorpusError::Validation {
                    detail: format!(
                        "conversation {:?}: segment [{}, {}) must satisfy 0 <= start < end",
                        self.id, seg.start_s, seg.end_s
                    ),
                });
            }
        }
        for pair in self.segments.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return Err(CorpusError::Validation {
                    detail: format!(
                        "conversation {:?}: segments [{}, {}) and [{}, {}) overlap",
                        self.id, pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
                    ),
                });
            }
        }
        Ok(())
    }

    /// Attach features, checking they cover the annotated span.
    pub fn attach_features(&mut self, m: FeatureMatrix) -> Result<(), CorpusError> {
        let shift_s = m.frame_shift_ms as f64 / 1000.0;
        let covered_s = m.num_frames as f64 * shift_s;
        if let Some(last) = self.segments.last() {
            if last.end_s > covered_s + shift_s + 1e-9 {
                return Err(CorpusError::Validation {
                    detail: format!(
                        "conversation {:?}: segments end at {:.3}s but features cover only {:.3}s",
                        self.id, last.end_s, covered_s
                    ),
                });
            }
        }
        self.features = Some(m);
        Ok(())
    }

    pub fn features(&self) -> Result<&FeatureMatrix, CorpusError> {
        self.features.as_ref().ok_or(CorpusError::MissingFeatures {
            conv: self.id.clone(),
        })
    }

    pub fn num_frames(&self) -> Result<usize, CorpusError> {
        Ok(self.features()?.num_frames)
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers_in_order(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for seg in &self.segments {
            if !seen.contains(&seg.speaker.as_str()) {
                seen.push(seg.speaker.as_str());
            }
        }
        seen
    }

    /// Duration-weighted proportion of each non-Ignore class.
    pub fn label_proportions(&self) -> [f64; 5] {
        let mut durations = [0.0; 5];
        for seg in &self.segments {
            if let Some(c) = seg.label.class_index() {
                durations[c] += seg.duration_s();
            }
        }
        let total: f64 = durations.iter().sum();
        if total > 0.0 {
            for d in &mut durations {
                *d /= total;
            }
        }
        durations
    }
}

/// Per-frame labels and speaker indices, aligned with a feature matrix.
///
/// `speakers[t]` is the speaker's order-of-appearance index within this
/// conversation, or −1 for frames whose center falls in no segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabelSequence {
    pub labels: Vec<EmotionLabel>,
    pub speakers: Vec<i32>,
}

impl FrameLabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How a stored corpus obtained its feature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Class/speaker-conditioned Gaussian patterns emitted directly.
    SyntheticMfcc,
    /// MFCC extracted from user-supplied WAV recordings.
    FromWav,
}

/// Synthetic corpus settings. The seed fully determines the output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_sessions: usize,
    pub conversations_per_session: usize,
    pub speakers_per_conversation: usize,
    /// Mean spoken-turn duration in seconds.
    pub mean_segment_s: f64,
    /// Mean unlabeled gap inserted between turns (0 disables gaps).
    pub gap_s: f64,
    /// Target labeled duration per conversation in seconds.
    pub conversation_s: f64,
    /// Probability that the next turn keeps the current emotion.
    pub inertia: f64,
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub feature_dim: usize,
    pub frame_shift_ms: u32,
    pub frame_length_ms: u32,
    /// Std of the per-frame Gaussian noise.
    pub noise_std: f64,
    /// Spacing of the per-class component along the shared axis.
    pub class_sep: f64,
    /// Magnitude of the class-distinct orthogonal component.
    pub class_ortho_scale: f64,
    /// Magnitude of the per-speaker offset along the shared axis; raising it
    /// toward `class_sep` makes speaker identity informative for the label.
    pub speaker_offset_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_sessions: 5,
            conversations_per_session: 8,
            speakers_per_conversation: 2,
            mean_segment_s: 2.0,
            gap_s: 0.15,
            conversation_s: 30.0,
            inertia: 0.9,
            seed: 0,
            feature_mode: FeatureMode::SyntheticMfcc,
            feature_dim: 13,
            frame_shift_ms: 10,
            frame_length_ms: 25,
            noise_std: 0.6,
            class_sep: 1.0,
            class_ortho_scale: 1.0,
            speaker_offset_scale: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.inertia) {
            return Err(CorpusError::Validation {
                detail: format!("inertia {} outside [0, 1]", self.inertia),
            });
        }
        if self.num_sessions == 0 || self.conversations_per_session == 0 {
            return Err(CorpusError::Validation {
                detail: "num_sessions and conversations_per_session must be positive".into(),
            });
        }
        if self.speakers_per_conversation == 0 {
            return Err(CorpusError::Validation {
                detail: "speakers_per_conversation must be positive".into(),
            });
        }
        if self.feature_dim < 6 {
            return Err(CorpusError::Validation {
                detail: format!(
                    "feature_dim {} too small: class patterns need at least 6 dimensions",
                    self.feature_dim
                ),
            });
        }
        if self.mean_segment_s <= 0.0 || self.conversation_s < self.mean_segment_s {
            return Err(CorpusError::Validation {
                detail: "conversation_s must be at least mean_segment_s (both positive)".into(),
            });
        }
        if self.gap_s < 0.0 {
            return Err(CorpusError::Validation {
                detail: "gap_s must be non-negative".into(),
            });
        }
        if self.frame_shift_ms == 0 || self.frame_shift_ms > self.frame_length_ms {
            return Err(CorpusError::Validation {
                detail: "frame_shift_ms must be positive and at most frame_length_ms".into(),
            });
        }
        if self.feature_mode != FeatureMode::SyntheticMfcc {
            return Err(CorpusError::Validation {
                detail: "synthesis only supports feature_mode \"synthetic-mfcc\"; \
                         real audio enters through the featurize pipeline"
                    .into(),
            });
        }
        Ok(())
    }
}

/// A set of conversations, the unit the trainer and analyses operate on.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        Corpus { conversations }
    }

    /// Sorted distinct session identifiers.
    pub fn sessions(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .conversations
            .iter()
            .map(|c| c.session.clone())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn by_session(&self, session: &str) -> Vec<&Conversation> {
        self.conversations
            .iter()
            .filter(|c| c.session == session)
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }
}

/// Errors from corpus construction, ingestion, and validation.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("validation error: {detail}")]
    Validation { detail: String },
    #[error("{distinct} distinct speakers exceed the dictionary capacity of {max}")]
    SpeakerCapacity { distinct: usize, max: usize },
    #[error("conversation {conv:?} has no resolved features")]
    MissingFeatures { conv: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("corpus manifest error: {detail}")]
    Manifest { detail: String },
}
