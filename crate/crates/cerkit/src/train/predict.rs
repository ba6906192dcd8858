//! Full-conversation prediction.
//!
//! Conversations longer than the training window are evaluated in
//! overlapping chunks; logits of frames covered by several chunks are
//! averaged before the argmax. With zero overlap this is exactly
//! concatenated independent chunk prediction.

use crate::corpus::{
    align_labels_to_frames, speaker_index_assign, Conversation, EmotionLabel, FrameLabelSequence,
};
use crate::model::{argmax_rows, Model, ModelError, RunMode};
use crate::tensor::{Tape, Tensor};

use super::TrainError;

/// Chunk geometry for full-conversation evaluation.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Window length; 0 disables chunking (whole conversation in one pass).
    pub chunk_len: usize,
    /// Overlap between consecutive windows (must be < chunk_len).
    pub overlap: usize,
    /// Analysis window length used for label alignment.
    pub frame_length_ms: u32,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.chunk_len > 0 && self.overlap >= self.chunk_len {
            return Err(TrainError::Validation {
                detail: format!(
                    "eval overlap {} must be smaller than chunk length {}",
                    self.overlap, self.chunk_len
                ),
            });
        }
        Ok(())
    }
}

/// `[start, end)` windows covering `total` frames.
pub fn chunk_spans(total: usize, chunk_len: usize, overlap: usize) -> Vec<(usize, usize)> {
    if chunk_len == 0 || total <= chunk_len {
        return vec![(0, total)];
    }
    let stride = chunk_len - overlap;
    let mut spans = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + chunk_len).min(total);
        spans.push((start, end));
        if end == total {
            break;
        }
        start += stride;
    }
    spans
}

/// Predicted per-frame labels plus the reference alignment they score against.
#[derive(Debug, Clone)]
pub struct ConversationPrediction {
    pub hyps: Vec<EmotionLabel>,
    pub reference: FrameLabelSequence,
}

/// Predict every frame of a conversation with a trained model.
pub fn predict_conversation(
    model: &Model<f32>,
    conv: &Conversation,
    eval: &EvalConfig,
) -> Result<ConversationPrediction, TrainError> {
    eval.validate()?;
    let features = conv.features()?;
    let total = features.num_frames;
    let reference = align_labels_to_frames(conv, eval.frame_length_ms)?;
    if eval.chunk_len == 0 && total > model.config.max_positions {
        return Err(TrainError::Model(ModelError::Capacity {
            what: "conversation length (chunking disabled)",
            index: total as i64,
            limit: model.config.max_positions,
        }));
    }

    let classes = model.config.num_classes;
    let mut logit_sums = vec![0.0f64; total * classes];
    let mut cover = vec![0u32; total];
    for (start, end) in chunk_spans(total, eval.chunk_len, eval.overlap) {
        let len = end - start;
        let x = Tensor::from_vec(
            vec![len, features.num_features],
            features.values[start * features.num_features..end * features.num_features].to_vec(),
        )
        .map_err(ModelError::Tensor)?;
        let positions: Vec<u32> = (0..len as u32).collect();
        // interlocutor indices by appearance order within this chunk
        let keys: Vec<Option<i32>> = reference.speakers[start..end]
            .iter()
            .map(|&s| if s < 0 { None } else { Some(s) })
            .collect();
        let speakers = if model.config.use_interlocutor {
            speaker_index_assign(&keys, model.config.max_speakers)?
        } else {
            vec![0; len]
        };
        let tape = Tape::disabled();
        let logits = model.forward(
            &tape,
            &x,
            &positions,
            &speakers,
            &vec![false; len],
            &mut RunMode::Eval,
        )?;
        for t in 0..len {
            cover[start + t] += 1;
            for c in 0..classes {
                logit_sums[(start + t) * classes + c] += logits.data()[t * classes + c] as f64;
            }
        }
    }

    let averaged: Vec<f32> = logit_sums
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / cover[i / classes] as f64) as f32)
        .collect();
    let averaged = Tensor::from_vec(vec![total, classes], averaged).map_err(ModelError::Tensor)?;
    let hyps = argmax_rows(&averaged)
        .into_iter()
        .map(EmotionLabel::from_class_index)
        .collect();
    Ok(ConversationPrediction { hyps, reference })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_geometry_from_the_contract() {
        // 3000 frames, chunk 2048, overlap 512 → [0,2048) and [1536,3000)
        let spans = chunk_spans(3000, 2048, 512);
        assert_eq!(spans, vec![(0, 2048), (1536, 3000)]);
        // exact fit → one chunk
        assert_eq!(chunk_spans(2048, 2048, 512), vec![(0, 2048)]);
        // chunking disabled
        assert_eq!(chunk_spans(5000, 0, 0), vec![(0, 5000)]);
        // zero overlap tiles the timeline
        assert_eq!(
            chunk_spans(10, 4, 0),
            vec![(0, 4), (4, 8), (8, 10)]
        );
    }

    #[test]
    fn every_frame_is_covered() {
        for (total, chunk, overlap) in [(3000, 2048, 512), (999, 100, 30), (50, 64, 16)] {
            let spans = chunk_spans(total, chunk, overlap);
            let mut covered = vec![false; total];
            for (s, e) in spans {
                for c in covered.iter_mut().take(e).skip(s) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "{total}/{chunk}/{overlap}");
        }
    }
}
