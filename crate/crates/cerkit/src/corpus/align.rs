//! Frame-level label alignment and interlocutor index assignment.

use std::collections::HashMap;
use std::hash::Hash;

use super::{Conversation, CorpusError, EmotionLabel, FrameLabelSequence};

/// Analysis window length assumed when a caller has no explicit value.
pub const DEFAULT_FRAME_LENGTH_MS: u32 = 25;

/// Assign every frame the label and speaker of the segment containing its
/// center, `t·shift + frame_length/2`. Frames whose center falls in no
/// segment get `Ignore` and speaker −1.
///
/// Total: every frame receives exactly one label.
pub fn align_labels_to_frames(
    conv: &Conversation,
    frame_length_ms: u32,
) -> Result<FrameLabelSequence, CorpusError> {
    let features = conv.features()?;
    let shift_s = features.frame_shift_ms as f64 / 1000.0;
    let half_frame_s = frame_length_ms as f64 / 2000.0;
    let speakers = conv.speakers_in_order();
    let speaker_index: HashMap<&str, i32> = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as i32))
        .collect();

    let mut labels = Vec::with_capacity(features.num_frames);
    let mut frame_speakers = Vec::with_capacity(features.num_frames);
    // Segments are sorted; sweep them alongside the frame centers.
    let mut seg_idx = 0usize;
    for t in 0..features.num_frames {
        let center = t as f64 * shift_s + half_frame_s;
        while seg_idx < conv.segments.len() && conv.segments[seg_idx].end_s <= center {
            seg_idx += 1;
        }
        match conv.segments.get(seg_idx) {
            Some(seg) if seg.contains(center) => {
                labels.push(seg.label);
                frame_speakers.push(speaker_index[seg.speaker.as_str()]);
            }
            _ => {
                labels.push(EmotionLabel::Ignore);
                frame_speakers.push(-1);
            }
        }
    }
    Ok(FrameLabelSequence {
        labels,
        speakers: frame_speakers,
    })
}

/// Assign interlocutor indices by order of first appearance.
///
/// The first distinct speaker key becomes 0, the second 1, and so on;
/// `None` entries (unattributed frames) stay −1. Errs when the number of
/// distinct speakers exceeds the model's dictionary capacity — at test time a
/// conversation cannot contain more speakers than a training sample could.
pub fn speaker_index_assign<K: Eq + Hash + Clone>(
    keys: &[Option<K>],
    max_speakers: usize,
) -> Result<Vec<i32>, CorpusError> {
    let mut assigned: HashMap<K, i32> = HashMap::new();
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        match key {
            None => out.push(-1),
            Some(k) => {
                let next = assigned.len() as i32;
                let idx = *assigned.entry(k.clone()).or_insert(next);
                out.push(idx);
            }
        }
    }
    if assigned.len() > max_speakers {
        return Err(CorpusError::SpeakerCapacity {
            distinct: assigned.len(),
            max: max_speakers,
        });
    }
    Ok(out)
}
