//! Synthetic corpus generation.
//!
//! Each conversation is a sequence of alternating speaker turns whose
//! emotions follow a first-order chain: with probability `inertia` the next
//! turn keeps the current emotion, otherwise it switches uniformly to one of
//! the other four. High inertia reproduces the corpus phenomenon of one
//! emotion dominating most of a conversation.
//!
//! Features are class- and speaker-conditioned Gaussian patterns. The mean of
//! a frame in class `c` spoken by the conversation's speaker `j` is
//!
//! `class_sep·c·u + class_ortho_scale·v_c + speaker_offset_scale·j·u`
//!
//! with `u = e0` and `v_c = e_{1+c}`: classes are spaced along a shared axis
//! and carry a class-distinct orthogonal component. When
//! `speaker_offset_scale` approaches `class_sep`, speaker offsets alias
//! neighboring classes along the shared axis and speaker identity becomes
//! informative for the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Conversation, Corpus, CorpusError, EmotionLabel, Segment, SynthConfig};
use crate::features::FeatureMatrix;

/// Generate a deterministic synthetic corpus with features and labels.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let mut conversations = Vec::new();
    let mut conv_counter = 0u64;
    for session_idx in 0..cfg.num_sessions {
        for conv_idx in 0..cfg.conversations_per_session {
            // Independent stream per conversation keeps generation
            // order-free and reproducible.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(conv_counter + 1);
            conv_counter += 1;
            conversations.push(generate_conversation(cfg, session_idx, conv_idx, &mut rng)?);
        }
    }
    Ok(Corpus::new(conversations))
}

fn generate_conversation(
    cfg: &SynthConfig,
    session_idx: usize,
    conv_idx: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Conversation, CorpusError> {
    let session = format!("session{session_idx}");
    let id = format!("s{session_idx}c{conv_idx:03}");

    // Turn plan: alternating speakers, Markov emotions, optional gaps.
    let mut segments = Vec::new();
    let mut cursor_s = 0.0f64;
    let mut labeled_s = 0.0f64;
    let mut turn = 0usize;
    let mut emotion = EmotionLabel::from_class_index(rng.random_range(0..5));
    while labeled_s < cfg.conversation_s {
        if turn > 0 {
            if rng.random::<f64>() >= cfg.inertia {
                let step = rng.random_range(1..5);
                let c = (emotion.class_index().unwrap() + step) % 5;
                emotion = EmotionLabel::from_class_index(c);
            }
            if cfg.gap_s > 0.0 {
                cursor_s += cfg.gap_s * (0.5 + rng.random::<f64>());
            }
        }
        let speaker_j = turn % cfg.speakers_per_conversation;
        let duration = cfg.mean_segment_s * (0.5 + rng.random::<f64>());
        segments.push(Segment {
            start_s: cursor_s,
            end_s: cursor_s + duration,
            speaker: format!("s{session_idx}_spk{speaker_j}"),
            label: emotion,
        });
        cursor_s += duration;
        labeled_s += duration;
        turn += 1;
    }

    let mut conv = Conversation {
        id,
        session,
        segments,
        features: None,
    };
    conv.validate()?;

    // Frame grid covering the full timeline, labeled by the center rule.
    let total_ms = (cursor_s * 1000.0).ceil() as u64 + cfg.frame_length_ms as u64;
    let num_frames =
        ((total_ms - cfg.frame_length_ms as u64) / cfg.frame_shift_ms as u64) as usize + 1;
    let f = cfg.feature_dim;
    let half_frame_s = cfg.frame_length_ms as f64 / 2000.0;
    let shift_s = cfg.frame_shift_ms as f64 / 1000.0;

    let speakers = conv.speakers_in_order();
    let mut values = vec![0.0f32; num_frames * f];
    let mut seg_idx = 0usize;
    for t in 0..num_frames {
        let center = t as f64 * shift_s + half_frame_s;
        while seg_idx < conv.segments.len() && conv.segments[seg_idx].end_s <= center {
            seg_idx += 1;
        }
        let row = &mut values[t * f..(t + 1) * f];
        match conv.segments.get(seg_idx) {
            Some(seg) if seg.contains(center) => {
                let c = seg.label.class_index().expect("synthetic labels are classes");
                let j = speakers
                    .iter()
                    .position(|&s| s == seg.speaker)
                    .expect("segment speaker is known") as f64;
                row[0] = (cfg.class_sep * c as f64 + cfg.speaker_offset_scale * j) as f32;
                row[1 + c] = cfg.class_ortho_scale as f32;
            }
            _ => {
                // Gap frames carry noise only; alignment marks them Ignore.
            }
        }
        for v in row.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += (cfg.noise_std * n) as f32;
        }
    }

    let features = FeatureMatrix::new(num_frames, f, values, cfg.frame_shift_ms)?;
    conv.attach_features(features)?;
    Ok(conv)
}
