//! Training-sequence construction.
//!
//! Builds fixed-length training sequences from conversations three ways:
//! plain contiguous slices, concatenated slices of two different conversations
//! (the diversity-raising scheme the attention analysis motivates), and
//! concatenated isolated utterances. Also provides the label-diversity
//! entropy diagnostic that quantifies what the concatenation changes.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    align_labels_to_frames, speaker_index_assign, Conversation, Corpus, CorpusError, EmotionLabel,
    FrameLabelSequence,
};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation error: {detail}")]
    Validation { detail: String },
    #[error("batch needs {expected} conversations, got {got}")]
    BatchShape { expected: usize, got: usize },
    #[error("isolated-utterance pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Where a stretch of a training sequence came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub conv_id: String,
    /// Real frame range `[start, end)` in the source conversation.
    pub start_frame: usize,
    pub end_frame: usize,
}

/// A fixed-length training sequence: features, frame labels, interlocutor
/// indices, positions, padding flags, and source provenance.
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub labels: Vec<EmotionLabel>,
    /// Appearance-order interlocutor indices; −1 for pads and unattributed frames.
    pub speaker_indices: Vec<i32>,
    /// Positional indices fed to the model (continuous across concatenation
    /// boundaries unless configured otherwise).
    pub positions: Vec<u32>,
    /// True for right-padding frames (zero features, ignored by the loss and
    /// masked out of attention).
    pub is_pad: Vec<bool>,
    pub provenance: Vec<SourceSpan>,
}

impl TrainSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Loss targets: class index per frame, −1 where ignored.
    pub fn loss_labels(&self) -> Vec<i64> {
        self.labels
            .iter()
            .map(|l| l.class_index().map(|c| c as i64).unwrap_or(-1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcaMode {
    Conversations,
    Isolated,
}

/// Batch geometry for sequence construction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DcaConfig {
    pub batch_conversations: usize,
    pub slice_len: usize,
    pub train_len: usize,
    pub mode: DcaMode,
    pub seed: u64,
    /// Pick the partner that maximizes joint label entropy instead of
    /// sampling uniformly.
    pub diversity_greedy: bool,
    /// Restart positional indices at the concatenation boundary.
    pub reset_positions_at_boundary: bool,
    /// Re-assign interlocutor indices over the whole concatenated sequence
    /// (false keeps each half's own appearance-order indices).
    pub reindex_speakers_across_boundary: bool,
}

impl Default for DcaConfig {
    fn default() -> Self {
        DcaConfig {
            batch_conversations: 6,
            slice_len: 1024,
            train_len: 2048,
            mode: DcaMode::Conversations,
            seed: 0,
            diversity_greedy: false,
            reset_positions_at_boundary: false,
            reindex_speakers_across_boundary: true,
        }
    }
}

impl DcaConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.train_len == 0 || self.slice_len == 0 || self.batch_conversations == 0 {
            return Err(AugmentError::Validation {
                detail: "batch geometry must be positive".into(),
            });
        }
        if self.mode == DcaMode::Conversations && self.slice_len * 2 != self.train_len {
            return Err(AugmentError::Validation {
                detail: format!(
                    "conversation mode needs slice_len × 2 == train_len, got {} × 2 != {}",
                    self.slice_len, self.train_len
                ),
            });
        }
        Ok(())
    }
}

/// A conversation with its frame alignment precomputed, ready for slicing.
#[derive(Debug)]
pub struct AlignedConversation<'a> {
    pub conv: &'a Conversation,
    pub frames: FrameLabelSequence,
    speaker_names: Vec<Rc<str>>,
}

impl<'a> AlignedConversation<'a> {
    pub fn new(conv: &'a Conversation, frame_length_ms: u32) -> Result<Self, AugmentError> {
        let frames = align_labels_to_frames(conv, frame_length_ms)?;
        let speaker_names = conv
            .speakers_in_order()
            .into_iter()
            .map(Rc::from)
            .collect();
        Ok(AlignedConversation {
            conv,
            frames,
            speaker_names,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn speaker_name(&self, frame: usize) -> Option<Rc<str>> {
        let idx = self.frames.speakers[frame];
        if idx < 0 {
            None
        } else {
            Some(Rc::clone(&self.speaker_names[idx as usize]))
        }
    }
}

/// Align every conversation of a corpus for sequence construction.
pub fn align_corpus(
    corpus: &Corpus,
    frame_length_ms: u32,
) -> Result<Vec<AlignedConversation<'_>>, AugmentError> {
    corpus
        .conversations
        .iter()
        .map(|c| AlignedConversation::new(c, frame_length_ms))
        .collect()
}

/// One slice before interlocutor indices are assigned.
struct RawSequence {
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<EmotionLabel>,
    speakers: Vec<Option<(String, Rc<str>)>>,
    is_pad: Vec<bool>,
    provenance: Vec<SourceSpan>,
}

impl RawSequence {
    fn with_capacity(feature_dim: usize, len: usize) -> Self {
        RawSequence {
            features: Vec::with_capacity(len * feature_dim),
            feature_dim,
            labels: Vec::with_capacity(len),
            speakers: Vec::with_capacity(len),
            is_pad: Vec::with_capacity(len),
            provenance: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn push_span(&mut self, src: &AlignedConversation<'_>, start: usize, end: usize) {
        let features = src.conv.features().expect("aligned conversations have features");
        self.features
            .extend_from_slice(&features.values[start * self.feature_dim..end * self.feature_dim]);
        for t in start..end {
            self.labels.push(src.frames.labels[t]);
            // identity = (conversation, speaker name): the same name in two
            // conversations of one session is the same person, but stays
            // distinct from other conversations' speakers after concatenation
            self.speakers
                .push(src.speaker_name(t).map(|n| (src.conv.id.clone(), n)));
            self.is_pad.push(false);
        }
        self.provenance.push(SourceSpan {
            conv_id: src.conv.id.clone(),
            start_frame: start,
            end_frame: end,
        });
    }

    fn pad_to(&mut self, len: usize) {
        while self.len() < len {
            self.features.extend(std::iter::repeat(0.0).take(self.feature_dim));
            self.labels.push(EmotionLabel::Ignore);
            self.speakers.push(None);
            self.is_pad.push(true);
        }
    }

    /// Assign speaker indices by appearance of speaker *names* (a speaker
    /// string shared by two concatenated conversations denotes one person).
    fn finalize(self, positions: Vec<u32>, per_half_at: Option<usize>) -> Result<TrainSequence, AugmentError> {
        debug_assert_eq!(positions.len(), self.len());
        let keys: Vec<Option<Rc<str>>> = self
            .speakers
            .iter()
            .map(|s| s.as_ref().map(|(_, name)| Rc::clone(name)))
            .collect();
        let speaker_indices = match per_half_at {
            None => speaker_index_assign(&keys, usize::MAX)?,
            Some(at) => {
                let mut first = speaker_index_assign(&keys[..at], usize::MAX)?;
                let second = speaker_index_assign(&keys[at..], usize::MAX)?;
                first.extend(second);
                first
            }
        };
        Ok(TrainSequence {
            features: self.features,
            feature_dim: self.feature_dim,
            labels: self.labels,
            speaker_indices,
            positions,
            is_pad: self.is_pad,
            provenance: self.provenance,
        })
    }

    fn concat(mut self, other: RawSequence) -> RawSequence {
        debug_assert_eq!(self.feature_dim, other.feature_dim);
        self.features.extend(other.features);
        self.labels.extend(other.labels);
        self.speakers.extend(other.speakers);
        self.is_pad.extend(other.is_pad);
        self.provenance.extend(other.provenance);
        self
    }
}

fn slice_raw(
    src: &AlignedConversation<'_>,
    len: usize,
    rng: &mut impl Rng,
) -> Result<RawSequence, AugmentError> {
    if len == 0 {
        return Err(AugmentError::Validation {
            detail: "slice length must be positive".into(),
        });
    }
    let total = src.num_frames();
    if total == 0 {
        return Err(AugmentError::Validation {
            detail: format!("conversation {:?} has no frames", src.conv.id),
        });
    }
    let feature_dim = src.conv.features()?.num_features;
    let mut raw = RawSequence::with_capacity(feature_dim, len);
    if total >= len {
        let offset = rng.random_range(0..=total - len);
        raw.push_span(src, offset, offset + len);
    } else {
        raw.push_span(src, 0, total);
        raw.pad_to(len);
    }
    Ok(raw)
}

/// A contiguous slice of one conversation at a uniform random valid offset.
///
/// Conversations shorter than `len` come back right-padded with zero features
/// and `Ignore` labels; the provenance records the real span.
pub fn slice_conversation(
    src: &AlignedConversation<'_>,
    len: usize,
    rng: &mut impl Rng,
) -> Result<TrainSequence, AugmentError> {
    slice_raw(src, len, rng)?.finalize((0..len as u32).collect(), None)
}

fn joint_entropy(a: &[EmotionLabel], b: &[EmotionLabel]) -> f64 {
    let mut counts = [0usize; 5];
    for l in a.iter().chain(b) {
        if let Some(c) = l.class_index() {
            counts[c] += 1;
        }
    }
    entropy_bits(&counts)
}

/// The concatenation batch: one slice per conversation, then each slice is
/// paired with the slice of another conversation in the batch.
///
/// Every output sequence has length `train_len`, exactly two provenance spans
/// from two distinct conversations, and continuous positions unless the
/// boundary reset is configured.
pub fn dca_conversations<'a, S: std::borrow::Borrow<AlignedConversation<'a>>>(
    sources: &[S],
    cfg: &DcaConfig,
    rng: &mut impl Rng,
) -> Result<Vec<TrainSequence>, AugmentError> {
    cfg.validate()?;
    if sources.len() != cfg.batch_conversations {
        return Err(AugmentError::BatchShape {
            expected: cfg.batch_conversations,
            got: sources.len(),
        });
    }
    if sources.len() < 2 {
        return Err(AugmentError::Validation {
            detail: "concatenation needs at least 2 conversations".into(),
        });
    }

    // One slice per conversation first, then pairing.
    let slices: Vec<RawSequence> = sources
        .iter()
        .map(|src| slice_raw(src.borrow(), cfg.slice_len, rng))
        .collect::<Result<_, _>>()?;

    let mut partners = Vec::with_capacity(sources.len());
    for i in 0..sources.len() {
        let j = if cfg.diversity_greedy {
            (0..sources.len())
                .filter(|&j| j != i)
                .max_by(|&a, &b| {
                    let ea = joint_entropy(&slices[i].labels, &slices[a].labels);
                    let eb = joint_entropy(&slices[i].labels, &slices[b].labels);
                    ea.partial_cmp(&eb).unwrap().then(b.cmp(&a))
                })
                .expect("at least one partner")
        } else {
            let mut j = rng.random_range(0..sources.len() - 1);
            if j >= i {
                j += 1;
            }
            j
        };
        partners.push(j);
    }

    let positions: Vec<u32> = if cfg.reset_positions_at_boundary {
        (0..cfg.slice_len as u32).chain(0..cfg.slice_len as u32).collect()
    } else {
        (0..cfg.train_len as u32).collect()
    };
    let per_half_at = if cfg.reindex_speakers_across_boundary {
        None
    } else {
        Some(cfg.slice_len)
    };
    partners
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            let pair = clone_raw(&slices[i]).concat(clone_raw(&slices[j]));
            pair.finalize(positions.clone(), per_half_at)
        })
        .collect()
}

fn clone_raw(raw: &RawSequence) -> RawSequence {
    RawSequence {
        features: raw.features.clone(),
        feature_dim: raw.feature_dim,
        labels: raw.labels.clone(),
        speakers: raw.speakers.clone(),
        is_pad: raw.is_pad.clone(),
        provenance: raw.provenance.clone(),
    }
}

/// One isolated utterance: a maximal same-speaker, same-label frame run.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub conv_index: usize,
    pub conv_id: String,
    pub speaker: Rc<str>,
    pub label: EmotionLabel,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// All labeled utterances of a set of aligned conversations.
pub fn utterance_pool(sources: &[AlignedConversation<'_>]) -> Vec<Utterance> {
    let mut pool = Vec::new();
    for (ci, src) in sources.iter().enumerate() {
        let frames = &src.frames;
        let mut t = 0usize;
        while t < frames.len() {
            let label = frames.labels[t];
            let speaker = frames.speakers[t];
            if label == EmotionLabel::Ignore || speaker < 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < frames.len() && frames.labels[t] == label && frames.speakers[t] == speaker {
                t += 1;
            }
            pool.push(Utterance {
                conv_index: ci,
                conv_id: src.conv.id.clone(),
                speaker: src.speaker_name(start).expect("labeled frame has a speaker"),
                label,
                start_frame: start,
                end_frame: t,
            });
        }
    }
    pool
}

fn push_utterance(
    raw: &mut RawSequence,
    sources: &[AlignedConversation<'_>],
    utt: &Utterance,
    budget: usize,
) {
    let take = utt.num_frames().min(budget);
    raw.push_span(
        &sources[utt.conv_index],
        utt.start_frame,
        utt.start_frame + take,
    );
}

/// A single utterance padded (or truncated) to `len`: the no-context regime.
pub fn single_utterance_sequence(
    sources: &[AlignedConversation<'_>],
    utt: &Utterance,
    len: usize,
) -> Result<TrainSequence, AugmentError> {
    let feature_dim = sources[utt.conv_index].conv.features()?.num_features;
    let mut raw = RawSequence::with_capacity(feature_dim, len);
    push_utterance(&mut raw, sources, utt, len);
    raw.pad_to(len);
    raw.finalize((0..len as u32).collect(), None)
}

/// Concatenate utterances drawn uniformly with replacement from the pool
/// until the sequence reaches `train_len` (the last one is truncated to fit).
pub fn dca_isolated(
    sources: &[AlignedConversation<'_>],
    pool: &[Utterance],
    cfg: &DcaConfig,
    rng: &mut impl Rng,
) -> Result<TrainSequence, AugmentError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    let feature_dim = sources[pool[0].conv_index].conv.features()?.num_features;
    let mut raw = RawSequence::with_capacity(feature_dim, cfg.train_len);
    while raw.len() < cfg.train_len {
        let utt = &pool[rng.random_range(0..pool.len())];
        let budget = cfg.train_len - raw.len();
        push_utterance(&mut raw, sources, utt, budget);
    }
    raw.finalize((0..cfg.train_len as u32).collect(), None)
}

fn entropy_bits(counts: &[usize; 5]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.log2();
        }
    }
    h
}

/// Shannon entropy (bits) of the label distribution over non-Ignore frames.
pub fn label_diversity_entropy(labels: &[EmotionLabel]) -> f64 {
    let mut counts = [0usize; 5];
    for l in labels {
        if let Some(c) = l.class_index() {
            counts[c] += 1;
        }
    }
    entropy_bits(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_corpus(seed: u64) -> Corpus {
        synth_corpus(&SynthConfig {
            num_sessions: 2,
            conversations_per_session: 3,
            conversation_s: 12.0,
            mean_segment_s: 1.0,
            inertia: 0.5,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn slice_geometry() {
        let corpus = test_corpus(3);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let total = aligned[0].num_frames();
        assert!(total > 600);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let seq = slice_conversation(&aligned[0], 512, &mut rng).unwrap();
            assert_eq!(seq.len(), 512);
            assert_eq!(seq.provenance.len(), 1);
            let span = &seq.provenance[0];
            assert_eq!(span.end_frame - span.start_frame, 512);
            assert!(span.end_frame <= total);
            assert!(seq.is_pad.iter().all(|&p| !p));
        }
    }

    #[test]
    fn short_conversation_is_padded() {
        let corpus = test_corpus(4);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let total = aligned[0].num_frames();
        let len = total + 100;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = slice_conversation(&aligned[0], len, &mut rng).unwrap();
        assert_eq!(seq.len(), len);
        assert_eq!(seq.provenance[0].end_frame, total);
        for t in total..len {
            assert!(seq.is_pad[t]);
            assert_eq!(seq.labels[t], EmotionLabel::Ignore);
            assert_eq!(seq.speaker_indices[t], -1);
            assert!(seq.features[t * seq.feature_dim..(t + 1) * seq.feature_dim]
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn slice_len_equal_to_conversation_forces_offset_zero() {
        let corpus = test_corpus(5);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let total = aligned[0].num_frames();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = slice_conversation(&aligned[0], total, &mut rng).unwrap();
        assert_eq!(seq.provenance[0].start_frame, 0);
        assert_eq!(seq.provenance[0].end_frame, total);
    }

    #[test]
    fn zero_slice_length_rejected() {
        let corpus = test_corpus(5);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(slice_conversation(&aligned[0], 0, &mut rng).is_err());
    }

    fn small_dca_cfg() -> DcaConfig {
        DcaConfig {
            batch_conversations: 6,
            slice_len: 128,
            train_len: 256,
            ..DcaConfig::default()
        }
    }

    #[test]
    fn dca_conversations_geometry() {
        let corpus = test_corpus(6);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = small_dca_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = dca_conversations(&aligned[..6], &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 6);
        for seq in &batch {
            assert_eq!(seq.len(), 256);
            assert_eq!(seq.provenance.len(), 2);
            assert_ne!(seq.provenance[0].conv_id, seq.provenance[1].conv_id);
            assert_eq!(seq.positions, (0..256u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dca_speaker_reindex_over_full_sequence() {
        let corpus = test_corpus(7);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = small_dca_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = dca_conversations(&aligned[..6], &cfg, &mut rng).unwrap();
        for seq in &batch {
            // indices grow by first appearance without gaps
            let mut seen_max = -1i32;
            for (&idx, &pad) in seq.speaker_indices.iter().zip(&seq.is_pad) {
                if pad || idx < 0 {
                    continue;
                }
                assert!(idx <= seen_max + 1, "index {idx} after max {seen_max}");
                seen_max = seen_max.max(idx);
            }
            // two conversations with 2 speakers each → up to 4 indices
            assert!((1..=3).contains(&seen_max));
        }
    }

    #[test]
    fn dca_boundary_flags() {
        let corpus = test_corpus(8);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = DcaConfig {
            reset_positions_at_boundary: true,
            reindex_speakers_across_boundary: false,
            ..small_dca_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = dca_conversations(&aligned[..6], &cfg, &mut rng).unwrap();
        for seq in &batch {
            assert_eq!(seq.positions[127], 127);
            assert_eq!(seq.positions[128], 0);
            // per-half indexing restarts at the boundary
            let first_labeled = (128..256)
                .find(|&t| seq.speaker_indices[t] >= 0)
                .expect("some labeled frame");
            assert_eq!(seq.speaker_indices[first_labeled], 0);
        }
    }

    #[test]
    fn dca_batch_shape_error() {
        let corpus = test_corpus(9);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = small_dca_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let err = dca_conversations(&aligned[..4], &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, AugmentError::BatchShape { expected: 6, got: 4 }));
    }

    #[test]
    fn isolated_pool_and_concatenation() {
        let corpus = test_corpus(10);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let pool = utterance_pool(&aligned);
        assert!(!pool.is_empty());
        let cfg = DcaConfig {
            mode: DcaMode::Isolated,
            ..small_dca_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seq = dca_isolated(&aligned, &pool, &cfg, &mut rng).unwrap();
        assert_eq!(seq.len(), 256);
        assert!(seq.provenance.len() >= 2);
        assert!(seq.is_pad.iter().all(|&p| !p));
    }

    #[test]
    fn single_long_utterance_truncates() {
        let corpus = synth_corpus(&SynthConfig {
            num_sessions: 1,
            conversations_per_session: 1,
            conversation_s: 10.0,
            mean_segment_s: 8.0,
            inertia: 1.0,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let aligned = align_corpus(&corpus, 25).unwrap();
        let pool = utterance_pool(&aligned);
        let long = pool.iter().max_by_key(|u| u.num_frames()).unwrap();
        assert!(long.num_frames() > 100);
        let seq = single_utterance_sequence(&aligned, long, 100).unwrap();
        assert_eq!(seq.len(), 100);
        assert_eq!(seq.provenance.len(), 1);
        assert_eq!(seq.provenance[0].end_frame - seq.provenance[0].start_frame, 100);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let corpus = test_corpus(11);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = small_dca_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            dca_isolated(&aligned, &[], &cfg, &mut rng).unwrap_err(),
            AugmentError::EmptyPool
        ));
    }

    #[test]
    fn entropy_reference_points() {
        use EmotionLabel::*;
        assert_eq!(label_diversity_entropy(&[Angry, Angry, Angry]), 0.0);
        assert!((label_diversity_entropy(&[Angry, Happy]) - 1.0).abs() < 1e-12);
        // (1/2, 1/4, 1/4) → 1.5 bits
        let labels = [Angry, Angry, Happy, Sad];
        assert!((label_diversity_entropy(&labels) - 1.5).abs() < 1e-12);
        assert_eq!(label_diversity_entropy(&[Ignore, Ignore]), 0.0);
        assert_eq!(label_diversity_entropy(&[]), 0.0);
    }

    #[test]
    fn determinism_per_seed() {
        let corpus = test_corpus(12);
        let aligned = align_corpus(&corpus, 25).unwrap();
        let cfg = small_dca_cfg();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            dca_conversations(&aligned[..6], &cfg, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.speaker_indices, y.speaker_indices);
        }
    }
}
