//! Corpus analyses: segment-emotion trigram probabilities and emotional
//! inertia (dominant-emotion duration fractions).

use serde::Serialize;

use crate::corpus::{Corpus, EmotionLabel};

/// Fraction of conversation time above which an emotion counts as dominating.
pub const INERTIA_DOMINANCE_THRESHOLD: f64 = 0.75;

/// Row-normalized counts of (neighbor, central, neighbor) segment-emotion
/// trigrams whose two neighbors agree. Rows are the central emotion, columns
/// the neighbor; the diagonal is each emotion's homogeneous fraction.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrigramTable {
    pub counts: [[u64; 5]; 5],
}

impl TrigramTable {
    pub fn row_normalized(&self) -> [[f64; 5]; 5] {
        let mut out = [[0.0; 5]; 5];
        for r in 0..5 {
            let total: u64 = self.counts[r].iter().sum();
            if total > 0 {
                for c in 0..5 {
                    out[r][c] = self.counts[r][c] as f64 / total as f64;
                }
            }
        }
        out
    }

    /// 1 − diagonal, per central emotion (rows with no trigrams give None).
    pub fn heterogeneous_fraction(&self) -> [Option<f64>; 5] {
        let normalized = self.row_normalized();
        let mut out = [None; 5];
        for c in 0..5 {
            if self.counts[c].iter().sum::<u64>() > 0 {
                out[c] = Some(1.0 - normalized[c][c]);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let normalized = self.row_normalized();
        let mut s = String::from("central");
        for label in EmotionLabel::CLASSES {
            s.push(',');
            s.push_str(label.name());
        }
        s.push('\n');
        for (r, row) in normalized.iter().enumerate() {
            s.push_str(EmotionLabel::CLASSES[r].name());
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Trigram statistics over each conversation's segment-emotion sequence.
///
/// Ignore segments are dropped before sequencing; a window is kept when its
/// first and third emotions agree, counting (central, neighbor).
pub fn trigram_probs(corpus: &Corpus) -> TrigramTable {
    let mut table = TrigramTable::default();
    for conv in &corpus.conversations {
        let emotions: Vec<usize> = conv
            .segments
            .iter()
            .filter_map(|s| s.label.class_index())
            .collect();
        for w in emotions.windows(3) {
            if w[0] == w[2] {
                table.counts[w[1]][w[0]] += 1;
            }
        }
    }
    table
}

/// One conversation's dominant emotion and its duration share.
#[derive(Debug, Clone, Serialize)]
pub struct InertiaRow {
    pub conv_id: String,
    pub dominant: EmotionLabel,
    pub fraction: f64,
    pub flagged: bool,
}

/// Duration-weighted emotion proportions per conversation, flagging those
/// where one emotion covers more than 75% of the labeled time.
#[derive(Debug, Clone, Serialize)]
pub struct InertiaReport {
    pub rows: Vec<InertiaRow>,
    /// Share of conversations with a dominant emotion.
    pub flagged_fraction: f64,
}

pub fn inertia_report(corpus: &Corpus) -> InertiaReport {
    let mut rows = Vec::with_capacity(corpus.conversations.len());
    let mut flagged = 0usize;
    for conv in &corpus.conversations {
        let proportions = conv.label_proportions();
        let mut best = 0usize;
        for c in 1..5 {
            if proportions[c] > proportions[best] {
                best = c;
            }
        }
        let fraction = proportions[best];
        let is_flagged = fraction > INERTIA_DOMINANCE_THRESHOLD;
        if is_flagged {
            flagged += 1;
        }
        rows.push(InertiaRow {
            conv_id: conv.id.clone(),
            dominant: EmotionLabel::from_class_index(best),
            fraction,
            flagged: is_flagged,
        });
    }
    let flagged_fraction = if rows.is_empty() {
        0.0
    } else {
        flagged as f64 / rows.len() as f64
    };
    InertiaReport {
        rows,
        flagged_fraction,
    }
}

impl InertiaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("conv,dominant,fraction,flagged\n");
        for row in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{}\n",
                row.conv_id,
                row.dominant.name(),
                row.fraction,
                row.flagged
            ));
        }
        s
    }
}

/// Duration-weighted class marginals over a whole corpus.
pub fn duration_marginals(corpus: &Corpus) -> [f64; 5] {
    let mut durations = [0.0f64; 5];
    for conv in &corpus.conversations {
        for seg in &conv.segments {
            if let Some(c) = seg.label.class_index() {
                durations[c] += seg.duration_s();
            }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Conversation, Segment};
    use EmotionLabel::*;

    fn conv_with_labels(id: &str, labels: &[EmotionLabel]) -> Conversation {
        let segments = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Segment {
                start_s: i as f64,
                end_s: (i + 1) as f64,
                speaker: format!("spk{}", i % 2),
                label,
            })
            .collect();
        Conversation {
            id: id.into(),
            session: "s".into(),
            segments,
            features: None,
        }
    }

    #[test]
    fn trigram_hand_enumeration() {
        // [a,a,a,b,a]: (a,a,a) kept, (a,a,b) dropped, (a,b,a) kept
        // → row a = {a: 1.0}, row b = {a: 1.0}
        let corpus = Corpus::new(vec![conv_with_labels(
            "c",
            &[Angry, Angry, Angry, Happy, Angry],
        )]);
        let table = trigram_probs(&corpus);
        assert_eq!(table.counts[0][0], 1);
        assert_eq!(table.counts[2][0], 1);
        let normalized = table.row_normalized();
        assert_eq!(normalized[0][0], 1.0);
        assert_eq!(normalized[2][0], 1.0);
    }

    #[test]
    fn single_emotion_corpus_is_diagonal() {
        let corpus = Corpus::new(vec![conv_with_labels("c", &[Sad; 6])]);
        let table = trigram_probs(&corpus);
        for r in 0..5 {
            for c in 0..5 {
                let expected = if r == 4 && c == 4 { 4 } else { 0 };
                assert_eq!(table.counts[r][c], expected);
            }
        }
        assert_eq!(table.heterogeneous_fraction()[4], Some(0.0));
    }

    #[test]
    fn ignore_segments_are_dropped_before_sequencing() {
        // a, Ignore, a, a → sequence [a,a,a] → one homogeneous trigram
        let corpus = Corpus::new(vec![conv_with_labels(
            "c",
            &[Angry, Ignore, Angry, Angry],
        )]);
        let table = trigram_probs(&corpus);
        assert_eq!(table.counts[0][0], 1);
    }

    #[test]
    fn trigram_rows_normalize_to_unit_sum() {
        let corpus = Corpus::new(vec![conv_with_labels(
            "c",
            &[Angry, Happy, Angry, Sad, Angry, Happy, Neutral, Happy, Sad],
        )]);
        let table = trigram_probs(&corpus);
        let normalized = table.row_normalized();
        for r in 0..5 {
            let sum: f64 = normalized[r].iter().sum();
            let has_counts = table.counts[r].iter().sum::<u64>() > 0;
            if has_counts {
                assert!((sum - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn inertia_flags_dominant_conversations() {
        // 80% Angry / 20% Happy → flagged
        let mut conv = conv_with_labels("c", &[Angry, Happy]);
        conv.segments[0].end_s = 8.0;
        conv.segments[1].start_s = 8.0;
        conv.segments[1].end_s = 10.0;
        let corpus = Corpus::new(vec![conv]);
        let report = inertia_report(&corpus);
        assert_eq!(report.rows[0].dominant, Angry);
        assert!((report.rows[0].fraction - 0.8).abs() < 1e-12);
        assert!(report.rows[0].flagged);
        assert_eq!(report.flagged_fraction, 1.0);
    }

    #[test]
    fn uniform_split_is_not_flagged() {
        let corpus = Corpus::new(vec![conv_with_labels(
            "c",
            &[Angry, Frustration, Happy, Neutral, Sad],
        )]);
        let report = inertia_report(&corpus);
        assert!((report.rows[0].fraction - 0.2).abs() < 1e-12);
        assert!(!report.rows[0].flagged);
    }
}
