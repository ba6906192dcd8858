//! Frame-level classification metrics.
//!
//! The corpus terminology around "weighted average f1-score (micro-f1)" is
//! ambiguous, so both metrics are always computed side by side: `micro_f1`
//! is frame accuracy (micro-averaged f1 over single-label frames), and
//! `weighted_f1` is the support-weighted mean of per-class f1.

use serde::Serialize;

use super::TrainError;
use crate::corpus::EmotionLabel;

/// Reference rows × hypothesis columns, over the five classes in fixed order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn add(&mut self, reference: usize, hypothesis: usize) {
        self.counts[reference][hypothesis] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..5 {
            for c in 0..5 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Rows normalized to sum to 1; all-zero rows stay all-zero.
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

    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference");
        for label in EmotionLabel::CLASSES {
            s.push(',');
            s.push_str(label.name());
        }
        s.push('\n');
        for (r, row) in self.counts.iter().enumerate() {
            s.push_str(EmotionLabel::CLASSES[r].name());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-class and aggregate scores for one evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// f1 per class, in the fixed class order.
    pub per_class_f1: [f64; 5],
    /// Frame accuracy (micro-averaged f1).
    pub micro_f1: f64,
    /// Support-weighted mean of per-class f1 (zero-support classes excluded).
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
    pub frames_evaluated: u64,
    pub ignored_frames: u64,
}

/// Drop frame pairs whose reference is `Ignore`, counting them.
pub fn filter_ignored(
    refs: &[EmotionLabel],
    hyps: &[EmotionLabel],
) -> (Vec<EmotionLabel>, Vec<EmotionLabel>, u64) {
    let mut fr = Vec::with_capacity(refs.len());
    let mut fh = Vec::with_capacity(hyps.len());
    let mut ignored = 0u64;
    for (&r, &h) in refs.iter().zip(hyps) {
        if r == EmotionLabel::Ignore {
            ignored += 1;
        } else {
            fr.push(r);
            fh.push(h);
        }
    }
    (fr, fh, ignored)
}

/// Confusion counts over pre-filtered reference/hypothesis frames.
pub fn confusion(
    refs: &[EmotionLabel],
    hyps: &[EmotionLabel],
) -> Result<ConfusionMatrix, TrainError> {
    if refs.len() != hyps.len() {
        return Err(TrainError::Validation {
            detail: format!("{} references vs {} hypotheses", refs.len(), hyps.len()),
        });
    }
    let mut matrix = ConfusionMatrix::default();
    for (&r, &h) in refs.iter().zip(hyps) {
        let (Some(ri), Some(hi)) = (r.class_index(), h.class_index()) else {
            return Err(TrainError::Validation {
                detail: "Ignore frames must be filtered out before scoring".into(),
            });
        };
        matrix.add(ri, hi);
    }
    Ok(matrix)
}

/// Scores from a confusion matrix (shared by single and pooled evaluations).
pub fn report_from_confusion(matrix: ConfusionMatrix, ignored_frames: u64) -> MetricsReport {
    let mut per_class_f1 = [0.0; 5];
    let mut weighted_sum = 0.0;
    let mut support_total = 0u64;
    let mut correct = 0u64;
    for c in 0..5 {
        let tp = matrix.counts[c][c];
        let support: u64 = matrix.counts[c].iter().sum();
        let predicted: u64 = (0..5).map(|r| matrix.counts[r][c]).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let denom = 2 * tp + fp + fn_;
        per_class_f1[c] = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        correct += tp;
        if support > 0 {
            weighted_sum += per_class_f1[c] * support as f64;
            support_total += support;
        }
    }
    let frames = matrix.total();
    MetricsReport {
        per_class_f1,
        micro_f1: if frames == 0 { 0.0 } else { correct as f64 / frames as f64 },
        weighted_f1: if support_total == 0 {
            0.0
        } else {
            weighted_sum / support_total as f64
        },
        confusion: matrix,
        frames_evaluated: frames,
        ignored_frames,
    }
}

/// Per-class f1, micro f1 (= frame accuracy), and support-weighted f1 over
/// pre-filtered frames.
pub fn f1_scores(
    refs: &[EmotionLabel],
    hyps: &[EmotionLabel],
) -> Result<MetricsReport, TrainError> {
    Ok(report_from_confusion(confusion(refs, hyps)?, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    #[test]
    fn perfect_predictions_score_one() {
        let refs = vec![Angry, Happy, Sad, Neutral, Frustration, Angry];
        let report = f1_scores(&refs, &refs).unwrap();
        assert_eq!(report.micro_f1, 1.0);
        assert_eq!(report.weighted_f1, 1.0);
        for c in 0..5 {
            assert_eq!(report.per_class_f1[c], 1.0);
        }
        let normalized = report.confusion.row_normalized();
        for r in 0..5 {
            for c in 0..5 {
                let expected = if r == c && refs.contains(&EmotionLabel::CLASSES[r]) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(normalized[r][c], expected);
            }
        }
    }

    #[test]
    fn five_frame_hand_computed_case() {
        // refs [a,a,b,b,b], hyps [a,b,b,b,b]:
        // f1(a) = 2/3, f1(b) = 6/7, weighted = 82/105, micro = 0.8
        let refs = vec![Angry, Angry, Happy, Happy, Happy];
        let hyps = vec![Angry, Happy, Happy, Happy, Happy];
        let report = f1_scores(&refs, &hyps).unwrap();
        assert!((report.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.per_class_f1[2] - 6.0 / 7.0).abs() < 1e-12);
        assert!((report.weighted_f1 - 82.0 / 105.0).abs() < 1e-12);
        assert!((report.micro_f1 - 0.8).abs() < 1e-12);
        // counts on the {Angry, Happy} block
        assert_eq!(report.confusion.counts[0][0], 1);
        assert_eq!(report.confusion.counts[0][2], 1);
        assert_eq!(report.confusion.counts[2][2], 3);
        assert_eq!(report.confusion.total(), 5);
    }

    #[test]
    fn absent_class_scores_zero_with_zero_weight() {
        let refs = vec![Angry, Angry];
        let hyps = vec![Angry, Angry];
        let report = f1_scores(&refs, &hyps).unwrap();
        assert_eq!(report.per_class_f1[4], 0.0); // Sad absent
        assert_eq!(report.weighted_f1, 1.0); // only Angry carries weight
    }

    #[test]
    fn all_wrong_single_class() {
        let refs = vec![Angry; 4];
        let hyps = vec![Frustration; 4];
        let report = f1_scores(&refs, &hyps).unwrap();
        assert_eq!(report.micro_f1, 0.0);
        let normalized = report.confusion.row_normalized();
        assert_eq!(normalized[0], [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(f1_scores(&[Angry], &[Angry, Sad]).is_err());
    }

    #[test]
    fn ignore_in_refs_is_a_contract_error() {
        assert!(f1_scores(&[Ignore], &[Angry]).is_err());
    }

    #[test]
    fn filter_ignored_counts() {
        let refs = vec![Angry, Ignore, Sad, Ignore];
        let hyps = vec![Angry, Happy, Sad, Sad];
        let (fr, fh, ignored) = filter_ignored(&refs, &hyps);
        assert_eq!(ignored, 2);
        assert_eq!(fr, vec![Angry, Sad]);
        assert_eq!(fh, vec![Angry, Sad]);
    }

    #[test]
    fn micro_f1_equals_accuracy_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let refs: Vec<EmotionLabel> = (0..n)
                .map(|_| EmotionLabel::from_class_index(rng.random_range(0..5)))
                .collect();
            let hyps: Vec<EmotionLabel> = (0..n)
                .map(|_| EmotionLabel::from_class_index(rng.random_range(0..5)))
                .collect();
            let report = f1_scores(&refs, &hyps).unwrap();
            let accuracy = refs
                .iter()
                .zip(&hyps)
                .filter(|(a, b)| a == b)
                .count() as f64
                / n as f64;
            assert_eq!(report.micro_f1, accuracy);
        }
    }
}
