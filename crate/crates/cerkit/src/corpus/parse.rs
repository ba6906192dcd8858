//! Segment-file ingestion.
//!
//! The input is JSONL, one object per segment:
//! `{"conv": str, "session": str, "start_s": num, "end_s": num,
//!   "speaker": str, "label": str}`.
//! Segments are grouped by conversation and sorted by start time. Label
//! strings outside the five-class set map to `Ignore` with a counted warning,
//! mirroring the corpus policy of discarding rarely-annotated emotions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Conversation, CorpusError, EmotionLabel, Segment};

#[derive(Debug, Deserialize)]
struct SegmentLine {
    conv: String,
    session: String,
    start_s: f64,
    end_s: f64,
    speaker: String,
    label: String,
}

/// Result of parsing a segments file: conversations without resolved
/// features, plus the count of unknown label strings mapped to `Ignore`.
#[derive(Debug)]
pub struct ParsedSegments {
    pub conversations: Vec<Conversation>,
    pub unknown_labels: usize,
}

/// Parse a segments JSONL file.
pub fn parse_segments(path: &Path) -> Result<ParsedSegments, CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_segments_str(&text)
}

/// Parse segments from in-memory JSONL text.
pub fn parse_segments_str(text: &str) -> Result<ParsedSegments, CorpusError> {
    let mut grouped: BTreeMap<String, Conversation> = BTreeMap::new();
    let mut unknown_labels = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SegmentLine =
            serde_json::from_str(line).map_err(|source| CorpusError::Json {
                line: idx + 1,
                source,
            })?;
        if !(row.start_s >= 0.0 && row.start_s < row.end_s) {
            return Err(CorpusError::Validation {
                detail: format!(
                    "line {}: segment [{}, {}) must satisfy 0 <= start < end",
                    idx + 1,
                    row.start_s,
                    row.end_s
                ),
            });
        }
        let label = match EmotionLabel::parse(&row.label) {
            Some(l) => l,
            None => {
                log::warn!("line {}: unknown label {:?} mapped to Ignore", idx + 1, row.label);
                unknown_labels += 1;
                EmotionLabel::Ignore
            }
        };
        let entry = grouped.entry(row.conv.clone()).or_insert_with(|| Conversation {
            id: row.conv.clone(),
            session: row.session.clone(),
            segments: Vec::new(),
            features: None,
        });
        if entry.session != row.session {
            return Err(CorpusError::Validation {
                detail: format!(
                    "conversation {:?} appears in sessions {:?} and {:?}",
                    row.conv, entry.session, row.session
                ),
            });
        }
        entry.segments.push(Segment {
            start_s: row.start_s,
            end_s: row.end_s,
            speaker: row.speaker,
            label,
        });
    }
    let mut conversations: Vec<Conversation> = grouped.into_values().collect();
    for conv in &mut conversations {
        conv.segments
            .sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).unwrap());
        conv.validate()?;
    }
    Ok(ParsedSegments {
        conversations,
        unknown_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_order_segments_are_sorted() {
        let text = r#"{"conv":"c1","session":"s1","start_s":2.0,"end_s":3.0,"speaker":"a","label":"Happy"}
{"conv":"c1","session":"s1","start_s":0.0,"end_s":1.5,"speaker":"b","label":"Sad"}"#;
        let parsed = parse_segments_str(text).unwrap();
        assert_eq!(parsed.conversations.len(), 1);
        let segs = &parsed.conversations[0].segments;
        assert_eq!(segs[0].start_s, 0.0);
        assert_eq!(segs[1].start_s, 2.0);
        assert_eq!(parsed.unknown_labels, 0);
    }

    #[test]
    fn unknown_label_maps_to_ignore_with_warning_count() {
        let text = r#"{"conv":"c1","session":"s1","start_s":0.0,"end_s":1.0,"speaker":"a","label":"surprise"}"#;
        let parsed = parse_segments_str(text).unwrap();
        assert_eq!(parsed.unknown_labels, 1);
        assert_eq!(
            parsed.conversations[0].segments[0].label,
            EmotionLabel::Ignore
        );
    }

    #[test]
    fn overlapping_segments_error_names_both() {
        let text = r#"{"conv":"c1","session":"s1","start_s":0.0,"end_s":2.0,"speaker":"a","label":"Angry"}
{"conv":"c1","session":"s1","start_s":1.0,"end_s":3.0,"speaker":"b","label":"Sad"}"#;
        let err = parse_segments_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[0, 2)") && msg.contains("[1, 3)"), "{msg}");
    }

    #[test]
    fn start_at_or_after_end_is_rejected() {
        let text = r#"{"conv":"c1","session":"s1","start_s":2.0,"end_s":2.0,"speaker":"a","label":"Angry"}"#;
        assert!(parse_segments_str(text).is_err());
    }

    #[test]
    fn conversations_group_by_id() {
        let text = r#"{"conv":"b","session":"s1","start_s":0.0,"end_s":1.0,"speaker":"x","label":"Angry"}
{"conv":"a","session":"s2","start_s":0.0,"end_s":1.0,"speaker":"y","label":"Happy"}
{"conv":"b","session":"s1","start_s":1.0,"end_s":2.0,"speaker":"x","label":"Sad"}"#;
        let parsed = parse_segments_str(text).unwrap();
        assert_eq!(parsed.conversations.len(), 2);
        assert_eq!(parsed.conversations[0].id, "a");
        assert_eq!(parsed.conversations[1].id, "b");
        assert_eq!(parsed.conversations[1].segments.len(), 2);
    }
}
