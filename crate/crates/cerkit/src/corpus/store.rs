//! On-disk corpus layout.
//!
//! A corpus directory holds `segments.jsonl`, one FMX file per conversation
//! under `features/`, and a `manifest.json` naming the files and recording
//! how the features were produced (including the full synthesis config when
//! applicable).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_segments, Corpus, CorpusError, FeatureMode, SynthConfig};
use crate::features::{read_features, write_features};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub session: String,
    pub features: String,
}

/// `manifest.json`: the index of a stored corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub feature_mode: FeatureMode,
    pub frame_length_ms: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_config: Option<SynthConfig>,
    pub conversations: Vec<ManifestEntry>,
}

/// A corpus loaded from disk together with its manifest.
#[derive(Debug)]
pub struct StoredCorpus {
    pub corpus: Corpus,
    pub manifest: CorpusManifest,
}

fn segment_lines(corpus: &Corpus) -> String {
    let mut out = String::new();
    for conv in &corpus.conversations {
        for seg in &conv.segments {
            let line = serde_json::json!({
                "conv": conv.id,
                "session": conv.session,
                "start_s": seg.start_s,
                "end_s": seg.end_s,
                "speaker": seg.speaker,
                "label": seg.label.name(),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

/// Write a corpus directory: segments JSONL, FMX files, and manifest.
pub fn save_corpus(
    dir: &Path,
    corpus: &Corpus,
    feature_mode: FeatureMode,
    frame_length_ms: u32,
    synth_config: Option<&SynthConfig>,
) -> Result<CorpusManifest, CorpusError> {
    fs::create_dir_all(dir.join("features"))?;
    fs::write(dir.join("segments.jsonl"), segment_lines(corpus))?;
    let mut entries = Vec::new();
    for conv in &corpus.conversations {
        let rel = format!("features/{}.fmx", conv.id);
        write_features(&dir.join(&rel), conv.features()?)?;
        entries.push(ManifestEntry {
            id: conv.id.clone(),
            session: conv.session.clone(),
            features: rel,
        });
    }
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        feature_mode,
        frame_length_ms,
        synth_config: synth_config.cloned(),
        conversations: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load a corpus directory written by [`save_corpus`] (or assembled by hand
/// in the same layout).
pub fn load_corpus(dir: &Path) -> Result<StoredCorpus, CorpusError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: CorpusManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path).map_err(|e| CorpusError::Manifest {
            detail: format!("cannot read {}: {e}", manifest_path.display()),
        })?,
    )
    .map_err(|e| CorpusError::Manifest {
        detail: format!("cannot parse {}: {e}", manifest_path.display()),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(CorpusError::Manifest {
            detail: format!(
                "manifest format_version {} unsupported (expected {MANIFEST_VERSION})",
                manifest.format_version
            ),
        });
    }
    let parsed = parse_segments(&dir.join("segments.jsonl"))?;
    let mut corpus = Corpus::new(parsed.conversations);
    for entry in &manifest.conversations {
        let conv = corpus
            .conversations
            .iter_mut()
            .find(|c| c.id == entry.id)
            .ok_or_else(|| CorpusError::Manifest {
                detail: format!("manifest names conversation {:?} absent from segments", entry.id),
            })?;
        let m = read_features(&dir.join(&entry.features))?;
        conv.attach_features(m)?;
    }
    for conv in &corpus.conversations {
        if conv.features.is_none() {
            return Err(CorpusError::Manifest {
                detail: format!("conversation {:?} has segments but no manifest entry", conv.id),
            });
        }
    }
    Ok(StoredCorpus { corpus, manifest })
}

/// Content hash of a stored corpus: SHA-256 over the segments file and every
/// feature file, in manifest order.
pub fn corpus_fingerprint(dir: &Path) -> Result<String, CorpusError> {
    let manifest: CorpusManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?).map_err(|e| {
            CorpusError::Manifest {
                detail: format!("cannot parse manifest: {e}"),
            }
        })?;
    let mut hasher = Sha256::new();
    hasher.update(fs::read(dir.join("segments.jsonl"))?);
    for entry in &manifest.conversations {
        let path: PathBuf = dir.join(&entry.features);
        hasher.update(fs::read(&path)?);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthConfig};

    fn tiny_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            num_sessions: 2,
            conversations_per_session: 2,
            conversation_s: 5.0,
            mean_segment_s: 1.0,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(5);
        let corpus = synth_corpus(&cfg).unwrap();
        save_corpus(
            dir.path(),
            &corpus,
            FeatureMode::SyntheticMfcc,
            cfg.frame_length_ms,
            Some(&cfg),
        )
        .unwrap();
        let stored = load_corpus(dir.path()).unwrap();
        assert_eq!(stored.corpus.conversations.len(), 4);
        assert_eq!(stored.manifest.synth_config.as_ref(), Some(&cfg));
        for (a, b) in corpus.conversations.iter().zip(&stored.corpus.conversations) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.segments.len(), b.segments.len());
            assert_eq!(
                a.features().unwrap().values,
                b.features().unwrap().values
            );
        }
    }

    #[test]
    fn fingerprint_is_stable_and_content_sensitive() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let dir_c = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(5);
        let corpus = synth_corpus(&cfg).unwrap();
        let other = synth_corpus(&tiny_cfg(6)).unwrap();
        for (d, c) in [(&dir_a, &corpus), (&dir_b, &corpus), (&dir_c, &other)] {
            save_corpus(d.path(), c, FeatureMode::SyntheticMfcc, 25, None).unwrap();
        }
        let fa = corpus_fingerprint(dir_a.path()).unwrap();
        let fb = corpus_fingerprint(dir_b.path()).unwrap();
        let fc = corpus_fingerprint(dir_c.path()).unwrap();
        assert_eq!(fa, fb);
        assert_ne!(fa, fc);
        assert_eq!(fa.len(), 64);
    }
}
