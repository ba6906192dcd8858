//! Leave-one-session-out cross-validation splits.

use super::{Corpus, CorpusError};

/// One cross-validation fold: disjoint train/dev/test session sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub fold_index: usize,
    pub train_sessions: Vec<String>,
    pub dev_session: String,
    pub test_session: String,
}

/// One fold per session as test; the dev session is the next session
/// cyclically and the remaining sessions train. Every session serves as test
/// exactly once. Requires at least three distinct sessions.
pub fn loso_splits(corpus: &Corpus) -> Result<Vec<Fold>, CorpusError> {
    let sessions = corpus.sessions();
    if sessions.len() < 3 {
        return Err(CorpusError::Validation {
            detail: format!(
                "leave-one-session-out needs at least 3 sessions, found {}: {:?}",
                sessions.len(),
                sessions
            ),
        });
    }
    let n = sessions.len();
    Ok((0..n)
        .map(|i| {
            let test_session = sessions[i].clone();
            let dev_session = sessions[(i + 1) % n].clone();
            let train_sessions = sessions
                .iter()
                .filter(|s| **s != test_session && **s != dev_session)
                .cloned()
                .collect();
            Fold {
                fold_index: i,
                train_sessions,
                dev_session,
                test_session,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Conversation;

    fn corpus_with_sessions(names: &[&str]) -> Corpus {
        Corpus::new(
            names
                .iter()
                .enumerate()
                .map(|(i, s)| Conversation {
                    id: format!("c{i}"),
                    session: s.to_string(),
                    segments: vec![],
                    features: None,
                })
                .collect(),
        )
    }

    #[test]
    fn five_sessions_give_five_3_1_1_folds() {
        let corpus = corpus_with_sessions(&["s0", "s1", "s2", "s3", "s4"]);
        let folds = loso_splits(&corpus).unwrap();
        assert_eq!(folds.len(), 5);
        let mut tests = Vec::new();
        for fold in &folds {
            assert_eq!(fold.train_sessions.len(), 3);
            assert!(!fold.train_sessions.contains(&fold.dev_session));
            assert!(!fold.train_sessions.contains(&fold.test_session));
            assert_ne!(fold.dev_session, fold.test_session);
            tests.push(fold.test_session.clone());
        }
        tests.sort();
        assert_eq!(tests, vec!["s0", "s1", "s2", "s3", "s4"]);
    }

    #[test]
    fn three_sessions_is_the_minimum() {
        let corpus = corpus_with_sessions(&["a", "b", "c"]);
        let folds = loso_splits(&corpus).unwrap();
        assert_eq!(folds.len(), 3);
        for fold in &folds {
            assert_eq!(fold.train_sessions.len(), 1);
        }
    }

    #[test]
    fn two_sessions_is_an_error() {
        let corpus = corpus_with_sessions(&["a", "b"]);
        assert!(loso_splits(&corpus).is_err());
    }
}
