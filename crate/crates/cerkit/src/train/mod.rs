//! Training loop over the four data regimes, full-conversation prediction,
//! metrics, and corpus analyses.
//!
//! One epoch visits every training conversation once: the conversation
//! regimes slice them into fixed-length windows (plain or concatenated),
//! and the isolated regimes draw a matched number of sequences from the
//! utterance pool, so all four regimes get the same optimizer-step budget
//! per epoch. The final checkpoint is the epoch with the best dev
//! weighted f1.

mod analysis;
mod metrics;
mod optim;
mod predict;

pub use analysis::{
    duration_marginals, inertia_report, trigram_probs, InertiaReport, InertiaRow, TrigramTable,
    INERTIA_DOMINANCE_THRESHOLD,
};
pub use metrics::{
    confusion, f1_scores, filter_ignored, report_from_confusion, ConfusionMatrix, MetricsReport,
};
pub use optim::Adam;
pub use predict::{chunk_spans, predict_conversation, ConversationPrediction, EvalConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{
    align_corpus, dca_conversations, dca_isolated, single_utterance_sequence, slice_conversation,
    utterance_pool, AlignedConversation, AugmentError, DcaConfig, TrainSequence, Utterance,
};
use crate::corpus::{Conversation, Corpus, CorpusError, Fold};
use crate::model::{Model, ModelConfig, ModelError, RunMode};
use crate::tensor::{ops, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("trainer validation error: {detail}")]
    Validation { detail: String },
}

/// The four training-data regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Single utterances padded to the training length (no context).
    Isolated,
    /// Plain contiguous conversation slices (conversational context).
    Conversations,
    /// Concatenated random utterances (random context).
    DcaIsolated,
    /// Concatenated slices of two conversations (conversational + random).
    DcaConversations,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Isolated,
        Regime::Conversations,
        Regime::DcaIsolated,
        Regime::DcaConversations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Isolated => "isolated",
            Regime::Conversations => "conversations",
            Regime::DcaIsolated => "dca-isolated",
            Regime::DcaConversations => "dca-conversations",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "isolated" => Some(Regime::Isolated),
            "conversations" => Some(Regime::Conversations),
            "dca-isolated" => Some(Regime::DcaIsolated),
            "dca-conversations" => Some(Regime::DcaConversations),
            _ => None,
        }
    }
}

/// Training-run settings. The seed fully determines the run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub regime: Regime,
    pub epochs: usize,
    /// Batch geometry (shared by all regimes; the concatenation fields only
    /// apply to the DCA regimes).
    pub dca: DcaConfig,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluation window; 0 evaluates whole conversations in one pass.
    pub eval_chunk_len: usize,
    pub eval_chunk_overlap: usize,
    /// Evaluate the dev session every this many epochs (the last epoch is
    /// always evaluated).
    pub dev_eval_every: usize,
    /// Analysis window length for label alignment.
    pub frame_length_ms: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            regime: Regime::DcaConversations,
            epochs: 30,
            dca: DcaConfig::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            eval_chunk_len: 2048,
            eval_chunk_overlap: 0,
            dev_eval_every: 1,
            frame_length_ms: 25,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, model_cfg: &ModelConfig) -> Result<(), TrainError> {
        self.dca.validate()?;
        if model_cfg.max_positions < self.dca.train_len {
            return Err(TrainError::Validation {
                detail: format!(
                    "max_positions {} smaller than train_len {}",
                    model_cfg.max_positions, self.dca.train_len
                ),
            });
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Validation {
                detail: "learning_rate must be positive".into(),
            });
        }
        if self.dev_eval_every == 0 {
            return Err(TrainError::Validation {
                detail: "dev_eval_every must be at least 1".into(),
            });
        }
        self.eval_config().validate()
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            chunk_len: self.eval_chunk_len,
            overlap: self.eval_chunk_overlap,
            frame_length_ms: self.frame_length_ms,
        }
    }
}

/// Loss and dev metrics for one epoch.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_micro_f1: Option<f64>,
    pub dev_weighted_f1: Option<f64>,
}

/// History rows as CSV (`epoch,loss,dev_micro_f1,dev_weighted_f1`).
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,dev_micro_f1,dev_weighted_f1\n");
    for row in history {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{:.6},{},{}\n",
            row.epoch,
            row.train_loss,
            fmt(row.dev_micro_f1),
            fmt(row.dev_weighted_f1)
        ));
    }
    s
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Model at the best dev epoch (or the initialized model when epochs=0).
    pub model: Model<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_dev_weighted_f1: Option<f64>,
}

/// Pool predictions over a set of conversations into one report.
pub fn evaluate_conversations(
    model: &Model<f32>,
    conversations: &[&Conversation],
    eval: &EvalConfig,
) -> Result<MetricsReport, TrainError> {
    let mut pooled = ConfusionMatrix::default();
    let mut ignored = 0u64;
    for conv in conversations {
        let prediction = predict_conversation(model, conv, eval)?;
        let (refs, hyps, skipped) = filter_ignored(&prediction.reference.labels, &prediction.hyps);
        pooled.merge(&confusion(&refs, &hyps)?);
        ignored += skipped;
    }
    Ok(report_from_confusion(pooled, ignored))
}

struct BatchPlan<'c, 'a> {
    regime: Regime,
    sources: &'c [AlignedConversation<'a>],
    pool: Vec<Utterance>,
    steps_per_epoch: usize,
    batch_size: usize,
}

impl<'c, 'a> BatchPlan<'c, 'a> {
    fn new(
        regime: Regime,
        sources: &'c [AlignedConversation<'a>],
        dca: &DcaConfig,
    ) -> Result<Self, TrainError> {
        let batch_size = dca.batch_conversations;
        let pool = match regime {
            Regime::Isolated | Regime::DcaIsolated => {
                let pool = utterance_pool(sources);
                if pool.is_empty() {
                    return Err(TrainError::Validation {
                        detail: "no labeled utterances in the training sessions".into(),
                    });
                }
                pool
            }
            _ => Vec::new(),
        };
        if regime == Regime::DcaConversations && sources.len() < batch_size {
            return Err(TrainError::Validation {
                detail: format!(
                    "{} training conversations cannot fill a batch of {batch_size}",
                    sources.len()
                ),
            });
        }
        let steps_per_epoch = sources.len().div_ceil(batch_size).max(1);
        Ok(BatchPlan {
            regime,
            sources,
            pool,
            steps_per_epoch,
            batch_size,
        })
    }

    /// Build all batches for one epoch; deterministic given the rng state.
    fn epoch_batches(
        &self,
        dca: &DcaConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<TrainSequence>>, TrainError> {
        let mut order: Vec<usize> = (0..self.sources.len()).collect();
        order.shuffle(rng);
        let mut batches = Vec::with_capacity(self.steps_per_epoch);
        match self.regime {
            Regime::Conversations => {
                for group in order.chunks(self.batch_size) {
                    let batch = group
                        .iter()
                        .map(|&i| slice_conversation(&self.sources[i], dca.train_len, rng))
                        .collect::<Result<_, _>>()?;
                    batches.push(batch);
                }
            }
            Regime::DcaConversations => {
                for group in order.chunks(self.batch_size) {
                    if group.len() < self.batch_size {
                        continue; // the pairing op needs a full batch
                    }
                    let refs: Vec<&AlignedConversation<'_>> =
                        group.iter().map(|&i| &self.sources[i]).collect();
                    batches.push(dca_conversations(&refs, dca, rng)?);
                }
                if batches.is_empty() {
                    return Err(TrainError::Validation {
                        detail: "not enough conversations for one concatenation batch".into(),
                    });
                }
            }
            Regime::Isolated => {
                let mut pool_order: Vec<usize> = (0..self.pool.len()).collect();
                pool_order.shuffle(rng);
                let mut next = 0usize;
                for _ in 0..self.steps_per_epoch {
                    let mut batch = Vec::with_capacity(self.batch_size);
                    for _ in 0..self.batch_size {
                        if next == pool_order.len() {
                            pool_order.shuffle(rng);
                            next = 0;
                        }
                        let utt = &self.pool[pool_order[next]];
                        next += 1;
                        batch.push(single_utterance_sequence(self.sources, utt, dca.train_len)?);
                    }
                    batches.push(batch);
                }
            }
            Regime::DcaIsolated => {
                for _ in 0..self.steps_per_epoch {
                    let batch = (0..self.batch_size)
                        .map(|_| dca_isolated(self.sources, &self.pool, dca, rng))
                        .collect::<Result<_, _>>()?;
                    batches.push(batch);
                }
            }
        }
        Ok(batches)
    }
}

/// Train a model on one cross-validation fold.
pub fn train(
    corpus: &Corpus,
    fold: &Fold,
    model_cfg: &ModelConfig,
    trainer_cfg: &TrainerConfig,
) -> Result<TrainOutcome, TrainError> {
    trainer_cfg.validate(model_cfg)?;
    let train_corpus = Corpus::new(
        corpus
            .conversations
            .iter()
            .filter(|c| fold.train_sessions.contains(&c.session))
            .cloned()
            .collect(),
    );
    if train_corpus.conversations.is_empty() {
        return Err(TrainError::Validation {
            detail: format!("no conversations in train sessions {:?}", fold.train_sessions),
        });
    }
    let dev: Vec<&Conversation> = corpus
        .conversations
        .iter()
        .filter(|c| c.session == fold.dev_session)
        .collect();

    let sources = align_corpus(&train_corpus, trainer_cfg.frame_length_ms)?;
    let plan = BatchPlan::new(trainer_cfg.regime, &sources, &trainer_cfg.dca)?;

    let mut params = Model::<f32>::init(model_cfg, trainer_cfg.seed)?.params();
    let mut adam = Adam::new(
        trainer_cfg.learning_rate,
        trainer_cfg.beta1,
        trainer_cfg.beta2,
        trainer_cfg.adam_epsilon,
        trainer_cfg.weight_decay,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(trainer_cfg.seed);
    dropout_rng.set_stream(1);

    let mut history = Vec::with_capacity(trainer_cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>)> = None;
    for epoch in 0..trainer_cfg.epochs {
        let mut batch_rng = ChaCha8Rng::seed_from_u64(trainer_cfg.seed);
        batch_rng.set_stream(2 + epoch as u64);
        let batches = plan.epoch_batches(&trainer_cfg.dca, &mut batch_rng)?;

        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let model = Model::from_ordered_params(model_cfg, params.clone())?;
            let scale = 1.0 / batch.len() as f64;
            for seq in batch {
                let tape = Tape::new();
                let x =
                    Tensor::from_vec(vec![seq.len(), seq.feature_dim], seq.features.clone())
                        .map_err(ModelError::Tensor)?;
                let logits = model.forward(
                    &tape,
                    &x,
                    &seq.positions,
                    &seq.speaker_indices,
                    &seq.is_pad,
                    &mut RunMode::Train {
                        rng: &mut dropout_rng,
                    },
                )?;
                let labels = seq.loss_labels();
                let loss = match ops::cross_entropy_masked(&tape, &logits, &labels) {
                    Err(TensorError::EmptyLoss) => continue, // all-gap slice
                    other => other?,
                };
                let value = loss.item() as f64;
                if !value.is_finite() {
                    return Err(TrainError::Diverged { epoch, step });
                }
                loss_sum += value;
                loss_count += 1;
                let scaled = ops::scale(&tape, &loss, scale)?;
                tape.backward(&scaled)?;
            }
            adam.step(&mut params);
        }

        let train_loss = if loss_count == 0 {
            f64::NAN
        } else {
            loss_sum / loss_count as f64
        };
        let evaluate_now =
            (epoch + 1) % trainer_cfg.dev_eval_every == 0 || epoch + 1 == trainer_cfg.epochs;
        let (dev_micro, dev_weighted) = if evaluate_now && !dev.is_empty() {
            let model = Model::from_ordered_params(model_cfg, params.clone())?;
            let report = evaluate_conversations(&model, &dev, &trainer_cfg.eval_config())?;
            if best
                .as_ref()
                .map(|(_, f1, _)| report.weighted_f1 > *f1)
                .unwrap_or(true)
            {
                best = Some((epoch, report.weighted_f1, params.clone()));
            }
            (Some(report.micro_f1), Some(report.weighted_f1))
        } else {
            (None, None)
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            dev_micro_f1: dev_micro,
            dev_weighted_f1: dev_weighted,
        });
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} dev_wf1 {}",
            dev_weighted
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into())
        );
    }

    let (best_epoch, best_dev, final_params) = match best {
        Some((e, f1, p)) => (Some(e), Some(f1), p),
        None => (None, None, params),
    };
    Ok(TrainOutcome {
        model: Model::from_ordered_params(model_cfg, final_params)?,
        history,
        best_epoch,
        best_dev_weighted_f1: best_dev,
    })
}

#[cfg(test)]
mod tests;
