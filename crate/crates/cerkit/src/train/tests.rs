use super::*;
use crate::corpus::{loso_splits, synth_corpus, EmotionLabel, SynthConfig};

fn tiny_corpus(seed: u64) -> Corpus {
    synth_corpus(&SynthConfig {
        num_sessions: 3,
        conversations_per_session: 4,
        conversation_s: 6.0,
        mean_segment_s: 1.0,
        inertia: 0.6,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        max_positions: 64,
        input_dim: 13,
        dropout: 0.1,
        ..ModelConfig::default()
    }
}

fn tiny_trainer_cfg(regime: Regime, epochs: usize, seed: u64) -> TrainerConfig {
    TrainerConfig {
        regime,
        epochs,
        dca: DcaConfig {
            batch_conversations: 4,
            slice_len: 32,
            train_len: 64,
            ..DcaConfig::default()
        },
        learning_rate: 3e-3,
        seed,
        eval_chunk_len: 64,
        eval_chunk_overlap: 0,
        dev_eval_every: 3,
        ..TrainerConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initialized_model_and_empty_history() {
    let corpus = tiny_corpus(1);
    let folds = loso_splits(&corpus).unwrap();
    let outcome = train(
        &corpus,
        &folds[0],
        &tiny_model_cfg(),
        &tiny_trainer_cfg(Regime::Conversations, 0, 7),
    )
    .unwrap();
    assert!(outcome.history.is_empty());
    assert!(outcome.best_epoch.is_none());
    let fresh = Model::<f32>::init(&tiny_model_cfg(), 7).unwrap();
    for (a, b) in outcome.model.params().iter().zip(fresh.params().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let corpus = tiny_corpus(2);
    let folds = loso_splits(&corpus).unwrap();
    let cfg = tiny_model_cfg();
    let tcfg = tiny_trainer_cfg(Regime::DcaConversations, 2, 11);
    let run = || train(&corpus, &folds[0], &cfg, &tcfg).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(x.numel(), y.numel());
        for (u, v) in x.data().iter().zip(y.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn training_beats_the_majority_baseline() {
    let corpus = tiny_corpus(3);
    let folds = loso_splits(&corpus).unwrap();
    let fold = &folds[0];
    let cfg = tiny_model_cfg();
    let outcome = train(
        &corpus,
        fold,
        &cfg,
        &tiny_trainer_cfg(Regime::Conversations, 12, 5),
    )
    .unwrap();
    let dev: Vec<&Conversation> = corpus
        .conversations
        .iter()
        .filter(|c| c.session == fold.dev_session)
        .collect();

    // majority baseline from the train-session duration marginals
    let train_corpus = Corpus::new(
        corpus
            .conversations
            .iter()
            .filter(|c| fold.train_sessions.contains(&c.session))
            .cloned()
            .collect(),
    );
    let marginals = duration_marginals(&train_corpus);
    let majority = (0..5)
        .max_by(|&a, &b| marginals[a].partial_cmp(&marginals[b]).unwrap())
        .unwrap();
    let eval = EvalConfig {
        chunk_len: 64,
        overlap: 0,
        frame_length_ms: 25,
    };
    let mut pooled = ConfusionMatrix::default();
    for conv in &dev {
        let prediction = predict_conversation(&outcome.model, conv, &eval).unwrap();
        let constant = vec![EmotionLabel::from_class_index(majority); prediction.hyps.len()];
        let (refs, hyps, _) = filter_ignored(&prediction.reference.labels, &constant);
        pooled.merge(&confusion(&refs, &hyps).unwrap());
    }
    let baseline = report_from_confusion(pooled, 0);
    let trained = evaluate_conversations(&outcome.model, &dev, &eval).unwrap();
    assert!(
        trained.weighted_f1 > baseline.weighted_f1,
        "trained {:.3} vs majority baseline {:.3}",
        trained.weighted_f1,
        baseline.weighted_f1
    );
}

#[test]
fn all_regimes_run_one_epoch() {
    let corpus = tiny_corpus(4);
    let folds = loso_splits(&corpus).unwrap();
    for regime in Regime::ALL {
        let outcome = train(
            &corpus,
            &folds[0],
            &tiny_model_cfg(),
            &tiny_trainer_cfg(regime, 1, 3),
        )
        .unwrap();
        assert_eq!(outcome.history.len(), 1, "{}", regime.name());
        assert!(outcome.history[0].train_loss.is_finite());
        assert!(outcome.history[0].dev_weighted_f1.is_some());
    }
}

#[test]
fn absurd_learning_rate_reports_divergence() {
    let corpus = tiny_corpus(5);
    let folds = loso_splits(&corpus).unwrap();
    let mut tcfg = tiny_trainer_cfg(Regime::Conversations, 4, 3);
    tcfg.learning_rate = 1e30;
    let err = train(&corpus, &folds[0], &tiny_model_cfg(), &tcfg).unwrap_err();
    assert!(
        matches!(err, TrainError::Diverged { .. }),
        "expected divergence, got {err}"
    );
}

#[test]
fn constant_logit_model_predicts_class_zero() {
    use std::collections::HashMap;
    let cfg = tiny_model_cfg();
    let model = Model::<f32>::init(&cfg, 1).unwrap();
    let mut map: HashMap<String, crate::tensor::Tensor<f32>> = model
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    map.insert(
        "head.weight".into(),
        crate::tensor::Tensor::param(vec![cfg.hidden_dim, 5], vec![0.0; cfg.hidden_dim * 5])
            .unwrap(),
    );
    map.insert(
        "head.bias".into(),
        crate::tensor::Tensor::param(vec![5], vec![0.0; 5]).unwrap(),
    );
    let model = Model::from_named_params(&cfg, map).unwrap();
    let corpus = tiny_corpus(6);
    let eval = EvalConfig {
        chunk_len: 64,
        overlap: 16,
        frame_length_ms: 25,
    };
    let prediction = predict_conversation(&model, &corpus.conversations[0], &eval).unwrap();
    assert!(prediction.hyps.iter().all(|&l| l == EmotionLabel::Angry));
}

#[test]
fn zero_overlap_prediction_equals_independent_chunks() {
    let cfg = tiny_model_cfg();
    let model = Model::<f32>::init(&cfg, 2).unwrap();
    let corpus = tiny_corpus(7);
    let conv = &corpus.conversations[0];
    let eval = EvalConfig {
        chunk_len: 64,
        overlap: 0,
        frame_length_ms: 25,
    };
    let whole = predict_conversation(&model, conv, &eval).unwrap();

    // manual per-chunk prediction over the same spans
    let features = conv.features().unwrap();
    let total = features.num_frames;
    let mut manual = Vec::with_capacity(total);
    for (start, end) in chunk_spans(total, 64, 0) {
        let len = end - start;
        let x = crate::tensor::Tensor::from_vec(
            vec![len, features.num_features],
            features.values[start * features.num_features..end * features.num_features].to_vec(),
        )
        .unwrap();
        let tape = crate::tensor::Tape::disabled();
        let positions: Vec<u32> = (0..len as u32).collect();
        let logits = model
            .forward(
                &tape,
                &x,
                &positions,
                &vec![0; len],
                &vec![false; len],
                &mut RunMode::Eval,
            )
            .unwrap();
        manual.extend(
            crate::model::argmax_rows(&logits)
                .into_iter()
                .map(EmotionLabel::from_class_index),
        );
    }
    assert_eq!(whole.hyps, manual);
}

#[test]
fn conversation_longer_than_max_positions_without_chunking_errors() {
    let cfg = tiny_model_cfg(); // max_positions 64
    let model = Model::<f32>::init(&cfg, 3).unwrap();
    let corpus = tiny_corpus(8); // conversations are ~600 frames
    let eval = EvalConfig {
        chunk_len: 0,
        overlap: 0,
        frame_length_ms: 25,
    };
    let err = predict_conversation(&model, &corpus.conversations[0], &eval).unwrap_err();
    assert!(matches!(
        err,
        TrainError::Model(ModelError::Capacity { .. })
    ));
}

#[test]
fn overlap_must_be_smaller_than_chunk() {
    let eval = EvalConfig {
        chunk_len: 64,
        overlap: 64,
        frame_length_ms: 25,
    };
    assert!(eval.validate().is_err());
}

#[test]
fn history_csv_layout() {
    let history = vec![
        EpochStats {
            epoch: 0,
            train_loss: 1.5,
            dev_micro_f1: None,
            dev_weighted_f1: None,
        },
        EpochStats {
            epoch: 1,
            train_loss: 1.25,
            dev_micro_f1: Some(0.4),
            dev_weighted_f1: Some(0.35),
        },
    ];
    let csv = history_csv(&history);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss,dev_micro_f1,dev_weighted_f1");
    assert_eq!(lines[1], "0,1.500000,,");
    assert_eq!(lines[2], "1,1.250000,0.400000,0.350000");
}
