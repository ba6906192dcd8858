// Scratch calibration driver (not part of the deliverable; deleted after
// the acceptance thresholds are pinned).

use cerkit::corpus::{loso_splits, synth_corpus, SynthConfig};
use cerkit::model::{ConvSpec, ModelConfig};
use cerkit::augment::DcaConfig;
use cerkit::train::{evaluate_conversations, train, Regime, TrainerConfig};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("regimes");
    let seeds: Vec<u64> = vec![0, 1, 2, 3, 4];

    let t0 = std::time::Instant::now();
    match what {
        "regimes" => regimes(&seeds),
        "conv" => conv_front_end(&seeds),
        "interloc" => interlocutor(&seeds),
        other => eprintln!("unknown calibration {other}"),
    }
    eprintln!("total wall time {:.1}s", t0.elapsed().as_secs_f64());
}

fn base_corpus() -> SynthConfig {
    SynthConfig {
        num_sessions: 5,
        conversations_per_session: 6,
        conversation_s: 20.0,
        mean_segment_s: 0.7,
        gap_s: 0.1,
        inertia: 0.95,
        seed: 2024,
        noise_std: 1.2,
        class_sep: 1.0,
        class_ortho_scale: 1.0,
        speaker_offset_scale: 0.25,
        ..SynthConfig::default()
    }
}

fn base_model() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 4,
        hidden_dim: 32,
        ffn_dim: 128,
        max_positions: 256,
        input_dim: 13,
        dropout: 0.1,
        ..ModelConfig::default()
    }
}

fn base_trainer(regime: Regime, seed: u64) -> TrainerConfig {
    TrainerConfig {
        regime,
        epochs: 14,
        dca: DcaConfig {
            batch_conversations: 6,
            slice_len: 128,
            train_len: 256,
            ..DcaConfig::default()
        },
        learning_rate: 1e-3,
        seed,
        eval_chunk_len: 256,
        eval_chunk_overlap: 0,
        dev_eval_every: 7,
        ..TrainerConfig::default()
    }
}

fn run_one(
    corpus_cfg: &SynthConfig,
    model_cfg: &ModelConfig,
    trainer_cfg: &TrainerConfig,
) -> f64 {
    let corpus = synth_corpus(corpus_cfg).unwrap();
    let folds = loso_splits(&corpus).unwrap();
    let fold = &folds[0];
    let outcome = train(&corpus, fold, model_cfg, trainer_cfg).unwrap();
    let test: Vec<&cerkit::corpus::Conversation> = corpus
        .conversations
        .iter()
        .filter(|c| c.session == fold.test_session)
        .collect();
    let report =
        evaluate_conversations(&outcome.model, &test, &trainer_cfg.eval_config()).unwrap();
    report.weighted_f1
}

fn regimes(seeds: &[u64]) {
    let corpus_cfg = base_corpus();
    let model_cfg = base_model();
    for regime in Regime::ALL {
        let t = std::time::Instant::now();
        let scores: Vec<f64> = seeds
            .iter()
            .map(|&s| run_one(&corpus_cfg, &model_cfg, &base_trainer(regime, s)))
            .collect();
        println!(
            "{:<20} median {:.4}  runs {:?}  ({:.1}s)",
            regime.name(),
            median(scores.clone()),
            scores.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t.elapsed().as_secs_f64()
        );
    }
}

fn conv_front_end(seeds: &[u64]) {
    let corpus_cfg = base_corpus();
    for use_conv in [false, true] {
        let model_cfg = ModelConfig {
            use_conv_front_end: use_conv,
            conv_spec: ConvSpec {
                num_blocks: 2,
                channels: 0,
                kernel_size: 5,
            },
            ..base_model()
        };
        let t = std::time::Instant::now();
        let scores: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                run_one(
                    &corpus_cfg,
                    &model_cfg,
                    &base_trainer(Regime::DcaConversations, s),
                )
            })
            .collect();
        println!(
            "conv={:<5} median {:.4}  runs {:?}  ({:.1}s)",
            use_conv,
            median(scores.clone()),
            scores.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t.elapsed().as_secs_f64()
        );
    }
}

fn interlocutor(seeds: &[u64]) {
    let alias = std::env::var("ALIAS_OFFSET")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let rho = std::env::var("ALIAS_ORTHO")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.15);
    let noise = std::env::var("ALIAS_NOISE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.4);
    let inertia = std::env::var("ALIAS_INERTIA")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.5);
    let corpus_cfg = SynthConfig {
        speaker_offset_scale: alias,
        class_ortho_scale: rho,
        noise_std: noise,
        inertia,
        ..base_corpus()
    };
    println!("alias offset {alias} rho {rho} noise {noise} inertia {inertia}");
    for use_interlocutor in [false, true] {
        let model_cfg = ModelConfig {
            use_conv_front_end: true,
            conv_spec: ConvSpec {
                num_blocks: 2,
                channels: 0,
                kernel_size: 5,
            },
            use_interlocutor,
            ..base_model()
        };
        let t = std::time::Instant::now();
        let scores: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                run_one(
                    &corpus_cfg,
                    &model_cfg,
                    &base_trainer(Regime::DcaConversations, s),
                )
            })
            .collect();
        println!(
            "interlocutor={:<5} median {:.4}  runs {:?}  ({:.1}s)",
            use_interlocutor,
            median(scores.clone()),
            scores.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t.elapsed().as_secs_f64()
        );
    }
}
