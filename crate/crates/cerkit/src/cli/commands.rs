//! Implementations behind the CLI subcommands.

use std::fs;
use std::path::Path;
use std::time::Instant;

use super::{
    AnalyzeArgs, CliError, EvalArgs, FeaturizeArgs, GradcheckArgs, RunManifest, SynthArgs,
    TrainArgs,
};
use crate::augment::{
    align_corpus, dca_conversations, dca_isolated, label_diversity_entropy, slice_conversation,
    utterance_pool, DcaConfig, DcaMode,
};
use crate::corpus::{
    corpus_fingerprint, load_corpus, loso_splits, parse_segments, save_corpus, synth_corpus,
    Corpus, CorpusManifest, FeatureMode, SynthConfig,
};
use crate::features::{mfcc, read_features, read_wav, write_features, MfccConfig};
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use crate::train::{
    confusion, evaluate_conversations, filter_ignored, history_csv, inertia_report,
    predict_conversation, report_from_confusion, train as train_fold, trigram_probs,
    ConfusionMatrix, EvalConfig, MetricsReport, Regime, TrainerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(super) struct Ctx {
    pub jobs: usize,
    pub strict_deterministic: bool,
    pub started: Instant,
}

impl Ctx {
    fn write_manifest(
        &self,
        out: &Path,
        command: &str,
        resolved_config: serde_json::Value,
        seed: u64,
        corpus_fingerprint: Option<String>,
        artifacts: Vec<String>,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            resolved_config,
            seed,
            corpus_fingerprint,
            artifacts,
            strict_deterministic: self.strict_deterministic,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(out.join("run_manifest.json"), json)?;
        Ok(())
    }
}

// ── synth ──────────────────────────────────────────────────────────────

pub(super) fn synth(ctx: &Ctx, args: SynthArgs) -> Result<(), CliError> {
    let mut cfg: SynthConfig = super::resolve_config(args.config.as_deref(), &args.set)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let corpus = synth_corpus(&cfg)?;
    fs::create_dir_all(&args.out)?;
    save_corpus(
        &args.out,
        &corpus,
        FeatureMode::SyntheticMfcc,
        cfg.frame_length_ms,
        Some(&cfg),
    )?;
    let fingerprint = corpus_fingerprint(&args.out)?;
    let frames: usize = corpus
        .conversations
        .iter()
        .map(|c| c.features.as_ref().map(|f| f.num_frames).unwrap_or(0))
        .sum();
    println!(
        "synthesized {} conversations in {} sessions ({frames} frames) at {}",
        corpus.conversations.len(),
        corpus.sessions().len(),
        args.out.display()
    );
    ctx.write_manifest(
        &args.out,
        "synth",
        serde_json::to_value(&cfg).expect("config serializes"),
        cfg.seed,
        Some(fingerprint),
        vec!["segments.jsonl".into(), "manifest.json".into(), "features".into()],
    )
}

// ── featurize ──────────────────────────────────────────────────────────

pub(super) fn featurize(ctx: &Ctx, args: FeaturizeArgs) -> Result<(), CliError> {
    let mut sets = args.set.clone();
    if let Some(v) = args.frame_ms {
        sets.push(format!("frame_length_ms={v}"));
    }
    if let Some(v) = args.shift_ms {
        sets.push(format!("frame_shift_ms={v}"));
    }
    let cfg: MfccConfig = super::resolve_config(args.config.as_deref(), &sets)?;
    cfg.validate()?;

    let parsed = parse_segments(&args.segments)?;
    if parsed.unknown_labels > 0 {
        log::warn!("{} segments with unknown labels mapped to Ignore", parsed.unknown_labels);
    }
    let missing: Vec<&str> = parsed
        .conversations
        .iter()
        .filter(|c| !args.wav_dir.join(format!("{}.wav", c.id)).exists())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::missing(format!(
            "missing WAV files for conversations: {}",
            missing.join(", ")
        )));
    }

    fs::create_dir_all(args.out.join("features"))?;
    let jobs = ctx.jobs;
    let work: Vec<(String, std::path::PathBuf, std::path::PathBuf)> = parsed
        .conversations
        .iter()
        .map(|c| {
            (
                c.id.clone(),
                args.wav_dir.join(format!("{}.wav", c.id)),
                args.out.join(format!("features/{}.fmx", c.id)),
            )
        })
        .collect();
    let results: Vec<Result<(String, bool), CliError>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            work.par_iter()
                .map(|item| extract_file(item, &cfg, args.force))
                .collect()
        })
    } else {
        work.iter().map(|item| extract_file(item, &cfg, args.force)).collect()
    };

    let mut conversations = parsed.conversations;
    let mut cached = 0usize;
    for (conv, result) in conversations.iter_mut().zip(results) {
        let (_, was_cached) = result?;
        if was_cached {
            cached += 1;
        }
        let m = read_features(&args.out.join(format!("features/{}.fmx", conv.id)))
            .map_err(crate::corpus::CorpusError::Feature)?;
        conv.attach_features(m)?;
    }
    if cached > 0 {
        log::info!("cached: {cached} feature files reused (pass --force to re-extract)");
    }

    // segments + manifest alongside the features
    let corpus = Corpus::new(conversations);
    let manifest = CorpusManifest {
        format_version: crate::corpus::MANIFEST_VERSION,
        feature_mode: FeatureMode::FromWav,
        frame_length_ms: cfg.frame_length_ms,
        synth_config: None,
        conversations: corpus
            .conversations
            .iter()
            .map(|c| crate::corpus::ManifestEntry {
                id: c.id.clone(),
                session: c.session.clone(),
                features: format!("features/{}.fmx", c.id),
            })
            .collect(),
    };
    fs::write(
        args.out.join("segments.jsonl"),
        fs::read_to_string(&args.segments)?,
    )?;
    fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    let fingerprint = corpus_fingerprint(&args.out)?;
    println!(
        "featurized {} conversations ({} cached) at {}",
        corpus.conversations.len(),
        cached,
        args.out.display()
    );
    ctx.write_manifest(
        &args.out,
        "featurize",
        serde_json::to_value(&cfg).expect("config serializes"),
        0,
        Some(fingerprint),
        vec!["segments.jsonl".into(), "manifest.json".into(), "features".into()],
    )
}

fn extract_file(
    (id, wav_path, fmx_path): &(String, std::path::PathBuf, std::path::PathBuf),
    cfg: &MfccConfig,
    force: bool,
) -> Result<(String, bool), CliError> {
    if fmx_path.exists() && !force {
        return Ok((id.clone(), true));
    }
    let audio = read_wav(wav_path)?;
    let features = mfcc(&audio, cfg)?;
    write_features(fmx_path, &features)?;
    Ok((id.clone(), false))
}

// ── train ──────────────────────────────────────────────────────────────

pub(super) fn train(ctx: &Ctx, args: TrainArgs) -> Result<(), CliError> {
    let stored = load_corpus(&args.corpus)?;
    let fingerprint = corpus_fingerprint(&args.corpus)?;
    let corpus = stored.corpus;
    let input_dim = corpus
        .conversations
        .first()
        .and_then(|c| c.features.as_ref())
        .map(|f| f.num_features)
        .ok_or_else(|| CliError::config("corpus has no conversations with features"))?;

    let mut model_cfg: ModelConfig =
        super::resolve_config(args.model_config.as_deref(), &args.set_model)?;
    let input_dim_pinned = args.model_config.is_some()
        || args.set_model.iter().any(|s| s.starts_with("input_dim"));
    if !input_dim_pinned {
        model_cfg.input_dim = input_dim;
    } else if model_cfg.input_dim != input_dim {
        return Err(CliError::config(format!(
            "model input_dim {} does not match corpus feature dimension {input_dim}",
            model_cfg.input_dim
        )));
    }
    model_cfg.validate()?;

    let mut trainer_cfg: TrainerConfig =
        super::resolve_config(args.trainer_config.as_deref(), &args.set)?;
    if args.trainer_config.is_none()
        && !args.set.iter().any(|s| s.starts_with("frame_length_ms"))
    {
        trainer_cfg.frame_length_ms = stored.manifest.frame_length_ms;
    }
    if let Some(regime) = &args.regime {
        trainer_cfg.regime = Regime::parse(regime).ok_or_else(|| {
            CliError::config(format!(
                "unknown regime {regime:?}; valid values: isolated, conversations, \
                 dca-isolated, dca-conversations"
            ))
        })?;
    }
    if let Some(seed) = args.seed {
        trainer_cfg.seed = seed;
    }
    trainer_cfg.validate(&model_cfg)?;

    let folds = loso_splits(&corpus)?;
    let selected: Vec<usize> = if args.all_folds {
        (0..folds.len()).collect()
    } else {
        let k = args.fold.unwrap_or(0);
        if k >= folds.len() {
            return Err(CliError::config(format!(
                "fold {k} out of range: corpus has {} folds",
                folds.len()
            )));
        }
        vec![k]
    };

    fs::create_dir_all(&args.out)?;
    let mut artifacts = Vec::new();
    let mut pooled = ConfusionMatrix::default();
    let mut pooled_ignored = 0u64;
    let mut fold_summaries = Vec::new();
    for &k in &selected {
        let fold = &folds[k];
        let outcome = train_fold(&corpus, fold, &model_cfg, &trainer_cfg)?;

        let ckpt = format!("fold{k}.ckpt");
        save_checkpoint(&args.out.join(&ckpt), &outcome.model)?;
        let history = format!("fold{k}_history.csv");
        fs::write(args.out.join(&history), history_csv(&outcome.history))?;

        let test: Vec<&crate::corpus::Conversation> = corpus
            .conversations
            .iter()
            .filter(|c| c.session == fold.test_session)
            .collect();
        let report =
            eval_parallel(ctx, &outcome.model, &test, &trainer_cfg.eval_config())?;
        let metrics = format!("fold{k}_metrics.json");
        fs::write(
            args.out.join(&metrics),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        let conf = format!("fold{k}_confusion.csv");
        fs::write(args.out.join(&conf), report.confusion.to_csv())?;
        println!(
            "fold {k}: test {} weighted_f1 {:.4} micro_f1 {:.4}{}",
            fold.test_session,
            report.weighted_f1,
            report.micro_f1,
            outcome
                .best_epoch
                .map(|e| format!(" (best epoch {e})"))
                .unwrap_or_default()
        );
        pooled.merge(&report.confusion);
        pooled_ignored += report.ignored_frames;
        fold_summaries.push(serde_json::json!({
            "fold": k,
            "test_session": fold.test_session,
            "dev_session": fold.dev_session,
            "train_sessions": fold.train_sessions,
            "weighted_f1": report.weighted_f1,
            "micro_f1": report.micro_f1,
            "best_epoch": outcome.best_epoch,
        }));
        artifacts.extend([ckpt, history, metrics, conf]);
    }

    if selected.len() > 1 {
        let pooled_report = report_from_confusion(pooled, pooled_ignored);
        let pooled_json = serde_json::json!({
            "pooled": pooled_report,
            "folds": fold_summaries,
        });
        fs::write(
            args.out.join("pooled_metrics.json"),
            serde_json::to_string_pretty(&pooled_json).expect("report serializes"),
        )?;
        println!(
            "pooled over {} folds: weighted_f1 {:.4} micro_f1 {:.4}",
            selected.len(),
            pooled_report.weighted_f1,
            pooled_report.micro_f1
        );
        artifacts.push("pooled_metrics.json".into());
    }

    ctx.write_manifest(
        &args.out,
        "train",
        serde_json::json!({
            "model": model_cfg,
            "trainer": trainer_cfg,
            "folds": selected,
        }),
        trainer_cfg.seed,
        Some(fingerprint),
        artifacts,
    )
}

// ── eval ───────────────────────────────────────────────────────────────

/// Per-conversation prediction, optionally fanned out over a thread pool.
///
/// The tensor handles inside a model are not thread-safe, so each worker
/// rebuilds a model from the raw parameter data; every conversation's
/// prediction is a pure function, making the pooled result identical to the
/// sequential one.
fn eval_parallel(
    ctx: &Ctx,
    model: &Model<f32>,
    conversations: &[&crate::corpus::Conversation],
    eval: &EvalConfig,
) -> Result<MetricsReport, CliError> {
    if ctx.jobs <= 1 || conversations.len() <= 1 {
        return Ok(evaluate_conversations(model, conversations, eval)?);
    }
    let cfg = model.config.clone();
    let raw: Vec<(String, Vec<usize>, Vec<f32>)> = model
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().to_vec()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<(ConfusionPart, u64), CliError>> = pool.install(|| {
        use rayon::prelude::*;
        conversations
            .par_iter()
            .map(|conv| {
                let map = raw
                    .iter()
                    .map(|(n, shape, data)| {
                        crate::tensor::Tensor::param(shape.clone(), data.clone())
                            .map(|t| (n.clone(), t))
                    })
                    .collect::<Result<std::collections::HashMap<_, _>, _>>()
                    .map_err(crate::model::ModelError::Tensor)
                    .map_err(CliError::from)?;
                let local = Model::from_named_params(&cfg, map).map_err(CliError::from)?;
                let prediction =
                    predict_conversation(&local, conv, eval).map_err(CliError::from)?;
                let (refs, hyps, skipped) =
                    filter_ignored(&prediction.reference.labels, &prediction.hyps);
                let matrix = confusion(&refs, &hyps).map_err(CliError::from)?;
                Ok((ConfusionPart(matrix), skipped))
            })
            .collect()
    });
    let mut pooled = ConfusionMatrix::default();
    let mut ignored = 0u64;
    for r in results {
        let (part, skipped) = r?;
        pooled.merge(&part.0);
        ignored += skipped;
    }
    Ok(report_from_confusion(pooled, ignored))
}

struct ConfusionPart(ConfusionMatrix);

pub(super) fn eval(ctx: &Ctx, args: EvalArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint, None)?;
    let stored = load_corpus(&args.corpus)?;
    let fingerprint = corpus_fingerprint(&args.corpus)?;
    let corpus = stored.corpus;
    let conversations: Vec<&crate::corpus::Conversation> = match &args.session {
        Some(session) => {
            let subset = corpus.by_session(session);
            if subset.is_empty() {
                return Err(CliError::config(format!(
                    "session {session:?} not present; corpus sessions: {:?}",
                    corpus.sessions()
                )));
            }
            subset
        }
        None => corpus.conversations.iter().collect(),
    };
    let eval_cfg = EvalConfig {
        chunk_len: args.chunk_len,
        overlap: args.chunk_overlap,
        frame_length_ms: stored.manifest.frame_length_ms,
    };
    eval_cfg.validate().map_err(CliError::from)?;
    let report = eval_parallel(ctx, &model, &conversations, &eval_cfg)?;

    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    fs::write(args.out.join("confusion.csv"), report.confusion.to_csv())?;
    println!(
        "evaluated {} conversations: weighted_f1 {:.4} micro_f1 {:.4} ({} frames, {} ignored)",
        conversations.len(),
        report.weighted_f1,
        report.micro_f1,
        report.frames_evaluated,
        report.ignored_frames
    );
    if args.per_class {
        let header: Vec<&str> = crate::corpus::EmotionLabel::CLASSES
            .iter()
            .map(|c| c.name())
            .collect();
        println!("{} | Micro-f1", header.join(" | "));
        let row: Vec<String> = report
            .per_class_f1
            .iter()
            .map(|v| format!("{:.1}", v * 100.0))
            .collect();
        println!("{} | {:.1}", row.join(" | "), report.micro_f1 * 100.0);
    }
    ctx.write_manifest(
        &args.out,
        "eval",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "session": args.session,
            "chunk_len": args.chunk_len,
            "chunk_overlap": args.chunk_overlap,
            "model": model.config,
        }),
        0,
        Some(fingerprint),
        vec!["metrics.json".into(), "confusion.csv".into()],
    )
}

// ── analyze ────────────────────────────────────────────────────────────

pub(super) fn analyze(ctx: &Ctx, args: AnalyzeArgs) -> Result<(), CliError> {
    let stored = load_corpus(&args.corpus)?;
    let fingerprint = corpus_fingerprint(&args.corpus)?;
    let corpus = stored.corpus;
    fs::create_dir_all(&args.out)?;

    let inertia = inertia_report(&corpus);
    fs::write(args.out.join("inertia.csv"), inertia.to_csv())?;
    let trigram = trigram_probs(&corpus);
    fs::write(args.out.join("trigram.csv"), trigram.to_csv())?;
    println!(
        "{} conversations; {:.1}% dominated by one emotion (>75% of duration)",
        corpus.conversations.len(),
        inertia.flagged_fraction * 100.0
    );
    let mut artifacts = vec!["inertia.csv".into(), "trigram.csv".into()];

    if let Some(windows) = args.windows {
        if windows == 0 || windows % 2 != 0 {
            return Err(CliError::config(format!(
                "--windows {windows} must be a positive even frame count"
            )));
        }
        let csv = diversity_csv(&corpus, stored.manifest.frame_length_ms, windows, args.samples, args.seed)?;
        fs::write(args.out.join("diversity.csv"), csv)?;
        artifacts.push("diversity.csv".into());
    }

    ctx.write_manifest(
        &args.out,
        "analyze",
        serde_json::json!({
            "windows": args.windows,
            "samples": args.samples,
        }),
        args.seed,
        Some(fingerprint),
        artifacts,
    )
}

/// Mean label-diversity entropy of sampled training windows, per regime.
fn diversity_csv(
    corpus: &Corpus,
    frame_length_ms: u32,
    windows: usize,
    samples: usize,
    seed: u64,
) -> Result<String, CliError> {
    let aligned = align_corpus(corpus, frame_length_ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![format!("regime,windows,samples,mean_entropy_bits")];

    // plain contiguous slices
    let mut total = 0.0f64;
    for i in 0..samples {
        let src = &aligned[i % aligned.len()];
        let seq = slice_conversation(src, windows, &mut rng)?;
        total += label_diversity_entropy(&seq.labels);
    }
    rows.push(format!("plain,{windows},{samples},{:.6}", total / samples as f64));

    // concatenated conversation slices
    if aligned.len() >= 6 {
        let cfg = DcaConfig {
            batch_conversations: 6,
            slice_len: windows / 2,
            train_len: windows,
            mode: DcaMode::Conversations,
            seed,
            ..DcaConfig::default()
        };
        let mut total = 0.0f64;
        let mut count = 0usize;
        let mut order: Vec<usize> = (0..aligned.len()).collect();
        while count < samples {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let picked: Vec<&crate::augment::AlignedConversation<'_>> =
                order[..6].iter().map(|&i| &aligned[i]).collect();
            for seq in dca_conversations(&picked, &cfg, &mut rng)? {
                if count == samples {
                    break;
                }
                total += label_diversity_entropy(&seq.labels);
                count += 1;
            }
        }
        rows.push(format!(
            "dca-conversations,{windows},{samples},{:.6}",
            total / samples as f64
        ));
    } else {
        log::warn!("fewer than 6 conversations: skipping the dca-conversations diversity row");
    }

    // concatenated isolated utterances
    let pool = utterance_pool(&aligned);
    if !pool.is_empty() {
        let cfg = DcaConfig {
            batch_conversations: 6,
            slice_len: windows / 2,
            train_len: windows,
            mode: DcaMode::Isolated,
            seed,
            ..DcaConfig::default()
        };
        let mut total = 0.0f64;
        for _ in 0..samples {
            let seq = dca_isolated(&aligned, &pool, &cfg, &mut rng)?;
            total += label_diversity_entropy(&seq.labels);
        }
        rows.push(format!(
            "dca-isolated,{windows},{samples},{:.6}",
            total / samples as f64
        ));
    }

    Ok(rows.join("\n") + "\n")
}

// ── gradcheck ──────────────────────────────────────────────────────────

pub(super) fn gradcheck_cmd(_ctx: &Ctx, args: GradcheckArgs) -> Result<(), CliError> {
    let results = super::gradcheck::run_suite(args.perturb.as_deref());
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&results).expect("results serialize")
        );
    } else {
        println!("{:<28} {:>12} {:>10} {:>6}", "check", "max_rel_err", "tolerance", "status");
        for r in &results {
            println!(
                "{:<28} {:>12.3e} {:>10.0e} {:>6}",
                r.name,
                r.max_rel_error,
                r.tolerance,
                if r.passed { "ok" } else { "FAIL" }
            );
        }
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        if !args.json {
            println!("all {} gradient checks passed", results.len());
        }
        Ok(())
    } else {
        Err(CliError {
            code: super::EXIT_DIVERGED,
            message: format!("gradient checks failed: {}", failed.join(", ")),
        })
    }
}
