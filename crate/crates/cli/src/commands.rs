//! Subcommand implementations behind the `deepcreativity` binary.
//!
//! `synth` writes a synthetic corpus plus manifests, `ingest` builds the
//! dataset and vocabulary, `train` fits one model role, `score` emits the
//! creativity report, and `plot` renders the trajectory chart. Every
//! command takes `--config` and `--seed`; all randomness flows from the
//! one seed, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use creativity_core::corpus::{
    make_synthetic_context, make_synthetic_eras, oov_substitute, with_eos, ContextDataset,
    Split, Vocabulary,
};
use creativity_core::error::CoreError;
use creativity_core::measures::batch_report;
use creativity_core::models::{
    CnnConfig, HeadKind, LanguageModel, LmConfig, ModelRole, NoveltyClassifier,
    ValueDiscriminator,
};
use creativity_core::rng::Rng;
use creativity_core::training::{train_classifier, train_lm, train_seqgan, Optimizer};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::manifest::{self, ManifestEntry};
use crate::{exit, plot, report};

#[derive(Debug, Parser)]
#[command(
    name = "deepcreativity",
    about = "Train context models and score artifacts for value, novelty and surprise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainRole {
    /// Adversarial generator plus value discriminator.
    ValueGan,
    /// Style classifier behind the novelty measure.
    NoveltyClassifier,
    /// Language model behind the surprise measure.
    SurpriseLm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic context corpus and drifted era targets.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tokenize the corpus, build the vocabulary, and assign splits.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model role on the ingested dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        role: TrainRole,
    },
    /// Score a manifest of target artifacts against the trained models.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Line-delimited JSON manifest of artifacts to score.
        #[arg(long)]
        targets: PathBuf,
    },
    /// Render the trajectory chart from an existing report.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated era tags, left to right on the x axis.
        #[arg(long)]
        order: String,
    },
}

/// Entry point: parse, dispatch, and map failures to the documented exit
/// codes (0 ok, 2 input, 3 numerical, 4 incompatible artifacts).
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, seed } => load_config(&config, seed).and_then(|c| cmd_synth(&c)),
        Command::Ingest { config, seed } => load_config(&config, seed).and_then(|c| cmd_ingest(&c)),
        Command::Train { config, seed, role } => {
            load_config(&config, seed).and_then(|c| cmd_train(&c, role))
        }
        Command::Score {
            config,
            seed,
            targets,
        } => load_config(&config, seed).and_then(|c| cmd_score(&c, &targets)),
        Command::Plot {
            config,
            seed,
            order,
        } => load_config(&config, seed).and_then(|c| cmd_plot(&c, &order)),
    };
    match result {
        Ok(()) => exit::OK,
        Err(err) => {
            eprintln!("error: {err:#}");
            code_for(&err)
        }
    }
}

fn code_for(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::NonFinite { .. })
        | Some(CoreError::LossNotScalar { .. })
        | Some(CoreError::TapeConsumed) => exit::NUMERICAL,
        Some(CoreError::VocabularyMismatch { .. }) => exit::INCOMPATIBLE,
        _ => exit::INPUT,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    RunConfig::load(path, seed)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.synthetic.validate().map_err(anyhow::Error::new)?;
    let context = make_synthetic_context(cfg.seed, &cfg.synthetic)?;
    let eras = make_synthetic_eras(cfg.seed, &cfg.drift_levels, &cfg.synthetic)?;

    std::fs::create_dir_all(&cfg.paths.corpus_dir)?;
    let mut manifest_entries = Vec::new();
    for a in &context {
        let path = format!("{}.txt", a.id);
        write_text(&cfg.paths.corpus_dir.join(&path), &a.raw_text)?;
        manifest_entries.push(ManifestEntry {
            path,
            class: a.class_label.map(|c| format!("style-{c}")),
            era: a.era_tag.clone(),
            id: None,
        });
    }
    if let Some(dir) = cfg.paths.manifest.parent() {
        std::fs::create_dir_all(dir)?;
    }
    manifest::write_manifest(&cfg.paths.manifest, &manifest_entries)?;

    // Targets: every era artifact plus a sample of context artifacts, the
    // reference group expected to score highest value.
    let mut targets = Vec::new();
    for era in &eras {
        for a in &era.artifacts {
            let path = format!("{}.txt", a.id);
            write_text(&cfg.paths.corpus_dir.join(&path), &a.raw_text)?;
            targets.push(ManifestEntry {
                path,
                class: None,
                era: a.era_tag.clone(),
                id: None,
            });
        }
    }
    // Round-robin across classes so the sample is not dominated by the
    // first style.
    let per_class = cfg.synthetic.artifacts_per_class;
    let classes = cfg.synthetic.num_classes;
    for k in 0..cfg.context_sample_size.min(context.len()) {
        let idx = (k % classes) * per_class + k / classes;
        let a = &context[idx];
        targets.push(ManifestEntry {
            path: format!("{}.txt", a.id),
            class: None,
            era: Some("context".into()),
            id: Some(format!("sample-{}", a.id)),
        });
    }
    let targets_path = targets_path_for(cfg);
    manifest::write_manifest(&targets_path, &targets)?;
    println!(
        "synth: {} context artifacts, {} era groups, targets at {}",
        context.len(),
        eras.len(),
        targets_path.display()
    );
    Ok(())
}

/// The synthetic targets manifest lives next to the context manifest.
pub fn targets_path_for(cfg: &RunConfig) -> PathBuf {
    match cfg.paths.manifest.parent() {
        Some(dir) => dir.join("targets.jsonl"),
        None => PathBuf::from("targets.jsonl"),
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output_dir.join("dataset.json")
}

fn vocab_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output_dir.join("vocab.tsv")
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let entries = manifest::read_manifest(&cfg.paths.manifest)?;
    if entries.is_empty() {
        bail!("manifest {} lists no artifacts", cfg.paths.manifest.display());
    }
    let (mut artifacts, class_names) = manifest::load_artifacts(&cfg.paths.corpus_dir, &entries)?;

    let token_lists: Vec<Vec<String>> = artifacts.iter().map(|a| a.token_strings()).collect();
    let vocab = Vocabulary::build(
        token_lists.iter().map(|t| t.as_slice()),
        cfg.vocab_min_count,
    )?;
    for a in &mut artifacts {
        a.encode_with(&vocab);
    }
    let dataset = ContextDataset::build(
        artifacts,
        class_names,
        cfg.seed,
        ContextDataset::DEFAULT_RATIOS,
    )?;

    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    write_text(&dataset_path(cfg), &serde_json::to_string_pretty(&dataset)?)?;
    write_text(&vocab_path(cfg), &(vocab.export_lines().join("\n") + "\n"))?;

    let summary = ingest_summary(&dataset, &vocab);
    write_text(&cfg.paths.output_dir.join("ingest-summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn ingest_summary(dataset: &ContextDataset, vocab: &Vocabulary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "artifacts: {}", dataset.artifacts.len());
    let _ = writeln!(s, "vocabulary: {} tokens", vocab.size());
    let _ = writeln!(s, "max length: {} tokens", dataset.max_len());
    for (label, name) in dataset.class_names.iter().enumerate() {
        let n = dataset
            .artifacts
            .iter()
            .filter(|a| a.class_label == Some(label))
            .count();
        let _ = writeln!(s, "class {name}: {n}");
    }
    let mut eras: Vec<String> = Vec::new();
    for a in &dataset.artifacts {
        if let Some(tag) = &a.era_tag {
            if !eras.contains(tag) {
                eras.push(tag.clone());
            }
        }
    }
    for tag in &eras {
        let n = dataset
            .artifacts
            .iter()
            .filter(|a| a.era_tag.as_ref() == Some(tag))
            .count();
        let _ = writeln!(s, "era {tag}: {n}");
    }
    for split in [Split::Train, Split::Valid, Split::Test] {
        let _ = writeln!(s, "split {}: {}", split.as_str(), dataset.indices(split).count());
    }
    s
}

fn load_ingested(cfg: &RunConfig) -> Result<(ContextDataset, Vocabulary)> {
    let ds_path = dataset_path(cfg);
    let text = std::fs::read_to_string(&ds_path).with_context(|| {
        format!(
            "reading dataset {} (run `ingest` first)",
            ds_path.display()
        )
    })?;
    let dataset: ContextDataset = serde_json::from_str(&text)
        .with_context(|| format!("parsing dataset {}", ds_path.display()))?;
    let vocab_text = std::fs::read_to_string(vocab_path(cfg))
        .with_context(|| format!("reading vocabulary {}", vocab_path(cfg).display()))?;
    let vocab = Vocabulary::from_export_lines(vocab_text.lines().filter(|l| !l.is_empty()))
        .map_err(anyhow::Error::new)?;
    Ok((dataset, vocab))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn lm_config(cfg: &RunConfig, vocab: &Vocabulary) -> LmConfig {
    LmConfig {
        vocab_size: vocab.size(),
        embed_dim: cfg.lm.embed_dim,
        context_len: cfg.lm.context_len,
        lstm_units: cfg.lm.lstm_units,
        dropout_rate: cfg.lm.dropout_rate,
    }
}

fn cnn_config(cfg: &RunConfig, vocab: &Vocabulary, max_len: usize, head: HeadKind) -> CnnConfig {
    CnnConfig {
        vocab_size: vocab.size(),
        embed_dim: cfg.cnn.embed_dim,
        max_len,
        kernel_sizes: cfg.cnn.kernel_sizes.clone(),
        filters_per_kernel: cfg.cnn.filters_per_kernel,
        dropout_rate: cfg.cnn.dropout_rate,
        head,
    }
}

fn checkpoint_file(cfg: &RunConfig, role: ModelRole, stage: &str) -> PathBuf {
    cfg.paths
        .output_dir
        .join("checkpoints")
        .join(format!("{}-{stage}.dckp", role.as_str()))
}

fn log_file(cfg: &RunConfig, role: ModelRole) -> PathBuf {
    cfg.paths
        .output_dir
        .join("logs")
        .join(format!("{}-metrics.log", role.as_str()))
}

fn cmd_train(cfg: &RunConfig, role: TrainRole) -> Result<()> {
    let (dataset, vocab) = load_ingested(cfg)?;
    let fingerprint = vocab.fingerprint();
    let root = Rng::new(cfg.seed);
    match role {
        TrainRole::SurpriseLm => {
            let mut init_rng = root.split("surprise-lm-init");
            let mut model = LanguageModel::new(lm_config(cfg, &vocab), &mut init_rng)?;
            let mut opt = Optimizer::adagrad(cfg.lm.learning_rate);
            let train_rng = root.split("surprise-lm-train");
            let history = train_lm(
                &mut model,
                &dataset,
                &mut opt,
                cfg.lm.max_epochs,
                cfg.lm.patience,
                &train_rng,
            )?;
            let mut log = String::new();
            for e in &history.epochs {
                let _ = writeln!(
                    log,
                    "epoch={} train_loss={} valid_loss={}",
                    e.epoch, e.train_loss, e.valid_loss
                );
            }
            let _ = writeln!(log, "best_epoch={}", history.best_epoch);
            write_text(&log_file(cfg, ModelRole::SurpriseLm), &log)?;
            let best = Checkpoint::new_lm(ModelRole::SurpriseLm, &model, fingerprint, cfg.seed);
            checkpoint::save(&checkpoint_file(cfg, ModelRole::SurpriseLm, "best"), &best)?;
            history.apply_final_weights(&mut model.params);
            let fin = Checkpoint::new_lm(ModelRole::SurpriseLm, &model, fingerprint, cfg.seed);
            checkpoint::save(&checkpoint_file(cfg, ModelRole::SurpriseLm, "final"), &fin)?;
            println!(
                "surprise-lm: {} epochs, best epoch {}",
                history.epochs.len(),
                history.best_epoch
            );
        }
        TrainRole::NoveltyClassifier => {
            if dataset.num_classes < 2 {
                bail!("novelty classifier needs >= 2 labeled classes in the manifest");
            }
            let config = cnn_config(
                cfg,
                &vocab,
                dataset.max_len(),
                HeadKind::Softmax {
                    num_classes: dataset.num_classes,
                },
            );
            let mut init_rng = root.split("novelty-classifier-init");
            let mut model = NoveltyClassifier::new(config.clone(), &mut init_rng)?;
            let mut opt = Optimizer::adam(cfg.cnn.learning_rate);
            let train_rng = root.split("novelty-classifier-train");
            let history = train_classifier(
                &mut model,
                &dataset,
                &mut opt,
                cfg.cnn.max_epochs,
                cfg.cnn.patience,
                &train_rng,
            )?;
            let mut log = String::new();
            for e in &history.epochs {
                let _ = writeln!(
                    log,
                    "epoch={} train_loss={} valid_loss={} valid_accuracy={}",
                    e.epoch,
                    e.train_loss,
                    e.valid_loss,
                    e.valid_accuracy.unwrap_or(f64::NAN)
                );
            }
            let _ = writeln!(log, "best_epoch={}", history.best_epoch);
            write_text(&log_file(cfg, ModelRole::NoveltyClassifier), &log)?;
            let best = Checkpoint::new_cnn(
                ModelRole::NoveltyClassifier,
                &config,
                &model.cnn.params,
                fingerprint,
                cfg.seed,
            );
            checkpoint::save(
                &checkpoint_file(cfg, ModelRole::NoveltyClassifier, "best"),
                &best,
            )?;
            history.apply_final_weights(&mut model.cnn.params);
            let fin = Checkpoint::new_cnn(
                ModelRole::NoveltyClassifier,
                &config,
                &model.cnn.params,
                fingerprint,
                cfg.seed,
            );
            checkpoint::save(
                &checkpoint_file(cfg, ModelRole::NoveltyClassifier, "final"),
                &fin,
            )?;
            println!(
                "novelty-classifier: {} epochs, best epoch {}",
                history.epochs.len(),
                history.best_epoch
            );
        }
        TrainRole::ValueGan => {
            let sample_len = dataset.max_len().max(1);
            let schedule = cfg.seqgan.schedule(sample_len);
            let disc_config = cnn_config(cfg, &vocab, dataset.max_len(), HeadKind::Sigmoid);
            let mut g_rng = root.split("value-generator-init");
            let mut generator = LanguageModel::new(lm_config(cfg, &vocab), &mut g_rng)?;
            let mut d_rng = root.split("value-discriminator-init");
            let mut discriminator = ValueDiscriminator::new(disc_config.clone(), &mut d_rng)?;
            let train_rng = root.split("value-gan-train");
            let history = train_seqgan(
                &mut generator,
                &mut discriminator,
                &dataset,
                &schedule,
                &train_rng,
            )?;
            let mut log = String::new();
            for (i, loss) in history.g_pretrain_loss.iter().enumerate() {
                let _ = writeln!(log, "pretrain_epoch={} g_loss={loss}", i + 1);
            }
            let _ = writeln!(log, "pretrain_reward={}", history.pretrain_reward);
            for e in &history.epochs {
                let _ = writeln!(
                    log,
                    "epoch={} disc_accuracy={} mean_reward={}",
                    e.epoch, e.disc_accuracy, e.mean_reward
                );
            }
            write_text(&log_file(cfg, ModelRole::ValueGenerator), &log)?;
            // Adversarial training has no validation-selected best epoch,
            // so best and final carry the same end-of-run weights.
            for stage in ["best", "final"] {
                let g = Checkpoint::new_lm(
                    ModelRole::ValueGenerator,
                    &generator,
                    fingerprint,
                    cfg.seed,
                );
                checkpoint::save(&checkpoint_file(cfg, ModelRole::ValueGenerator, stage), &g)?;
                let d = Checkpoint::new_cnn(
                    ModelRole::ValueDiscriminator,
                    &disc_config,
                    &discriminator.cnn.params,
                    fingerprint,
                    cfg.seed,
                );
                checkpoint::save(
                    &checkpoint_file(cfg, ModelRole::ValueDiscriminator, stage),
                    &d,
                )?;
            }
            let last = history.epochs.last();
            println!(
                "value-gan: {} adversarial epochs, disc accuracy {:.3}, reward {:.3} (pretrain {:.3})",
                history.epochs.len(),
                last.map_or(f64::NAN, |e| e.disc_accuracy),
                last.map_or(f64::NAN, |e| e.mean_reward),
                history.pretrain_reward
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

fn check_fingerprint(role: &str, got: u64, vocab: u64) -> Result<()> {
    if got != vocab {
        return Err(CoreError::VocabularyMismatch {
            lhs: format!("{role} checkpoint fingerprint {got:016x}"),
            rhs: format!("ingested vocabulary fingerprint {vocab:016x}"),
        }
        .into());
    }
    Ok(())
}

fn cmd_score(cfg: &RunConfig, targets: &Path) -> Result<()> {
    let (dataset, vocab) = load_ingested(cfg)?;
    let entries = manifest::read_manifest(targets)?;
    if entries.is_empty() {
        bail!("target manifest {} lists no artifacts", targets.display());
    }
    let (raw_targets, _) = manifest::load_artifacts(&cfg.paths.corpus_dir, &entries)?;

    let fingerprint = vocab.fingerprint();
    let load_role = |role: ModelRole| -> Result<Checkpoint> {
        let path = checkpoint_file(cfg, role, "best");
        let ckpt = checkpoint::load(&path)?;
        check_fingerprint(role.as_str(), ckpt.header.vocab_fingerprint, fingerprint)?;
        Ok(ckpt)
    };
    let discriminator = load_role(ModelRole::ValueDiscriminator)?.into_discriminator()?;
    let classifier = load_role(ModelRole::NoveltyClassifier)?.into_classifier()?;
    let lm = load_role(ModelRole::SurpriseLm)?.into_language_model()?;

    let mut artifacts = Vec::with_capacity(raw_targets.len());
    let mut warnings = Vec::new();
    for raw in &raw_targets {
        let (encoded, subs) = oov_substitute(raw, &lm, &vocab)?;
        for sub in &subs {
            warnings.push(format!(
                "{}: token {} {:?} replaced by {:?}",
                encoded.id, sub.position, sub.original, sub.replacement
            ));
        }
        artifacts.push(encoded);
    }

    let batch = batch_report(
        &artifacts,
        &discriminator,
        &classifier,
        &lm,
        &cfg.weights,
        &cfg.surprise,
        cfg.normalize_surprise,
    )?;
    for row in &batch.rows {
        for w in &row.warnings {
            warnings.push(w.clone());
        }
    }

    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    report::write_csv(
        &cfg.paths.output_dir.join("report.csv"),
        &batch,
        &dataset.class_names,
    )?;
    let mut warn_log = warnings.join("\n");
    if !warn_log.is_empty() {
        warn_log.push('\n');
    }
    write_text(&cfg.paths.output_dir.join("score-warnings.log"), &warn_log)?;
    println!(
        "score: {} artifacts in {} groups, {} warnings",
        batch.rows.len(),
        batch.groups.len(),
        warnings.len()
    );
    for g in &batch.groups {
        println!(
            "group {}: value={:.4} novelty={:.4} surprise={:.4} dc={:.4} (n={})",
            g.era_tag, g.value, g.novelty, g.surprise, g.dc, g.count
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

fn cmd_plot(cfg: &RunConfig, order: &str) -> Result<()> {
    let order: Vec<String> = order
        .split(',')
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect();
    if order.is_empty() {
        bail!("--order lists no groups");
    }
    let csv_path = cfg.paths.output_dir.join("report.csv");
    let text = std::fs::read_to_string(&csv_path)
        .with_context(|| format!("reading report {} (run `score` first)", csv_path.display()))?;
    let parsed = report::from_csv(&text)?;
    let svg = plot::render_svg(&parsed.rows, &order)?;
    let out = cfg.paths.output_dir.join("trajectory.svg");
    write_text(&out, &svg)?;
    println!("plot: wrote {}", out.display());
    Ok(())
}

// Re-exported for integration tests that drive training through the
// library rather than a subprocess.
pub use creativity_core::training::SeqGanSchedule;

/// Mean NLL helper shared by smoke tests.
pub fn dataset_mean_nll(model: &LanguageModel, dataset: &ContextDataset, split: Split) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for a in dataset.artifacts_in(split) {
        total += model.nll(&with_eos(&a.tokens))?;
        n += 1;
    }
    if n == 0 {
        bail!("no artifacts in split {}", split.as_str());
    }
    Ok(total / n as f64)
}
