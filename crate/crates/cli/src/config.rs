//! Run configuration: a single TOML file with a scale preset plus
//! optional per-key overrides, resolved into concrete settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use creativity_core::corpus::SyntheticConfig;
use creativity_core::measures::{CreativityWeights, SurpriseConfig, WeightPolicy};
use creativity_core::training::SeqGanSchedule;
use serde::Deserialize;

/// Scale preset. `paper` pins every hyperparameter to the reference
/// setup (embedding 300, LSTM 256, CNN kernels 3/4/5 with Adam 1e-4,
/// SeqGAN 50/5/8/4/32/550); `desk` shrinks the models and schedules to
/// minutes-scale runs with the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PathsConfig {
    /// Directory holding the artifact text files.
    pub corpus_dir: PathBuf,
    /// Line-delimited JSON manifest describing the context corpus.
    pub manifest: PathBuf,
    /// All command outputs land here.
    pub output_dir: PathBuf,
}

/// Language model settings (both the SeqGAN generator and the surprise
/// model use this architecture).
#[derive(Debug, Clone)]
pub struct LmSettings {
    pub embed_dim: usize,
    pub context_len: usize,
    pub lstm_units: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

/// Convolutional settings shared by the discriminator and classifier.
#[derive(Debug, Clone)]
pub struct CnnSettings {
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

/// Adversarial schedule without the corpus-dependent sample length.
#[derive(Debug, Clone)]
pub struct SeqGanSettings {
    pub g_pretrain_epochs: usize,
    pub d_pretrain_epochs: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub batch_size: usize,
    pub total_adversarial_epochs: usize,
    pub rollout_count: usize,
    pub g_lr: f64,
}

impl SeqGanSettings {
    pub fn schedule(&self, sample_len: usize) -> SeqGanSchedule {
        SeqGanSchedule {
            g_pretrain_epochs: self.g_pretrain_epochs,
            d_pretrain_epochs: self.d_pretrain_epochs,
            g_steps: self.g_steps,
            d_steps: self.d_steps,
            batch_size: self.batch_size,
            total_adversarial_epochs: self.total_adversarial_epochs,
            rollout_count: self.rollout_count,
            sample_len,
            g_lr: self.g_lr,
            ..SeqGanSchedule::paper(sample_len)
        }
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub paths: PathsConfig,
    pub vocab_min_count: u64,
    pub lm: LmSettings,
    pub cnn: CnnSettings,
    pub seqgan: SeqGanSettings,
    pub weights: CreativityWeights,
    pub surprise: SurpriseConfig,
    /// Min-max rescale surprise across each scored batch.
    pub normalize_surprise: bool,
    pub synthetic: SyntheticConfig,
    pub drift_levels: Vec<f64>,
    /// Context artifacts sampled into the score targets by `synth`.
    pub context_sample_size: usize,
}

// -- raw file schema --------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LmFile {
    embed_dim: Option<usize>,
    context_len: Option<usize>,
    lstm_units: Option<usize>,
    dropout_rate: Option<f64>,
    learning_rate: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CnnFile {
    embed_dim: Option<usize>,
    kernel_sizes: Option<Vec<usize>>,
    filters_per_kernel: Option<usize>,
    dropout_rate: Option<f64>,
    learning_rate: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeqGanFile {
    g_pretrain_epochs: Option<usize>,
    d_pretrain_epochs: Option<usize>,
    g_steps: Option<usize>,
    d_steps: Option<usize>,
    batch_size: Option<usize>,
    total_adversarial_epochs: Option<usize>,
    rollout_count: Option<usize>,
    g_lr: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    alpha_value: Option<f64>,
    alpha_novelty: Option<f64>,
    alpha_surprise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurpriseFile {
    eta: Option<f64>,
    /// "all-trainable" or "exclude-embeddings".
    weight_policy: Option<String>,
    zero_weight_epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticFile {
    vocab_words: Option<usize>,
    num_classes: Option<usize>,
    artifacts_per_class: Option<usize>,
    artifacts_per_era: Option<usize>,
    min_len: Option<usize>,
    max_len: Option<usize>,
    drift_levels: Option<Vec<f64>>,
    context_sample_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    seed: Option<u64>,
    preset: Option<Preset>,
    paths: PathsConfig,
    vocab_min_count: Option<u64>,
    #[serde(default)]
    lm: LmFile,
    #[serde(default)]
    cnn: CnnFile,
    #[serde(default)]
    seqgan: SeqGanFile,
    #[serde(default)]
    weights: WeightsFile,
    #[serde(default)]
    surprise: SurpriseFile,
    #[serde(default)]
    synthetic: SyntheticFile,
    normalize_surprise: Option<bool>,
}

fn desk_lm() -> LmSettings {
    LmSettings {
        embed_dim: 16,
        context_len: 12,
        lstm_units: 24,
        dropout_rate: 0.2,
        learning_rate: 0.01,
        max_epochs: 15,
        patience: 3,
    }
}

fn paper_lm() -> LmSettings {
    LmSettings {
        embed_dim: 300,
        context_len: 20,
        lstm_units: 256,
        dropout_rate: 0.2,
        learning_rate: 0.01,
        max_epochs: 200,
        patience: 10,
    }
}

fn desk_cnn() -> CnnSettings {
    CnnSettings {
        embed_dim: 16,
        kernel_sizes: vec![2, 3],
        filters_per_kernel: 8,
        dropout_rate: 0.2,
        learning_rate: 0.01,
        max_epochs: 12,
        patience: 3,
    }
}

fn paper_cnn() -> CnnSettings {
    CnnSettings {
        embed_dim: 300,
        kernel_sizes: vec![3, 4, 5],
        filters_per_kernel: 64,
        dropout_rate: 0.5,
        learning_rate: 0.0001,
        max_epochs: 100,
        patience: 10,
    }
}

fn desk_seqgan() -> SeqGanSettings {
    SeqGanSettings {
        g_pretrain_epochs: 8,
        d_pretrain_epochs: 3,
        g_steps: 8,
        d_steps: 4,
        batch_size: 32,
        total_adversarial_epochs: 40,
        rollout_count: 1,
        g_lr: 0.01,
    }
}

fn paper_seqgan() -> SeqGanSettings {
    SeqGanSettings {
        g_pretrain_epochs: 50,
        d_pretrain_epochs: 5,
        g_steps: 8,
        d_steps: 4,
        batch_size: 32,
        total_adversarial_epochs: 550,
        rollout_count: 1,
        g_lr: 0.01,
    }
}

impl RunConfig {
    /// Parse and resolve a TOML config file. `seed_override` comes from
    /// the command line and wins over the file.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: RunConfigFile =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let preset = file.preset.unwrap_or(Preset::Desk);
        let (mut lm, mut cnn, mut gan) = match preset {
            Preset::Desk => (desk_lm(), desk_cnn(), desk_seqgan()),
            Preset::Paper => (paper_lm(), paper_cnn(), paper_seqgan()),
        };

        macro_rules! take {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        take!(lm.embed_dim, file.lm.embed_dim);
        take!(lm.context_len, file.lm.context_len);
        take!(lm.lstm_units, file.lm.lstm_units);
        take!(lm.dropout_rate, file.lm.dropout_rate);
        take!(lm.learning_rate, file.lm.learning_rate);
        take!(lm.max_epochs, file.lm.max_epochs);
        take!(lm.patience, file.lm.patience);
        take!(cnn.embed_dim, file.cnn.embed_dim);
        take!(cnn.kernel_sizes, file.cnn.kernel_sizes);
        take!(cnn.filters_per_kernel, file.cnn.filters_per_kernel);
        take!(cnn.dropout_rate, file.cnn.dropout_rate);
        take!(cnn.learning_rate, file.cnn.learning_rate);
        take!(cnn.max_epochs, file.cnn.max_epochs);
        take!(cnn.patience, file.cnn.patience);
        take!(gan.g_pretrain_epochs, file.seqgan.g_pretrain_epochs);
        take!(gan.d_pretrain_epochs, file.seqgan.d_pretrain_epochs);
        take!(gan.g_steps, file.seqgan.g_steps);
        take!(gan.d_steps, file.seqgan.d_steps);
        take!(gan.batch_size, file.seqgan.batch_size);
        take!(gan.total_adversarial_epochs, file.seqgan.total_adversarial_epochs);
        take!(gan.rollout_count, file.seqgan.rollout_count);
        take!(gan.g_lr, file.seqgan.g_lr);

        let mut weights = CreativityWeights::default();
        take!(weights.alpha_value, file.weights.alpha_value);
        take!(weights.alpha_novelty, file.weights.alpha_novelty);
        take!(weights.alpha_surprise, file.weights.alpha_surprise);
        weights
            .validate()
            .map_err(anyhow::Error::new)
            .context("creativity weights")?;

        let mut surprise = SurpriseConfig::default();
        take!(surprise.eta, file.surprise.eta);
        take!(surprise.zero_weight_epsilon, file.surprise.zero_weight_epsilon);
        if let Some(policy) = &file.surprise.weight_policy {
            surprise.weight_policy = match policy.as_str() {
                "all-trainable" => WeightPolicy::AllTrainable,
                "exclude-embeddings" => WeightPolicy::ExcludeEmbeddings,
                other => bail!("unknown weight_policy {other:?} (expected all-trainable or exclude-embeddings)"),
            };
        }
        surprise
            .validate()
            .map_err(anyhow::Error::new)
            .context("surprise config")?;

        let mut synthetic = SyntheticConfig::default();
        take!(synthetic.vocab_words, file.synthetic.vocab_words);
        take!(synthetic.num_classes, file.synthetic.num_classes);
        take!(synthetic.artifacts_per_class, file.synthetic.artifacts_per_class);
        take!(synthetic.artifacts_per_era, file.synthetic.artifacts_per_era);
        take!(synthetic.min_len, file.synthetic.min_len);
        take!(synthetic.max_len, file.synthetic.max_len);
        let drift_levels = file
            .synthetic
            .drift_levels
            .unwrap_or_else(|| vec![0.0, 0.4, 0.8]);

        Ok(RunConfig {
            seed: seed_override.or(file.seed).unwrap_or(0),
            preset,
            paths: file.paths,
            vocab_min_count: file.vocab_min_count.unwrap_or(1),
            lm,
            cnn,
            seqgan: gan,
            weights,
            surprise,
            normalize_surprise: file.normalize_surprise.unwrap_or(false),
            synthetic,
            drift_levels,
            context_sample_size: file.synthetic.context_sample_size.unwrap_or(20),
        })
    }
}
