//! The three creativity measures and their weighted combination.
//!
//! Value is the adversarially trained discriminator's score. Novelty is
//! one minus the normalized Euclidean distance between the style
//! classifier's posterior and the uniform distribution. Surprise is the
//! mean relative weight change a sequence model would undergo if updated
//! on the artifact.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Artifact;
use crate::error::CoreError;
use crate::models::{NextTokenModel, NoveltyClassifier, ValueDiscriminator};
use crate::tensor::{sqrt, Tape};
use crate::Result;

/// Convex combination weights for the final score. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreativityWeights {
    pub alpha_value: f64,
    pub alpha_novelty: f64,
    pub alpha_surprise: f64,
}

/// Tolerance on the weight-sum check.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl Default for CreativityWeights {
    fn default() -> Self {
        CreativityWeights {
            alpha_value: 1.0 / 3.0,
            alpha_novelty: 1.0 / 3.0,
            alpha_surprise: 1.0 / 3.0,
        }
    }
}

impl CreativityWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha_value, self.alpha_novelty, self.alpha_surprise];
        for w in ws {
            if !(0.0..=1.0).contains(&w) {
                return Err(CoreError::InvalidArgument {
                    context: format!("weight {w} outside [0, 1]"),
                });
            }
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(CoreError::InvalidArgument {
                context: format!("weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE}"),
            });
        }
        Ok(())
    }
}

/// Which weights count toward surprise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightPolicy {
    AllTrainable,
    ExcludeEmbeddings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurpriseConfig {
    /// Learning rate of the hypothetical update.
    pub eta: f64,
    pub weight_policy: WeightPolicy,
    /// Sign-preserving lower clamp on |w| in the relative change ratio,
    /// so near-zero weights cannot blow up the mean.
    pub zero_weight_epsilon: f64,
}

impl Default for SurpriseConfig {
    fn default() -> Self {
        SurpriseConfig {
            eta: 1.0,
            weight_policy: WeightPolicy::AllTrainable,
            zero_weight_epsilon: 1e-8,
        }
    }
}

impl SurpriseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(CoreError::InvalidArgument {
                context: format!("eta {} must be positive and finite", self.eta),
            });
        }
        if !(self.zero_weight_epsilon > 0.0) || !self.zero_weight_epsilon.is_finite() {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "zero_weight_epsilon {} must be positive and finite",
                    self.zero_weight_epsilon
                ),
            });
        }
        Ok(())
    }
}

/// Value of an artifact: the discriminator's belief that it is real.
/// Returns the score and a truncation flag.
pub fn value(discriminator: &ValueDiscriminator, tokens: &[u32]) -> Result<(f64, bool)> {
    discriminator.score(tokens)
}

/// Euclidean distance from a posterior to the uniform distribution over
/// the same support.
pub fn distance_to_uniform(posterior: &[f64]) -> Result<f64> {
    let n = posterior.len();
    if n < 2 {
        return Err(CoreError::InvalidArgument {
            context: format!("posterior over {n} classes, need >= 2"),
        });
    }
    let u = 1.0 / n as f64;
    let mut sum = 0.0;
    for &y in posterior {
        if !y.is_finite() || y < 0.0 {
            return Err(CoreError::NonFinite {
                context: "class posterior".into(),
            });
        }
        sum += (u - y) * (u - y);
    }
    Ok(sqrt(sum))
}

/// Largest possible [`distance_to_uniform`] over `n` classes, attained by
/// a one-hot posterior.
pub fn distance_upper_bound(n: usize) -> f64 {
    let n = n as f64;
    sqrt(n * (n - 1.0)) / n
}

/// Novelty from a posterior: 1 minus the normalized distance to uniform.
/// 1 when the classifier is maximally unsure, 0 when it is certain.
pub fn novelty_from_posterior(posterior: &[f64]) -> Result<f64> {
    let d = distance_to_uniform(posterior)?;
    // The distance and its bound are computed by different formulas, so a
    // one-hot posterior can land a rounding error outside [0, 1]; clamp so
    // the extremes are exact.
    Ok((1.0 - d / distance_upper_bound(posterior.len())).clamp(0.0, 1.0))
}

/// Novelty of an artifact under the style classifier. Returns the score,
/// the posterior, and a truncation flag.
pub fn novelty(
    classifier: &NoveltyClassifier,
    tokens: &[u32],
) -> Result<(f64, Vec<f64>, bool)> {
    let (posterior, truncated) = classifier.posterior(tokens)?;
    Ok((novelty_from_posterior(&posterior)?, posterior, truncated))
}

/// Surprise of a token sequence under a next-token model: the mean over
/// counted weights of |Δw / w|, where Δw = −η · ∂(mean NLL)/∂w is the
/// hypothetical gradient step and |w| is clamped below by
/// `zero_weight_epsilon`. The model is not mutated.
pub fn surprise<M: NextTokenModel>(model: &M, tokens: &[u32], config: &SurpriseConfig) -> Result<f64> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(CoreError::Empty {
            context: "surprise over empty sequence".into(),
        });
    }
    let mut tape = Tape::new();
    let loss = model.sequence_nll_loss(&mut tape, tokens)?;
    tape.backward(loss)?;
    // Gradients land in a scratch copy so the model's own parameters stay
    // bit-identical.
    let mut scratch = model.params().clone();
    scratch.zero_grads();
    tape.accumulate_param_grads(&mut scratch);
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in scratch.iter() {
        if !p.trainable {
            continue;
        }
        if config.weight_policy == WeightPolicy::ExcludeEmbeddings
            && p.name.starts_with("embedding/")
        {
            continue;
        }
        let grads = match p.tensor.grad() {
            Some(g) => g,
            None => continue,
        };
        for (&w, &g) in p.tensor.values().iter().zip(grads) {
            let dw = -config.eta * g;
            let mag = if w.abs() < config.zero_weight_epsilon {
                config.zero_weight_epsilon
            } else {
                w.abs()
            };
            sum += (dw / mag).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(CoreError::Empty {
            context: "no weights counted for surprise".into(),
        });
    }
    Ok(sum / count as f64)
}

/// One scored artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub era_tag: String,
    pub value: f64,
    pub novelty: f64,
    pub surprise: f64,
    pub dc: f64,
    pub class_posterior: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Combine the three measures. `dc = α_v·V + α_n·N + α_s·S`.
pub fn combine(weights: &CreativityWeights, v: f64, n: f64, s: f64) -> f64 {
    weights.alpha_value * v + weights.alpha_novelty * n + weights.alpha_surprise * s
}

fn check_vocab_agreement<M: NextTokenModel>(
    discriminator: &ValueDiscriminator,
    classifier: &NoveltyClassifier,
    lm: &M,
) -> Result<()> {
    let dv = discriminator.cnn.config.vocab_size;
    let dn = classifier.cnn.config.vocab_size;
    if dv != dn {
        return Err(CoreError::VocabularyMismatch {
            lhs: format!("discriminator vocab {dv}"),
            rhs: format!("classifier vocab {dn}"),
        });
    }
    if let Some(slot) = lm.params().slot("embedding/table") {
        let gv = lm.params().get(slot).tensor.shape()[0];
        if gv != dv {
            return Err(CoreError::VocabularyMismatch {
                lhs: format!("discriminator vocab {dv}"),
                rhs: format!("language model vocab {gv}"),
            });
        }
    }
    Ok(())
}

/// Score one artifact with all three measures.
pub fn deep_creativity<M: NextTokenModel>(
    artifact: &Artifact,
    discriminator: &ValueDiscriminator,
    classifier: &NoveltyClassifier,
    lm: &M,
    weights: &CreativityWeights,
    surprise_config: &SurpriseConfig,
) -> Result<ScoreRow> {
    weights.validate()?;
    check_vocab_agreement(discriminator, classifier, lm)?;
    if artifact.tokens.is_empty() {
        return Err(CoreError::Empty {
            context: format!("artifact {} has no tokens", artifact.id),
        });
    }
    let mut warnings = Vec::new();
    let (v, v_trunc) = value(discriminator, &artifact.tokens)?;
    let (n, posterior, n_trunc) = novelty(classifier, &artifact.tokens)?;
    if v_trunc || n_trunc {
        warnings.push(format!(
            "artifact {} truncated to the convolutional window",
            artifact.id
        ));
    }
    let s = surprise(lm, &artifact.tokens, surprise_config)?;
    let dc = combine(weights, v, n, s);
    Ok(ScoreRow {
        id: artifact.id.clone(),
        era_tag: artifact.era_tag.clone().unwrap_or_else(|| "ungrouped".into()),
        value: v,
        novelty: n,
        surprise: s,
        dc,
        class_posterior: posterior,
        warnings,
    })
}

/// Per-group (era) means of each measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub era_tag: String,
    pub count: usize,
    pub value: f64,
    pub novelty: f64,
    pub surprise: f64,
    pub dc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<ScoreRow>,
    pub groups: Vec<GroupMeans>,
    /// True when surprise was min-max normalized across the batch before
    /// combination.
    pub surprise_normalized: bool,
}

/// Score a batch of artifacts and aggregate per era tag. With
/// `normalize_surprise`, surprise is min-max rescaled across the batch
/// (degenerate batches where all raw values coincide map to 0) and the
/// combined score uses the rescaled values.
pub fn batch_report<M: NextTokenModel>(
    artifacts: &[Artifact],
    discriminator: &ValueDiscriminator,
    classifier: &NoveltyClassifier,
    lm: &M,
    weights: &CreativityWeights,
    surprise_config: &SurpriseConfig,
    normalize_surprise: bool,
) -> Result<BatchReport> {
    if artifacts.is_empty() {
        return Err(CoreError::Empty {
            context: "batch_report over no artifacts".into(),
        });
    }
    let mut rows = Vec::with_capacity(artifacts.len());
    for artifact in artifacts {
        rows.push(deep_creativity(
            artifact,
            discriminator,
            classifier,
            lm,
            weights,
            surprise_config,
        )?);
    }
    if normalize_surprise {
        let min = rows.iter().map(|r| r.surprise).fold(f64::INFINITY, f64::min);
        let max = rows.iter().map(|r| r.surprise).fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for row in &mut rows {
            row.surprise = if span > 0.0 { (row.surprise - min) / span } else { 0.0 };
            row.dc = combine(weights, row.value, row.novelty, row.surprise);
        }
    }
    let mut groups: Vec<GroupMeans> = Vec::new();
    for row in &rows {
        match groups.iter_mut().find(|g| g.era_tag == row.era_tag) {
            Some(g) => {
                g.count += 1;
                g.value += row.value;
                g.novelty += row.novelty;
                g.surprise += row.surprise;
                g.dc += row.dc;
            }
            None => groups.push(GroupMeans {
                era_tag: row.era_tag.clone(),
                count: 1,
                value: row.value,
                novelty: row.novelty,
                surprise: row.surprise,
                dc: row.dc,
            }),
        }
    }
    for g in &mut groups {
        let n = g.count as f64;
        g.value /= n;
        g.novelty /= n;
        g.surprise /= n;
        g.dc /= n;
    }
    Ok(BatchReport {
        rows,
        groups,
        surprise_normalized: normalize_surprise,
    })
}
