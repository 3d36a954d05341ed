//! The three network roles: generator / surprise language model (LSTM),
//! value discriminator and novelty classifier (1-D CNNs with
//! max-over-time pooling).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::Rng;
use crate::tensor::{ParamSet, Tape, Tensor, TensorId};
use crate::Result;

/// Reserved token ids.
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// First id available to real tokens.
pub const RESERVED: u32 = 4;

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

/// LSTM language model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub lstm_units: usize,
    pub dropout_rate: f64,
}

impl LmConfig {
    /// Paper-scale defaults: embedding 300, context 20, 256 units,
    /// dropout 0.2.
    pub fn paper(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            embed_dim: 300,
            context_len: 20,
            lstm_units: 256,
            dropout_rate: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= RESERVED as usize {
            return Err(CoreError::InvalidArgument {
                context: format!("vocab_size {} must exceed the reserved ids", self.vocab_size),
            });
        }
        if self.embed_dim == 0 || self.lstm_units == 0 || self.context_len == 0 {
            return Err(CoreError::InvalidArgument {
                context: "embed_dim, lstm_units and context_len must be >= 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidArgument {
                context: format!("dropout_rate {} outside [0, 1)", self.dropout_rate),
            });
        }
        Ok(())
    }
}

/// Output head of a convolutional text model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Single sigmoid output (value discriminator).
    Sigmoid,
    /// Softmax over `num_classes` (novelty classifier).
    Softmax { num_classes: usize },
}

/// Convolutional text model hyperparameters (Kim-style parallel branches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Inputs are padded / truncated to this length (the maximum artifact
    /// length seen at ingest time).
    pub max_len: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub dropout_rate: f64,
    pub head: HeadKind,
}

impl CnnConfig {
    /// Paper-scale defaults: embedding 300, kernels 3/4/5, dropout 0.5.
    /// Filter count is not stated in the source setup; 64 is the desk
    /// default.
    pub fn paper(vocab_size: usize, max_len: usize, head: HeadKind) -> Self {
        CnnConfig {
            vocab_size,
            embed_dim: 300,
            max_len,
            kernel_sizes: vec![3, 4, 5],
            filters_per_kernel: 64,
            dropout_rate: 0.5,
            head,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.head {
            HeadKind::Sigmoid => 1,
            HeadKind::Softmax { num_classes } => num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= RESERVED as usize {
            return Err(CoreError::InvalidArgument {
                context: format!("vocab_size {} must exceed the reserved ids", self.vocab_size),
            });
        }
        if self.embed_dim == 0 || self.filters_per_kernel == 0 || self.max_len == 0 {
            return Err(CoreError::InvalidArgument {
                context: "embed_dim, filters_per_kernel and max_len must be >= 1".into(),
            });
        }
        if self.kernel_sizes.is_empty() {
            return Err(CoreError::Empty {
                context: "kernel_sizes".into(),
            });
        }
        if self.kernel_sizes.iter().any(|&k| k == 0 || k > self.max_len) {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "kernel sizes {:?} must be in [1, max_len={}]",
                    self.kernel_sizes, self.max_len
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidArgument {
                context: format!("dropout_rate {} outside [0, 1)", self.dropout_rate),
            });
        }
        if let HeadKind::Softmax { num_classes } = self.head {
            if num_classes < 2 {
                return Err(CoreError::InvalidArgument {
                    context: format!("softmax head needs >= 2 classes, got {num_classes}"),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Language model
// ---------------------------------------------------------------------------

/// Anything surprise can be measured against: a model assigning a
/// teacher-forced mean NLL to a token sequence, differentiable through
/// its parameters.
pub trait NextTokenModel {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Mean per-token NLL of `tokens` as a tape node (eval mode).
    fn sequence_nll_loss(&self, tape: &mut Tape, tokens: &[u32]) -> Result<TensorId>;
}

/// Single-layer LSTM language model with a tied four-gate cell
/// (input / forget / cell / output; forget bias initialized to 1).
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub params: ParamSet,
}

impl LanguageModel {
    pub fn new(config: LmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, e, u) = (config.vocab_size, config.embed_dim, config.lstm_units);
        let mut params = ParamSet::new();
        let mut r = rng.split("lm-init");
        params.add("embedding/table", Tensor::uniform_init(vec![v, e], e, &mut r), true)?;
        params.add("lstm/weight_ih", Tensor::uniform_init(vec![e, 4 * u], e, &mut r), true)?;
        params.add("lstm/weight_hh", Tensor::uniform_init(vec![u, 4 * u], u, &mut r), true)?;
        let mut bias = Tensor::zeros(vec![4 * u]);
        for x in bias.values_mut()[u..2 * u].iter_mut() {
            *x = 1.0;
        }
        params.add("lstm/bias", bias, true)?;
        params.add("head/weight", Tensor::uniform_init(vec![u, v], u, &mut r), true)?;
        params.add("head/bias", Tensor::zeros(vec![v]), true)?;
        Ok(LanguageModel { config, params })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(CoreError::TokenOutOfRange {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Run the LSTM over `inputs` and return one logits row `[1, vocab]`
    /// per step. `train_rng: Some` enables dropout on the hidden state
    /// feeding the dense head.
    pub fn forward_logits(
        &self,
        tape: &mut Tape,
        inputs: &[u32],
        mut train_rng: Option<&mut Rng>,
    ) -> Result<Vec<TensorId>> {
        self.check_ids(inputs)?;
        let u = self.config.lstm_units;
        let table = tape.param(&self.params, self.params.slot("embedding/table").unwrap())?;
        let w_ih = tape.param(&self.params, self.params.slot("lstm/weight_ih").unwrap())?;
        let w_hh = tape.param(&self.params, self.params.slot("lstm/weight_hh").unwrap())?;
        let bias = tape.param(&self.params, self.params.slot("lstm/bias").unwrap())?;
        let w_hy = tape.param(&self.params, self.params.slot("head/weight").unwrap())?;
        let b_y = tape.param(&self.params, self.params.slot("head/bias").unwrap())?;

        let idx: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let emb = tape.embedding(table, &idx)?;
        let mut h = tape.constant(vec![1, u], vec![0.0; u])?;
        let mut c = tape.constant(vec![1, u], vec![0.0; u])?;
        let mut logits = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let x = tape.row(emb, t)?;
            let xi = tape.matmul(x, w_ih)?;
            let hi = tape.matmul(h, w_hh)?;
            let pre0 = tape.add(xi, hi)?;
            let pre = tape.add_bias(pre0, bias)?;
            let gi = tape.slice_cols(pre, 0, u)?;
            let gf = tape.slice_cols(pre, u, u)?;
            let gg = tape.slice_cols(pre, 2 * u, u)?;
            let go = tape.slice_cols(pre, 3 * u, u)?;
            let i_g = tape.sigmoid(gi)?;
            let f_g = tape.sigmoid(gf)?;
            let g_g = tape.tanh(gg)?;
            let o_g = tape.sigmoid(go)?;
            let fc = tape.mul(f_g, c)?;
            let ig = tape.mul(i_g, g_g)?;
            c = tape.add(fc, ig)?;
            let ct = tape.tanh(c)?;
            h = tape.mul(o_g, ct)?;
            let hd = tape.dropout(h, self.config.dropout_rate, train_rng.as_deref_mut())?;
            let hy = tape.matmul(hd, w_hy)?;
            logits.push(tape.add_bias(hy, b_y)?);
        }
        Ok(logits)
    }

    /// Trailing window of `[BOS] ++ prefix` consumed by prediction.
    fn context_window(&self, prefix: &[u32]) -> Vec<u32> {
        let mut seq = Vec::with_capacity(prefix.len() + 1);
        seq.push(BOS);
        seq.extend_from_slice(prefix);
        let c = self.config.context_len;
        if seq.len() > c {
            seq.split_off(seq.len() - c)
        } else {
            seq
        }
    }

    /// Next-token distribution given a prefix (eval mode).
    pub fn next_dist(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_ids(prefix)?;
        let window = self.context_window(prefix);
        let mut tape = Tape::new();
        let logits = self.forward_logits(&mut tape, &window, None)?;
        let last = *logits.last().unwrap();
        let dist = tape.softmax(last)?;
        Ok(tape.values(dist).into())
    }

    /// Teacher-forced mean NLL loss node over `tokens`. Each step consumes
    /// at most `context_len` tokens of history, matching [`Self::next_dist`].
    pub fn nll_loss(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        mut train_rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(CoreError::Empty {
                context: "nll over empty sequence".into(),
            });
        }
        self.check_ids(tokens)?;
        let targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let rows = if tokens.len() <= self.config.context_len {
            // Whole history fits: one pass, step t predicts tokens[t].
            let mut inputs = vec![BOS];
            inputs.extend_from_slice(&tokens[..tokens.len() - 1]);
            self.forward_logits(tape, &inputs, train_rng.as_deref_mut())?
        } else {
            // Long sequence: per-step trailing windows.
            let mut rows = Vec::with_capacity(tokens.len());
            for t in 0..tokens.len() {
                let window = self.context_window(&tokens[..t]);
                let logits = self.forward_logits(tape, &window, train_rng.as_deref_mut())?;
                rows.push(*logits.last().unwrap());
            }
            rows
        };
        let stacked = tape.concat_rows(&rows)?;
        tape.sparse_cross_entropy(stacked, &targets)
    }

    /// Mean per-token NLL of `tokens` (eval mode).
    pub fn nll(&self, tokens: &[u32]) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.nll_loss(&mut tape, tokens, None)?;
        Ok(tape.scalar_value(loss))
    }

    /// Multinomial sampling from the model, stopping early on EOS (the
    /// EOS itself is not included in the output).
    pub fn sample(&self, prefix: &[u32], max_len: usize, rng: &mut Rng) -> Result<Vec<u32>> {
        if max_len == 0 {
            return Err(CoreError::InvalidArgument {
                context: "sample with max_len 0".into(),
            });
        }
        let mut seq: Vec<u32> = prefix.into();
        let mut out = Vec::new();
        while out.len() < max_len {
            let dist = self.next_dist(&seq)?;
            let tok = rng.categorical(&dist) as u32;
            if tok == EOS {
                break;
            }
            seq.push(tok);
            out.push(tok);
        }
        Ok(out)
    }
}

impl NextTokenModel for LanguageModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn sequence_nll_loss(&self, tape: &mut Tape, tokens: &[u32]) -> Result<TensorId> {
        self.nll_loss(tape, tokens, None)
    }
}

// ---------------------------------------------------------------------------
// Convolutional models
// ---------------------------------------------------------------------------

/// Shared convolutional trunk of the discriminator and the classifier.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub params: ParamSet,
}

impl CnnModel {
    pub fn new(config: CnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, e, f) = (config.vocab_size, config.embed_dim, config.filters_per_kernel);
        let out = config.num_classes();
        let mut params = ParamSet::new();
        let mut r = rng.split("cnn-init");
        params.add("embedding/table", Tensor::uniform_init(vec![v, e], e, &mut r), true)?;
        for &k in &config.kernel_sizes {
            params.add(
                &format!("conv{k}/weight"),
                Tensor::uniform_init(vec![k, e, f], k * e, &mut r),
                true,
            )?;
            params.add(&format!("conv{k}/bias"), Tensor::zeros(vec![f]), true)?;
        }
        let feat = config.kernel_sizes.len() * f;
        params.add("head/weight", Tensor::uniform_init(vec![feat, out], feat, &mut r), true)?;
        params.add("head/bias", Tensor::zeros(vec![out]), true)?;
        Ok(CnnModel { config, params })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(CoreError::TokenOutOfRange {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Pad with PAD or truncate to `max_len`. The flag reports truncation
    /// so callers can surface a warning.
    pub fn prepare(&self, tokens: &[u32]) -> (Vec<u32>, bool) {
        let mut padded: Vec<u32> = tokens.iter().copied().take(self.config.max_len).collect();
        let truncated = tokens.len() > self.config.max_len;
        padded.resize(self.config.max_len, PAD);
        (padded, truncated)
    }

    /// Head logits `[1, out]` for a prepared (padded) input.
    pub fn logits(
        &self,
        tape: &mut Tape,
        padded: &[u32],
        mut train_rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        if padded.len() != self.config.max_len {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "expected prepared input of length {}, got {}",
                    self.config.max_len,
                    padded.len()
                ),
            });
        }
        self.check_ids(padded)?;
        if padded.iter().all(|&t| t == PAD) {
            return Err(CoreError::Empty {
                context: "convolutional input is all padding".into(),
            });
        }
        let table = tape.param(&self.params, self.params.slot("embedding/table").unwrap())?;
        let idx: Vec<usize> = padded.iter().map(|&i| i as usize).collect();
        let emb = tape.embedding(table, &idx)?;
        let mut pooled = Vec::with_capacity(self.config.kernel_sizes.len());
        for &k in &self.config.kernel_sizes {
            let w = tape.param(&self.params, self.params.slot(&format!("conv{k}/weight")).unwrap())?;
            let b = tape.param(&self.params, self.params.slot(&format!("conv{k}/bias")).unwrap())?;
            let conv = tape.conv1d(emb, w, b)?;
            let act = tape.tanh(conv)?;
            // A window is excluded from the max when it covers padding only.
            let valid: Vec<bool> = (0..self.config.max_len - k + 1)
                .map(|j| padded[j..j + k].iter().any(|&t| t != PAD))
                .collect();
            pooled.push(tape.max_over_time(act, &valid)?);
        }
        let features = tape.concat_cols(&pooled)?;
        let dropped = tape.dropout(features, self.config.dropout_rate, train_rng.as_deref_mut())?;
        let w_head = tape.param(&self.params, self.params.slot("head/weight").unwrap())?;
        let b_head = tape.param(&self.params, self.params.slot("head/bias").unwrap())?;
        let hy = tape.matmul(dropped, w_head)?;
        tape.add_bias(hy, b_head)
    }
}

/// Real-vs-generated discriminator with a scalar sigmoid head.
#[derive(Debug, Clone)]
pub struct ValueDiscriminator {
    pub cnn: CnnModel,
}

impl ValueDiscriminator {
    pub fn new(config: CnnConfig, rng: &mut Rng) -> Result<Self> {
        if config.head != HeadKind::Sigmoid {
            return Err(CoreError::InvalidArgument {
                context: "value discriminator requires a sigmoid head".into(),
            });
        }
        Ok(ValueDiscriminator {
            cnn: CnnModel::new(config, rng)?,
        })
    }

    /// Sigmoid score node on a tape (training path).
    pub fn score_node(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        train_rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        let (padded, _) = self.cnn.prepare(tokens);
        let logit = self.cnn.logits(tape, &padded, train_rng)?;
        tape.sigmoid(logit)
    }

    /// Eval-mode score, strictly inside (0, 1). The flag reports input
    /// truncation.
    pub fn score(&self, tokens: &[u32]) -> Result<(f64, bool)> {
        let (padded, truncated) = self.cnn.prepare(tokens);
        let mut tape = Tape::new();
        let logit = self.cnn.logits(&mut tape, &padded, None)?;
        let s = tape.sigmoid(logit)?;
        Ok((tape.scalar_value(s), truncated))
    }

    /// Binary cross-entropy loss node for one sample. Implemented as a
    /// two-class cross-entropy over logits `[x, 0]`, which equals BCE on
    /// `sigmoid(x)` but stays stable at saturation.
    pub fn bce_loss(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        real: bool,
        train_rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        let (padded, _) = self.cnn.prepare(tokens);
        let logit = self.cnn.logits(tape, &padded, train_rng)?;
        let zero = tape.constant(vec![1, 1], vec![0.0])?;
        let two = tape.concat_cols(&[logit, zero])?;
        let target = if real { 0 } else { 1 };
        tape.seq_nll(two, &[target], &[1.0])
    }
}

/// Style classifier with a softmax head over `num_classes`.
#[derive(Debug, Clone)]
pub struct NoveltyClassifier {
    pub cnn: CnnModel,
}

impl NoveltyClassifier {
    pub fn new(config: CnnConfig, rng: &mut Rng) -> Result<Self> {
        match config.head {
            HeadKind::Softmax { .. } => Ok(NoveltyClassifier {
                cnn: CnnModel::new(config, rng)?,
            }),
            HeadKind::Sigmoid => Err(CoreError::InvalidArgument {
                context: "novelty classifier requires a softmax head".into(),
            }),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cnn.config.num_classes()
    }

    /// Eval-mode class posterior. The flag reports input truncation.
    pub fn posterior(&self, tokens: &[u32]) -> Result<(Vec<f64>, bool)> {
        let (padded, truncated) = self.cnn.prepare(tokens);
        let mut tape = Tape::new();
        let logits = self.cnn.logits(&mut tape, &padded, None)?;
        let dist = tape.softmax(logits)?;
        Ok((tape.values(dist).into(), truncated))
    }

    /// Categorical cross-entropy loss node for one labeled sample.
    pub fn ce_loss(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        label: usize,
        train_rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        if label >= self.num_classes() {
            return Err(CoreError::InvalidArgument {
                context: format!("label {label} out of range for {} classes", self.num_classes()),
            });
        }
        let (padded, _) = self.cnn.prepare(tokens);
        let logits = self.cnn.logits(tape, &padded, train_rng)?;
        tape.seq_nll(logits, &[label], &[1.0])
    }
}

/// Describes a model role for logs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelRole {
    ValueGenerator,
    ValueDiscriminator,
    NoveltyClassifier,
    SurpriseLm,
}

impl ModelRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelRole::ValueGenerator => "value-generator",
            ModelRole::ValueDiscriminator => "value-discriminator",
            ModelRole::NoveltyClassifier => "novelty-classifier",
            ModelRole::SurpriseLm => "surprise-lm",
        }
    }
}

/// Overwrite one embedding row (external word-vector warm start).
pub fn set_embedding_row(params: &mut ParamSet, token_id: usize, vector: &[f64]) -> Result<()> {
    let slot = params.slot("embedding/table").ok_or_else(|| CoreError::InvalidArgument {
        context: "model has no embedding table".into(),
    })?;
    let tensor = &mut params.get_mut(slot).tensor;
    let dim = tensor.shape()[1];
    let rows = tensor.shape()[0];
    if vector.len() != dim {
        return Err(CoreError::ShapeMismatch {
            op: "set_embedding_row",
            lhs: vec![dim],
            rhs: vec![vector.len()],
        });
    }
    if token_id >= rows {
        return Err(CoreError::TokenOutOfRange {
            id: token_id as u32,
            vocab_size: rows,
        });
    }
    if !vector.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite {
            context: "embedding row".into(),
        });
    }
    tensor.values_mut()[token_id * dim..(token_id + 1) * dim].copy_from_slice(vector);
    Ok(())
}
