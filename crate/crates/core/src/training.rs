//! Training procedures: supervised LM and classifier training with early
//! stopping, and the adversarial sequence-GAN loop with Monte Carlo
//! rollout Q-estimation and REINFORCE-with-baseline generator updates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{with_eos, ContextDataset, Split};
use crate::error::CoreError;
use crate::models::{LanguageModel, NoveltyClassifier, ValueDiscriminator};
use crate::rng::Rng;
use crate::tensor::{sqrt, ParamSet, Tape};
use crate::Result;

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adagrad { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
enum OptState {
    Adagrad { accum: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

/// Per-parameter accumulator state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    state: BTreeMap<String, OptState>,
}

impl Optimizer {
    /// Adagrad with the LM training rate from the reference setup.
    pub fn adagrad(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adagrad { lr },
            state: BTreeMap::new(),
        }
    }

    /// Adam with the CNN training rate from the reference setup.
    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            state: BTreeMap::new(),
        }
    }

    /// Apply one descent step from the gradients currently stored in
    /// `params`, then clear them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for slot in 0..params.len() {
            let p = params.get(slot);
            if !p.trainable {
                continue;
            }
            let name = p.name.clone();
            let n = p.tensor.len();
            let grad: Vec<f64> = match p.tensor.grad() {
                Some(g) => g.into(),
                None => continue,
            };
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(CoreError::NonFinite {
                    context: format!("gradient of {name}"),
                });
            }
            match self.kind {
                OptimizerKind::Adagrad { lr } => {
                    let state = self
                        .state
                        .entry(name)
                        .or_insert_with(|| OptState::Adagrad { accum: vec![0.0; n] });
                    let OptState::Adagrad { accum } = state else {
                        unreachable!()
                    };
                    let w = params.get_mut(slot).tensor.values_mut();
                    for i in 0..n {
                        accum[i] += grad[i] * grad[i];
                        w[i] -= lr * grad[i] / (sqrt(accum[i]) + 1e-10);
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let state = self.state.entry(name).or_insert_with(|| OptState::Adam {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                        t: 0,
                    });
                    let OptState::Adam { m, v, t } = state else {
                        unreachable!()
                    };
                    *t += 1;
                    let bc1 = 1.0 - libm::pow(beta1, *t as f64);
                    let bc2 = 1.0 - libm::pow(beta2, *t as f64);
                    let w = params.get_mut(slot).tensor.values_mut();
                    for i in 0..n {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] -= lr * mhat / (sqrt(vhat) + eps);
                    }
                }
            }
        }
        for p in params.iter_mut() {
            p.tensor.clear_grad();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Supervised training with early stopping
// ---------------------------------------------------------------------------

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the trained model carries (minimum validation
    /// loss).
    pub best_epoch: usize,
    /// Weights as of the last epoch run, before the best-epoch restore.
    /// Parameter order matches the model's ParamSet.
    pub final_weights: Vec<Vec<f64>>,
}

impl TrainHistory {
    /// Overwrite `params` with the last-epoch weights.
    pub fn apply_final_weights(&self, params: &mut ParamSet) {
        restore(params, &self.final_weights);
    }
}

fn shuffled(indices: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut v: Vec<usize> = indices.into();
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
    v
}

fn snapshot(params: &ParamSet) -> Vec<Vec<f64>> {
    params.iter().map(|p| p.tensor.values().into()).collect()
}

fn restore(params: &mut ParamSet, snap: &[Vec<f64>]) {
    for (slot, values) in snap.iter().enumerate() {
        params
            .get_mut(slot)
            .tensor
            .values_mut()
            .copy_from_slice(values);
    }
}

/// Supervised LM training (teacher forcing, per-sequence updates) with
/// best-validation early stopping. Training stops `patience` epochs after
/// the best validation loss; the returned model carries the best epoch's
/// weights.
pub fn train_lm(
    model: &mut LanguageModel,
    dataset: &ContextDataset,
    optimizer: &mut Optimizer,
    max_epochs: usize,
    patience: usize,
    rng: &Rng,
) -> Result<TrainHistory> {
    let train: Vec<usize> = dataset.indices(Split::Train).collect();
    let valid: Vec<usize> = dataset.indices(Split::Valid).collect();
    if valid.is_empty() {
        return Err(CoreError::Empty {
            context: "validation split".into(),
        });
    }
    if max_epochs == 0 {
        return Err(CoreError::InvalidArgument {
            context: "max_epochs must be >= 1".into(),
        });
    }
    let mut history = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    let mut best_weights = snapshot(&model.params);
    for epoch in 1..=max_epochs {
        let mut order_rng = rng.split_index("lm-shuffle", epoch as u64);
        let mut train_loss = 0.0;
        let mut steps = 0usize;
        for (k, &idx) in shuffled(&train, &mut order_rng).iter().enumerate() {
            let seq = with_eos(&dataset.artifacts[idx].tokens);
            let mut drop_rng = rng.split_index("lm-dropout", (epoch * 100_003 + k) as u64);
            let mut tape = Tape::new();
            let loss = model.nll_loss(&mut tape, &seq, Some(&mut drop_rng))?;
            train_loss += tape.scalar_value(loss);
            tape.backward(loss)?;
            model.params.zero_grads();
            tape.accumulate_param_grads(&mut model.params);
            optimizer.step(&mut model.params)?;
            steps += 1;
        }
        let valid_loss = mean_nll(model, dataset, &valid)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / steps.max(1) as f64,
            valid_loss,
            valid_accuracy: None,
        });
        if valid_loss < best.1 {
            best = (epoch, valid_loss);
            best_weights = snapshot(&model.params);
        }
        if epoch - best.0 >= patience {
            break;
        }
    }
    let final_weights = snapshot(&model.params);
    restore(&mut model.params, &best_weights);
    Ok(TrainHistory {
        epochs: history,
        best_epoch: best.0,
        final_weights,
    })
}

fn mean_nll(model: &LanguageModel, dataset: &ContextDataset, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        total += model.nll(&with_eos(&dataset.artifacts[i].tokens))?;
    }
    Ok(total / indices.len() as f64)
}

/// Classifier training with categorical cross-entropy; logs validation
/// accuracy alongside loss. Same early-stopping contract as [`train_lm`].
pub fn train_classifier(
    model: &mut NoveltyClassifier,
    dataset: &ContextDataset,
    optimizer: &mut Optimizer,
    max_epochs: usize,
    patience: usize,
    rng: &Rng,
) -> Result<TrainHistory> {
    if dataset.num_classes < 2 {
        return Err(CoreError::InvalidArgument {
            context: format!("classifier needs >= 2 classes, dataset has {}", dataset.num_classes),
        });
    }
    let labeled = |split: Split| -> Vec<usize> {
        dataset
            .indices(split)
            .filter(|&i| dataset.artifacts[i].class_label.is_some())
            .collect()
    };
    let train = labeled(Split::Train);
    let valid = labeled(Split::Valid);
    if valid.is_empty() {
        return Err(CoreError::Empty {
            context: "validation split".into(),
        });
    }
    if max_epochs == 0 {
        return Err(CoreError::InvalidArgument {
            context: "max_epochs must be >= 1".into(),
        });
    }
    let mut history = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    let mut best_weights = snapshot(&model.cnn.params);
    for epoch in 1..=max_epochs {
        let mut order_rng = rng.split_index("clf-shuffle", epoch as u64);
        let mut train_loss = 0.0;
        let mut steps = 0usize;
        for (k, &idx) in shuffled(&train, &mut order_rng).iter().enumerate() {
            let artifact = &dataset.artifacts[idx];
            let label = artifact.class_label.unwrap();
            let mut drop_rng = rng.split_index("clf-dropout", (epoch * 100_003 + k) as u64);
            let mut tape = Tape::new();
            let loss = model.ce_loss(&mut tape, &artifact.tokens, label, Some(&mut drop_rng))?;
            train_loss += tape.scalar_value(loss);
            tape.backward(loss)?;
            model.cnn.params.zero_grads();
            tape.accumulate_param_grads(&mut model.cnn.params);
            optimizer.step(&mut model.cnn.params)?;
            steps += 1;
        }
        let (valid_loss, valid_acc) = classifier_eval(model, dataset, &valid)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / steps.max(1) as f64,
            valid_loss,
            valid_accuracy: Some(valid_acc),
        });
        if valid_loss < best.1 {
            best = (epoch, valid_loss);
            best_weights = snapshot(&model.cnn.params);
        }
        if epoch - best.0 >= patience {
            break;
        }
    }
    let final_weights = snapshot(&model.cnn.params);
    restore(&mut model.cnn.params, &best_weights);
    Ok(TrainHistory {
        epochs: history,
        best_epoch: best.0,
        final_weights,
    })
}

fn classifier_eval(
    model: &NoveltyClassifier,
    dataset: &ContextDataset,
    indices: &[usize],
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &i in indices {
        let artifact = &dataset.artifacts[i];
        let label = artifact.class_label.unwrap();
        let mut tape = Tape::new();
        let node = model.ce_loss(&mut tape, &artifact.tokens, label, None)?;
        loss += tape.scalar_value(node);
        let (posterior, _) = model.posterior(&artifact.tokens)?;
        let argmax = posterior
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if argmax == label {
            correct += 1;
        }
    }
    Ok((
        loss / indices.len() as f64,
        correct as f64 / indices.len() as f64,
    ))
}

// ---------------------------------------------------------------------------
// SeqGAN
// ---------------------------------------------------------------------------

/// Adversarial schedule. `paper()` pins the reference values (pretrain
/// 50/5, g_steps 8, d_steps 4, batch 32, 550 epochs, 1 rollout); one
/// adversarial epoch is one (g_steps, d_steps) cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqGanSchedule {
    pub g_pretrain_epochs: usize,
    pub d_pretrain_epochs: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub batch_size: usize,
    pub total_adversarial_epochs: usize,
    pub rollout_count: usize,
    /// Generated-sequence length (matched to the corpus maximum).
    pub sample_len: usize,
    /// Plain REINFORCE ascent rate for adversarial generator updates.
    pub g_lr: f64,
    /// Adagrad rate for generator pretraining.
    pub g_pretrain_lr: f64,
    /// Adam rate for discriminator updates.
    pub d_lr: f64,
    /// Exponential-moving-average decay of the reward baseline.
    pub baseline_decay: f64,
}

impl SeqGanSchedule {
    pub fn paper(sample_len: usize) -> Self {
        SeqGanSchedule {
            g_pretrain_epochs: 50,
            d_pretrain_epochs: 5,
            g_steps: 8,
            d_steps: 4,
            batch_size: 32,
            total_adversarial_epochs: 550,
            rollout_count: 1,
            sample_len,
            g_lr: 0.01,
            g_pretrain_lr: 0.01,
            d_lr: 0.0001,
            baseline_decay: 0.9,
        }
    }

    /// Reduced schedule for desk-scale corpora.
    pub fn desk(sample_len: usize) -> Self {
        SeqGanSchedule {
            g_pretrain_epochs: 10,
            d_pretrain_epochs: 3,
            total_adversarial_epochs: 60,
            ..SeqGanSchedule::paper(sample_len)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g_pretrain_epochs", self.g_pretrain_epochs),
            ("d_pretrain_epochs", self.d_pretrain_epochs),
            ("g_steps", self.g_steps),
            ("d_steps", self.d_steps),
            ("batch_size", self.batch_size),
            ("total_adversarial_epochs", self.total_adversarial_epochs),
            ("rollout_count", self.rollout_count),
            ("sample_len", self.sample_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CoreError::InvalidArgument {
                    context: format!("schedule field {name} must be positive"),
                });
            }
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(CoreError::InvalidArgument {
                context: format!("baseline_decay {} outside [0, 1)", self.baseline_decay),
            });
        }
        Ok(())
    }
}

/// Running reward baseline: exponential moving average of episode-level
/// mean rewards, started at 0.5 (the chance-level discriminator score).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { value: 0.5, decay }
    }

    pub fn update(&mut self, episode_mean_reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * episode_mean_reward;
    }
}

/// Expected terminal reward of a prefix, estimated by Monte Carlo rollout:
/// the mean discriminator score over `rollout_count` sampled completions,
/// or the score itself once the sequence is complete (length `sample_len`).
pub fn mc_rollout_q(
    generator: &LanguageModel,
    discriminator: &ValueDiscriminator,
    prefix: &[u32],
    sample_len: usize,
    rollout_count: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if rollout_count == 0 {
        return Err(CoreError::InvalidArgument {
            context: "rollout_count must be >= 1".into(),
        });
    }
    // All-padding sequences are undiscriminable; count them as reward 0.
    let score = |seq: &[u32]| -> Result<f64> {
        if seq.iter().all(|&t| t == crate::models::PAD) {
            Ok(0.0)
        } else {
            Ok(discriminator.score(seq)?.0)
        }
    };
    if prefix.len() >= sample_len {
        return score(prefix);
    }
    let mut total = 0.0;
    for _ in 0..rollout_count {
        let completion = generator.sample(prefix, sample_len - prefix.len(), rng)?;
        let mut full: Vec<u32> = prefix.into();
        full.extend_from_slice(&completion);
        total += score(&full)?;
    }
    Ok(total / rollout_count as f64)
}

/// One REINFORCE-with-baseline ascent step:
/// `θ ← θ + lr · Σ_t (Q_t − b) ∇ ln G(y_t | y_{1:t−1})`, followed by a
/// baseline update from the episode's mean reward.
pub fn reinforce_update(
    generator: &mut LanguageModel,
    sequence: &[u32],
    q_values: &[f64],
    baseline: &mut Baseline,
    lr: f64,
) -> Result<()> {
    if sequence.is_empty() {
        return Err(CoreError::Empty {
            context: "reinforce_update over empty sequence".into(),
        });
    }
    if sequence.len() != q_values.len() {
        return Err(CoreError::InvalidArgument {
            context: format!(
                "{} sampled tokens but {} Q values",
                sequence.len(),
                q_values.len()
            ),
        });
    }
    let b = baseline.value;
    // seq_nll with weights −(Q_t − b) evaluates Σ_t (Q_t − b)·ln G(y_t|·),
    // so a plain ascent step on it is exactly the update rule.
    let weights: Vec<f64> = q_values.iter().map(|&q| -(q - b)).collect();
    let targets: Vec<usize> = sequence.iter().map(|&t| t as usize).collect();
    let mut tape = Tape::new();
    let rows = if sequence.len() <= generator.config.context_len {
        let mut inputs = vec![crate::models::BOS];
        inputs.extend_from_slice(&sequence[..sequence.len() - 1]);
        generator.forward_logits(&mut tape, &inputs, None)?
    } else {
        let mut rows = Vec::with_capacity(sequence.len());
        for t in 0..sequence.len() {
            let window = {
                let mut w = vec![crate::models::BOS];
                w.extend_from_slice(&sequence[..t]);
                let c = generator.config.context_len;
                if w.len() > c {
                    w.split_off(w.len() - c)
                } else {
                    w
                }
            };
            let logits = generator.forward_logits(&mut tape, &window, None)?;
            rows.push(*logits.last().unwrap());
        }
        rows
    };
    let stacked = tape.concat_rows(&rows)?;
    let objective = tape.seq_nll(stacked, &targets, &weights)?;
    tape.backward(objective)?;
    generator.params.zero_grads();
    tape.accumulate_param_grads(&mut generator.params);
    for p in generator.params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let grad: Vec<f64> = match p.tensor.grad() {
            Some(g) => g.into(),
            None => continue,
        };
        for (w, g) in p.tensor.values_mut().iter_mut().zip(&grad) {
            *w += lr * g;
        }
        p.tensor.clear_grad();
    }
    let episode_mean = q_values.iter().sum::<f64>() / q_values.len() as f64;
    baseline.update(episode_mean);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqGanEpoch {
    pub epoch: usize,
    /// Real-vs-generated accuracy on the held-out probe.
    pub disc_accuracy: f64,
    /// Mean discriminator score of sequences generated this epoch.
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqGanHistory {
    /// Generator pretraining loss per epoch.
    pub g_pretrain_loss: Vec<f64>,
    /// Mean generated reward measured right after pretraining, before any
    /// adversarial update.
    pub pretrain_reward: f64,
    pub epochs: Vec<SeqGanEpoch>,
}

fn discriminator_batch_step(
    discriminator: &mut ValueDiscriminator,
    optimizer: &mut Optimizer,
    real: &[&[u32]],
    fake: &[Vec<u32>],
    rng: &mut Rng,
) -> Result<()> {
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(real.len() + fake.len());
    for seq in real {
        losses.push(discriminator.bce_loss(&mut tape, seq, true, Some(rng))?);
    }
    for seq in fake {
        losses.push(discriminator.bce_loss(&mut tape, seq, false, Some(rng))?);
    }
    let total = tape.add_n(&losses)?;
    let mean = tape.affine(total, 1.0 / losses.len() as f64, 0.0)?;
    tape.backward(mean)?;
    discriminator.cnn.params.zero_grads();
    tape.accumulate_param_grads(&mut discriminator.cnn.params);
    optimizer.step(&mut discriminator.cnn.params)
}

fn sample_nonempty(
    generator: &LanguageModel,
    sample_len: usize,
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    // An immediate EOS or an all-padding draw yields a sequence the
    // discriminator cannot consume; retry a few times, then fall back to
    // the most likely non-reserved first token.
    for _ in 0..16 {
        let seq = generator.sample(&[], sample_len, rng)?;
        if seq.iter().any(|&t| t != crate::models::PAD) {
            return Ok(seq);
        }
    }
    let dist = generator.next_dist(&[])?;
    let mut best = (crate::models::RESERVED, f64::MIN);
    for (tok, &p) in dist.iter().enumerate().skip(crate::models::RESERVED as usize) {
        if p > best.1 {
            best = (tok as u32, p);
        }
    }
    Ok(vec![best.0])
}

/// Full SeqGAN run: supervised generator pretraining, discriminator
/// pretraining on real-vs-generated batches, then alternating g_steps
/// REINFORCE episodes and d_steps discriminator batches per adversarial
/// epoch.
pub fn train_seqgan(
    generator: &mut LanguageModel,
    discriminator: &mut ValueDiscriminator,
    dataset: &ContextDataset,
    schedule: &SeqGanSchedule,
    rng: &Rng,
) -> Result<SeqGanHistory> {
    schedule.validate()?;
    let train: Vec<&[u32]> = dataset
        .artifacts_in(Split::Train)
        .map(|a| a.tokens.as_slice())
        .collect();
    let probe: Vec<&[u32]> = dataset
        .artifacts_in(Split::Valid)
        .chain(dataset.artifacts_in(Split::Test))
        .map(|a| a.tokens.as_slice())
        .collect();
    if train.is_empty() {
        return Err(CoreError::Empty {
            context: "seqgan training split".into(),
        });
    }
    let probe: Vec<&[u32]> = if probe.is_empty() { train.clone() } else { probe };

    // Generator pretraining: supervised NLL, Adagrad.
    let mut g_opt = Optimizer::adagrad(schedule.g_pretrain_lr);
    let mut g_pretrain_loss = Vec::with_capacity(schedule.g_pretrain_epochs);
    for epoch in 1..=schedule.g_pretrain_epochs {
        let mut order_rng = rng.split_index("gan-g-pre", epoch as u64);
        let order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_loss = 0.0;
        for &idx in shuffled(&order, &mut order_rng).iter() {
            let seq = with_eos(train[idx]);
            let mut drop_rng = order_rng.split_index("drop", idx as u64);
            let mut tape = Tape::new();
            let loss = generator.nll_loss(&mut tape, &seq, Some(&mut drop_rng))?;
            epoch_loss += tape.scalar_value(loss);
            tape.backward(loss)?;
            generator.params.zero_grads();
            tape.accumulate_param_grads(&mut generator.params);
            g_opt.step(&mut generator.params)?;
        }
        g_pretrain_loss.push(epoch_loss / train.len() as f64);
    }

    // Discriminator pretraining on real vs generated batches.
    let mut d_opt = Optimizer::adam(schedule.d_lr);
    let mut d_rng = rng.split("gan-d-pre");
    for _ in 0..schedule.d_pretrain_epochs {
        let real: Vec<&[u32]> = (0..schedule.batch_size)
            .map(|_| train[d_rng.below(train.len())])
            .collect();
        let fake: Vec<Vec<u32>> = (0..schedule.batch_size)
            .map(|_| sample_nonempty(generator, schedule.sample_len, &mut d_rng))
            .collect::<Result<_>>()?;
        discriminator_batch_step(discriminator, &mut d_opt, &real, &fake, &mut d_rng)?;
    }

    let mut adv_rng = rng.split("gan-adversarial");
    let pretrain_reward = probe_reward(generator, discriminator, schedule, &mut adv_rng)?;

    let mut baseline = Baseline::new(schedule.baseline_decay);
    let mut epochs = Vec::with_capacity(schedule.total_adversarial_epochs);
    for epoch in 1..=schedule.total_adversarial_epochs {
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for _ in 0..schedule.g_steps {
            let seq = sample_nonempty(generator, schedule.sample_len, &mut adv_rng)?;
            let mut q_values = Vec::with_capacity(seq.len());
            for t in 1..=seq.len() {
                q_values.push(mc_rollout_q(
                    generator,
                    discriminator,
                    &seq[..t],
                    schedule.sample_len,
                    schedule.rollout_count,
                    &mut adv_rng,
                )?);
            }
            reward_sum += q_values.last().copied().unwrap_or(0.0);
            reward_count += 1;
            reinforce_update(generator, &seq, &q_values, &mut baseline, schedule.g_lr)?;
        }
        for _ in 0..schedule.d_steps {
            let real: Vec<&[u32]> = (0..schedule.batch_size)
                .map(|_| train[adv_rng.below(train.len())])
                .collect();
            let fake: Vec<Vec<u32>> = (0..schedule.batch_size)
                .map(|_| sample_nonempty(generator, schedule.sample_len, &mut adv_rng))
                .collect::<Result<_>>()?;
            discriminator_batch_step(discriminator, &mut d_opt, &real, &fake, &mut adv_rng)?;
        }
        let disc_accuracy = probe_accuracy(generator, discriminator, &probe, schedule, &mut adv_rng)?;
        epochs.push(SeqGanEpoch {
            epoch,
            disc_accuracy,
            mean_reward: reward_sum / reward_count.max(1) as f64,
        });
    }
    Ok(SeqGanHistory {
        g_pretrain_loss,
        pretrain_reward,
        epochs,
    })
}

/// Mean discriminator score over freshly generated sequences.
fn probe_reward(
    generator: &LanguageModel,
    discriminator: &ValueDiscriminator,
    schedule: &SeqGanSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let n = schedule.batch_size;
    let mut total = 0.0;
    for _ in 0..n {
        let seq = sample_nonempty(generator, schedule.sample_len, rng)?;
        total += discriminator.score(&seq)?.0;
    }
    Ok(total / n as f64)
}

/// Held-out real-vs-generated accuracy at threshold 0.5.
fn probe_accuracy(
    generator: &LanguageModel,
    discriminator: &ValueDiscriminator,
    probe: &[&[u32]],
    schedule: &SeqGanSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for seq in probe {
        if discriminator.score(seq)?.0 > 0.5 {
            correct += 1;
        }
        total += 1;
    }
    for _ in 0..probe.len() {
        let seq = sample_nonempty(generator, schedule.sample_len, rng)?;
        if discriminator.score(&seq)?.0 <= 0.5 {
            correct += 1;
        }
        total += 1;
    }
    Ok(correct as f64 / total as f64)
}
