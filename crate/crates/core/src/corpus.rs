//! Corpus ingestion: tokenization, vocabulary construction, deterministic
//! splitting, OOV substitution, and synthetic "era" corpora for the
//! trajectory experiment.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::models::{LanguageModel, EOS, RESERVED, UNK};
use crate::rng::{fnv1a, Rng};
use crate::Result;

/// Token string used for line breaks. Poem structure carries signal, so
/// newlines survive tokenization as a dedicated token.
pub const NEWLINE_TOKEN: &str = "\n";

const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Lowercased word-level tokenization. Alphanumeric runs (apostrophes
/// included) form words, punctuation becomes single-character tokens, and
/// line breaks become [`NEWLINE_TOKEN`].
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        let ch = ch.to_lowercase().next().unwrap_or(ch);
        if ch.is_alphanumeric() || ch == '\'' {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(core::mem::take(&mut word));
            }
            if ch == '\n' {
                tokens.push(NEWLINE_TOKEN.to_string());
            } else if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Inverse of [`tokenize`] on normalized text: tokens joined by single
/// spaces, newline tokens emitted bare.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut need_space = false;
    for tok in tokens {
        if tok == NEWLINE_TOKEN {
            out.push('\n');
            need_space = false;
        } else {
            if need_space {
                out.push(' ');
            }
            out.push_str(tok);
            need_space = true;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Bidirectional token ↔ id map with reserved ids 0..4 and dense real ids
/// from [`RESERVED`] upward, ordered by descending frequency (ties broken
/// lexicographically).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Build from token sequences, keeping tokens with frequency
    /// ≥ `min_count`.
    pub fn build<'a, I>(sequences: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_count == 0 {
            return Err(CoreError::InvalidArgument {
                context: "min_count must be >= 1".into(),
            });
        }
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        let mut any = false;
        for seq in sequences {
            any = true;
            for tok in seq {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(CoreError::Empty {
                context: "vocabulary build over empty dataset".into(),
            });
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(tok, n)| n >= min_count && !RESERVED_TOKENS.contains(&tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        let mut counts = vec![0u64; RESERVED as usize];
        let mut token_to_id = BTreeMap::new();
        for (i, name) in RESERVED_TOKENS.iter().enumerate() {
            token_to_id.insert(name.to_string(), i as u32);
        }
        for (tok, n) in kept {
            token_to_id.insert(tok.to_owned(), id_to_token.len() as u32);
            id_to_token.push(tok.to_owned());
            counts.push(n);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn count_of(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_reserved(id: u32) -> bool {
        id < RESERVED
    }

    /// Encode token strings; unknown tokens map to [`UNK`].
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK))
            .collect()
    }

    /// Decode ids back to token strings. Reserved ids decode to their
    /// marker strings.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token_of(id)
                    .map(|s| s.to_owned())
                    .ok_or(CoreError::TokenOutOfRange {
                        id,
                        vocab_size: self.size(),
                    })
            })
            .collect()
    }

    /// Export lines in the documented `token<TAB>id<TAB>count` format.
    pub fn export_lines(&self) -> Vec<String> {
        self.id_to_token
            .iter()
            .enumerate()
            .map(|(id, tok)| {
                let shown = if tok == NEWLINE_TOKEN { "<newline>" } else { tok };
                format!("{shown}\t{id}\t{}", self.counts[id])
            })
            .collect()
    }

    /// Rebuild from [`Vocabulary::export_lines`] output.
    pub fn from_export_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self> {
        let mut id_to_token = Vec::new();
        let mut counts = Vec::new();
        let mut token_to_id = BTreeMap::new();
        for line in lines {
            let mut parts = line.split('\t');
            let (tok, id, count) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(i), Some(c)) => (t, i, c),
                _ => {
                    return Err(CoreError::InvalidArgument {
                        context: format!("malformed vocabulary line {line:?}"),
                    })
                }
            };
            let id: usize = id.parse().map_err(|_| CoreError::InvalidArgument {
                context: format!("bad id in vocabulary line {line:?}"),
            })?;
            let count: u64 = count.parse().map_err(|_| CoreError::InvalidArgument {
                context: format!("bad count in vocabulary line {line:?}"),
            })?;
            if id != id_to_token.len() {
                return Err(CoreError::InvalidArgument {
                    context: format!("non-dense vocabulary id {id}"),
                });
            }
            let tok = if tok == "<newline>" { NEWLINE_TOKEN } else { tok };
            token_to_id.insert(tok.to_owned(), id as u32);
            id_to_token.push(tok.to_owned());
            counts.push(count);
        }
        if id_to_token.len() < RESERVED as usize {
            return Err(CoreError::InvalidArgument {
                context: "vocabulary file is missing reserved ids".into(),
            });
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            counts,
        })
    }

    /// Content fingerprint used to refuse mixing checkpoints built on
    /// different vocabularies.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for line in self.export_lines() {
            h ^= fnv1a(line.as_bytes());
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

// ---------------------------------------------------------------------------
// Artifacts and datasets
// ---------------------------------------------------------------------------

/// The unit being scored: an encoded token sequence with optional style
/// label and era tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<u32>,
    pub class_label: Option<usize>,
    pub era_tag: Option<String>,
}

impl Artifact {
    /// Unencoded artifact; call [`Artifact::encode_with`] once a
    /// vocabulary exists.
    pub fn raw(id: &str, text: &str, class_label: Option<usize>, era_tag: Option<&str>) -> Self {
        Artifact {
            id: id.to_owned(),
            raw_text: text.to_owned(),
            tokens: Vec::new(),
            class_label,
            era_tag: era_tag.map(|t| t.to_owned()),
        }
    }

    pub fn token_strings(&self) -> Vec<String> {
        tokenize(&self.raw_text)
    }

    pub fn encode_with(&mut self, vocab: &Vocabulary) {
        self.tokens = vocab.encode(&self.token_strings());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Deterministic split assignment: a pure function of the artifact id,
/// the seed and the ratios.
pub fn assign_split(artifact_id: &str, seed: u64, ratios: (f64, f64, f64)) -> Split {
    let mut bytes = Vec::with_capacity(artifact_id.len() + 8);
    bytes.extend_from_slice(artifact_id.as_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());
    let u = fnv1a(&bytes) as f64 / (u64::MAX as f64);
    let total = ratios.0 + ratios.1 + ratios.2;
    if u < ratios.0 / total {
        Split::Train
    } else if u < (ratios.0 + ratios.1) / total {
        Split::Valid
    } else {
        Split::Test
    }
}

/// The context corpus: labeled artifacts with a train/valid/test
/// assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextDataset {
    pub artifacts: Vec<Artifact>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl ContextDataset {
    /// Default 80/10/10 split ratios.
    pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

    /// Assemble a dataset; artifacts must already be encoded. Fails if
    /// any class has no training artifact.
    pub fn build(
        artifacts: Vec<Artifact>,
        class_names: Vec<String>,
        seed: u64,
        ratios: (f64, f64, f64),
    ) -> Result<Self> {
        if artifacts.is_empty() {
            return Err(CoreError::Empty {
                context: "dataset with no artifacts".into(),
            });
        }
        let num_classes = class_names.len();
        for a in &artifacts {
            if let Some(label) = a.class_label {
                if label >= num_classes {
                    return Err(CoreError::InvalidArgument {
                        context: format!("artifact {:?} has label {label} >= {num_classes}", a.id),
                    });
                }
            }
        }
        let splits: Vec<Split> = artifacts
            .iter()
            .map(|a| assign_split(&a.id, seed, ratios))
            .collect();
        let ds = ContextDataset {
            artifacts,
            splits,
            num_classes,
            class_names,
        };
        for class in 0..num_classes {
            let present = ds
                .indices(Split::Train)
                .any(|i| ds.artifacts[i].class_label == Some(class));
            if !present {
                return Err(CoreError::InvalidArgument {
                    context: format!(
                        "class {:?} has no training artifacts under this seed",
                        ds.class_names[class]
                    ),
                });
            }
        }
        Ok(ds)
    }

    pub fn indices(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.splits
            .iter()
            .enumerate()
            .filter(move |&(_, &s)| s == split)
            .map(|(i, _)| i)
    }

    pub fn artifacts_in(&self, split: Split) -> impl Iterator<Item = &Artifact> {
        self.indices(split).map(move |i| &self.artifacts[i])
    }

    /// Longest tokenized artifact, used to size convolutional inputs.
    pub fn max_len(&self) -> usize {
        self.artifacts.iter().map(|a| a.tokens.len()).max().unwrap_or(0)
    }
}

/// Token sequence with a terminal EOS, as fed to language-model training.
pub fn with_eos(tokens: &[u32]) -> Vec<u32> {
    let mut v = tokens.to_owned();
    v.push(EOS);
    v
}

// ---------------------------------------------------------------------------
// OOV substitution
// ---------------------------------------------------------------------------

/// One replacement performed by [`oov_substitute`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OovSubstitution {
    pub position: usize,
    pub original: String,
    pub replacement: String,
    pub replacement_id: u32,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return f64::NEG_INFINITY;
    }
    dot / (crate::tensor::sqrt(na) * crate::tensor::sqrt(nb))
}

/// Replace every UNK in `artifact` by the in-vocabulary token whose
/// embedding is closest (by cosine) to the embedding the surprise model
/// predicts at that position. The predicted embedding is the
/// probability-weighted average of embedding rows under the model's
/// next-token distribution; earlier substitutions feed later prefixes.
pub fn oov_substitute(
    artifact: &Artifact,
    gs: &LanguageModel,
    vocab: &Vocabulary,
) -> Result<(Artifact, Vec<OovSubstitution>)> {
    let strings = artifact.token_strings();
    let mut tokens = vocab.encode(&strings);
    let table = gs
        .params
        .by_name("embedding/table")
        .expect("language model has an embedding table");
    let dim = table.tensor.shape()[1];
    let rows = table.tensor.shape()[0];
    let mut log = Vec::new();
    for t in 0..tokens.len() {
        if tokens[t] != UNK {
            continue;
        }
        let dist = gs.next_dist(&tokens[..t])?;
        let mut predicted = vec![0.0; dim];
        for (v, &p) in dist.iter().enumerate().take(rows) {
            if p == 0.0 {
                continue;
            }
            let row = &table.tensor.values()[v * dim..(v + 1) * dim];
            for (acc, x) in predicted.iter_mut().zip(row) {
                *acc += p * x;
            }
        }
        let mut best_id = None;
        let mut best_sim = f64::NEG_INFINITY;
        for v in RESERVED as usize..vocab.size().min(rows) {
            let row = &table.tensor.values()[v * dim..(v + 1) * dim];
            let sim = cosine(row, &predicted);
            if sim > best_sim {
                best_sim = sim;
                best_id = Some(v as u32);
            }
        }
        let best_id = best_id.ok_or_else(|| CoreError::Empty {
            context: "no non-reserved tokens available for OOV substitution".into(),
        })?;
        log.push(OovSubstitution {
            position: t,
            original: strings[t].clone(),
            replacement: vocab.token_of(best_id).unwrap_or("?").to_owned(),
            replacement_id: best_id,
        });
        tokens[t] = best_id;
    }
    let mut out = artifact.clone();
    out.tokens = tokens;
    Ok((out, log))
}

// ---------------------------------------------------------------------------
// Synthetic era corpora
// ---------------------------------------------------------------------------

/// Shape of the synthetic Markov corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Word inventory size; class-preferred blocks plus a drift-preferred
    /// block must fit.
    pub vocab_words: usize,
    pub num_classes: usize,
    pub artifacts_per_class: usize,
    pub artifacts_per_era: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_words: 20,
            num_classes: 3,
            artifacts_per_class: 30,
            artifacts_per_era: 30,
            min_len: 8,
            max_len: 12,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CoreError::InvalidArgument {
                context: "synthetic corpora need >= 2 classes".into(),
            });
        }
        // One preferred block per class plus one block the drift target
        // prefers.
        if self.vocab_words < (self.num_classes + 1) * 2 {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "vocab_words {} too small for {} classes plus a drift block",
                    self.vocab_words, self.num_classes
                ),
            });
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(CoreError::InvalidArgument {
                context: "need 1 <= min_len <= max_len".into(),
            });
        }
        Ok(())
    }

    fn word(&self, i: usize) -> String {
        format!("w{i:02}")
    }
}

/// Markov sources underlying the synthetic corpora: one transition matrix
/// per context class plus the drift target every era interpolates toward.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub words: Vec<String>,
    /// `class_transitions[c][i][j]` = P(next = j | current = i) for class c.
    pub class_transitions: Vec<Vec<Vec<f64>>>,
    pub drift_transitions: Vec<Vec<f64>>,
}

impl SyntheticSource {
    /// Preferred-word block of a class; block index `num_classes` is the
    /// drift target's block.
    fn block(cfg: &SyntheticConfig, index: usize) -> (usize, usize) {
        let blocks = cfg.num_classes + 1;
        let per = cfg.vocab_words / blocks;
        let start = index * per;
        let end = if index == blocks - 1 { cfg.vocab_words } else { start + per };
        (start, end)
    }

    fn matrix_for_block(cfg: &SyntheticConfig, lo: usize, hi: usize) -> Vec<Vec<f64>> {
        let n = cfg.vocab_words;
        let span = hi - lo;
        let preferred_mass = 0.85;
        let rest = (1.0 - preferred_mass) / n as f64;
        // Half the preferred mass is spread over the block, half lands on
        // a current-word-dependent successor so sources differ in bigrams,
        // not just unigrams.
        (0..n)
            .map(|cur| {
                let successor = lo + (cur + 1) % span;
                (0..n)
                    .map(|next| {
                        let mut p = rest;
                        if (lo..hi).contains(&next) {
                            p += preferred_mass * 0.5 / span as f64;
                        }
                        if next == successor {
                            p += preferred_mass * 0.5;
                        }
                        p
                    })
                    .collect()
            })
            .collect()
    }

    pub fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let words = (0..cfg.vocab_words).map(|i| cfg.word(i)).collect();
        let class_transitions = (0..cfg.num_classes)
            .map(|c| {
                let (lo, hi) = Self::block(cfg, c);
                Self::matrix_for_block(cfg, lo, hi)
            })
            .collect();
        let (dlo, dhi) = Self::block(cfg, cfg.num_classes);
        let drift_transitions = Self::matrix_for_block(cfg, dlo, dhi);
        Ok(SyntheticSource {
            words,
            class_transitions,
            drift_transitions,
        })
    }

    /// Class matrix interpolated toward the drift target.
    pub fn drifted(&self, class: usize, drift: f64) -> Vec<Vec<f64>> {
        self.class_transitions[class]
            .iter()
            .zip(&self.drift_transitions)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (1.0 - drift) * x + drift * y)
                    .collect()
            })
            .collect()
    }

    fn sample_text(
        &self,
        cfg: &SyntheticConfig,
        matrix: &[Vec<f64>],
        rng: &mut Rng,
    ) -> String {
        let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
        let mut cur = rng.below(cfg.vocab_words);
        let mut words = Vec::with_capacity(len);
        words.push(self.words[cur].clone());
        for _ in 1..len {
            cur = rng.categorical(&matrix[cur]);
            words.push(self.words[cur].clone());
        }
        words.join(" ")
    }
}

/// A drifted corpus standing in for one historical era.
#[derive(Debug, Clone)]
pub struct EraCorpus {
    pub tag: String,
    pub drift: f64,
    pub artifacts: Vec<Artifact>,
}

/// Labeled context corpus drawn from the class sources (drift 0).
pub fn make_synthetic_context(seed: u64, cfg: &SyntheticConfig) -> Result<Vec<Artifact>> {
    let source = SyntheticSource::new(cfg)?;
    let root = Rng::new(seed).split("synthetic-context");
    let mut artifacts = Vec::new();
    for class in 0..cfg.num_classes {
        for k in 0..cfg.artifacts_per_class {
            let mut rng = root.split_index(&format!("class-{class}"), k as u64);
            let text = source.sample_text(cfg, &source.class_transitions[class], &mut rng);
            artifacts.push(Artifact::raw(
                &format!("ctx-c{class}-{k:03}"),
                &text,
                Some(class),
                Some("context"),
            ));
        }
    }
    Ok(artifacts)
}

/// Era corpora at the given drift levels. Drift 0 reproduces the context
/// distribution; drift 1 prefers the word block the context classes avoid.
pub fn make_synthetic_eras(
    seed: u64,
    drift_levels: &[f64],
    cfg: &SyntheticConfig,
) -> Result<Vec<EraCorpus>> {
    if drift_levels.len() < 2 {
        return Err(CoreError::InvalidArgument {
            context: "need at least 2 drift levels".into(),
        });
    }
    for &d in drift_levels {
        if !(0.0..=1.0).contains(&d) {
            return Err(CoreError::InvalidArgument {
                context: format!("drift {d} outside [0, 1]"),
            });
        }
    }
    let source = SyntheticSource::new(cfg)?;
    let root = Rng::new(seed).split("synthetic-eras");
    let mut eras = Vec::new();
    for (ei, &drift) in drift_levels.iter().enumerate() {
        let tag = format!("era-d{drift:.2}");
        let mut artifacts = Vec::new();
        for k in 0..cfg.artifacts_per_era {
            let class = k % cfg.num_classes;
            let mut rng = root.split_index(&format!("era-{ei}-class-{class}"), k as u64);
            let matrix = source.drifted(class, drift);
            let text = source.sample_text(cfg, &matrix, &mut rng);
            artifacts.push(Artifact::raw(
                &format!("{tag}-{k:03}"),
                &text,
                None,
                Some(&tag),
            ));
        }
        eras.push(EraCorpus {
            tag,
            drift,
            artifacts,
        });
    }
    Ok(eras)
}
