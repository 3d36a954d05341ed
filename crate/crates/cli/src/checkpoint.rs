//! Versioned binary model checkpoints.
//!
//! Layout: magic `DCKP`, u16 version, u32 JSON header length, JSON header
//! (role, architecture kind and config, vocabulary fingerprint, seed),
//! then each named parameter as shape plus little-endian 64-bit floats.
//! Round-trips are bit-exact.

use std::path::Path;

use anyhow::{bail, Context, Result};
use creativity_core::models::{
    CnnConfig, LanguageModel, LmConfig, ModelRole, NoveltyClassifier, ValueDiscriminator,
};
use creativity_core::tensor::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"DCKP";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchConfig {
    Lm(LmConfig),
    Cnn(CnnConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub role: String,
    #[serde(flatten)]
    pub arch: ArchConfig,
    /// Fingerprint of the vocabulary the model was trained against.
    pub vocab_fingerprint: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = serde_json::to_vec(&checkpoint.header)?;
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    put_u32(&mut out, checkpoint.params.len() as u32);
    for p in checkpoint.params.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.push(p.tensor.shape().len() as u8);
        for &d in p.tensor.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            bail!("truncated checkpoint");
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!("{}: not a checkpoint file (bad magic)", path.display());
    }
    let version = r.u16()?;
    if version != VERSION {
        bail!("{}: unsupported checkpoint version {version}", path.display());
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
        .with_context(|| format!("{}: malformed checkpoint header", path.display()))?;
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .context("non-UTF8 parameter name")?
            .to_owned();
        let trainable = r.u8()? != 0;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, values).map_err(anyhow::Error::new)?;
        params.add(&name, tensor, trainable).map_err(anyhow::Error::new)?;
    }
    if r.pos != data.len() {
        bail!("{}: trailing bytes after checkpoint payload", path.display());
    }
    Ok(Checkpoint { header, params })
}

// -- typed accessors --------------------------------------------------------

impl Checkpoint {
    pub fn new_lm(
        role: ModelRole,
        model: &LanguageModel,
        vocab_fingerprint: u64,
        seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                role: role.as_str().to_owned(),
                arch: ArchConfig::Lm(model.config.clone()),
                vocab_fingerprint,
                seed,
            },
            params: model.params.clone(),
        }
    }

    pub fn new_cnn(
        role: ModelRole,
        config: &CnnConfig,
        params: &ParamSet,
        vocab_fingerprint: u64,
        seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                role: role.as_str().to_owned(),
                arch: ArchConfig::Cnn(config.clone()),
                vocab_fingerprint,
                seed,
            },
            params: params.clone(),
        }
    }

    pub fn into_language_model(self) -> Result<LanguageModel> {
        match self.header.arch {
            ArchConfig::Lm(config) => Ok(LanguageModel {
                config,
                params: self.params,
            }),
            ArchConfig::Cnn(_) => bail!(
                "checkpoint role {} holds a convolutional model, expected a language model",
                self.header.role
            ),
        }
    }

    pub fn into_discriminator(self) -> Result<ValueDiscriminator> {
        match self.header.arch {
            ArchConfig::Cnn(ref config)
                if config.head != creativity_core::models::HeadKind::Sigmoid =>
            {
                bail!(
                    "checkpoint role {} has a softmax head, expected a sigmoid discriminator",
                    self.header.role
                )
            }
            ArchConfig::Cnn(config) => Ok(ValueDiscriminator {
                cnn: creativity_core::models::CnnModel {
                    config,
                    params: self.params,
                },
            }),
            ArchConfig::Lm(_) => bail!(
                "checkpoint role {} holds a language model, expected a discriminator",
                self.header.role
            ),
        }
    }

    pub fn into_classifier(self) -> Result<NoveltyClassifier> {
        match self.header.arch {
            ArchConfig::Cnn(ref config)
                if config.head == creativity_core::models::HeadKind::Sigmoid =>
            {
                bail!(
                    "checkpoint role {} has a sigmoid head, expected a softmax classifier",
                    self.header.role
                )
            }
            ArchConfig::Cnn(config) => Ok(NoveltyClassifier {
                cnn: creativity_core::models::CnnModel {
                    config,
                    params: self.params,
                },
            }),
            ArchConfig::Lm(_) => bail!(
                "checkpoint role {} holds a language model, expected a classifier",
                self.header.role
            ),
        }
    }
}
