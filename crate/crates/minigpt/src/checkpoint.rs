//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MGPT"  u32 version (= 1)
//! u32 metadata length, UTF-8 JSON metadata
//! u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 rank, u64 dims[rank], f32 data (row-major)
//! ```
//!
//! Tensors appear in parameter enumeration order. A tied head weight is stored
//! once, as `tok_emb`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Gpt, GptParams, ModelConfig};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;

pub const MAGIC: [u8; 4] = *b"MGPT";
pub const VERSION: u32 = 1;

/// Everything needed to rebuild a model and talk to it in characters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Training step at which the parameters were captured.
    pub step: usize,
    pub val_loss: Option<f64>,
    pub params: GptParams<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    block_size: usize,
    vocab_size: usize,
    n_layer: usize,
    n_head: usize,
    n_embd: usize,
    dropout: f64,
    tie_weights: bool,
    vocab: String,
    step: usize,
    val_loss: Option<f64>,
}

impl Metadata {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            block_size: self.block_size,
            vocab_size: self.vocab_size,
            n_layer: self.n_layer,
            n_head: self.n_head,
            n_embd: self.n_embd,
            dropout: self.dropout,
            tie_weights: self.tie_weights,
        }
    }
}

impl Checkpoint {
    pub fn new(model: &Gpt<f32>, vocab: &Vocabulary, step: usize, val_loss: Option<f64>) -> Self {
        Checkpoint { config: model.config.clone(), vocab: vocab.clone(), step, val_loss, params: model.params.clone() }
    }

    pub fn model(&self) -> Gpt<f32> {
        Gpt { config: self.config.clone(), params: self.params.clone() }
    }

    pub fn into_model(self) -> Gpt<f32> {
        Gpt { config: self.config, params: self.params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let meta = Metadata {
            block_size: c.block_size,
            vocab_size: c.vocab_size,
            n_layer: c.n_layer,
            n_head: c.n_head,
            n_embd: c.n_embd,
            dropout: c.dropout,
            tie_weights: c.tie_weights,
            vocab: self.vocab.chars_string(),
            step: self.step,
            val_loss: self.val_loss,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let tensors = self.params.tensors();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.param_count() + 64 * tensors.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for ((name, _), t) in c.param_layout().iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes, None)
    }

    /// Like [`Checkpoint::from_bytes`], but fails on a config mismatch before
    /// reading any tensor.
    pub fn from_bytes_expecting(bytes: &[u8], expected: &ModelConfig) -> Result<Self> {
        Self::decode(bytes, Some(expected))
    }

    fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let config = meta.config();
        config.validate().map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let vocab =
            Vocabulary::from_chars(&meta.vocab).map_err(|e| CheckpointError::Metadata(format!("vocabulary: {e}")))?;
        if vocab.size() != config.vocab_size {
            return Err(CheckpointError::Metadata(format!(
                "vocabulary has {} symbols but vocab_size is {}",
                vocab.size(),
                config.vocab_size
            ))
            .into());
        }
        if let Some(want) = expected {
            if want != &config {
                return Err(CheckpointError::ConfigMismatch(format!("file has {config:?}, expected {want:?}")).into());
            }
        }

        let layout = config.param_layout();
        let count = r.u32("tensor count")? as usize;
        if count != layout.len() {
            return Err(CheckpointError::TensorLayout {
                expected: format!("{} tensors", layout.len()),
                found: format!("{count} tensors"),
            }
            .into());
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in &layout {
            let name_len = r.u16(&format!("name length of {name}"))? as usize;
            let found = String::from_utf8_lossy(r.take(name_len, &format!("name of {name}"))?).into_owned();
            let rank = r.u8(&format!("rank of {name}"))? as usize;
            let dims =
                (0..rank).map(|_| r.u64(&format!("dims of {name}")).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &found != name || &dims != shape {
                return Err(CheckpointError::TensorLayout {
                    expected: format!("{name} {shape:?}"),
                    found: format!("{found} {dims:?}"),
                }
                .into());
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(4 * numel, &format!("data of {name}"))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            tensors.push(Tensor::new(&dims, data)?);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
        }
        let params = GptParams::from_tensors(&config, tensors)?;
        Ok(Checkpoint { config, vocab, step: meta.step, val_loss: meta.val_loss, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?)
    }

    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        Self::from_bytes_expecting(&read(path)?, expected)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated { what: what.to_string() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
