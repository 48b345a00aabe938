//! Binary checkpoint format: magic, version, config echo, vocabulary
//! hashes, then every parameter array in declared order as little-endian
//! f32. Save → load → save reproduces identical bytes.

use crate::error::{CokeError, Result};
use crate::kg::Vocabulary;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"COKE";
const VERSION: u32 = 1;

/// Digest over the ordered entity and relation name lists.
pub fn vocab_hash(vocab: &Vocabulary) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for name in vocab.entity_names() {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    hasher.update([0xffu8]);
    for name in vocab.relation_names() {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize().into()
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CokeError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn serialize(params: &ModelParams<f32>, vocab_digest: [u8; 32]) -> Vec<u8> {
    let cfg = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u64(&mut out, cfg.blocks as u64);
    push_u64(&mut out, cfg.heads as u64);
    push_u64(&mut out, cfg.hidden_size as u64);
    push_u64(&mut out, cfg.ffn_size as u64);
    push_u64(&mut out, cfg.max_seq_len as u64);
    push_f64(&mut out, cfg.dropout);
    push_f64(&mut out, cfg.label_smoothing);
    push_u64(&mut out, cfg.entity_count as u64);
    push_u64(&mut out, cfg.relation_count as u64);
    out.extend_from_slice(&vocab_digest);
    push_u64(&mut out, params.param_count() as u64);
    params.for_each(|t| {
        push_u64(&mut out, t.numel() as u64);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<(ModelParams<f32>, [u8; 32])> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CokeError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CokeError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config = ModelConfig {
        blocks: r.u64()? as usize,
        heads: r.u64()? as usize,
        hidden_size: r.u64()? as usize,
        ffn_size: r.u64()? as usize,
        max_seq_len: r.u64()? as usize,
        dropout: r.f64()?,
        label_smoothing: r.f64()?,
        entity_count: r.u64()? as usize,
        relation_count: r.u64()? as usize,
    };
    let mut digest = [0u8; 32];
    digest.copy_from_slice(r.take(32)?);
    let declared_total = r.u64()? as usize;
    let mut params = ModelParams::<f32>::zeros(config)?;
    if params.param_count() != declared_total {
        return Err(CokeError::Checkpoint(format!(
            "parameter total {} does not match config-implied {}",
            declared_total,
            params.param_count()
        )));
    }
    let mut failure = None;
    params.for_each_mut(|t: &mut Tensor<f32>| {
        if failure.is_some() {
            return;
        }
        let read = (|| -> Result<()> {
            let numel = r.u64()? as usize;
            if numel != t.numel() {
                return Err(CokeError::Checkpoint(format!(
                    "array length {} does not match expected {}",
                    numel,
                    t.numel()
                )));
            }
            let raw = r.take(numel * 4)?;
            for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            Ok(())
        })();
        if let Err(e) = read {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.pos != bytes.len() {
        return Err(CokeError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((params, digest))
}

pub fn save(path: &Path, params: &ModelParams<f32>, vocab_digest: [u8; 32]) -> Result<()> {
    std::fs::write(path, serialize(params, vocab_digest))
        .map_err(|e| CokeError::io(path.display().to_string(), e))
}

/// Load a checkpoint; when a vocabulary is supplied, its hash must match.
pub fn load(path: &Path, expect_vocab: Option<&Vocabulary>) -> Result<ModelParams<f32>> {
    let bytes =
        std::fs::read(path).map_err(|e| CokeError::io(path.display().to_string(), e))?;
    let (params, digest) = deserialize(&bytes)?;
    if let Some(vocab) = expect_vocab {
        if vocab_hash(vocab) != digest {
            return Err(CokeError::Checkpoint(
                "checkpoint was trained on a different vocabulary".into(),
            ));
        }
    }
    Ok(params)
}
