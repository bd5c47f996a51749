//! Single-file model artifact.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PGBK" | version: u32 | sha256(body): [u8; 32] | body_len: u64 | body
//! body    = section*
//! section = name_len: u16 | name | payload_len: u64 | payload
//! ```
//!
//! Sections `config`, `vocab`, `answers`, `extractor` and `pretrained` hold
//! JSON. Section `tensors` holds `count: u32` followed by, per tensor,
//! `name_len: u16 | name | ndim: u8 | dims: u32 * ndim | f32 * prod(dims)`
//! in row-major order. Unknown sections are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, Vocab, VqaModel};
use crate::features::ExtractorSpec;
use crate::finetune::AnswerSpace;
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"PGBK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8;

/// Provenance of externally converted pretrained weights, if any.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainedInfo {
    pub source: Option<String>,
}

/// A trained model bound to the vocabulary, answer space and extractor
/// settings it was trained with.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub model: VqaModel,
    pub vocab: Vocab,
    pub answers: AnswerSpace,
    pub extractor: ExtractorSpec,
    pub pretrained: PretrainedInfo,
}

struct Writer(Vec<u8>);

impl Writer {
    fn section(&mut self, name: &str, payload: &[u8]) {
        self.0.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.0.extend_from_slice(name.as_bytes());
        self.0.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.0.extend_from_slice(payload);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptArtifact(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, ModelError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("section name is not UTF-8"))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_tensors(model: &VqaModel) -> Vec<u8> {
    let params = model.params();
    let mut out = Vec::with_capacity(params.n_scalars() * 4 + params.len() * 64);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, value) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(2);
        out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn decode_tensors(payload: &[u8]) -> Result<Vec<(String, Array2<f64>)>, ModelError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.name()?;
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(corrupt(format!("tensor `{name}` has {ndim} dimensions"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| corrupt("tensor too large"))?;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let arr = Array2::from_shape_vec((rows, cols), values).map_err(|e| corrupt(e.to_string()))?;
        out.push((name, arr));
    }
    if !r.done() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    Ok(out)
}

impl ModelArtifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut body = Writer(Vec::new());
        body.section("config", &serde_json::to_vec(self.model.config())?);
        body.section("vocab", &serde_json::to_vec(&self.vocab)?);
        body.section("answers", &serde_json::to_vec(&self.answers)?);
        body.section("extractor", &serde_json::to_vec(&self.extractor)?);
        body.section("pretrained", &serde_json::to_vec(&self.pretrained)?);
        body.section("tensors", &encode_tensors(&self.model));
        let body = body.0;

        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&body));
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("missing PGBK magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        let checksum = r.take(32)?;
        let body_len = r.u64()? as usize;
        let body = r.take(body_len)?;
        if !r.done() {
            return Err(corrupt("trailing bytes after body"));
        }
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }

        let mut sections = BTreeMap::new();
        let mut r = Reader { buf: body, pos: 0 };
        while !r.done() {
            let name = r.name()?;
            let len = r.u64()? as usize;
            sections.insert(name, r.take(len)?);
        }
        let section = |name: &str| sections.get(name).copied().ok_or_else(|| corrupt(format!("missing `{name}` section")));
        let config: ModelConfig = serde_json::from_slice(section("config")?)?;
        let vocab: Vocab = serde_json::from_slice(section("vocab")?)?;
        let answers: AnswerSpace = serde_json::from_slice(section("answers")?)?;
        let extractor: ExtractorSpec = serde_json::from_slice(section("extractor")?)?;
        let pretrained: PretrainedInfo = match sections.get("pretrained") {
            Some(p) => serde_json::from_slice(p)?,
            None => PretrainedInfo::default(),
        };
        if vocab.len() != config.vocab_size {
            return Err(corrupt("vocabulary size does not match the config"));
        }
        let tensors = decode_tensors(section("tensors")?)?;
        let model = VqaModel::with_params(config, answers.len(), tensors)?;
        Ok(Self { model, vocab, answers, extractor, pretrained })
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<(), ModelError> {
    write_atomic(path, &artifact.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, ModelError> {
    ModelArtifact::from_bytes(&fs::read(path)?)
}
