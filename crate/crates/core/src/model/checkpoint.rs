//! Binary checkpoint: magic, version, a TOML header and raw little-endian tensors.
//!
//! ```text
//! b"RNNTCKPT" | u32 version | u32 header_len | header (TOML)
//! u32 tensor_count | { u32 name_len | name | u32 rows | u32 cols | data }*
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnyModel, Model, ModelConfig, Parameter, Precision};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};

const MAGIC: &[u8; 8] = b"RNNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    precision: Precision,
    seed: u64,
    model: ModelConfig,
    vocabulary: Vec<String>,
}

/// A model plus the output vocabulary it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    /// Output symbols in id order; index 0 is blank.
    pub vocabulary: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (seed, config) = match &self.model {
            AnyModel::F32(m) => (m.seed(), m.config().clone()),
            AnyModel::F64(m) => (m.seed(), m.config().clone()),
        };
        if self.vocabulary.len() != config.vocab_size {
            return Err(Error::usage(format!(
                "vocabulary has {} entries but model outputs {}",
                self.vocabulary.len(),
                config.vocab_size
            )));
        }
        let header = toml::to_string(&Header {
            format_version: CHECKPOINT_VERSION,
            precision: self.model.precision(),
            seed,
            model: config,
            vocabulary: self.vocabulary.clone(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(header.as_bytes());
        match &self.model {
            AnyModel::F32(m) => write_tensors(&mut out, m.parameters()),
            AnyModel::F64(m) => write_tensors(&mut out, m.parameters()),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "header is not UTF-8"))?;
        let header: Header =
            toml::from_str(text).map_err(|e| Error::format(path, format!("header: {e}")))?;
        if header.vocabulary.len() != header.model.vocab_size {
            return Err(Error::format(path, "vocabulary size disagrees with model config"));
        }
        let wrap = |e: Error| Error::format(path, e.to_string());
        let model = match header.precision {
            Precision::F32 => AnyModel::F32(
                Model::from_parameters(header.model, header.seed, read_tensors(&mut r)?).map_err(wrap)?,
            ),
            Precision::F64 => AnyModel::F64(
                Model::from_parameters(header.model, header.seed, read_tensors(&mut r)?).map_err(wrap)?,
            ),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last tensor"));
        }
        Ok(Self {
            model,
            vocabulary: header.vocabulary,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_tensors<F: Real>(out: &mut Vec<u8>, params: &[Parameter<F>]) {
    put_u32(out, params.len() as u32);
    for p in params {
        put_u32(out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(out, p.value.rows() as u32);
        put_u32(out, p.value.cols() as u32);
        for &x in p.value.data() {
            x.write_le(out);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn read_tensors<F: Real>(r: &mut Reader) -> Result<Vec<Parameter<F>>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(r.path, "tensor name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(r.path, "tensor too large"))?;
        let raw = r.take(n.checked_mul(F::BYTES).ok_or_else(|| Error::format(r.path, "tensor too large"))?)?;
        let data = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
        out.push(Parameter {
            name,
            value: Matrix::from_vec(rows, cols, data)?,
        });
    }
    Ok(out)
}
