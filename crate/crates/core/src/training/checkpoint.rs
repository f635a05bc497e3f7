//! Checkpoint files: one line of JSON header followed by the raw
//! little-endian parameter blocks in canonical-name order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{DenseMatrix, ParameterStore, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Header line of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    pub dev_bleu: Option<f64>,
    /// Element type of the blocks, `"f32"` or `"f64"`.
    pub dtype: String,
    pub params: Vec<ParamInfo>,
    pub src_vocab: Vec<String>,
    pub tgt_vocab: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub model: Model<F>,
    pub epoch: usize,
    pub dev_bleu: Option<f64>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl<F: Real> Checkpoint<F> {
    pub fn header(&self) -> CheckpointHeader {
        let store = &self.model.store;
        CheckpointHeader {
            config: self.model.config.clone(),
            epoch: self.epoch,
            dev_bleu: self.dev_bleu,
            dtype: F::DTYPE.to_owned(),
            params: store
                .ids()
                .map(|id| {
                    let (rows, cols) = store.value(id).shape();
                    ParamInfo {
                        name: store.name(id).to_owned(),
                        rows,
                        cols,
                    }
                })
                .collect(),
            src_vocab: self.src_vocab.tokens().to_vec(),
            tgt_vocab: self.tgt_vocab.tokens().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header()).expect("header serialises");
        out.push(b'\n');
        for v in self.model.store.values() {
            for &x in v.as_slice() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, converting its blocks to `F` if needed.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, body) = split_header(bytes, path)?;
        let store: ParameterStore<F> = match header.dtype.as_str() {
            "f32" => read_blocks::<f32>(&header, body, path)?.cast(),
            "f64" => read_blocks::<f64>(&header, body, path)?.cast(),
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: 0,
                    message: format!("unknown dtype {other:?}"),
                })
            }
        };
        let model = Model::from_store(header.config, store)?;
        Ok(Self {
            model,
            epoch: header.epoch,
            dev_bleu: header.dev_bleu,
            src_vocab: Vocabulary::from_tokens(header.src_vocab)?,
            tgt_vocab: Vocabulary::from_tokens(header.tgt_vocab)?,
        })
    }
}

fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(CheckpointHeader, &'a [u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        message: "missing header line".into(),
    })?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.column().saturating_sub(1) as u64,
        message: e.to_string(),
    })?;
    Ok((header, &bytes[nl + 1..]))
}

/// Reads only the header of a checkpoint file.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_header(&bytes, path)?.0)
}

fn read_blocks<G: Real>(header: &CheckpointHeader, body: &[u8], path: &Path) -> Result<ParameterStore<G>> {
    let body_start = serde_json::to_vec(header).map_or(0, |h| h.len() + 1) as u64;
    let mut store = ParameterStore::new();
    let mut pos = 0usize;
    for p in &header.params {
        let n = p.rows * p.cols;
        let end = pos + n * G::BYTES;
        if end > body.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: body_start + body.len() as u64,
                message: format!("truncated block for {}", p.name),
            });
        }
        let data = body[pos..end].chunks_exact(G::BYTES).map(G::read_le).collect();
        store.insert(p.name.clone(), DenseMatrix::from_vec(p.rows, p.cols, data)?)?;
        pos = end;
    }
    if pos != body.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: body_start + pos as u64,
            message: format!("{} trailing bytes after the last block", body.len() - pos),
        });
    }
    Ok(store)
}
