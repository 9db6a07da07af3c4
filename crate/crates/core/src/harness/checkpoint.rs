//! Binary Q-network checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, a UTF-8
//! `key=value` header, then every tensor as little-endian `f64` in layer
//! order (weights, bias): parameters, first moments, second moments.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::RunConfig;
use crate::error::{PatrolError, Result};
use crate::gridmap::Action;
use crate::learner::Trainer;
use crate::qnet::{OptimizerState, QParams};

pub const MAGIC: &[u8; 8] = b"PTRLQNET";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: QParams<f64>,
    pub optimizer: OptimizerState<f64>,
    pub rows: usize,
    pub cols: usize,
    pub config_hash: String,
    pub epochs: usize,
}

fn bad(msg: impl Into<String>) -> PatrolError {
    PatrolError::Checkpoint(msg.into())
}

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f64>, cfg: &RunConfig) -> Self {
        Self {
            params: trainer.params.clone(),
            optimizer: trainer.opt.clone(),
            rows: cfg.grid.rows(),
            cols: cfg.grid.cols(),
            config_hash: cfg.hash(),
            epochs: trainer.epochs_done,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.params.dims()
    }

    fn header(&self) -> String {
        let o = &self.optimizer;
        [
            ("scalar", "f64".to_string()),
            ("dims", dims_text(&self.dims())),
            ("action_order", Action::ORDER_TAG.to_string()),
            ("grid", format!("{}x{}", self.rows, self.cols)),
            ("config_hash", self.config_hash.clone()),
            ("epochs", self.epochs.to_string()),
            ("optimizer_step", o.step.to_string()),
            ("learning_rate", o.learning_rate.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("epsilon", o.epsilon.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(16 + header.len() + 24 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let (first, second) = self.optimizer.moments();
        for p in [&self.params, first, second] {
            for t in p.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header = std::str::from_utf8(&bytes[16..header_end]).map_err(|_| bad("header is not UTF-8"))?;
        let fields: BTreeMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();
        let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let int = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };

        if field("scalar")? != "f64" {
            return Err(bad(format!("scalar type {} is not supported", field("scalar")?)));
        }
        if field("action_order")? != Action::ORDER_TAG {
            return Err(bad(format!("action order `{}` differs from `{}`", field("action_order")?, Action::ORDER_TAG)));
        }
        let dims = field("dims")?
            .split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|_| bad("bad `dims`")))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = field("grid")?.split_once('x').ok_or_else(|| bad("bad `grid`"))?;
        let rows = rows.parse().map_err(|_| bad("bad `grid`"))?;
        let cols = cols.parse().map_err(|_| bad("bad `grid`"))?;

        let mut tensors = [QParams::<f64>::zeros(&dims)?, QParams::zeros(&dims)?, QParams::zeros(&dims)?];
        let need = 3 * 8 * tensors[0].num_params();
        let body = &bytes[header_end..];
        if body.len() != need {
            return Err(bad(format!("payload holds {} bytes, dims {dims:?} need {need}", body.len())));
        }
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for p in tensors.iter_mut() {
            for t in p.tensors_mut() {
                for v in t.iter_mut() {
                    *v = values.next().expect("length checked");
                }
            }
        }
        let [params, first, second] = tensors;
        if !params.is_finite() {
            return Err(PatrolError::NonFinite("checkpoint parameters"));
        }
        let optimizer = OptimizerState::from_parts(num("learning_rate")?, num("beta1")?, num("beta2")?, num("epsilon")?, int("optimizer_step")?, first, second)?;
        Ok(Self {
            params,
            optimizer,
            rows,
            cols,
            config_hash: field("config_hash")?.to_string(),
            epochs: int("epochs")? as usize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| PatrolError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| PatrolError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            PatrolError::Checkpoint(msg) => PatrolError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads and checks the network shape against `expected`.
    pub fn load_expecting(path: &Path, expected: &[usize]) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.dims() != expected {
            return Err(PatrolError::ShapeMismatch { expected: format!("{expected:?}"), found: format!("{:?}", ckpt.dims()) });
        }
        Ok(ckpt)
    }
}
