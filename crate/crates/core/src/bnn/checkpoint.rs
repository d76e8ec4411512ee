//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BGNNCKPT" | u32 version | u64 len + JSON config | u64 layer count | layers
//! layer  := u8 tag, then
//!   1 continuous dense: tensor W
//!   2 binary dense:     tensor w_c, bit matrix θ(w_c)
//!   3 batch norm:       f64 momentum, f64 epsilon, tensors γ, β, running mean, running var
//!   4 binarize:         u64 dim
//!   5 softmax:          u64 dim
//! tensor := u64 rank, u64 extents, f64 values (row-major)
//! ```
//!
//! Bit matrices use the packed wire format of [`BitMatrix`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::arch::ArchSpec;
use super::layers::{BatchNorm, BinaryDense, ContinuousDense, Layer};
use super::network::Network;
use crate::bitcore::BitMatrix;
use crate::{RealTensor, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BGNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:02x?}")]
    BadMagic(Vec<u8>),

    #[error("checkpoint format version {found} is not supported (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint truncated at byte {offset}: {needed} more bytes needed for {what}")]
    Truncated { offset: usize, needed: usize, what: String },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checkpoint has {0} trailing bytes")]
    TrailingData(usize),
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    arch: ArchSpec,
    layers: usize,
}

const TAG_CONTINUOUS: u8 = 1;
const TAG_BINARY: u8 = 2;
const TAG_BATCH_NORM: u8 = 3;
const TAG_BINARIZE: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &RealTensor) {
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&ConfigBlock {
        arch: net.arch()?,
        layers: net.layers().len(),
    })
    .expect("config serializes");
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(&config);
    put_u64(&mut out, net.layers().len() as u64);
    for layer in net.layers() {
        match layer {
            Layer::ContinuousDense(l) => {
                out.push(TAG_CONTINUOUS);
                put_tensor(&mut out, l.weights());
            }
            Layer::BinaryDense(l) => {
                out.push(TAG_BINARY);
                put_tensor(&mut out, l.latent());
                l.binary().write_to(&mut out);
            }
            Layer::BatchNorm(l) => {
                out.push(TAG_BATCH_NORM);
                out.extend_from_slice(&l.momentum().to_le_bytes());
                out.extend_from_slice(&l.epsilon().to_le_bytes());
                for t in [l.gamma(), l.beta(), l.running_mean(), l.running_var()] {
                    put_tensor(&mut out, t);
                }
            }
            Layer::BinarizeActivation { dim } => {
                out.push(TAG_BINARIZE);
                put_u64(&mut out, *dim as u64);
            }
            Layer::SoftmaxOutput { dim } => {
                out.push(TAG_SOFTMAX);
                put_u64(&mut out, *dim as u64);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A length that must be backed by at least `unit` bytes each.
    fn count(&mut self, unit: usize, what: &str) -> Result<usize, CheckpointError> {
        let n = self.u64(what)?;
        let needed = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(unit))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{what} {n} is out of range")))?;
        if needed > self.remaining() {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: needed - self.remaining(),
                what: what.to_string(),
            });
        }
        Ok(n as usize)
    }

    fn tensor(&mut self, what: &str) -> Result<RealTensor, CheckpointError> {
        let rank = self.count(8, what)?;
        if rank == 0 || rank > 2 {
            return Err(CheckpointError::Corrupt(format!("{what}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64(what)?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| usize::try_from(d).ok().and_then(|d| acc.checked_mul(d)))
            .filter(|&n| n.checked_mul(8).is_some())
            .ok_or_else(|| CheckpointError::Corrupt(format!("{what}: shape {shape:?} overflows")))?;
        let raw = self.take(len * 8, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        RealTensor::new(shape.into_iter().map(|d| d as usize).collect(), data)
            .map_err(|e| CheckpointError::Corrupt(format!("{what}: {e}")))
    }

    fn bit_matrix(&mut self, what: &str) -> Result<BitMatrix, CheckpointError> {
        let start = self.pos;
        let rows = self.u64(what)?;
        let cols = self.u64(what)?;
        let row_bytes = cols.div_ceil(64).checked_mul(8).and_then(|w| w.checked_add(8));
        let total = row_bytes
            .and_then(|r| r.checked_mul(rows))
            .and_then(|t| usize::try_from(t).ok())
            .ok_or_else(|| CheckpointError::Corrupt(format!("{what}: shape {rows}x{cols} overflows")))?;
        self.take(total, what)?;
        let mut slice = &self.bytes[start..self.pos];
        BitMatrix::read_from(&mut slice).map_err(|e| CheckpointError::Corrupt(format!("{what}: {e}")))
    }
}

fn corrupt(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Corrupt(e.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    Ok(decode_inner(bytes)?)
}

fn decode_inner(bytes: &[u8]) -> Result<Network, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len(), "magic").map_err(|_| {
        CheckpointError::BadMagic(bytes[..bytes.len().min(CHECKPOINT_MAGIC.len())].to_vec())
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic.to_vec()));
    }
    let version = r.u32("format version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let config_len = r.count(1, "config block")?;
    let config: ConfigBlock = serde_json::from_slice(r.take(config_len, "config block")?)
        .map_err(|e| corrupt(format!("config block: {e}")))?;
    let n = r.count(9, "layer count")?;
    if n != config.layers {
        return Err(corrupt(format!("config names {} layers, file holds {n}", config.layers)));
    }
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let what = format!("layer {i}");
        let layer = match r.u8(&what)? {
            TAG_CONTINUOUS => Layer::ContinuousDense(ContinuousDense::new(r.tensor(&what)?).map_err(corrupt)?),
            TAG_BINARY => {
                let w_c = r.tensor(&what)?;
                let w_b = r.bit_matrix(&what)?;
                let layer = BinaryDense::new(w_c).map_err(corrupt)?;
                if &w_b != layer.binary() {
                    return Err(corrupt(format!("{what}: stored binary weights disagree with sign(w_c)")));
                }
                Layer::BinaryDense(layer)
            }
            TAG_BATCH_NORM => {
                let momentum = r.f64(&what)?;
                let epsilon = r.f64(&what)?;
                let gamma = r.tensor(&what)?;
                let beta = r.tensor(&what)?;
                let mean = r.tensor(&what)?;
                let var = r.tensor(&what)?;
                Layer::BatchNorm(BatchNorm::from_parts(gamma, beta, mean, var, momentum, epsilon).map_err(corrupt)?)
            }
            tag @ (TAG_BINARIZE | TAG_SOFTMAX) => {
                let dim = usize::try_from(r.u64(&what)?).map_err(corrupt)?;
                if dim == 0 {
                    return Err(corrupt(format!("{what}: zero width")));
                }
                if tag == TAG_BINARIZE {
                    Layer::BinarizeActivation { dim }
                } else {
                    Layer::SoftmaxOutput { dim }
                }
            }
            other => return Err(corrupt(format!("{what}: unknown tag {other}"))),
        };
        layers.push(layer);
    }
    if r.remaining() > 0 {
        return Err(CheckpointError::TrailingData(r.remaining()));
    }
    let net = Network::new(layers).map_err(corrupt)?;
    let arch = net.arch().map_err(corrupt)?;
    if arch != config.arch {
        return Err(corrupt(format!("config arch {} but layers describe {arch}", config.arch)));
    }
    Ok(net)
}

/// Write atomically: a sibling temporary file is renamed into place.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&std::fs::read(path)?)
}
