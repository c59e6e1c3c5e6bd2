//! Binary checkpoint codec.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "LEDCKPT1"
//! version     u32
//! entries     u32 count, then per entry:
//!               name length u16, name bytes (UTF-8),
//!               rank u8, extents u32 x rank, payload f32 x product(extents)
//! optimizer   u8 flag (0 absent, 1 present), then when present:
//!               step u64, epoch u32, lr f32, beta1 f32, beta2 f32, eps f32,
//!               entries in the same layout as above ("m/<name>", "v/<name>")
//! schedule    steps u32, beta_start f64, beta_end f64, kind u8 (0 linear, 1 cosine)
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::nn::AdamConfig;
use crate::schedule::{ScheduleConfig, ScheduleKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LEDCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(&'static str),
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub epoch: u32,
    pub config: AdamConfig,
    pub moments: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
    pub schedule: ScheduleConfig,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_entries(&mut out, &self.params);
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                out.extend_from_slice(&opt.epoch.to_le_bytes());
                for v in [opt.config.lr, opt.config.beta1, opt.config.beta2, opt.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                write_entries(&mut out, &opt.moments);
            }
        }
        let s = &self.schedule;
        out.extend_from_slice(&(s.steps as u32).to_le_bytes());
        out.extend_from_slice(&s.beta_start.to_le_bytes());
        out.extend_from_slice(&s.beta_end.to_le_bytes());
        out.push(match s.kind {
            ScheduleKind::Linear => 0,
            ScheduleKind::Cosine => 1,
        });
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let params = read_entries(&mut r)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let epoch = r.u32()?;
                let config = AdamConfig {
                    lr: r.f32()?,
                    beta1: r.f32()?,
                    beta2: r.f32()?,
                    eps: r.f32()?,
                };
                let moments = read_entries(&mut r)?;
                Some(OptimizerState {
                    step,
                    epoch,
                    config,
                    moments,
                })
            }
            _ => return Err(CheckpointError::Malformed("optimizer flag")),
        };
        let steps = r.u32()? as usize;
        let beta_start = r.f64()?;
        let beta_end = r.f64()?;
        let kind = match r.u8()? {
            0 => ScheduleKind::Linear,
            1 => ScheduleKind::Cosine,
            _ => return Err(CheckpointError::Malformed("schedule kind")),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            params,
            optimizer,
            schedule: ScheduleConfig {
                kind,
                steps,
                beta_start,
                beta_end,
            },
        })
    }
}

fn write_entries(out: &mut Vec<u8>, entries: &[(String, Tensor)]) {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_entries(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8"))?
            .into();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Malformed("extent overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Malformed("tensor entry"))?;
        entries.push((name, t));
    }
    Ok(entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
