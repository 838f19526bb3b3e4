//! `SDFT1` binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            5 bytes  "SDFT1"
//! format_version   u32
//! schedule family  u8       0 = linear, 1 = cosine
//! horizon          u32
//! beta_start       f64
//! beta_end         f64
//! input_dim        u32
//! time_embed_dim   u32
//! hidden count     u32
//! hidden dims      u32 × hidden count
//! iteration        u64
//! seed             u64
//! mode             u8       0 = scratch, 1 = naive, 2 = sdft
//! parameter count  u64
//! parameters       f32 × parameter count
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{DenoiserModel, ModelConfig};
use crate::schedule::{ScheduleFamily, ScheduleParams};
use crate::train::TrainMode;

pub const MAGIC: &[u8; 5] = b"SDFT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleParams,
    pub model: ModelConfig,
    pub parameters: Vec<f32>,
    pub iteration: u64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Checkpoint {
    /// Rounds the parameters to `f32` (nearest, ties to even).
    pub fn from_model(
        model: &DenoiserModel,
        schedule: ScheduleParams,
        iteration: u64,
        seed: u64,
        mode: TrainMode,
    ) -> Self {
        Self {
            schedule,
            model: model.config().clone(),
            parameters: model.flat_parameters().iter().map(|&v| v as f32).collect(),
            iteration,
            seed,
            mode,
        }
    }

    /// Trainable model with parameters widened back to `f64`.
    pub fn to_model(&self) -> Result<DenoiserModel> {
        let flat: Vec<f64> = self.parameters.iter().map(|&v| f64::from(v)).collect();
        DenoiserModel::from_flat(self.model.clone(), &flat)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.parameters.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match self.schedule.family {
            ScheduleFamily::Linear => 0,
            ScheduleFamily::Cosine => 1,
        });
        out.extend_from_slice(&(self.schedule.horizon as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        out.extend_from_slice(&(self.model.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.model.time_embed_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.model.hidden_dims.len() as u32).to_le_bytes());
        for &h in &self.model.hidden_dims {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.mode.tag());
        out.extend_from_slice(&(self.parameters.len() as u64).to_le_bytes());
        for p in &self.parameters {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Incompatible("not an SDFT1 checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let family = match r.u8()? {
            0 => ScheduleFamily::Linear,
            1 => ScheduleFamily::Cosine,
            other => return Err(Error::Incompatible(format!("unknown schedule family tag {other}"))),
        };
        let schedule = ScheduleParams {
            family,
            horizon: r.u32()? as usize,
            beta_start: r.f64()?,
            beta_end: r.f64()?,
        };
        let input_dim = r.u32()? as usize;
        let time_embed_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > r.remaining() / 4 {
            return Err(Error::Incompatible(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden_dims = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let model = ModelConfig {
            input_dim,
            hidden_dims,
            time_embed_dim,
        };
        model.validate()?;
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let mode = TrainMode::from_tag(r.u8()?)
            .ok_or_else(|| Error::Incompatible("unknown training mode tag".into()))?;
        let count = r.u64()?;
        let expected = model.parameter_count() as u64;
        if count != expected {
            return Err(Error::Incompatible(format!(
                "parameter count {count} does not match {expected} implied by the model dimensions"
            )));
        }
        if (r.remaining() as u64) != count * 4 {
            return Err(Error::Incompatible(format!(
                "parameter block holds {} bytes, expected {}",
                r.remaining(),
                count * 4
            )));
        }
        let parameters = r
            .take(r.remaining())?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            schedule,
            model,
            parameters,
            iteration,
            seed,
            mode,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Incompatible(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
