//! Binary checkpoint:
//!
//! ```text
//! "PLQ1" | u32 header_len | JSON header | online | target | adam m | adam v
//! ```
//!
//! Each array is `num_params` little-endian f32 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::{AdamState, DqnConfig, Learner};
use super::net::Architecture;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLQ1";

/// Restorable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// u128 word position as a decimal string.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed().to_vec(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let seed: [u8; 32] =
            self.seed.as_slice().try_into().map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub fingerprint: String,
    pub resolution: usize,
    pub num_params: usize,
    /// Episodes completed when the checkpoint was written.
    pub episode: u64,
    pub adam_t: u64,
    pub dqn: DqnConfig,
    pub rng: Option<RngSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub online: Vec<f32>,
    pub target: Vec<f32>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn from_learner(learner: &Learner, episode: u64, rng: Option<&ChaCha8Rng>) -> Self {
        Self {
            header: CheckpointHeader {
                fingerprint: learner.arch.fingerprint(),
                resolution: learner.arch.resolution(),
                num_params: learner.arch.num_params(),
                episode,
                adam_t: learner.adam.t,
                dqn: learner.cfg.clone(),
                rng: rng.map(RngSnapshot::capture),
            },
            online: learner.online.clone(),
            target: learner.target.clone(),
            adam: learner.adam.clone(),
        }
    }

    pub fn into_learner(self) -> Result<Learner> {
        let arch = Architecture::new(self.header.resolution)?;
        if arch.fingerprint() != self.header.fingerprint {
            return Err(Error::Checkpoint("architecture fingerprint mismatch".into()));
        }
        Ok(Learner::from_parts(arch, self.header.dqn, self.online, self.target, Some(self.adam)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.header.num_params;
        let mut out = Vec::with_capacity(8 + header.len() + 16 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for arr in [&self.online, &self.target, &self.adam.m, &self.adam.v] {
            if arr.len() != n {
                return Err(Error::Checkpoint("array length differs from header".into()));
            }
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; when `expected` is given the fingerprint must match.
    pub fn from_bytes(bytes: &[u8], expected: Option<&Architecture>) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated("checkpoint header".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(if &bytes[..3] == b"PLQ" {
                Error::VersionMismatch(format!("checkpoint version {:?}, expected 1", bytes[3] as char))
            } else {
                Error::BadMagic
            });
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| Error::Truncated("checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if let Some(arch) = expected {
            if arch.fingerprint() != header.fingerprint {
                return Err(Error::Checkpoint(format!(
                    "fingerprint mismatch: file {}, expected {}",
                    header.fingerprint,
                    arch.fingerprint()
                )));
            }
        }
        let n = header.num_params;
        let data = &bytes[8 + hlen..];
        if data.len() != 16 * n {
            return Err(if data.len() < 16 * n {
                Error::Truncated("checkpoint arrays".into())
            } else {
                Error::DimensionMismatch("trailing bytes after checkpoint arrays".into())
            });
        }
        let mut arrays = data.chunks_exact(4 * n).map(|c| {
            c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect::<Vec<f32>>()
        });
        let online = arrays.next().unwrap_or_default();
        let target = arrays.next().unwrap_or_default();
        let m = arrays.next().unwrap_or_default();
        let v = arrays.next().unwrap_or_default();
        let adam = AdamState { m, v, t: header.adam_t };
        Ok(Self { header, online, target, adam })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Architecture>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, expected)
    }
}
