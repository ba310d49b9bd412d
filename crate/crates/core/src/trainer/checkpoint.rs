//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HALECKPT" | u32 version | u64 config length | config JSON
//! | u64 epoch | f64 elapsed seconds | f64 best validation MRR (NaN if none)
//! | u32 block count | per block: u64 rows, u64 cols, rows*cols f64
//! | 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scoring::{Block, ParameterSet, Table};

use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HALECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub parameters: ParameterSet,
    pub config: TrainConfig,
    pub epoch: usize,
    pub elapsed_seconds: f64,
    pub best_validation_mrr: Option<f64>,
}

impl Checkpoint {
    /// Fails unless the parameters fit a graph of the given size under the
    /// embedded model.
    pub fn check_compatible(&self, n_entities: usize, n_relations: usize) -> Result<()> {
        self.parameters.check_shapes(&self.config.model)?;
        let (e, r) = (self.parameters.n_entities(), self.parameters.n_relations());
        if e != n_entities || r != n_relations {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {e} entities and {r} relations, data has {n_entities} and {n_relations}"
            )));
        }
        Ok(())
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&ck.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(ck.epoch as u64).to_le_bytes());
    out.extend_from_slice(&ck.elapsed_seconds.to_le_bytes());
    out.extend_from_slice(&ck.best_validation_mrr.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&(Block::ALL.len() as u32).to_le_bytes());
    for b in Block::ALL {
        let t = ck.parameters.block(b);
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let n = r.len()?;
    let config: TrainConfig = serde_json::from_slice(r.take(n)?)?;
    let epoch = r.len()?;
    let elapsed_seconds = r.f64()?;
    let best = r.f64()?;
    let n_blocks = r.u32()? as usize;
    if n_blocks != Block::ALL.len() {
        return Err(Error::Format(format!(
            "expected {} blocks, found {n_blocks}",
            Block::ALL.len()
        )));
    }
    let mut parameters = ParameterSet::zeros(0, 0, 0);
    for b in Block::ALL {
        let rows = r.len()?;
        let cols = r.len()?;
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Format("block size overflows".into()))?;
        let data = r
            .take(count)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *parameters.block_mut(b) = Table::from_vec(rows, cols, data)?;
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    parameters.check_shapes(&config.model)?;
    Ok(Checkpoint {
        parameters,
        config,
        epoch,
        elapsed_seconds,
        best_validation_mrr: (!best.is_nan()).then_some(best),
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
