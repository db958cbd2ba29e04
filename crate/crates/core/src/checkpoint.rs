//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "D2MAVA01"
//! version    u32      FORMAT_VERSION
//! encoder    u32      EncoderKind::tag
//! config     u32 ownship_pre_width, u32 intruder_pre_width,
//!            u32 attention_width, u32 trunk count, u32 per trunk width,
//!            u32 action_count, f64 leaky_slope, u32 n_closest
//! tensors    u32 count, then per tensor:
//!            u32 name length, name bytes, u32 rank, u32 per dim,
//!            f32 data (row-major)
//! checksum   u64 FNV-1a over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::policy::{EncoderKind, NetConfig};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"D2MAVA01";
pub const FORMAT_VERSION: u32 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub params: ParamSet<f32>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Config(format!("{x} does not fit the checkpoint format")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(config: &NetConfig, params: &ParamSet<f32>) -> Result<Vec<u8>> {
    config.validate()?;
    config.check_params(params)?;
    let mut out = Vec::with_capacity(64 + 4 * params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config.encoder.tag().to_le_bytes());
    put_u32(&mut out, config.ownship_pre_width)?;
    put_u32(&mut out, config.intruder_pre_width)?;
    put_u32(&mut out, config.attention_width)?;
    put_u32(&mut out, config.trunk_widths.len())?;
    for &w in &config.trunk_widths {
        put_u32(&mut out, w)?;
    }
    put_u32(&mut out, config.action_count)?;
    out.extend_from_slice(&config.leaky_slope.to_le_bytes());
    put_u32(&mut out, config.n_closest)?;
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> std::result::Result<&'b [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> std::result::Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let encoder_tag = r.u32()?;
    let ownship_pre_width = r.len()?;
    let intruder_pre_width = r.len()?;
    let attention_width = r.len()?;
    let trunk_count = r.len()?;
    if trunk_count > r.remaining() / 4 {
        return Err(CheckpointError::Truncated);
    }
    let trunk_widths = (0..trunk_count).map(|_| r.len()).collect::<std::result::Result<Vec<_>, _>>()?;
    let action_count = r.len()?;
    let leaky_slope = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let n_closest = r.len()?;
    let count = r.len()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::LayoutMismatch("tensor name is not UTF-8".into()))?;
        let rank = r.len()?;
        if rank > r.remaining() / 4 {
            return Err(CheckpointError::Truncated);
        }
        let shape = (0..rank).map(|_| r.len()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, shape, data));
    }
    let body_end = r.pos;
    let stored = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if r.remaining() != 0 {
        return Err(CheckpointError::LayoutMismatch(format!("{} trailing bytes", r.remaining())));
    }
    let computed = fnv1a64(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let encoder = EncoderKind::from_tag(encoder_tag).ok_or(CheckpointError::UnknownEncoder(encoder_tag))?;
    let config = NetConfig {
        ownship_pre_width,
        intruder_pre_width,
        attention_width,
        trunk_widths,
        action_count,
        leaky_slope,
        encoder,
        n_closest,
    };
    config
        .validate()
        .map_err(|e| CheckpointError::LayoutMismatch(e.to_string()))?;
    let mut params = ParamSet::new();
    for (name, shape, data) in tensors {
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::LayoutMismatch(e.to_string()))?;
        params
            .insert(name, t)
            .map_err(|e| CheckpointError::LayoutMismatch(e.to_string()))?;
    }
    config
        .check_params(&params)
        .map_err(|e| CheckpointError::LayoutMismatch(e.to_string()))?;
    Ok(Checkpoint { config, params })
}

/// Writes through a temporary file and renames, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint(path: &Path, config: &NetConfig, params: &ParamSet<f32>) -> Result<()> {
    let bytes = encode_checkpoint(config, params)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_checkpoint(&bytes)?)
}
