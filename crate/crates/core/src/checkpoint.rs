//! Binary checkpoints for a flow and, optionally, its training heads.
//!
//! Layout, little-endian: magic `CLFW`, `u32` version, `u32` C, H, W,
//! n_blocks, hidden, `f64` clamp, `u8` has-heads, `u32` projection width;
//! then per channel mix `C` `u32` permutation entries and `C` `f64` signs;
//! then every flow parameter in block order as `f64`, the head parameters
//! (projection then prediction) if present, and a CRC32 of all prior bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::heads::{Heads, PredictionHead, ProjectionHead};
use crate::tensor::Tensor;

pub const CLFW_MAGIC: [u8; 4] = *b"CLFW";
pub const CLFW_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub flow: FlowModel,
    pub heads: Option<Heads>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = &ckpt.flow.config;
    let mut buf = Vec::new();
    let put_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    buf.extend_from_slice(&CLFW_MAGIC);
    buf.extend_from_slice(&CLFW_VERSION.to_le_bytes());
    for d in [
        cfg.channels,
        cfg.height,
        cfg.width,
        cfg.n_blocks,
        cfg.hidden,
    ] {
        put_u32(&mut buf, d);
    }
    buf.extend_from_slice(&cfg.clamp.to_le_bytes());
    buf.push(ckpt.heads.is_some() as u8);
    put_u32(
        &mut buf,
        ckpt.heads.as_ref().map_or(0, |h| h.projection.output_dim()),
    );
    for mix in &ckpt.flow.mixes {
        for &p in &mix.perm {
            put_u32(&mut buf, p);
        }
        for s in &mix.sign {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    let mut params = ckpt.flow.parameters();
    if let Some(h) = &ckpt.heads {
        params.extend(h.parameters());
    }
    for p in params {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn fill(&mut self, t: &mut Tensor, what: &str) -> Result<()> {
        for v in t.data_mut() {
            *v = self.f64(what)?;
        }
        Ok(())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != CLFW_MAGIC {
        return Err(Error::BadMagic {
            expected: CLFW_MAGIC,
            found,
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")? as u32;
    if version != CLFW_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (c, h, w) = (r.u32("header")?, r.u32("header")?, r.u32("header")?);
    let (n_blocks, hidden) = (r.u32("header")?, r.u32("header")?);
    let clamp = r.f64("header")?;
    let has_heads = r.take(1, "header")?[0] != 0;
    let proj_dim = r.u32("header")?;
    if c < 2 || n_blocks == 0 || hidden == 0 || clamp.is_nan() || clamp <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "checkpoint header describes no valid flow (C={c}, blocks={n_blocks}, hidden={hidden})"
        )));
    }
    let config = FlowConfig {
        channels: c,
        height: h,
        width: w,
        n_blocks,
        hidden,
        clamp,
    };
    let mut flow = FlowModel::from_config(config, 0);
    for mix in &mut flow.mixes {
        for p in mix.perm.iter_mut() {
            *p = r.u32("permutation")?;
        }
        let mut seen = vec![false; c];
        for &p in &mix.perm {
            if p >= c || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument(
                    "checkpoint permutation is not a bijection".into(),
                ));
            }
        }
        for s in mix.sign.iter_mut() {
            *s = r.f64("signs")?;
        }
    }
    for p in flow.parameters_mut() {
        r.fill(p, "flow parameters")?;
    }
    let heads = if has_heads {
        let mut heads = Heads {
            projection: ProjectionHead::new(c, proj_dim.max(1), 0),
            prediction: PredictionHead::new(c, 0),
        };
        for p in heads.parameters_mut() {
            r.fill(p, "head parameters")?;
        }
        Some(heads)
    } else {
        None
    };
    let body_end = r.pos;
    let stored = r.u32("checksum")? as u32;
    if r.pos < bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - r.pos));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Checkpoint { flow, heads })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read(path)?)
}
