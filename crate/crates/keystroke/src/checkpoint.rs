//! Binary checkpoints.
//!
//! ```text
//! magic "KSTRCKPT" | version u32
//! config_len u32 | config text (key=value lines) | sha256(config text)
//! tensor_count u32
//!   name_len u16 | name | rank u8 | dims u32 * rank | f64 LE * len
//! sha256 of every preceding byte
//! ```
//!
//! All integers are little-endian. Loading verifies the trailing checksum and
//! the stored config hash.

use std::fs;
use std::path::Path;

use keystroke_core::nn::{ModelConfig, ModelParams, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KSTRCKPT";
pub const VERSION: u32 = 1;

/// Hex sha256 of the canonical config text.
pub fn config_hash(config: &ModelConfig) -> String {
    hex::encode(Sha256::digest(config.canonical().as_bytes()))
}

/// Parses the `key=value` form written by [`ModelConfig::canonical`].
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let bad = |d: String| Error::format("model config", d);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("not key=value: {line:?}")))?;
        let int = || v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
        match k {
            "conv1_channels" => cfg.conv1_channels = int()?,
            "conv2_channels" => cfg.conv2_channels = int()?,
            "gru_hidden" => cfg.gru_hidden = int()?,
            "fc_hidden" => cfg.fc_hidden = int()?,
            "window" => cfg.window = int()?,
            "num_classes" => cfg.num_classes = int()?,
            "dropout" => cfg.dropout = v.parse().map_err(|e| bad(format!("{k}: {e}")))?,
            _ => return Err(bad(format!("unknown key {k:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_checkpoint(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let text = config.canonical();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&Sha256::digest(text.as_bytes()));
    let named = params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

/// Decodes and verifies a checkpoint.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut c = Cursor {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let stored_hash = c.take(32)?;
    if Sha256::digest(text.as_bytes()).as_slice() != stored_hash {
        return Err(Error::CorruptCheckpoint("config hash mismatch".into()));
    }
    let config = parse_model_config(text)?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?
            .to_string();
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    if c.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    let params = ModelParams::from_named(&config, tensors)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(config, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and insists it was trained with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let (config, params) = load_checkpoint(path)?;
    let (want, found) = (config_hash(expected), config_hash(&config));
    if want != found {
        return Err(Error::CheckpointMismatch { expected: want, found });
    }
    Ok(params)
}
