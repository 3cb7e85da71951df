//! Binary checkpoint: config, standardiser and the named tensor table.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic          8 bytes   "SSDBGMHA"
//! version        u32       1
//! gru_convention u8        1 = h' = z⊙h + (1−z)⊙h̃, reset applied before U_h
//! pooling        u8        1 = mean over time
//! encoding       u8        0 = features as sequence
//! reserved       u8        0
//! input_dim, hidden, heads, classes, seq_len      u32 × 5
//! l2_lambda, layer_norm_eps                       f64 × 2
//! seed                                            u64
//! n_features     u32, then mean f64 × n, std f64 × n
//! n_tensors      u32, then per tensor:
//!     name_len u16, name (UTF-8), rows u32, cols u32, values f64 × rows·cols
//! checksum       u64       FNV-1a over every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::data::Standardizer;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSDBGMHA";
pub const CHECKPOINT_VERSION: u32 = 1;

const GRU_CONVENTION: u8 = 1;
const POOLING_MEAN: u8 = 1;
const ENCODING_FEATURES: u8 = 0;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} does not fit the checkpoint format")))
}

/// Serialises a checkpoint into a byte vector.
pub fn encode_checkpoint(params: &ModelParams, cfg: &ModelConfig, standardizer: &Standardizer) -> Result<Vec<u8>> {
    params.check_shapes(cfg)?;
    if standardizer.mean.len() != standardizer.std.len() {
        return Err(Error::InvalidInput("standardizer mean/std lengths differ".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&[GRU_CONVENTION, POOLING_MEAN, ENCODING_FEATURES, 0]);
    for (v, what) in [
        (cfg.input_dim, "input_dim"),
        (cfg.hidden, "hidden"),
        (cfg.heads, "heads"),
        (cfg.classes, "classes"),
        (cfg.seq_len, "seq_len"),
    ] {
        buf.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.l2_lambda.to_le_bytes());
    buf.extend_from_slice(&cfg.layer_norm_eps.to_le_bytes());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());

    buf.extend_from_slice(&u32_of(standardizer.mean.len(), "feature count")?.to_le_bytes());
    for v in standardizer.mean.iter().chain(&standardizer.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let layout = params.layout();
    buf.extend_from_slice(&u32_of(layout.len(), "tensor count")?.to_le_bytes());
    for (info, t) in layout.iter().zip(params.tensors()) {
        let name = info.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::InvalidInput("tensor name too long".into()))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&u32_of(t.rows(), "rows")?.to_le_bytes());
        buf.extend_from_slice(&u32_of(t.cols(), "cols")?.to_le_bytes());
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &ModelParams,
    cfg: &ModelConfig,
    standardizer: &Standardizer,
) -> Result<()> {
    let bytes = encode_checkpoint(params, cfg, standardizer)?;
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io("<checkpoint stream>", e))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    cfg: &ModelConfig,
    standardizer: &Standardizer,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, cfg, standardizer)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses and validates a checkpoint held in memory.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, ModelConfig, Standardizer)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 8 {
        return Err(Error::CorruptCheckpoint("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or modified file)".into()));
    }

    let conv = c.u8("gru convention")?;
    let pooling = c.u8("pooling")?;
    let encoding = c.u8("encoding")?;
    let _reserved = c.u8("reserved")?;
    if conv != GRU_CONVENTION || pooling != POOLING_MEAN || encoding != ENCODING_FEATURES {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported architecture flags (gru {conv}, pooling {pooling}, encoding {encoding})"
        )));
    }

    let cfg = ModelConfig {
        input_dim: c.u32("input_dim")? as usize,
        hidden: c.u32("hidden")? as usize,
        heads: c.u32("heads")? as usize,
        classes: c.u32("classes")? as usize,
        seq_len: c.u32("seq_len")? as usize,
        l2_lambda: c.f64("l2_lambda")?,
        layer_norm_eps: c.f64("layer_norm_eps")?,
        seed: c.u64("seed")?,
    };
    cfg.validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("invalid stored config: {e}")))?;

    let n_features = c.u32("feature count")? as usize;
    if n_features.saturating_mul(16) > bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("implausible feature count {n_features}")));
    }
    let mut mean = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        mean.push(c.f64("standardizer mean")?);
    }
    let mut std = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        std.push(c.f64("standardizer std")?);
    }

    let mut params = ModelParams::zeros(&cfg)?;
    let layout = params.layout();
    let count = c.u32("tensor count")? as usize;
    if count != layout.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{count} tensors stored, config implies {}",
            layout.len()
        )));
    }
    for (info, t) in layout.iter().zip(params.tensors_mut()) {
        let len = c.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "tensor name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        if name != info.name {
            return Err(Error::CorruptCheckpoint(format!("expected tensor `{}`, found `{name}`", info.name)));
        }
        let shape = (c.u32("rows")? as usize, c.u32("cols")? as usize);
        if shape != info.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor `{name}` has shape {shape:?}, config implies {:?}",
                info.shape
            )));
        }
        for v in t.as_mut_slice() {
            *v = c.f64(name)?;
        }
    }
    if c.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} unexpected trailing bytes",
            body.len() - c.pos
        )));
    }
    Ok((params, cfg, Standardizer { mean, std }))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, ModelConfig, Standardizer)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn fixture() -> (ModelParams, ModelConfig, Standardizer) {
        let cfg = ModelConfig {
            hidden: 6,
            ..Default::default()
        };
        let std = Standardizer {
            mean: (0..8).map(|i| i as f64 * 1.5).collect(),
            std: (0..8).map(|i| 1.0 + i as f64).collect(),
        };
        (init_params(&cfg).unwrap(), cfg, std)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (p, cfg, std) = fixture();
        let bytes = encode_checkpoint(&p, &cfg, &std).unwrap();
        let (p2, cfg2, std2) = read_checkpoint(&bytes).unwrap();
        assert_eq!((&p, &cfg, &std), (&p2, &cfg2, &std2));
        assert_eq!(bytes, encode_checkpoint(&p2, &cfg2, &std2).unwrap());
        assert_eq!(&bytes[..8], b"SSDBGMHA");
    }

    #[test]
    fn every_truncation_is_rejected() {
        let (p, cfg, std) = fixture();
        let bytes = encode_checkpoint(&p, &cfg, &std).unwrap();
        for cut in [0, 4, 8, 11, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            match read_checkpoint(&bytes[..cut]) {
                Err(Error::CorruptCheckpoint(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_bump_rejected() {
        let (p, cfg, std) = fixture();
        let mut bytes = encode_checkpoint(&p, &cfg, &std).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = read_checkpoint(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, expected: 1 }));
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn flipped_byte_detected() {
        let (p, cfg, std) = fixture();
        let mut bytes = encode_checkpoint(&p, &cfg, &std).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(read_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
    }
}
