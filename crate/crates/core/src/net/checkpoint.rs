//! QPW1 checkpoint files: magic, config echo, every matrix in declaration
//! order as row-major f32 little-endian, and a trailing FNV-1a 64 checksum
//! of all preceding bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dilation::NetConfig;
use crate::error::{Error, Result};
use crate::net::ModelParams;
use crate::num::Scalar;

const QPW1_MAGIC: &[u8; 4] = b"QPW1";

/// Streaming FNV-1a 64-bit hash.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }

    pub(crate) fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hash: Fnv1a,
}

impl<W: Write> HashingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.hash.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    config: &NetConfig,
    params: &ModelParams<T>,
) -> Result<()> {
    params.check_config(config)?;
    let file = BufWriter::new(File::create(path)?);
    let mut w = HashingWriter {
        inner: file,
        hash: Fnv1a::new(),
    };
    w.put(QPW1_MAGIC)?;
    for v in [
        config.fixed_layers,
        config.fixed_repeats,
        config.adaptive_layers,
        config.adaptive_repeats,
        config.residual_channels,
        config.skip_channels,
        config.cycle_divisor as usize,
        config.sample_rate as usize,
        config.aux_dim,
    ] {
        w.put(&(v as u32).to_le_bytes())?;
    }
    w.put(&(config.f0_floor as f32).to_le_bytes())?;
    w.put(&(config.f0_ceil as f32).to_le_bytes())?;
    for m in params.mats() {
        for &v in &m.data {
            w.put(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    let checksum = w.hash.finish();
    w.inner.write_all(&checksum.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

/// Load a checkpoint in its native f32 representation.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetConfig, ModelParams<f32>)> {
    let path = path.as_ref();
    let fail = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 4 + 9 * 4 + 2 * 4 + 8 {
        return Err(fail("file too short"));
    }
    if &bytes[0..4] != QPW1_MAGIC {
        return Err(fail("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let mut hash = Fnv1a::new();
    hash.update(body);
    if hash.finish() != stored {
        return Err(fail("checksum mismatch"));
    }

    let mut off = 4usize;
    let mut next_u32 = |bytes: &[u8]| {
        let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        v
    };
    let fixed_layers = next_u32(body) as usize;
    let fixed_repeats = next_u32(body) as usize;
    let adaptive_layers = next_u32(body) as usize;
    let adaptive_repeats = next_u32(body) as usize;
    let residual_channels = next_u32(body) as usize;
    let skip_channels = next_u32(body) as usize;
    let cycle_divisor = next_u32(body);
    let sample_rate = next_u32(body);
    let aux_dim = next_u32(body) as usize;
    let f0_floor = f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64;
    let f0_ceil = f32::from_le_bytes(body[off + 4..off + 8].try_into().unwrap()) as f64;
    off += 8;

    let config = NetConfig {
        fixed_layers,
        fixed_repeats,
        adaptive_layers,
        adaptive_repeats,
        residual_channels,
        skip_channels,
        cycle_divisor,
        sample_rate,
        aux_dim,
        f0_floor,
        f0_ceil,
    };
    config
        .validate()
        .map_err(|e| fail(&format!("embedded config invalid: {e}")))?;

    let mut params: ModelParams<f32> = ModelParams::zeros(&config);
    let expected = crate::net::param_count(&config);
    if body.len() - off != expected * 4 {
        return Err(fail(&format!(
            "expected {} parameter bytes, found {}",
            expected * 4,
            body.len() - off
        )));
    }
    for m in params.mats_mut() {
        for v in m.data.iter_mut() {
            *v = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok((config, params))
}

/// Load a checkpoint converted into scalar type `T`.
pub fn load_checkpoint_as<T: Scalar>(path: impl AsRef<Path>) -> Result<(NetConfig, ModelParams<T>)> {
    let (config, params) = load_checkpoint(path)?;
    Ok((config, params.convert::<T>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qpw1");
        let cfg = NetConfig::preset("tiny-qpnet", 8000, 12).unwrap();
        let params: ModelParams<f32> = ModelParams::init(&cfg, 99).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qpw1");
        let cfg = NetConfig::preset("tiny-wnc", 8000, 12).unwrap();
        let params: ModelParams<f32> = ModelParams::init(&cfg, 1).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
