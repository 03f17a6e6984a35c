//! Minimal RIFF/WAVE reader and writer, restricted to mono 16-bit PCM.
//!
//! Amplitudes map to PCM by `round(x * 32768)` clamped to i16 and back by
//! division by 32768.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Waveform;

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let data_len = (w.samples.len() * 2) as u32;
    let byte_rate = w.sample_rate * 2;

    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&w.sample_rate.to_le_bytes())?;
    out.write_all(&byte_rate.to_le_bytes())?;
    out.write_all(&2u16.to_le_bytes())?; // block align
    out.write_all(&16u16.to_le_bytes())?; // bits per sample
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for &s in &w.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let fail = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut rd = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    rd.read_exact(&mut head)?;
    if &head[0..4] != b"RIFF" || &head[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }

    let mut sample_rate = 0u32;
    let mut samples: Option<Vec<f32>> = None;
    let mut chunk_head = [0u8; 8];
    while rd.read_exact(&mut chunk_head).is_ok() {
        let id = &chunk_head[0..4];
        let size = u32::from_le_bytes(chunk_head[4..8].try_into().unwrap()) as usize;
        let mut body = vec![0u8; size];
        rd.read_exact(&mut body)?;
        if size % 2 == 1 {
            // RIFF chunks are word aligned
            let mut pad = [0u8; 1];
            let _ = rd.read_exact(&mut pad);
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(fail("only mono 16-bit PCM is supported"));
                }
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
            }
            b"data" => {
                let pcm: Vec<f32> = body
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
                    .collect();
                samples = Some(pcm);
            }
            _ => {} // skip unknown chunks
        }
    }

    if sample_rate == 0 {
        return Err(fail("missing fmt chunk"));
    }
    let samples = samples.ok_or_else(|| fail("missing data chunk"))?;
    Waveform::new(samples, sample_rate)
}
