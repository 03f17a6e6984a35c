//! 8-bit μ-law companding with μ = 255, 256 uniform bins over the companded
//! domain and bin-center decoding.

use crate::error::{Error, Result};
use crate::signal::{MuLawCode, Waveform};

/// Number of quantization classes.
pub const CLASSES: usize = 256;

const MU: f64 = 255.0;

/// Compand an amplitude into [-1, 1]: sign(x) * ln(1 + 255|x|) / ln(256).
#[inline]
pub fn compand(x: f64) -> f64 {
    x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln()
}

/// Inverse of [`compand`].
#[inline]
pub fn expand(f: f64) -> f64 {
    f.signum() * ((1.0 + MU).powf(f.abs()) - 1.0) / MU
}

/// Quantize an amplitude in [-1, 1] to a class in [0, 255].
///
/// Monotone non-decreasing in `x`.
pub fn encode(x: f64) -> Result<u8> {
    if !(x.is_finite() && x.abs() <= 1.0) {
        return Err(Error::domain(format!("amplitude {x} outside [-1, 1]")));
    }
    let idx = ((compand(x) + 1.0) / 2.0 * CLASSES as f64).floor();
    Ok(idx.clamp(0.0, 255.0) as u8)
}

/// Reconstruct the bin-center amplitude of a class.
pub fn decode(class: u8) -> f64 {
    let f = (class as f64 + 0.5) / CLASSES as f64 * 2.0 - 1.0;
    expand(f)
}

/// Width, in the amplitude domain, of the quantization bin holding class `c`.
pub fn bin_width(class: u8) -> f64 {
    let lo = (class as f64 / 128.0 - 1.0).max(-1.0);
    let hi = ((class as f64 + 1.0) / 128.0 - 1.0).min(1.0);
    expand(hi) - expand(lo)
}

pub fn encode_waveform(w: &Waveform) -> Result<MuLawCode> {
    let classes = w
        .samples
        .iter()
        .map(|&s| encode(s as f64))
        .collect::<Result<Vec<u8>>>()?;
    Ok(MuLawCode { classes })
}

pub fn decode_waveform(code: &MuLawCode, sample_rate: u32) -> Result<Waveform> {
    let samples = code.classes.iter().map(|&c| decode(c) as f32).collect();
    Waveform::new(samples, sample_rate)
}
