//! Waveform representation, 8-bit μ-law codec, WAV file I/O and the
//! synthetic quasi-periodic corpus generator.

pub mod mulaw;
pub mod synth;
mod wav;

pub use synth::{corpus_spec, synth_utterance, CorpusParams, F0Segment, SynthSpec};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono waveform with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::domain("sample_rate must be positive"));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::domain(format!(
                "sample {s} outside [-1, 1]"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// 8-bit μ-law class sequence; one class per source sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuLawCode {
    pub classes: Vec<u8>,
}

impl MuLawCode {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}
