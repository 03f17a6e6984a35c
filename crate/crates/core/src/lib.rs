//! Quasi-periodic WaveNet vocoder.
//!
//! An autoregressive waveform model whose dilated convolutions can take
//! time-variant, F0-dependent dilation sizes, together with the pipeline
//! needed to train and evaluate it: signal synthesis and μ-law coding,
//! acoustic feature extraction and conditioning, dilation planning,
//! teacher-forced training with hand-rolled gradients, incremental
//! generation, and the F0-scaling objective evaluation.

pub mod dilation;
mod error;
pub mod eval;
pub mod features;
pub mod generate;
pub mod net;
pub mod num;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
