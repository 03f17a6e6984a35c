//! Dilation planning: the pitch-dependent dilation factor, the doubling
//! layer schedules for fixed and adaptive blocks, receptive-field arithmetic
//! and named architecture presets.

use crate::error::{Error, Result};
use crate::features::ConditioningMatrix;
use crate::num::Scalar;

/// Network architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub fixed_layers: usize,
    pub fixed_repeats: usize,
    pub adaptive_layers: usize,
    pub adaptive_repeats: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    /// Divisor in the dilation factor `ceil(fs / (f0 * cycle_divisor))`:
    /// the number of base taps that together span one pitch cycle.
    pub cycle_divisor: u32,
    pub sample_rate: u32,
    pub aux_dim: usize,
    /// F0 is clamped into this range before the dilation factor is computed,
    /// which bounds the history caches of the incremental sampler.
    pub f0_floor: f64,
    pub f0_ceil: f64,
}

pub const PRESET_NAMES: [&str; 5] = ["wnf", "wnc", "qpnet", "tiny-qpnet", "tiny-wnc"];

impl NetConfig {
    /// Named presets. `wnf`, `wnc` and `qpnet` carry the published channel
    /// sizes (512 residual, 256 skip); the `tiny-*` variants (32/16) are
    /// small enough to train on a desktop CPU.
    pub fn preset(name: &str, sample_rate: u32, aux_dim: usize) -> Result<NetConfig> {
        let (fl, fr, al, ar, res, skip) = match name {
            "wnf" => (10, 3, 0, 0, 512, 256),
            "wnc" => (4, 4, 0, 0, 512, 256),
            "qpnet" => (4, 3, 4, 1, 512, 256),
            "tiny-qpnet" => (4, 3, 4, 1, 32, 16),
            "tiny-wnc" => (4, 4, 0, 0, 32, 16),
            _ => {
                return Err(Error::config(format!(
                    "unknown preset '{name}'; valid presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        let cfg = NetConfig {
            fixed_layers: fl,
            fixed_repeats: fr,
            adaptive_layers: al,
            adaptive_repeats: ar,
            residual_channels: res,
            skip_channels: skip,
            cycle_divisor: 8,
            sample_rate,
            aux_dim,
            f0_floor: 40.0,
            f0_ceil: 800.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks() == 0 {
            return Err(Error::config("network must have at least one block"));
        }
        if self.residual_channels == 0 || self.skip_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.cycle_divisor == 0 {
            return Err(Error::config("cycle_divisor must be at least 1"));
        }
        if !(self.f0_floor > 0.0 && self.f0_floor < self.f0_ceil) {
            return Err(Error::config(format!(
                "f0 clip range [{}, {}] invalid",
                self.f0_floor, self.f0_ceil
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        Ok(())
    }

    pub fn n_fixed_blocks(&self) -> usize {
        self.fixed_layers * self.fixed_repeats
    }

    pub fn n_adaptive_blocks(&self) -> usize {
        self.adaptive_layers * self.adaptive_repeats
    }

    pub fn n_blocks(&self) -> usize {
        self.n_fixed_blocks() + self.n_adaptive_blocks()
    }

    /// Largest dilation factor the F0 clip range allows.
    pub fn max_dilation_factor(&self) -> u32 {
        dilation_factor(
            self.f0_floor,
            self.sample_rate,
            self.cycle_divisor,
            (self.f0_floor, self.f0_ceil),
        )
        .expect("f0_floor is validated positive")
    }
}

/// Pitch-dependent dilation factor:
/// `max(1, ceil(sample_rate / (clamp(f0) * cycle_divisor)))`.
pub fn dilation_factor(
    f0_hz: f64,
    sample_rate: u32,
    cycle_divisor: u32,
    f0_clip: (f64, f64),
) -> Result<u32> {
    if !(f0_hz > 0.0 && f0_hz.is_finite()) {
        return Err(Error::domain(format!(
            "dilation factor needs a positive f0, got {f0_hz} (use a continuous F0 contour)"
        )));
    }
    let f0 = f0_hz.clamp(f0_clip.0, f0_clip.1);
    let e = (sample_rate as f64 / (f0 * cycle_divisor as f64)).ceil();
    Ok((e.max(1.0)) as u32)
}

/// Doubling dilation schedule of the fixed blocks:
/// `repeats` copies of `[1, 2, 4, ..., 2^(layers-1)]`.
pub fn fixed_schedule(layers: usize, repeats: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(layers * repeats);
    for _ in 0..repeats {
        for k in 0..layers {
            out.push(1u32 << k);
        }
    }
    out
}

/// Per-sample adaptive schedule: at sample `t` the dilations are `repeats`
/// copies of `[E[t], 2 E[t], ..., 2^(layers-1) E[t]]`.
pub fn adaptive_schedule(factors: &[u32], layers: usize, repeats: usize) -> Vec<Vec<u32>> {
    factors
        .iter()
        .map(|&e| {
            let mut row = Vec::with_capacity(layers * repeats);
            for _ in 0..repeats {
                for k in 0..layers {
                    row.push(e << k);
                }
            }
            row
        })
        .collect()
}

/// Receptive field in samples at dilation factor `e`:
/// one causal tap plus the sum of every dilation.
pub fn receptive_field(config: &NetConfig, e: u32) -> usize {
    let fixed = config.fixed_repeats * ((1usize << config.fixed_layers) - 1);
    let adaptive = config.adaptive_repeats * e as usize * ((1usize << config.adaptive_layers) - 1);
    1 + fixed + adaptive
}

/// Per-sample dilation sizes for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationPlan {
    /// Static dilations of the fixed blocks, in block order.
    pub fixed: Vec<u32>,
    /// Pitch-dependent dilation factor per sample.
    pub factors: Vec<u32>,
    adaptive_layers: usize,
    adaptive_repeats: usize,
}

impl DilationPlan {
    pub fn new(config: &NetConfig, factors: Vec<u32>) -> DilationPlan {
        DilationPlan {
            fixed: fixed_schedule(config.fixed_layers, config.fixed_repeats),
            factors,
            adaptive_layers: config.adaptive_layers,
            adaptive_repeats: config.adaptive_repeats,
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn n_adaptive_blocks(&self) -> usize {
        self.adaptive_layers * self.adaptive_repeats
    }

    /// Dilation of adaptive block `k` (flattened over repeats) at sample `t`.
    #[inline]
    pub fn adaptive_at(&self, t: usize, k: usize) -> u32 {
        self.factors[t] << (k % self.adaptive_layers)
    }

    /// All adaptive dilations at sample `t`, in block order.
    pub fn adaptive_dilations(&self, t: usize) -> Vec<u32> {
        (0..self.n_adaptive_blocks())
            .map(|k| self.adaptive_at(t, k))
            .collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> DilationPlan {
        DilationPlan {
            fixed: self.fixed.clone(),
            factors: self.factors[start..end].to_vec(),
            adaptive_layers: self.adaptive_layers,
            adaptive_repeats: self.adaptive_repeats,
        }
    }
}

/// Build the dilation plan for an utterance from the continuous-F0 channel
/// of its conditioning matrix.
pub fn build_plan<T: Scalar>(
    config: &NetConfig,
    cond: &ConditioningMatrix<T>,
) -> Result<DilationPlan> {
    let mut factors = Vec::with_capacity(cond.len());
    for t in 0..cond.len() {
        factors.push(dilation_factor(
            cond.f0_hz(t),
            config.sample_rate,
            config.cycle_divisor,
            (config.f0_floor, config.f0_ceil),
        )?);
    }
    Ok(DilationPlan::new(config, factors))
}
