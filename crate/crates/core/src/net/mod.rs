//! The vocoder network: causal input layer, gated residual blocks with fixed
//! and pitch-dependent dilated convolutions, and the skip-sum output head.

mod backward;
mod checkpoint;
mod forward;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use forward::{
    forward, forward_cached, gated_unit, pd_dilated_conv, softmax, ForwardCache,
};
pub(crate) use forward::{sample_pass, BlockHistory, SampleScratch};

pub(crate) fn checkpoint_hash() -> checkpoint::Fnv1a {
    checkpoint::Fnv1a::new()
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dilation::NetConfig;
use crate::error::{check_len, Error, Result};
use crate::num::{Mat, Scalar};
use crate::signal::mulaw::CLASSES;

/// One gated residual block.
///
/// The two-tap dilated convolution is split into its current and past taps
/// (each a channels-by-channels projection), separately for the filter and
/// gate branches; `cond_*` project the conditioning vector into each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub conv_cur_filter: Mat<T>,
    pub conv_past_filter: Mat<T>,
    pub conv_cur_gate: Mat<T>,
    pub conv_past_gate: Mat<T>,
    pub cond_filter: Mat<T>,
    pub cond_gate: Mat<T>,
    pub res_proj: Mat<T>,
    pub skip_proj: Mat<T>,
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Current and previous-sample taps of the scalar input layer.
    pub causal_cur: Mat<T>,
    pub causal_past: Mat<T>,
    /// Fixed blocks first, then adaptive blocks.
    pub blocks: Vec<BlockParams<T>>,
    pub head_hidden: Mat<T>,
    pub head_out: Mat<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters with the shapes `config` prescribes.
    pub fn zeros(config: &NetConfig) -> ModelParams<T> {
        let c = config.residual_channels;
        let s = config.skip_channels;
        let a = config.aux_dim;
        let blocks = (0..config.n_blocks())
            .map(|_| BlockParams {
                conv_cur_filter: Mat::zeros(c, c),
                conv_past_filter: Mat::zeros(c, c),
                conv_cur_gate: Mat::zeros(c, c),
                conv_past_gate: Mat::zeros(c, c),
                cond_filter: Mat::zeros(c, a),
                cond_gate: Mat::zeros(c, a),
                res_proj: Mat::zeros(c, c),
                skip_proj: Mat::zeros(s, c),
            })
            .collect();
        ModelParams {
            causal_cur: Mat::zeros(c, 1),
            causal_past: Mat::zeros(c, 1),
            blocks,
            head_hidden: Mat::zeros(s, s),
            head_out: Mat::zeros(CLASSES, s),
        }
    }

    /// Seeded init: each matrix is filled with zero-mean uniform values
    /// scaled by 1/sqrt(fan_in).
    pub fn init(config: &NetConfig, seed: u64) -> Result<ModelParams<T>> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in params.mats_mut() {
            let scale = 1.0 / (m.cols as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * scale);
            }
        }
        Ok(params)
    }

    /// Matrices in declaration order (the serialization and flattening order).
    pub fn mats(&self) -> Vec<&Mat<T>> {
        let mut out = vec![&self.causal_cur, &self.causal_past];
        for b in &self.blocks {
            out.extend([
                &b.conv_cur_filter,
                &b.conv_past_filter,
                &b.conv_cur_gate,
                &b.conv_past_gate,
                &b.cond_filter,
                &b.cond_gate,
                &b.res_proj,
                &b.skip_proj,
            ]);
        }
        out.extend([&self.head_hidden, &self.head_out]);
        out
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut out: Vec<&mut Mat<T>> = vec![&mut self.causal_cur, &mut self.causal_past];
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv_cur_filter,
                &mut b.conv_past_filter,
                &mut b.conv_cur_gate,
                &mut b.conv_past_gate,
                &mut b.cond_filter,
                &mut b.cond_gate,
                &mut b.res_proj,
                &mut b.skip_proj,
            ]);
        }
        out.extend([&mut self.head_hidden, &mut self.head_out]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.mats().iter().map(|m| m.len()).sum()
    }

    pub fn residual_channels(&self) -> usize {
        self.causal_cur.rows
    }

    pub fn all_finite(&self) -> bool {
        self.mats()
            .iter()
            .all(|m| m.data.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion (used to move f32 checkpoints into f64 mode).
    pub fn convert<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |m: &Mat<T>| Mat {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        };
        ModelParams {
            causal_cur: conv(&self.causal_cur),
            causal_past: conv(&self.causal_past),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    conv_cur_filter: conv(&b.conv_cur_filter),
                    conv_past_filter: conv(&b.conv_past_filter),
                    conv_cur_gate: conv(&b.conv_cur_gate),
                    conv_past_gate: conv(&b.conv_past_gate),
                    cond_filter: conv(&b.cond_filter),
                    cond_gate: conv(&b.cond_gate),
                    res_proj: conv(&b.res_proj),
                    skip_proj: conv(&b.skip_proj),
                })
                .collect(),
            head_hidden: conv(&self.head_hidden),
            head_out: conv(&self.head_out),
        }
    }

    pub(crate) fn check_config(&self, config: &NetConfig) -> Result<()> {
        check_len("block count", self.blocks.len(), config.n_blocks())?;
        if self.causal_cur.rows != config.residual_channels
            || self.head_hidden.rows != config.skip_channels
            || self.head_out.rows != CLASSES
            || self
                .blocks
                .first()
                .is_some_and(|b| b.cond_filter.cols != config.aux_dim)
        {
            return Err(Error::config(
                "parameter shapes do not match the network config",
            ));
        }
        Ok(())
    }
}

/// Closed-form parameter count for a config, matching the matrix shapes of
/// [`ModelParams`].
pub fn param_count(config: &NetConfig) -> usize {
    let c = config.residual_channels;
    let s = config.skip_channels;
    let a = config.aux_dim;
    2 * c + config.n_blocks() * (5 * c * c + 2 * a * c + s * c) + s * s + CLASSES * s
}

/// Pre-softmax output rows, one per sample, each [`CLASSES`] wide.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence<T> {
    data: Vec<T>,
}

impl<T: Scalar> LogitSequence<T> {
    pub fn with_capacity(samples: usize) -> Self {
        LogitSequence {
            data: Vec::with_capacity(samples * CLASSES),
        }
    }

    pub(crate) fn push_row(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), CLASSES);
        self.data.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.data.len() / CLASSES
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * CLASSES..(t + 1) * CLASSES]
    }

    pub(crate) fn row_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * CLASSES..(t + 1) * CLASSES]
    }

    pub fn zeros(samples: usize) -> Self {
        LogitSequence {
            data: vec![T::zero(); samples * CLASSES],
        }
    }
}
