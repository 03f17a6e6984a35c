//! Teacher-forced forward pass.
//!
//! The per-sample computation is shared with the incremental sampler
//! (`generate`): both walk the same `sample_pass` with the same accumulation
//! order, differing only in where past block inputs are stored, so batch and
//! incremental logits agree bit-for-bit.

use crate::dilation::{DilationPlan, NetConfig};
use crate::error::{check_len, Error, Result};
use crate::features::ConditioningMatrix;
use crate::net::{LogitSequence, ModelParams};
use crate::num::{dot, matvec_acc, Mat, Scalar};
use crate::signal::mulaw::CLASSES;

/// Gated activation: `tanh(filter) * sigmoid(gate)`.
#[inline]
pub fn gated_unit<T: Scalar>(filter: T, gate: T) -> T {
    filter.tanh() * sigmoid(gate)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable softmax of one logit row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = out.iter().cloned().sum();
    for v in out.iter_mut() {
        *v = *v / sum;
    }
    out
}

/// Two-tap dilated convolution with per-sample dilation:
/// `out[t] = w_cur * x[t] + w_past * x[t - d[t]]`, zero-padded on the left.
pub fn pd_dilated_conv<T: Scalar>(
    xs: &[Vec<T>],
    w_cur: &Mat<T>,
    w_past: &Mat<T>,
    dilations: &[u32],
) -> Result<Vec<Vec<T>>> {
    check_len("input vs dilations", xs.len(), dilations.len())?;
    let mut out = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        let mut y = vec![T::zero(); w_cur.rows];
        matvec_acc(w_cur, x, &mut y);
        let d = dilations[t] as usize;
        if d == 0 {
            return Err(Error::domain("dilation must be at least 1"));
        }
        if t >= d {
            matvec_acc(w_past, &xs[t - d], &mut y);
        }
        out.push(y);
    }
    Ok(out)
}

/// Storage of past block-input activations.
///
/// `read(k, d)` returns block `k`'s input from exactly `d` steps before the
/// current one, or `None` when that predates the sequence (the caller treats
/// `None` as the zero vector). A step consists of reading, then pushing every
/// block's current input, then `advance`.
pub(crate) trait BlockHistory<T> {
    fn read(&self, block: usize, dilation: usize) -> Option<&[T]>;
    fn push(&mut self, block: usize, x: &[T]);
    fn advance(&mut self);
}

/// Unbounded history holding every step (teacher forcing and backward).
#[derive(Debug, Clone)]
pub(crate) struct FullHistory<T> {
    layers: Vec<Vec<T>>,
    channels: usize,
    steps: usize,
}

impl<T: Scalar> FullHistory<T> {
    pub(crate) fn new(blocks: usize, channels: usize, capacity_steps: usize) -> Self {
        FullHistory {
            layers: (0..blocks)
                .map(|_| Vec::with_capacity(channels * capacity_steps))
                .collect(),
            channels,
            steps: 0,
        }
    }

    /// Block `k`'s input at absolute step `t` (backward-pass accessor).
    pub(crate) fn at(&self, block: usize, t: usize) -> &[T] {
        &self.layers[block][t * self.channels..(t + 1) * self.channels]
    }
}

impl<T: Scalar> BlockHistory<T> for FullHistory<T> {
    fn read(&self, block: usize, dilation: usize) -> Option<&[T]> {
        if dilation == 0 || dilation > self.steps {
            return None;
        }
        Some(self.at(block, self.steps - dilation))
    }

    fn push(&mut self, block: usize, x: &[T]) {
        debug_assert_eq!(x.len(), self.channels);
        debug_assert_eq!(self.layers[block].len(), self.steps * self.channels);
        self.layers[block].extend_from_slice(x);
    }

    fn advance(&mut self) {
        self.steps += 1;
    }
}

/// Reusable per-sample buffers.
pub(crate) struct SampleScratch<T> {
    pub residual: Vec<T>,
    filter_pre: Vec<T>,
    gate_pre: Vec<T>,
    tanh_f: Vec<T>,
    sig_g: Vec<T>,
    gated: Vec<T>,
    skip_sum: Vec<T>,
    head_in: Vec<T>,
    head_pre: Vec<T>,
    head_act: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> SampleScratch<T> {
    pub(crate) fn new(config: &NetConfig) -> Self {
        let c = config.residual_channels;
        let s = config.skip_channels;
        SampleScratch {
            residual: vec![T::zero(); c],
            filter_pre: vec![T::zero(); c],
            gate_pre: vec![T::zero(); c],
            tanh_f: vec![T::zero(); c],
            sig_g: vec![T::zero(); c],
            gated: vec![T::zero(); c],
            skip_sum: vec![T::zero(); s],
            head_in: vec![T::zero(); s],
            head_pre: vec![T::zero(); s],
            head_act: vec![T::zero(); s],
            logits: vec![T::zero(); CLASSES],
        }
    }
}

/// Activation byproducts the backward pass needs, appended step by step.
pub(crate) struct CacheExtras<T> {
    /// tanh of the filter pre-activation, per block, per step.
    pub tanh_f: Vec<Vec<T>>,
    /// sigmoid of the gate pre-activation, per block, per step.
    pub sig_g: Vec<Vec<T>>,
    /// skip sum before rectification, per step.
    pub skip_pre: Vec<T>,
    /// hidden head projection before rectification, per step.
    pub head_pre: Vec<T>,
}

impl<T: Scalar> CacheExtras<T> {
    fn new(blocks: usize) -> Self {
        CacheExtras {
            tanh_f: vec![Vec::new(); blocks],
            sig_g: vec![Vec::new(); blocks],
            skip_pre: Vec::new(),
            head_pre: Vec::new(),
        }
    }
}

/// Everything backward needs from one teacher-forced pass.
pub struct ForwardCache<T> {
    pub(crate) inputs: FullHistory<T>,
    pub(crate) extras: CacheExtras<T>,
    pub(crate) len: usize,
}

/// One network step. Reads past activations from `history`, pushes the
/// current block inputs into it, and leaves the logits in `scratch.logits`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_pass<T: Scalar>(
    params: &ModelParams<T>,
    n_fixed: usize,
    fixed_dils: &[u32],
    adaptive_dils: &[u32],
    cond_t: &[T],
    input_cur: T,
    input_prev: Option<T>,
    history: &mut dyn BlockHistory<T>,
    scratch: &mut SampleScratch<T>,
    mut extras: Option<&mut CacheExtras<T>>,
) {
    let channels = params.residual_channels();

    // causal two-tap layer on the scalar input
    for c in 0..channels {
        let mut v = params.causal_cur.data[c] * input_cur;
        if let Some(prev) = input_prev {
            v = v + params.causal_past.data[c] * prev;
        }
        scratch.residual[c] = v;
    }
    scratch.skip_sum.fill(T::zero());

    for (k, block) in params.blocks.iter().enumerate() {
        let d = if k < n_fixed {
            fixed_dils[k]
        } else {
            adaptive_dils[k - n_fixed]
        } as usize;

        scratch.filter_pre.fill(T::zero());
        scratch.gate_pre.fill(T::zero());
        matvec_acc(&block.conv_cur_filter, &scratch.residual, &mut scratch.filter_pre);
        matvec_acc(&block.conv_cur_gate, &scratch.residual, &mut scratch.gate_pre);
        if let Some(past) = history.read(k, d) {
            matvec_acc(&block.conv_past_filter, past, &mut scratch.filter_pre);
            matvec_acc(&block.conv_past_gate, past, &mut scratch.gate_pre);
        }
        matvec_acc(&block.cond_filter, cond_t, &mut scratch.filter_pre);
        matvec_acc(&block.cond_gate, cond_t, &mut scratch.gate_pre);

        for c in 0..channels {
            scratch.tanh_f[c] = scratch.filter_pre[c].tanh();
            scratch.sig_g[c] = sigmoid(scratch.gate_pre[c]);
            scratch.gated[c] = scratch.tanh_f[c] * scratch.sig_g[c];
        }

        history.push(k, &scratch.residual);
        if let Some(cache) = extras.as_deref_mut() {
            cache.tanh_f[k].extend_from_slice(&scratch.tanh_f);
            cache.sig_g[k].extend_from_slice(&scratch.sig_g);
        }

        matvec_acc(&block.skip_proj, &scratch.gated, &mut scratch.skip_sum);
        for c in 0..channels {
            scratch.residual[c] = scratch.residual[c] + dot(block.res_proj.row(c), &scratch.gated);
        }
    }
    history.advance();

    // head: rectify -> 1x1 -> rectify -> 1x1
    for (h, &s) in scratch.head_in.iter_mut().zip(&scratch.skip_sum) {
        *h = s.max(T::zero());
    }
    scratch.head_pre.fill(T::zero());
    matvec_acc(&params.head_hidden, &scratch.head_in, &mut scratch.head_pre);
    for (h, &u) in scratch.head_act.iter_mut().zip(&scratch.head_pre) {
        *h = u.max(T::zero());
    }
    scratch.logits.fill(T::zero());
    matvec_acc(&params.head_out, &scratch.head_act, &mut scratch.logits);

    if let Some(cache) = extras {
        cache.skip_pre.extend_from_slice(&scratch.skip_sum);
        cache.head_pre.extend_from_slice(&scratch.head_pre);
    }
}

fn validate_forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetConfig,
    input: &[T],
    cond: &ConditioningMatrix<T>,
    plan: &DilationPlan,
) -> Result<()> {
    params.check_config(config)?;
    check_len("input vs conditioning", input.len(), cond.len())?;
    check_len("input vs dilation plan", input.len(), plan.len())?;
    check_len("conditioning width", cond.dim(), config.aux_dim)?;
    check_len(
        "fixed dilations",
        plan.fixed.len(),
        config.n_fixed_blocks(),
    )?;
    check_len(
        "adaptive blocks",
        plan.n_adaptive_blocks(),
        config.n_adaptive_blocks(),
    )?;
    Ok(())
}

fn forward_impl<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetConfig,
    input: &[T],
    cond: &ConditioningMatrix<T>,
    plan: &DilationPlan,
    want_cache: bool,
) -> Result<(LogitSequence<T>, Option<ForwardCache<T>>)> {
    validate_forward(params, config, input, cond, plan)?;
    let n = input.len();
    let n_fixed = config.n_fixed_blocks();
    let n_adaptive = config.n_adaptive_blocks();

    let mut history = FullHistory::new(config.n_blocks(), config.residual_channels, n);
    let mut extras = want_cache.then(|| CacheExtras::new(config.n_blocks()));
    let mut scratch = SampleScratch::new(config);
    let mut adaptive = vec![0u32; n_adaptive];
    let mut logits = LogitSequence::with_capacity(n);

    for t in 0..n {
        for (k, a) in adaptive.iter_mut().enumerate() {
            *a = plan.adaptive_at(t, k);
        }
        let prev = (t > 0).then(|| input[t - 1]);
        sample_pass(
            params,
            n_fixed,
            &plan.fixed,
            &adaptive,
            cond.row(t),
            input[t],
            prev,
            &mut history,
            &mut scratch,
            extras.as_mut(),
        );
        logits.push_row(&scratch.logits);
    }

    let cache = extras.map(|extras| ForwardCache {
        inputs: history,
        extras,
        len: n,
    });
    Ok((logits, cache))
}

/// Teacher-forced forward pass. `input[t]` is the (quantized) previous
/// sample, zero at `t = 0`; logits come back un-normalized.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetConfig,
    input: &[T],
    cond: &ConditioningMatrix<T>,
    plan: &DilationPlan,
) -> Result<LogitSequence<T>> {
    forward_impl(params, config, input, cond, plan, false).map(|(l, _)| l)
}

/// Forward pass that also returns the activation cache for [`super::backward`].
pub fn forward_cached<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetConfig,
    input: &[T],
    cond: &ConditioningMatrix<T>,
    plan: &DilationPlan,
) -> Result<(LogitSequence<T>, ForwardCache<T>)> {
    forward_impl(params, config, input, cond, plan, true)
        .map(|(l, c)| (l, c.expect("cache requested")))
}
