//! Hand-rolled reverse-mode gradients of the forward pass.
//!
//! Works layer-major from the head down through the blocks. A block's past
//! tap sends gradient back to sample `t - d[t]`, so each block pass both
//! gathers (current tap, residual) and scatters (past tap) into the incoming
//! gradient of the block below.

use crate::dilation::{DilationPlan, NetConfig};
use crate::error::{check_len, Result};
use crate::features::ConditioningMatrix;
use crate::net::forward::ForwardCache;
use crate::net::{LogitSequence, ModelParams};
use crate::num::{matvec_t_acc, outer_acc, Scalar};

/// Gradients of a scalar loss with respect to every parameter, given the
/// forward cache and the loss gradient at the logits.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    config: &NetConfig,
    input: &[T],
    cond: &ConditioningMatrix<T>,
    plan: &DilationPlan,
    cache: &ForwardCache<T>,
    dlogits: &LogitSequence<T>,
) -> Result<ModelParams<T>> {
    params.check_config(config)?;
    let n = input.len();
    check_len("cached steps vs input", cache.len, n)?;
    check_len("logit gradient rows vs input", dlogits.len(), n)?;
    check_len("conditioning vs input", cond.len(), n)?;
    check_len("dilation plan vs input", plan.len(), n)?;

    let c = config.residual_channels;
    let s = config.skip_channels;
    let n_fixed = config.n_fixed_blocks();
    let n_blocks = config.n_blocks();

    let mut grads: ModelParams<T> = ModelParams::zeros(config);

    // head backward; d_skip[t] = dL/d(skip sum at t)
    let mut d_skip = vec![T::zero(); n * s];
    {
        let mut h1 = vec![T::zero(); s];
        let mut h2 = vec![T::zero(); s];
        let mut du = vec![T::zero(); s];
        let mut dh1 = vec![T::zero(); s];
        for t in 0..n {
            let skip_pre = &cache.extras.skip_pre[t * s..(t + 1) * s];
            let head_pre = &cache.extras.head_pre[t * s..(t + 1) * s];
            for i in 0..s {
                h1[i] = skip_pre[i].max(T::zero());
                h2[i] = head_pre[i].max(T::zero());
            }
            let dl = dlogits.row(t);
            outer_acc(&mut grads.head_out, dl, &h2);

            du.fill(T::zero());
            matvec_t_acc(&params.head_out, dl, &mut du);
            for i in 0..s {
                du[i] = if head_pre[i] > T::zero() { du[i] } else { T::zero() };
            }
            outer_acc(&mut grads.head_hidden, &du, &h1);

            dh1.fill(T::zero());
            matvec_t_acc(&params.head_hidden, &du, &mut dh1);
            let ds_t = &mut d_skip[t * s..(t + 1) * s];
            for i in 0..s {
                ds_t[i] = if skip_pre[i] > T::zero() { dh1[i] } else { T::zero() };
            }
        }
    }

    // blocks in reverse; g_next[t] = dL/d(block output at t)
    let mut g_next = vec![T::zero(); n * c];
    let mut g_in = vec![T::zero(); n * c];
    let mut dz = vec![T::zero(); c];
    let mut daf = vec![T::zero(); c];
    let mut dag = vec![T::zero(); c];
    let mut z = vec![T::zero(); c];

    for k in (0..n_blocks).rev() {
        let block = &params.blocks[k];
        let gblock = &mut grads.blocks[k];
        g_in.fill(T::zero());

        for t in 0..n {
            let tf = &cache.extras.tanh_f[k][t * c..(t + 1) * c];
            let sg = &cache.extras.sig_g[k][t * c..(t + 1) * c];
            let gn = &g_next[t * c..(t + 1) * c];
            let ds_t = &d_skip[t * s..(t + 1) * s];

            dz.fill(T::zero());
            matvec_t_acc(&block.res_proj, gn, &mut dz);
            matvec_t_acc(&block.skip_proj, ds_t, &mut dz);

            for i in 0..c {
                z[i] = tf[i] * sg[i];
                daf[i] = dz[i] * sg[i] * (T::one() - tf[i] * tf[i]);
                dag[i] = dz[i] * tf[i] * sg[i] * (T::one() - sg[i]);
            }

            let x = cache.inputs.at(k, t);
            outer_acc(&mut gblock.conv_cur_filter, &daf, x);
            outer_acc(&mut gblock.conv_cur_gate, &dag, x);
            outer_acc(&mut gblock.cond_filter, &daf, cond.row(t));
            outer_acc(&mut gblock.cond_gate, &dag, cond.row(t));
            outer_acc(&mut gblock.res_proj, gn, &z);
            outer_acc(&mut gblock.skip_proj, ds_t, &z);

            let d = if k < n_fixed {
                plan.fixed[k]
            } else {
                plan.adaptive_at(t, k - n_fixed)
            } as usize;
            if t >= d {
                let xp = cache.inputs.at(k, t - d);
                outer_acc(&mut gblock.conv_past_filter, &daf, xp);
                outer_acc(&mut gblock.conv_past_gate, &dag, xp);
                let gp = &mut g_in[(t - d) * c..(t - d + 1) * c];
                matvec_t_acc(&block.conv_past_filter, &daf, gp);
                matvec_t_acc(&block.conv_past_gate, &dag, gp);
            }

            let gi = &mut g_in[t * c..(t + 1) * c];
            for i in 0..c {
                gi[i] = gi[i] + gn[i];
            }
            matvec_t_acc(&block.conv_cur_filter, &daf, gi);
            matvec_t_acc(&block.conv_cur_gate, &dag, gi);
        }
        std::mem::swap(&mut g_next, &mut g_in);
    }

    // causal layer: two scalar-input taps
    for t in 0..n {
        let g0 = &g_next[t * c..(t + 1) * c];
        for i in 0..c {
            grads.causal_cur.data[i] = grads.causal_cur.data[i] + g0[i] * input[t];
        }
        if t >= 1 {
            for i in 0..c {
                grads.causal_past.data[i] = grads.causal_past.data[i] + g0[i] * input[t - 1];
            }
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::build_plan;
    use crate::net::forward::forward_cached;
    use crate::signal::mulaw::CLASSES;

    /// Small random setup shared by the gradient tests.
    fn setup(
        n: usize,
        seed: u64,
    ) -> (
        NetConfig,
        ModelParams<f64>,
        Vec<f64>,
        ConditioningMatrix<f64>,
        DilationPlan,
    ) {
        let cfg = NetConfig {
            fixed_layers: 2,
            fixed_repeats: 1,
            adaptive_layers: 2,
            adaptive_repeats: 1,
            residual_channels: 8,
            skip_channels: 8,
            cycle_divisor: 8,
            sample_rate: 8000,
            aux_dim: 3,
            f0_floor: 40.0,
            f0_ceil: 800.0,
        };
        let params = ModelParams::init(&cfg, seed).unwrap();
        let input: Vec<f64> = (0..n)
            .map(|i| (((i * 31 + 7) % 97) as f64 / 97.0) - 0.5)
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let f0 = 80.0 * (1.0 + i as f64 / n as f64 * 4.0); // 80 -> 400 Hz
                vec![f0.ln(), 1.0, (i as f64 * 0.37).cos()]
            })
            .collect();
        let cond = ConditioningMatrix::from_rows(rows, 0.0).unwrap();
        let plan = build_plan(&cfg, &cond).unwrap();
        (cfg, params, input, cond, plan)
    }

    /// Scalar test loss: sum over t of logits[t] . w[t] with fixed weights,
    /// so dL/dlogits is a constant independent of the parameters.
    fn loss_weights(n: usize) -> LogitSequence<f64> {
        let mut dl = LogitSequence::zeros(n);
        for t in 0..n {
            let row = dl.row_mut(t);
            for (j, r) in row.iter_mut().enumerate() {
                *r = ((t * CLASSES + j) as f64 * 0.618).sin() / CLASSES as f64;
            }
        }
        dl
    }

    fn eval_loss(
        params: &ModelParams<f64>,
        cfg: &NetConfig,
        input: &[f64],
        cond: &ConditioningMatrix<f64>,
        plan: &DilationPlan,
        weights: &LogitSequence<f64>,
    ) -> f64 {
        let logits = crate::net::forward(params, cfg, input, cond, plan).unwrap();
        let mut loss = 0.0;
        for t in 0..input.len() {
            loss += crate::num::dot(logits.row(t), weights.row(t));
        }
        loss
    }

    #[test]
    fn gradients_match_finite_differences() {
        let n = 48;
        let (cfg, params, input, cond, plan) = setup(n, 3);
        let weights = loss_weights(n);
        let (_, cache) = forward_cached(&params, &cfg, &input, &cond, &plan).unwrap();
        let grads = backward(&params, &cfg, &input, &cond, &plan, &cache, &weights).unwrap();

        let eps = 1e-6;
        let mut worst = 0.0f64;
        // probe a deterministic spread of parameters in every matrix
        let n_mats = params.mats().len();
        for mi in 0..n_mats {
            let len = params.mats()[mi].len();
            let stride = (len / 7).max(1);
            for idx in (0..len).step_by(stride) {
                let mut p = params.clone();
                p.mats_mut()[mi].data[idx] += eps;
                let up = eval_loss(&p, &cfg, &input, &cond, &plan, &weights);
                p.mats_mut()[mi].data[idx] -= 2.0 * eps;
                let down = eval_loss(&p, &cfg, &input, &cond, &plan, &weights);
                let fd = (up - down) / (2.0 * eps);
                let an = grads.mats()[mi].data[idx];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                worst = worst.max((an - fd).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let n = 24;
        let (cfg, params, input, cond, plan) = setup(n, 5);
        let (_, cache) = forward_cached(&params, &cfg, &input, &cond, &plan).unwrap();
        let zero = LogitSequence::zeros(n);
        let grads = backward(&params, &cfg, &input, &cond, &plan, &cache, &zero).unwrap();
        for m in grads.mats() {
            assert!(m.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_are_deterministic() {
        let n = 24;
        let (cfg, params, input, cond, plan) = setup(n, 11);
        let weights = loss_weights(n);
        let (_, cache) = forward_cached(&params, &cfg, &input, &cond, &plan).unwrap();
        let a = backward(&params, &cfg, &input, &cond, &plan, &cache, &weights).unwrap();
        let b = backward(&params, &cfg, &input, &cond, &plan, &cache, &weights).unwrap();
        assert_eq!(a, b);
    }
}
