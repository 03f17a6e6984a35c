//! Structural properties of the network: the adaptive path generalizes the
//! fixed path, and the receptive field is exact.

use qpnet_core::dilation::{receptive_field, DilationPlan, NetConfig};
use qpnet_core::features::ConditioningMatrix;
use qpnet_core::generate::{generate, GenMode};
use qpnet_core::net::{forward, ModelParams};

fn cond_matrix<T: qpnet_core::num::Scalar>(n: usize, f0: f64) -> ConditioningMatrix<T> {
    let rows: Vec<Vec<T>> = (0..n)
        .map(|i| {
            vec![
                T::from_f64(f0.ln()),
                T::from_f64(1.0),
                T::from_f64((i as f64 * 0.21).sin()),
            ]
        })
        .collect();
    ConditioningMatrix::from_rows(rows, 0.0).unwrap()
}

fn base_config() -> NetConfig {
    NetConfig {
        fixed_layers: 3,
        fixed_repeats: 2,
        adaptive_layers: 0,
        adaptive_repeats: 0,
        residual_channels: 12,
        skip_channels: 8,
        cycle_divisor: 8,
        sample_rate: 8000,
        aux_dim: 3,
        f0_floor: 40.0,
        f0_ceil: 800.0,
    }
}

/// Adaptive blocks at a constant dilation factor of 1 are exactly the fixed
/// blocks: the same weights produce bit-identical logits and samples.
#[test]
fn adaptive_with_unit_factor_equals_fixed_network() {
    let n = 120;
    let fixed_cfg = base_config();
    let adaptive_cfg = NetConfig {
        fixed_layers: 0,
        fixed_repeats: 0,
        adaptive_layers: 3,
        adaptive_repeats: 2,
        ..base_config()
    };

    // identical shapes in identical order, so the same seed gives the
    // same weights
    let params_f: ModelParams<f32> = ModelParams::init(&fixed_cfg, 31).unwrap();
    let params_a: ModelParams<f32> = ModelParams::init(&adaptive_cfg, 31).unwrap();
    assert_eq!(params_f.blocks.len(), params_a.blocks.len());
    assert_eq!(params_f.blocks[0], params_a.blocks[0]);

    let cond = cond_matrix::<f32>(n, 200.0);
    let plan_f = DilationPlan::new(&fixed_cfg, vec![1; n]);
    let plan_a = DilationPlan::new(&adaptive_cfg, vec![1; n]);

    let input: Vec<f32> = (0..n).map(|i| ((i % 23) as f32 / 23.0) - 0.5).collect();
    let logits_f = forward(&params_f, &fixed_cfg, &input, &cond, &plan_f).unwrap();
    let logits_a = forward(&params_a, &adaptive_cfg, &input, &cond, &plan_a).unwrap();
    for t in 0..n {
        assert_eq!(logits_f.row(t), logits_a.row(t), "logits diverge at t={t}");
    }

    // the incremental step sequence agrees as well
    let wav_f = generate(&params_f, &fixed_cfg, &cond, &plan_f, GenMode::Sample, 5).unwrap();
    let wav_a = generate(&params_a, &adaptive_cfg, &cond, &plan_a, GenMode::Sample, 5).unwrap();
    assert_eq!(wav_f.samples, wav_a.samples);
}

/// Perturbing the (teacher-forced) input exactly `receptive_field` steps back
/// changes the logits; one step further back cannot.
#[test]
fn receptive_field_is_exact() {
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
    let params: ModelParams<f64> = ModelParams::init(&cfg, 77).unwrap();

    for f0 in [100.0f64, 250.0] {
        let e = qpnet_core::dilation::dilation_factor(f0, cfg.sample_rate, cfg.cycle_divisor, (cfg.f0_floor, cfg.f0_ceil)).unwrap();
        let rf = receptive_field(&cfg, e);
        let n = rf + 24;
        let t = n - 1;
        let cond = cond_matrix::<f64>(n, f0);
        let plan = DilationPlan::new(&cfg, vec![e; n]);
        let input: Vec<f64> = (0..n).map(|i| ((i * 13 % 41) as f64 / 41.0) - 0.5).collect();
        let base = forward(&params, &cfg, &input, &cond, &plan).unwrap();

        // at distance rf: still inside the field
        let mut inside = input.clone();
        inside[t - rf] += 1.0;
        let out = forward(&params, &cfg, &inside, &cond, &plan).unwrap();
        let diff: f64 = base
            .row(t)
            .iter()
            .zip(out.row(t))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-12, "f0={f0}: no effect at distance rf={rf}");

        // at distance rf + 1: bitwise identical
        let mut outside = input.clone();
        outside[t - rf - 1] += 1.0;
        let out = forward(&params, &cfg, &outside, &cond, &plan).unwrap();
        assert_eq!(
            base.row(t),
            out.row(t),
            "f0={f0}: effect leaked past rf+1={}",
            rf + 1
        );
    }
}
