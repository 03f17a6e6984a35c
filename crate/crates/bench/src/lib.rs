//! Shared fixtures for the benchmark suite.

use qpnet_core::dilation::{build_plan, DilationPlan, NetConfig};
use qpnet_core::features::{analyze, ConditioningMatrix, FrameParams};
use qpnet_core::net::ModelParams;
use qpnet_core::signal::{synth_utterance, F0Segment, SynthSpec, Waveform};
use qpnet_core::train::{prepare_utterance, Utterance};

pub struct Fixture {
    pub config: NetConfig,
    pub params: ModelParams<f32>,
    pub utterance: Utterance<f32>,
    pub wave: Waveform,
    pub frame: FrameParams,
}

/// A half-second glide through the tiny preset at 8 kHz.
pub fn tiny_fixture() -> Fixture {
    let fs = 8000;
    let frame = FrameParams::for_sample_rate(fs);
    let config = NetConfig::preset("tiny-qpnet", fs, frame.aux_dim()).unwrap();
    let spec = SynthSpec {
        sample_rate: fs,
        segments: vec![F0Segment::voiced(0.5, 160.0, 240.0)],
        harmonic_count: 10,
        spectral_tilt_db: 6.0,
        noise_level: 0.005,
        seed: 1,
    };
    let (wave, truth) = synth_utterance(&spec, &frame).unwrap();
    let analyzed = analyze(&wave, &frame).unwrap();
    let track = truth.with_spectral_from(&analyzed).unwrap();
    let params = ModelParams::init(&config, 1).unwrap();
    let utterance = prepare_utterance(&wave, &track, &config).unwrap();
    Fixture {
        config,
        params,
        utterance,
        wave,
        frame,
    }
}

pub fn sweep_conditioning(n: usize) -> (NetConfig, ConditioningMatrix<f32>, DilationPlan) {
    let config = NetConfig::preset("tiny-qpnet", 8000, 3).unwrap();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let frac = i as f64 / n as f64;
            let f0 = (80.0f64.ln() + frac * (400.0f64.ln() - 80.0f64.ln())).exp();
            vec![f0.ln() as f32, 1.0, 0.0]
        })
        .collect();
    let cond = ConditioningMatrix::from_rows(rows, 0.0).unwrap();
    let plan = build_plan(&config, &cond).unwrap();
    (config, cond, plan)
}
