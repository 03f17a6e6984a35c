//! Scratch single-utterance overfit probe (run with --ignored).

use qpnet_core::dilation::NetConfig;
use qpnet_core::features::{analyze, FrameParams};
use qpnet_core::net::ModelParams;
use qpnet_core::signal::{synth_utterance, F0Segment, SynthSpec};
use qpnet_core::train::{load_corpus_from_memory, train_loop, TrainConfig};

#[test]
#[ignore]
fn probe_overfit() {
    let fs = 6000u32;
    let noise: f64 = std::env::var("PROBE_NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let lr: f64 = std::env::var("PROBE_LR").ok().and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let steps: usize = std::env::var("PROBE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(200);
    let fp = FrameParams::for_sample_rate(fs);
    let cfg = NetConfig::preset("tiny-qpnet", fs, fp.aux_dim()).unwrap();
    let spec = SynthSpec {
        sample_rate: fs,
        segments: vec![F0Segment::voiced(1.0, 180.0, 220.0)],
        harmonic_count: 10,
        spectral_tilt_db: 6.0,
        noise_level: noise,
        seed: 5,
    };
    let (w, gt) = synth_utterance(&spec, &fp).unwrap();
    let an = analyze(&w, &fp).unwrap();
    let corpus = vec![(w, gt.with_spectral_from(&an).unwrap())];
    let utts = load_corpus_from_memory(&corpus, &cfg).unwrap();
    let mut params: ModelParams<f32> = ModelParams::init(&cfg, 1).unwrap();
    let tc = TrainConfig {
        learning_rate: lr,
        batch_size: 2,
        crop_len: 600,
        max_steps: steps,
        seed: 1,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_loop(&mut params, &cfg, &tc, &utts, dir.path()).unwrap();
    let tail: Vec<f64> = out.losses.iter().rev().take(10).map(|(_, l)| *l).collect();
    println!(
        "noise {noise} lr {lr} steps {steps}: final {:.3}, last-10 mean {:.3}",
        out.final_loss,
        tail.iter().sum::<f64>() / tail.len() as f64
    );
}
