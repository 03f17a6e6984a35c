//! Scratch timing probe (not part of the suite; run with --ignored).

use std::time::Instant;

use qpnet_core::dilation::NetConfig;
use qpnet_core::features::{analyze, FrameParams};
use qpnet_core::net::ModelParams;
use qpnet_core::signal::{corpus_spec, synth_utterance, CorpusParams};
use qpnet_core::train::{
    crop_utterance, prepare_utterance, train_step, AdamState, TrainConfig, Utterance,
};

#[test]
#[ignore]
fn probe_train_speed() {
    let fs = 6000u32;
    let fp = FrameParams::for_sample_rate(fs);
    let cfg = NetConfig::preset("tiny-qpnet", fs, fp.aux_dim()).unwrap();
    let cp = CorpusParams {
        utterance_s: 0.9,
        unvoiced_prob: 0.2,
        ..CorpusParams::default_for(fs)
    };
    let t0 = Instant::now();
    let utts: Vec<Utterance<f32>> = (0..6)
        .map(|i| {
            let spec = corpus_spec(&cp, i, 7);
            let (w, gt) = synth_utterance(&spec, &fp).unwrap();
            let an = analyze(&w, &fp).unwrap();
            let track = gt.with_spectral_from(&an).unwrap();
            prepare_utterance(&w, &track, &cfg).unwrap()
        })
        .collect();
    println!("corpus prep: {:?}", t0.elapsed());

    let mut params: ModelParams<f32> = ModelParams::init(&cfg, 1).unwrap();
    let mut opt = AdamState::new(&cfg);
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        crop_len: 600,
        max_steps: 0,
        seed: 1,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let batch: Vec<Utterance<f32>> = vec![
        crop_utterance(&utts[0], 100, tc.crop_len),
        crop_utterance(&utts[1], 900, tc.crop_len),
    ];
    let t0 = Instant::now();
    let mut loss = 0.0;
    let steps = 40;
    for _ in 0..steps {
        loss = train_step(&mut params, &mut opt, &cfg, &tc, &batch).unwrap();
    }
    let dt = t0.elapsed();
    println!(
        "{} steps in {:?} ({:?}/step), loss {:.3}",
        steps,
        dt,
        dt / steps,
        loss
    );
}
