//! Analysis-side oracle: the F0 tracker must recover the known contour of
//! the synthetic generator.

use qpnet_core::features::{continuous_f0, estimate_f0, FrameParams};
use qpnet_core::signal::{synth_utterance, F0Segment, SynthSpec, Waveform};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(segments: Vec<F0Segment>, noise: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        sample_rate: 8000,
        segments,
        harmonic_count: 10,
        spectral_tilt_db: 6.0,
        noise_level: noise,
        seed,
    }
}

/// Frames whose full pitch window lies inside one voiced segment.
fn interior(frames: usize, fp: &FrameParams, total: usize) -> impl Iterator<Item = usize> + '_ {
    (0..frames).filter(move |i| {
        let start = i * fp.frame_hop;
        start > fp.f0_frame_len && start + 2 * fp.f0_frame_len < total
    })
}

#[test]
fn recovers_constant_220hz_within_2hz() {
    let fp = FrameParams::for_sample_rate(8000);
    let (w, truth) = synth_utterance(&spec(vec![F0Segment::voiced(1.0, 220.0, 220.0)], 0.0, 3), &fp).unwrap();
    let est = estimate_f0(&w, &fp).unwrap();
    assert_eq!(est.len(), truth.len());
    let mut checked = 0;
    for i in interior(est.len(), &fp, w.len()) {
        assert!(est.frames[i].voiced, "frame {i} should be voiced");
        let err = (est.frames[i].f0 - 220.0).abs();
        assert!(err <= 2.0, "frame {i}: estimated {} Hz", est.frames[i].f0);
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn recovers_slow_glide_within_2hz() {
    let fp = FrameParams::for_sample_rate(8000);
    let (w, truth) = synth_utterance(
        &spec(vec![F0Segment::voiced(1.2, 160.0, 200.0)], 0.01, 8),
        &fp,
    )
    .unwrap();
    let est = estimate_f0(&w, &fp).unwrap();
    for i in interior(est.len(), &fp, w.len()) {
        assert!(est.frames[i].voiced);
        let err = (est.frames[i].f0 - truth.frames[i].f0).abs();
        assert!(
            err <= 2.0,
            "frame {i}: estimated {} vs truth {}",
            est.frames[i].f0,
            truth.frames[i].f0
        );
    }
}

#[test]
fn white_noise_is_mostly_unvoiced_at_threshold_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<f32> = (0..8000).map(|_| rng.random::<f32>() * 1.6 - 0.8).collect();
    let w = Waveform::new(samples, 8000).unwrap();
    let mut fp = FrameParams::for_sample_rate(8000);
    fp.voicing_threshold = 0.5;
    let t = estimate_f0(&w, &fp).unwrap();
    let unvoiced = t.frames.iter().filter(|f| !f.voiced).count();
    assert!(
        unvoiced * 10 >= t.len() * 9,
        "only {unvoiced} of {} frames unvoiced",
        t.len()
    );
}

#[test]
fn continuous_f0_agrees_on_voiced_frames_of_mixed_track() {
    let fp = FrameParams::for_sample_rate(8000);
    let (w, _) = synth_utterance(
        &spec(
            vec![
                F0Segment::voiced(0.4, 180.0, 220.0),
                F0Segment::unvoiced(0.2),
                F0Segment::voiced(0.4, 220.0, 170.0),
            ],
            0.02,
            5,
        ),
        &fp,
    )
    .unwrap();
    let est = estimate_f0(&w, &fp).unwrap();
    let cont = continuous_f0(&est).unwrap();
    assert_eq!(cont.len(), est.len());
    for (i, f) in est.frames.iter().enumerate() {
        assert!(cont[i] > 0.0);
        if f.voiced {
            assert_eq!(cont[i], f.f0, "voiced frame {i} changed");
        }
    }
}
