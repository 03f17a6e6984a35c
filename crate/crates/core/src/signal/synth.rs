//! Deterministic quasi-periodic test-signal generator with known F0.
//!
//! Voiced segments are sums of harmonics with a dB-per-octave amplitude
//! rolloff and seeded random phases; the instantaneous frequency follows the
//! requested contour (log-linear within each segment) so the ground-truth
//! pitch is exact by construction. Unvoiced segments are high-passed white
//! noise at the configured level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{n_frames, Frame, FrameParams, FrameTrack};
use crate::signal::Waveform;

/// One piece of the F0 contour. Within a voiced segment the frequency moves
/// log-linearly from `start_hz` to `end_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Segment {
    pub duration_s: f64,
    pub start_hz: f64,
    pub end_hz: f64,
    pub voiced: bool,
}

impl F0Segment {
    pub fn voiced(duration_s: f64, start_hz: f64, end_hz: f64) -> Self {
        F0Segment {
            duration_s,
            start_hz,
            end_hz,
            voiced: true,
        }
    }

    pub fn unvoiced(duration_s: f64) -> Self {
        F0Segment {
            duration_s,
            start_hz: 0.0,
            end_hz: 0.0,
            voiced: false,
        }
    }
}

/// Recipe for one synthetic utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub segments: Vec<F0Segment>,
    pub harmonic_count: usize,
    /// Amplitude rolloff of harmonic k, in dB per octave.
    pub spectral_tilt_db: f64,
    /// Noise amplitude relative to the (unit-normalized) harmonic stack.
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::domain("sample_rate must be positive"));
        }
        if !(self.duration_s() > 0.0) {
            return Err(Error::domain("total duration must be positive"));
        }
        if self.harmonic_count == 0 {
            return Err(Error::domain("harmonic_count must be at least 1"));
        }
        if self.noise_level < 0.0 {
            return Err(Error::domain("noise_level must be non-negative"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for s in &self.segments {
            if s.voiced {
                for f in [s.start_hz, s.end_hz] {
                    if !(f > 0.0 && f < nyquist) {
                        return Err(Error::domain(format!(
                            "voiced segment f0 {f} Hz outside (0, {nyquist})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Synthesize a waveform together with its ground-truth F0/voicing track,
/// sampled at the frame rate of `frame` (contour values are taken at the
/// center of each pitch analysis window). Pure function of the spec.
pub fn synth_utterance(spec: &SynthSpec, frame: &FrameParams) -> Result<(Waveform, FrameTrack)> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let nyquist = fs / 2.0;
    let total: usize = spec
        .segments
        .iter()
        .map(|s| (s.duration_s * fs).round() as usize)
        .sum();
    if total == 0 {
        return Err(Error::domain("duration rounds to zero samples"));
    }

    // per-sample instantaneous f0 (0 while unvoiced) for synthesis and truth
    let mut inst_f0 = vec![0.0f64; total];
    let mut voiced = vec![false; total];
    let mut cursor = 0usize;
    for seg in &spec.segments {
        let n = (seg.duration_s * fs).round() as usize;
        for i in 0..n {
            let idx = cursor + i;
            if idx >= total {
                break;
            }
            if seg.voiced {
                inst_f0[idx] = if seg.start_hz == seg.end_hz {
                    seg.start_hz
                } else {
                    let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                    (seg.start_hz.ln() + frac * (seg.end_hz.ln() - seg.start_hz.ln())).exp()
                };
                voiced[idx] = true;
            }
        }
        cursor += n;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.harmonic_count;
    let mut phase: Vec<f64> = (0..k)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    let amp: Vec<f64> = (1..=k)
        .map(|h| 10f64.powf(-spec.spectral_tilt_db * (h as f64).log2() / 20.0))
        .collect();
    let amp_sum: f64 = amp.iter().sum();

    let mut samples = vec![0.0f64; total];
    let mut noise_prev = 0.0f64;
    for t in 0..total {
        let white: f64 = rng.random::<f64>() * 2.0 - 1.0;
        // first-difference high pass keeps the noise floor out of the f0 band
        let noise = 0.5 * (white - noise_prev);
        noise_prev = white;
        let mut s = spec.noise_level * noise;
        if voiced[t] {
            let f0 = inst_f0[t];
            let mut harm = 0.0;
            for (h, (&a, p)) in amp.iter().zip(phase.iter_mut()).enumerate() {
                let fh = (h + 1) as f64 * f0;
                if fh < 0.95 * nyquist {
                    harm += a * p.cos();
                }
                *p = (*p + std::f64::consts::TAU * fh / fs) % std::f64::consts::TAU;
            }
            s += 0.8 * harm / amp_sum;
        }
        samples[t] = s;
    }

    // normalize only if the stack overshoots; keeps levels comparable
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    let wave = Waveform::new(samples.iter().map(|&s| s as f32).collect(), spec.sample_rate)?;

    // ground truth sampled at the pitch-window centers
    let frames = n_frames(total, frame.frame_hop);
    let mut track = Vec::with_capacity(frames);
    for i in 0..frames {
        let center = (i * frame.frame_hop + frame.f0_frame_len / 2).min(total - 1);
        if voiced[center] {
            track.push(Frame::voiced(inst_f0[center]));
        } else {
            track.push(Frame::unvoiced());
        }
    }
    Ok((
        wave,
        FrameTrack {
            frame_hop: frame.frame_hop,
            frames: track,
        },
    ))
}

/// Knobs for procedurally generated corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub sample_rate: u32,
    pub utterance_s: f64,
    /// Voiced F0 endpoints are drawn log-uniformly inside this band.
    pub f0_low: f64,
    pub f0_high: f64,
    pub harmonic_count: usize,
    pub spectral_tilt_db: f64,
    pub noise_level: f64,
    /// Chance that a non-initial segment is unvoiced.
    pub unvoiced_prob: f64,
}

impl CorpusParams {
    pub fn default_for(sample_rate: u32) -> Self {
        CorpusParams {
            sample_rate,
            utterance_s: 1.0,
            f0_low: 150.0,
            f0_high: 250.0,
            harmonic_count: 10,
            spectral_tilt_db: 6.0,
            noise_level: 0.02,
            unvoiced_prob: 0.25,
        }
    }
}

/// Deterministic recipe for utterance `index` of a corpus: two to four
/// segments with connected log-uniform F0 endpoints inside the band, the
/// first segment always voiced. Each utterance gets an independent stream
/// derived from `base_seed`.
pub fn corpus_spec(params: &CorpusParams, index: usize, base_seed: u64) -> SynthSpec {
    let seed = base_seed.wrapping_add((index as u64).wrapping_mul(0x9E3779B97F4A7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_seg = 2 + (rng.random::<u32>() % 3) as usize;
    let weights: Vec<f64> = (0..n_seg).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total_w: f64 = weights.iter().sum();

    let log_band = params.f0_high.ln() - params.f0_low.ln();
    let mut draw_f0 = |rng: &mut ChaCha8Rng| (params.f0_low.ln() + rng.random::<f64>() * log_band).exp();
    let mut f0 = draw_f0(&mut rng);
    let mut segments = Vec::with_capacity(n_seg);
    for (i, w) in weights.iter().enumerate() {
        let duration_s = params.utterance_s * w / total_w;
        let voiced = i == 0 || rng.random::<f64>() >= params.unvoiced_prob;
        if voiced {
            let end = draw_f0(&mut rng);
            segments.push(F0Segment::voiced(duration_s, f0, end));
            f0 = end;
        } else {
            segments.push(F0Segment::unvoiced(duration_s));
        }
    }
    SynthSpec {
        sample_rate: params.sample_rate,
        segments,
        harmonic_count: params.harmonic_count,
        spectral_tilt_db: params.spectral_tilt_db,
        noise_level: params.noise_level,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_spec(f0: f64, noise: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            sample_rate: 8000,
            segments: vec![F0Segment::voiced(1.0, f0, f0)],
            harmonic_count: 10,
            spectral_tilt_db: 6.0,
            noise_level: noise,
            seed,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let fp = FrameParams::for_sample_rate(8000);
        let spec = constant_spec(220.0, 0.05, 7);
        let (a, ta) = synth_utterance(&spec, &fp).unwrap();
        let (b, tb) = synth_utterance(&spec, &fp).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(ta, tb);
    }

    #[test]
    fn ground_truth_reads_the_contour() {
        let fp = FrameParams::for_sample_rate(8000);
        let (w, t) = synth_utterance(&constant_spec(220.0, 0.0, 3), &fp).unwrap();
        assert_eq!(w.sample_rate, 8000);
        assert_eq!(w.len(), 8000);
        for f in &t.frames {
            assert!(f.voiced);
            assert_eq!(f.f0, 220.0);
        }
    }

    #[test]
    fn peak_is_bounded() {
        let (w, _) = synth_utterance(
            &constant_spec(150.0, 0.3, 11),
            &FrameParams::for_sample_rate(8000),
        )
        .unwrap();
        assert!(w.samples.iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn rejects_f0_above_nyquist() {
        let mut spec = constant_spec(220.0, 0.0, 1);
        spec.segments[0].end_hz = 6000.0;
        assert!(synth_utterance(&spec, &FrameParams::for_sample_rate(8000)).is_err());
    }

    #[test]
    fn corpus_specs_are_deterministic_and_in_band() {
        let p = CorpusParams::default_for(8000);
        for i in 0..10 {
            let a = corpus_spec(&p, i, 42);
            let b = corpus_spec(&p, i, 42);
            assert_eq!(a, b);
            assert!(a.segments[0].voiced);
            assert!((a.duration_s() - p.utterance_s).abs() < 1e-9);
            for seg in a.segments.iter().filter(|s| s.voiced) {
                for f in [seg.start_hz, seg.end_hz] {
                    assert!(f >= p.f0_low && f <= p.f0_high);
                }
            }
        }
        assert_ne!(corpus_spec(&p, 0, 42), corpus_spec(&p, 1, 42));
        assert_ne!(corpus_spec(&p, 0, 42), corpus_spec(&p, 0, 43));
    }

    #[test]
    fn unvoiced_segments_are_marked() {
        let fp = FrameParams::for_sample_rate(8000);
        let spec = SynthSpec {
            sample_rate: 8000,
            segments: vec![
                F0Segment::voiced(0.3, 200.0, 200.0),
                F0Segment::unvoiced(0.2),
                F0Segment::voiced(0.3, 180.0, 220.0),
            ],
            harmonic_count: 8,
            spectral_tilt_db: 6.0,
            noise_level: 0.02,
            seed: 5,
        };
        let (_, t) = synth_utterance(&spec, &fp).unwrap();
        assert!(t.frames.iter().any(|f| f.voiced));
        assert!(t.frames.iter().any(|f| !f.voiced));
        for f in &t.frames {
            assert_eq!(f.voiced, f.f0 > 0.0);
        }
    }
}
