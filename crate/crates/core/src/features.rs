//! Frame-level acoustic analysis and the frame-to-sample conditioning
//! pipeline: F0 estimation, continuous-F0 interpolation, mel-cepstral
//! coefficients, hold upsampling and F0 scaling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::num::Scalar;
use crate::signal::Waveform;

/// Energy floor applied before taking logs of mel filterbank outputs.
pub const LOG_FLOOR: f64 = 1e-10;

/// Analysis parameters shared by the F0 tracker and the mel-cepstral
/// front end. The pitch window is longer than the spectral window because
/// the autocorrelation search needs two full periods of the lowest F0.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParams {
    /// Hop between consecutive frames, in samples.
    pub frame_hop: usize,
    /// Autocorrelation window length, in samples.
    pub f0_frame_len: usize,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Normalized-correlation peak value above which a frame is voiced.
    pub voicing_threshold: f64,
    /// Spectral analysis window length, in samples.
    pub mcep_frame_len: usize,
    pub n_mels: usize,
    /// Number of cepstral coefficients kept (including c0).
    pub mcep_dim: usize,
}

impl FrameParams {
    /// Defaults: 5 ms hop, 50 ms pitch window, 25 ms spectral window,
    /// 40-800 Hz search range, voicing threshold 0.45.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let ms = |m: f64| (sample_rate as f64 * m / 1000.0).round() as usize;
        FrameParams {
            frame_hop: ms(5.0),
            f0_frame_len: ms(50.0),
            f0_min: 40.0,
            f0_max: 800.0,
            voicing_threshold: 0.45,
            mcep_frame_len: ms(25.0),
            n_mels: 20,
            mcep_dim: 10,
        }
    }

    /// Conditioning vector width: continuous log-F0, U/V flag, mcep.
    pub fn aux_dim(&self) -> usize {
        2 + self.mcep_dim
    }
}

/// Number of analysis frames covering `total_len` samples at hop `hop`.
pub fn n_frames(total_len: usize, hop: usize) -> usize {
    total_len.div_ceil(hop)
}

/// One analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// F0 in Hz; 0 exactly when the frame is unvoiced.
    pub f0: f64,
    pub voiced: bool,
    pub log_energy: f64,
    pub mcep: Vec<f64>,
}

impl Frame {
    pub fn unvoiced() -> Self {
        Frame {
            f0: 0.0,
            voiced: false,
            log_energy: LOG_FLOOR.ln(),
            mcep: Vec::new(),
        }
    }

    pub fn voiced(f0: f64) -> Self {
        Frame {
            f0,
            voiced: true,
            log_energy: 0.0,
            mcep: Vec::new(),
        }
    }
}

/// Per-frame acoustic features of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    pub frame_hop: usize,
    pub frames: Vec<Frame>,
}

impl FrameTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.frames.iter().filter(|f| f.voiced).count()
    }

    /// Replace mcep and log-energy with the values from `other`
    /// (same frame count required). Used to combine a ground-truth pitch
    /// contour with analyzed spectral features.
    pub fn with_spectral_from(&self, other: &FrameTrack) -> Result<FrameTrack> {
        check_len("frame tracks", self.len(), other.len())?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(gt, an)| Frame {
                f0: gt.f0,
                voiced: gt.voiced,
                log_energy: an.log_energy,
                mcep: an.mcep.clone(),
            })
            .collect();
        Ok(FrameTrack {
            frame_hop: self.frame_hop,
            frames,
        })
    }
}

// ---------------------------------------------------------------------------
// F0 estimation
// ---------------------------------------------------------------------------

/// Normalized-autocorrelation F0 tracker with parabolic peak interpolation.
///
/// A frame is voiced iff its best normalized correlation peak in the lag
/// range `[fs/f0_max, fs/f0_min]` reaches `voicing_threshold`. Among local
/// maxima within 90% of the best peak the smallest lag wins, which suppresses
/// the subharmonic (octave-down) errors plain argmax is prone to.
pub fn estimate_f0(w: &Waveform, p: &FrameParams) -> Result<FrameTrack> {
    let fs = w.sample_rate as f64;
    if !(p.f0_min > 0.0 && p.f0_min < p.f0_max && p.f0_max < fs / 2.0) {
        return Err(Error::config(format!(
            "f0 search range [{}, {}] invalid for sample rate {}",
            p.f0_min, p.f0_max, w.sample_rate
        )));
    }
    if (p.f0_frame_len as f64) < 2.0 * fs / p.f0_min {
        return Err(Error::config(format!(
            "f0_frame_len {} shorter than twice the {} sample lag window of f0_min {}",
            p.f0_frame_len,
            (fs / p.f0_min).ceil(),
            p.f0_min
        )));
    }

    let lag_min = (fs / p.f0_max).ceil().max(1.0) as usize;
    let lag_max = (fs / p.f0_min).floor() as usize;
    let n = p.f0_frame_len;
    let total = w.samples.len();
    let frames = n_frames(total, p.frame_hop);

    let mut out = Vec::with_capacity(frames);
    let mut window = vec![0.0f64; n];
    // correlation values for lags lag_min-1 ..= lag_max+1
    let mut corr = vec![0.0f64; lag_max + 2];

    for i in 0..frames {
        let start = i * p.frame_hop;
        for (j, w_j) in window.iter_mut().enumerate() {
            *w_j = if start + j < total {
                w.samples[start + j] as f64
            } else {
                0.0
            };
        }
        let mean = window.iter().sum::<f64>() / n as f64;
        for w_j in window.iter_mut() {
            *w_j -= mean;
        }

        // prefix sums of squared samples for O(1) per-lag normalization
        let mut prefix = vec![0.0f64; n + 1];
        for j in 0..n {
            prefix[j + 1] = prefix[j] + window[j] * window[j];
        }
        let energy = prefix[n];
        let mut frame = Frame::unvoiced();
        frame.log_energy = (energy / n as f64 + LOG_FLOOR).ln();

        if energy >= 1e-12 {
            let lo = lag_min.saturating_sub(1).max(1);
            let hi = (lag_max + 1).min(n - 1);
            for (tau, c) in corr.iter_mut().enumerate() {
                if tau < lo || tau > hi {
                    *c = 0.0;
                    continue;
                }
                let mut raw = 0.0;
                for j in 0..n - tau {
                    raw += window[j] * window[j + tau];
                }
                let ea = prefix[n - tau];
                let eb = prefix[n] - prefix[tau];
                *c = raw / (ea * eb).sqrt().max(1e-20);
            }

            let search = lag_min.max(lo + 1)..=lag_max.min(hi - 1);
            let best = search
                .clone()
                .map(|t| corr[t])
                .fold(f64::NEG_INFINITY, f64::max);
            if best >= p.voicing_threshold {
                // earliest local maximum close to the global best
                let tau = search
                    .clone()
                    .find(|&t| {
                        corr[t] >= corr[t - 1] && corr[t] >= corr[t + 1] && corr[t] >= 0.9 * best
                    })
                    .unwrap_or_else(|| {
                        search
                            .clone()
                            .max_by(|&a, &b| corr[a].total_cmp(&corr[b]))
                            .unwrap()
                    });
                let (ym, y0, yp) = (corr[tau - 1], corr[tau], corr[tau + 1]);
                let denom = ym - 2.0 * y0 + yp;
                let delta = if denom.abs() > 1e-12 {
                    (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                let f0 = (fs / (tau as f64 + delta)).clamp(p.f0_min, p.f0_max);
                frame.f0 = f0;
                frame.voiced = true;
            }
        }
        out.push(frame);
    }

    Ok(FrameTrack {
        frame_hop: p.frame_hop,
        frames: out,
    })
}

// ---------------------------------------------------------------------------
// Continuous F0
// ---------------------------------------------------------------------------

/// Fill unvoiced gaps of an F0 track so every frame has a positive value.
///
/// Voiced frames pass through unchanged. Interior gaps are interpolated
/// linearly in log-F0 between the flanking voiced frames; leading and
/// trailing unvoiced runs hold the nearest voiced value. The track's U/V
/// flags are untouched; the continuous contour is returned separately.
pub fn continuous_f0(track: &FrameTrack) -> Result<Vec<f64>> {
    let n = track.len();
    let voiced: Vec<usize> = (0..n).filter(|&i| track.frames[i].voiced).collect();
    if voiced.is_empty() {
        return Err(Error::domain(
            "cannot interpolate F0: track has no voiced frames",
        ));
    }

    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate() {
        if track.frames[i].voiced {
            *o = track.frames[i].f0;
        }
    }

    let first = voiced[0];
    let last = *voiced.last().unwrap();
    for i in 0..first {
        out[i] = track.frames[first].f0;
    }
    for o in out.iter_mut().skip(last + 1) {
        *o = track.frames[last].f0;
    }
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let la = track.frames[a].f0.ln();
            let lb = track.frames[b].f0.ln();
            for i in a + 1..b {
                let frac = (i - a) as f64 / (b - a) as f64;
                out[i] = (la + frac * (lb - la)).exp();
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mel-cepstrum
// ---------------------------------------------------------------------------

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins 0..=n_fft/2.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let n_bins = n_fft / 2 + 1;
    let mel_max = hz_to_mel(sample_rate / 2.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let mut taps = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                if w > 0.0 {
                    taps.push((k, w));
                }
            }
            taps
        })
        .collect()
}

/// Orthonormal type-II DCT of `x`, truncated to `dim` coefficients.
fn dct_ii(x: &[f64], dim: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..dim)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n))
                        .cos()
                })
                .sum();
            scale * sum
        })
        .collect()
}

/// Mel-cepstral analysis: Hann window, power spectrum, mel filterbank,
/// log with [`LOG_FLOOR`], orthonormal DCT-II truncated to `mcep_dim`.
/// Frames reaching past the signal end are zero-padded.
pub fn melcep_analyze(w: &Waveform, p: &FrameParams) -> Result<Vec<Vec<f64>>> {
    if p.mcep_dim > p.n_mels {
        return Err(Error::config(format!(
            "mcep_dim {} exceeds n_mels {}",
            p.mcep_dim, p.n_mels
        )));
    }
    let n = p.mcep_frame_len;
    let n_fft = n.next_power_of_two();
    let fs = w.sample_rate as f64;
    let frames = n_frames(w.samples.len(), p.frame_hop);
    let bank = mel_filterbank(p.n_mels, n_fft, fs);
    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();

    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let start = i * p.frame_hop;
        for (j, b) in buf.iter_mut().enumerate() {
            let s = if j < n && start + j < w.samples.len() {
                w.samples[start + j] as f64 * hann[j]
            } else {
                0.0
            };
            *b = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        let log_mel: Vec<f64> = bank
            .iter()
            .map(|taps| {
                let e: f64 = taps.iter().map(|&(k, w)| buf[k].norm_sqr() * w).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        out.push(dct_ii(&log_mel, p.mcep_dim));
    }
    Ok(out)
}

/// Full analysis: F0 track plus mel-cepstra on a shared hop.
pub fn analyze(w: &Waveform, p: &FrameParams) -> Result<FrameTrack> {
    let mut track = estimate_f0(w, p)?;
    let mcep = melcep_analyze(w, p)?;
    check_len("f0 vs mcep frames", track.len(), mcep.len())?;
    for (frame, m) in track.frames.iter_mut().zip(mcep) {
        frame.mcep = m;
    }
    Ok(track)
}

// ---------------------------------------------------------------------------
// Upsampling and conditioning
// ---------------------------------------------------------------------------

/// Per-sample conditioning vectors (the frame features after upsampling).
///
/// Row layout: `[log(f0) - f0_log_offset, U/V flag, mcep...]`. The offset is
/// kept so consumers can recover absolute F0 from channel 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningMatrix<T> {
    dim: usize,
    data: Vec<T>,
    pub f0_log_offset: f64,
}

impl<T: Scalar> ConditioningMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>, f0_log_offset: f64) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::domain("conditioning matrix must be non-empty"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            check_len("conditioning row width", r.len(), dim)?;
            data.extend_from_slice(r);
        }
        Ok(ConditioningMatrix {
            dim,
            data,
            f0_log_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Absolute F0 in Hz at sample `t`, recovered from channel 0.
    pub fn f0_hz(&self, t: usize) -> f64 {
        (self.row(t)[0].to_f64() + self.f0_log_offset).exp()
    }

    pub fn slice(&self, start: usize, end: usize) -> ConditioningMatrix<T> {
        ConditioningMatrix {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            f0_log_offset: self.f0_log_offset,
        }
    }
}

/// Hold upsampling: sample `s` receives the vector of frame `s / frame_hop`;
/// when the target runs past the last frame boundary the final frame's
/// vector is repeated.
pub fn upsample<T: Scalar>(
    frames: &[Vec<f64>],
    frame_hop: usize,
    target_len: usize,
    f0_log_offset: f64,
) -> Result<ConditioningMatrix<T>> {
    if frames.is_empty() {
        return Err(Error::domain("cannot upsample an empty track"));
    }
    if frame_hop == 0 {
        return Err(Error::config("frame_hop must be positive"));
    }
    if frames.len() * frame_hop + frame_hop < target_len {
        return Err(Error::domain(format!(
            "{} frames at hop {} cannot cover {} samples",
            frames.len(),
            frame_hop,
            target_len
        )));
    }
    let dim = frames[0].len();
    let mut data = Vec::with_capacity(target_len * dim);
    for s in 0..target_len {
        let idx = (s / frame_hop).min(frames.len() - 1);
        check_len("frame vector width", frames[idx].len(), dim)?;
        data.extend(frames[idx].iter().map(|&v| T::from_f64(v)));
    }
    Ok(ConditioningMatrix {
        dim,
        data,
        f0_log_offset,
    })
}

/// Assemble the per-sample conditioning for one utterance.
///
/// Channel 0 is continuous log-F0 centered on `f0_center_hz`, channel 1 the
/// U/V flag, and the remaining channels the mcep standardized per utterance
/// and per coefficient (keeps gate pre-activations in a trainable range;
/// the same statistics are recomputed from the conditioning track at
/// generation time, so train and synthesis see the same mapping).
pub fn build_conditioning<T: Scalar>(
    track: &FrameTrack,
    cont_f0: &[f64],
    target_len: usize,
    f0_center_hz: f64,
) -> Result<ConditioningMatrix<T>> {
    check_len("track vs continuous f0", track.len(), cont_f0.len())?;
    let mcep_dim = track.frames.first().map(|f| f.mcep.len()).unwrap_or(0);
    let n = track.len() as f64;
    let mut mean = vec![0.0f64; mcep_dim];
    let mut var = vec![0.0f64; mcep_dim];
    for f in &track.frames {
        check_len("mcep width", f.mcep.len(), mcep_dim)?;
        for (m, &c) in mean.iter_mut().zip(&f.mcep) {
            *m += c;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for f in &track.frames {
        for ((v, &c), &m) in var.iter_mut().zip(&f.mcep).zip(&mean) {
            *v += (c - m) * (c - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-6)).collect();

    let offset = f0_center_hz.ln();
    let rows: Vec<Vec<f64>> = track
        .frames
        .iter()
        .zip(cont_f0)
        .map(|(f, &c)| {
            let mut row = Vec::with_capacity(2 + mcep_dim);
            row.push(c.ln() - offset);
            row.push(if f.voiced { 1.0 } else { 0.0 });
            for j in 0..mcep_dim {
                row.push((f.mcep[j] - mean[j]) / std[j]);
            }
            row
        })
        .collect();
    upsample(&rows, track.frame_hop, target_len, offset)
}

// ---------------------------------------------------------------------------
// F0 scaling
// ---------------------------------------------------------------------------

/// Multiply every voiced F0 by `ratio`; U/V flags and mcep are untouched.
pub fn scale_f0(track: &FrameTrack, ratio: f64, sample_rate: u32) -> Result<FrameTrack> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::domain(format!("scaling ratio {ratio} must be positive")));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mut out = track.clone();
    for f in out.frames.iter_mut() {
        if f.voiced {
            let scaled = f.f0 * ratio;
            if scaled >= nyquist {
                return Err(Error::domain(format!(
                    "scaled f0 {scaled} Hz reaches the Nyquist limit {nyquist} Hz"
                )));
            }
            f.f0 = scaled;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// QPF1 feature files
// ---------------------------------------------------------------------------

const QPF1_MAGIC: &[u8; 4] = b"QPF1";

/// Write a track as a QPF1 file: magic, frame count, vector dimension and
/// frame hop as u32 LE, then row-major f32 LE rows of
/// `[f0, voiced, log_energy, mcep...]`.
pub fn write_qpf1(path: impl AsRef<Path>, track: &FrameTrack) -> Result<()> {
    let mcep_dim = track.frames.first().map(|f| f.mcep.len()).unwrap_or(0);
    let dim = 3 + mcep_dim;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(QPF1_MAGIC)?;
    out.write_all(&(track.len() as u32).to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(track.frame_hop as u32).to_le_bytes())?;
    for f in &track.frames {
        check_len("mcep width", f.mcep.len(), mcep_dim)?;
        out.write_all(&(f.f0 as f32).to_le_bytes())?;
        out.write_all(&(if f.voiced { 1.0f32 } else { 0.0 }).to_le_bytes())?;
        out.write_all(&(f.log_energy as f32).to_le_bytes())?;
        for &c in &f.mcep {
            out.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_qpf1(path: impl AsRef<Path>) -> Result<FrameTrack> {
    let path = path.as_ref();
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rd = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    rd.read_exact(&mut head)?;
    if &head[0..4] != QPF1_MAGIC {
        return Err(fail("bad magic".into()));
    }
    let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let hop = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    if dim < 3 {
        return Err(fail(format!("vector dimension {dim} below minimum of 3")));
    }
    let mut body = Vec::new();
    rd.read_to_end(&mut body)?;
    if body.len() != count * dim * 4 {
        return Err(fail(format!(
            "expected {} bytes of data, found {}",
            count * dim * 4,
            body.len()
        )));
    }
    let mut vals = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let f0 = vals.next().unwrap();
        let voiced = vals.next().unwrap() > 0.5;
        let log_energy = vals.next().unwrap();
        let mcep: Vec<f64> = (0..dim - 3).map(|_| vals.next().unwrap()).collect();
        if voiced != (f0 > 0.0) {
            return Err(fail(format!(
                "inconsistent frame: voiced={voiced} with f0={f0}"
            )));
        }
        frames.push(Frame {
            f0,
            voiced,
            log_energy,
            mcep,
        });
    }
    Ok(FrameTrack {
        frame_hop: hop,
        frames,
    })
}
