//! Objective evaluation: log-F0 RMSE between conditional and extracted
//! pitch, mel-cepstral distortion, and the F0-scaling experiment grid.
//!
//! Log-F0 uses the natural logarithm throughout (the base is stated in the
//! report header since it moves the absolute numbers).

use std::fmt;
use std::str::FromStr;

use crate::dilation::{build_plan, DilationPlan, NetConfig};
use crate::error::{check_len, Error, Result};
use crate::features::{
    analyze, build_conditioning, continuous_f0, scale_f0, ConditioningMatrix, FrameParams,
    FrameTrack,
};
use crate::generate::{generate, GenMode};
use crate::net::ModelParams;
use crate::signal::Waveform;

/// `(10 / ln 10) * sqrt(2)` — the usual dB scaling of mel-cepstral distortion.
pub const MCD_COEFF: f64 = 6.141851463713754;

// ---------------------------------------------------------------------------
// Ratios
// ---------------------------------------------------------------------------

/// Exact F0 scaling ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Result<Ratio> {
        if num == 0 || den == 0 {
            return Err(Error::domain("ratio terms must be positive"));
        }
        Ok(Ratio { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Ratio> {
        let bad = || Error::config(format!("cannot parse ratio '{s}' (expected e.g. 3/4 or 2)"));
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Ratio::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

/// The ten published scaling ratios, unchanged first.
pub fn default_ratios() -> Vec<Ratio> {
    [
        (1, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (4, 5),
        (6, 5),
        (5, 4),
        (4, 3),
        (3, 2),
        (2, 1),
    ]
    .into_iter()
    .map(|(n, d)| Ratio { num: n, den: d })
    .collect()
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// RMSE of natural-log F0 over frames voiced in both tracks, plus the count
/// of those frames. `None` when no frame is voiced in both tracks.
pub fn logf0_rmse(cond: &FrameTrack, extracted: &FrameTrack) -> Result<Option<(f64, usize)>> {
    check_len("condition vs extracted frames", cond.len(), extracted.len())?;
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for (a, b) in cond.frames.iter().zip(&extracted.frames) {
        if a.voiced && b.voiced {
            let d = a.f0.ln() - b.f0.ln();
            sum_sq += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some(((sum_sq / count as f64).sqrt(), count)))
}

/// Mel-cepstral distortion in dB, mean over frames, energy coefficient c0
/// excluded: `(10/ln 10) * sqrt(2 * sum_{d>=1} (a_d - b_d)^2)`.
pub fn mcd(cond: &[Vec<f64>], extracted: &[Vec<f64>]) -> Result<f64> {
    check_len("condition vs extracted frames", cond.len(), extracted.len())?;
    if cond.is_empty() {
        return Err(Error::domain("mcd of zero frames"));
    }
    let mut total = 0.0f64;
    for (a, b) in cond.iter().zip(extracted) {
        check_len("mcep dimension", a.len(), b.len())?;
        let sum_sq: f64 = a
            .iter()
            .zip(b)
            .skip(1)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += MCD_COEFF * sum_sq.sqrt();
    }
    Ok(total / cond.len() as f64)
}

// ---------------------------------------------------------------------------
// Scaling experiment
// ---------------------------------------------------------------------------

/// Anything that can turn conditioning into a waveform.
pub trait Synthesizer {
    fn synthesize(
        &mut self,
        cond: &ConditioningMatrix<f32>,
        plan: &DilationPlan,
        seed: u64,
    ) -> Result<Waveform>;
}

/// The trained vocoder as a synthesizer.
pub struct ModelSynthesizer<'a> {
    pub config: &'a NetConfig,
    pub params: &'a ModelParams<f32>,
    pub mode: GenMode,
}

impl Synthesizer for ModelSynthesizer<'_> {
    fn synthesize(
        &mut self,
        cond: &ConditioningMatrix<f32>,
        plan: &DilationPlan,
        seed: u64,
    ) -> Result<Waveform> {
        generate(self.params, self.config, cond, plan, self.mode, seed)
    }
}

/// Ignores the conditioning and replays the source waveform; the loop-back
/// oracle for the metric pipeline.
pub struct ReplaySynthesizer {
    pub sources: Vec<Waveform>,
    next: usize,
}

impl ReplaySynthesizer {
    pub fn new(sources: Vec<Waveform>) -> Self {
        ReplaySynthesizer { sources, next: 0 }
    }
}

impl Synthesizer for ReplaySynthesizer {
    fn synthesize(
        &mut self,
        _cond: &ConditioningMatrix<f32>,
        _plan: &DilationPlan,
        _seed: u64,
    ) -> Result<Waveform> {
        let w = self.sources[self.next % self.sources.len()].clone();
        self.next += 1;
        Ok(w)
    }
}

/// One evaluated ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioRow {
    Metrics {
        ratio: Ratio,
        /// None when no frame was voiced in both tracks.
        logf0_rmse: Option<f64>,
        mcd_db: f64,
        voiced_frames: usize,
    },
    Failed { ratio: Ratio, reason: String },
}

/// Per-ratio metric rows plus their average.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<RatioRow>,
}

impl MetricReport {
    /// Arithmetic mean over the successful per-ratio rows:
    /// (mean log-F0 RMSE over rows that defined it, mean MCD, mean voiced count).
    pub fn average(&self) -> Option<(Option<f64>, f64, f64)> {
        let ok: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| match r {
                RatioRow::Metrics {
                    logf0_rmse,
                    mcd_db,
                    voiced_frames,
                    ..
                } => Some((logf0_rmse, mcd_db, voiced_frames)),
                RatioRow::Failed { .. } => None,
            })
            .collect();
        if ok.is_empty() {
            return None;
        }
        let rmse_values: Vec<f64> = ok.iter().filter_map(|(r, _, _)| **r).collect();
        let rmse_avg = if rmse_values.len() == ok.len() {
            Some(rmse_values.iter().sum::<f64>() / rmse_values.len() as f64)
        } else {
            None
        };
        let mcd_avg = ok.iter().map(|(_, m, _)| **m).sum::<f64>() / ok.len() as f64;
        let voiced_avg = ok.iter().map(|(_, _, v)| **v as f64).sum::<f64>() / ok.len() as f64;
        Some((rmse_avg, mcd_avg, voiced_avg))
    }

    /// CSV rendering: a header comment naming the log base, the column
    /// header, one row per ratio and one `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# log-F0 RMSE uses the natural logarithm\n");
        out.push_str("ratio,logf0_rmse,mcd_db,voiced_frames\n");
        for row in &self.rows {
            match row {
                RatioRow::Metrics {
                    ratio,
                    logf0_rmse,
                    mcd_db,
                    voiced_frames,
                } => {
                    let rmse = match logf0_rmse {
                        Some(v) => format!("{v:.6}"),
                        None => "undefined".to_string(),
                    };
                    out.push_str(&format!(
                        "{ratio},{rmse},{mcd_db:.6},{voiced_frames}\n"
                    ));
                }
                RatioRow::Failed { ratio, reason } => {
                    out.push_str(&format!("{ratio},error,error,0 # {reason}\n"));
                }
            }
        }
        if let Some((rmse, mcd_db, voiced)) = self.average() {
            let rmse = match rmse {
                Some(v) => format!("{v:.6}"),
                None => "undefined".to_string(),
            };
            out.push_str(&format!("average,{rmse},{mcd_db:.6},{voiced:.1}\n"));
        }
        out
    }
}

/// Run the F0-scaling protocol: for every ratio, scale the conditioning F0,
/// rebuild conditioning and dilation plan, synthesize, re-analyze the output
/// and score it against the condition. Frames are pooled across the corpus
/// within each ratio. Pure function of its inputs and `seed`.
pub fn scaling_experiment(
    config: &NetConfig,
    frame: &FrameParams,
    synth: &mut dyn Synthesizer,
    corpus: &[(Waveform, FrameTrack)],
    ratios: &[Ratio],
    seed: u64,
) -> Result<MetricReport> {
    if corpus.is_empty() {
        return Err(Error::domain("evaluation corpus is empty"));
    }
    let center = (config.f0_floor * config.f0_ceil).sqrt();
    let mut rows = Vec::with_capacity(ratios.len());

    'ratios: for (ri, &ratio) in ratios.iter().enumerate() {
        let mut sum_sq = 0.0f64;
        let mut voiced = 0usize;
        let mut mcd_sum = 0.0f64;
        let mut mcd_frames = 0usize;

        for (ui, (wave, track)) in corpus.iter().enumerate() {
            let run = (|| -> Result<(FrameTrack, Waveform)> {
                let scaled = scale_f0(track, ratio.value(), wave.sample_rate)?;
                let cont = continuous_f0(&scaled)?;
                let cond: ConditioningMatrix<f32> =
                    build_conditioning(&scaled, &cont, wave.len(), center)?;
                let plan = build_plan(config, &cond)?;
                let utt_seed = seed
                    .wrapping_add((ri as u64) << 32)
                    .wrapping_add(ui as u64);
                let out = synth.synthesize(&cond, &plan, utt_seed)?;
                Ok((scaled, out))
            })();
            let (scaled, out) = match run {
                Ok(v) => v,
                Err(e) => {
                    rows.push(RatioRow::Failed {
                        ratio,
                        reason: e.to_string(),
                    });
                    continue 'ratios;
                }
            };

            let extracted = analyze(&out, frame)?;
            check_len("frames of output", extracted.len(), scaled.len())?;
            for (c, e) in scaled.frames.iter().zip(&extracted.frames) {
                if c.voiced && e.voiced {
                    let d = c.f0.ln() - e.f0.ln();
                    sum_sq += d * d;
                    voiced += 1;
                }
                let sq: f64 = c
                    .mcep
                    .iter()
                    .zip(&e.mcep)
                    .skip(1)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                mcd_sum += MCD_COEFF * sq.sqrt();
                mcd_frames += 1;
            }
        }

        rows.push(RatioRow::Metrics {
            ratio,
            logf0_rmse: (voiced > 0).then(|| (sum_sq / voiced as f64).sqrt()),
            mcd_db: mcd_sum / mcd_frames.max(1) as f64,
            voiced_frames: voiced,
        });
    }

    Ok(MetricReport { rows })
}
