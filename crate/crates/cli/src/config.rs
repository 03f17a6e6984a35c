//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Every knob has a default; a config file overrides defaults and command
//! line flags override the file. The resolved configuration echoes back out
//! as a valid config file, so the echo dropped next to any output is enough
//! to re-run the command.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use qpnet_core::dilation::NetConfig;
use qpnet_core::eval::{default_ratios, Ratio};
use qpnet_core::features::FrameParams;
use qpnet_core::generate::GenMode;
use qpnet_core::signal::CorpusParams;
use qpnet_core::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    // [run]
    pub seed: u64,
    pub sample_rate: u32,
    pub threads: usize,
    // [features]
    pub frame_hop_ms: f64,
    pub f0_frame_ms: f64,
    pub mcep_frame_ms: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    pub n_mels: usize,
    pub mcep_dim: usize,
    // [net]
    pub preset: String,
    pub f0_floor: f64,
    pub f0_ceil: f64,
    // [train]
    pub learning_rate: f64,
    pub batch_size: usize,
    pub crop_len: usize,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    // [synth]
    pub utterance_s: f64,
    pub f0_low: f64,
    pub f0_high: f64,
    pub harmonics: usize,
    pub spectral_tilt: f64,
    pub noise_level: f64,
    pub unvoiced_prob: f64,
    // [eval]
    pub ratios: Vec<Ratio>,
    pub mode: GenMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tc = TrainConfig::default();
        RunConfig {
            seed: 17,
            sample_rate: 8000,
            threads: 0,
            frame_hop_ms: 5.0,
            f0_frame_ms: 50.0,
            mcep_frame_ms: 25.0,
            f0_min: 40.0,
            f0_max: 800.0,
            voicing_threshold: 0.45,
            n_mels: 20,
            mcep_dim: 10,
            preset: "tiny-qpnet".to_string(),
            f0_floor: 40.0,
            f0_ceil: 800.0,
            learning_rate: tc.learning_rate,
            batch_size: tc.batch_size,
            crop_len: tc.crop_len,
            max_steps: tc.max_steps,
            checkpoint_every: tc.checkpoint_every,
            beta1: tc.beta1,
            beta2: tc.beta2,
            epsilon: tc.epsilon,
            utterance_s: 1.0,
            f0_low: 150.0,
            f0_high: 250.0,
            harmonics: 10,
            spectral_tilt: 6.0,
            noise_level: 0.005,
            unvoiced_prob: 0.25,
            ratios: default_ratios(),
            mode: GenMode::Sample,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)
            .with_context(|| format!("in config file {}", path.display()))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected 'key = value', got '{raw}'", lineno + 1);
            };
            self.set(&section, key.trim(), value.trim())
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        macro_rules! parse {
            () => {
                value
                    .parse()
                    .with_context(|| format!("bad value '{value}' for {section}.{key}"))?
            };
        }
        match (section, key) {
            ("run", "seed") => self.seed = parse!(),
            ("run", "sample_rate") => self.sample_rate = parse!(),
            ("run", "threads") => self.threads = parse!(),
            ("features", "frame_hop_ms") => self.frame_hop_ms = parse!(),
            ("features", "f0_frame_ms") => self.f0_frame_ms = parse!(),
            ("features", "mcep_frame_ms") => self.mcep_frame_ms = parse!(),
            ("features", "f0_min") => self.f0_min = parse!(),
            ("features", "f0_max") => self.f0_max = parse!(),
            ("features", "voicing_threshold") => self.voicing_threshold = parse!(),
            ("features", "n_mels") => self.n_mels = parse!(),
            ("features", "mcep_dim") => self.mcep_dim = parse!(),
            ("net", "preset") => self.preset = value.to_string(),
            ("net", "f0_floor") => self.f0_floor = parse!(),
            ("net", "f0_ceil") => self.f0_ceil = parse!(),
            ("train", "learning_rate") => self.learning_rate = parse!(),
            ("train", "batch_size") => self.batch_size = parse!(),
            ("train", "crop_len") => self.crop_len = parse!(),
            ("train", "max_steps") => self.max_steps = parse!(),
            ("train", "checkpoint_every") => self.checkpoint_every = parse!(),
            ("train", "beta1") => self.beta1 = parse!(),
            ("train", "beta2") => self.beta2 = parse!(),
            ("train", "epsilon") => self.epsilon = parse!(),
            ("synth", "utterance_s") => self.utterance_s = parse!(),
            ("synth", "f0_low") => self.f0_low = parse!(),
            ("synth", "f0_high") => self.f0_high = parse!(),
            ("synth", "harmonics") => self.harmonics = parse!(),
            ("synth", "spectral_tilt") => self.spectral_tilt = parse!(),
            ("synth", "noise_level") => self.noise_level = parse!(),
            ("synth", "unvoiced_prob") => self.unvoiced_prob = parse!(),
            ("eval", "ratios") => {
                self.ratios = value
                    .split(',')
                    .map(|r| r.trim().parse::<Ratio>())
                    .collect::<qpnet_core::Result<Vec<_>>>()?;
            }
            ("eval", "mode") => self.mode = value.parse::<GenMode>()?,
            _ => bail!("unknown config key '{section}.{key}'"),
        }
        Ok(())
    }

    /// Render the fully resolved configuration as a config file.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sample_rate = {}", self.sample_rate);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "\n[features]");
        let _ = writeln!(s, "frame_hop_ms = {}", self.frame_hop_ms);
        let _ = writeln!(s, "f0_frame_ms = {}", self.f0_frame_ms);
        let _ = writeln!(s, "mcep_frame_ms = {}", self.mcep_frame_ms);
        let _ = writeln!(s, "f0_min = {}", self.f0_min);
        let _ = writeln!(s, "f0_max = {}", self.f0_max);
        let _ = writeln!(s, "voicing_threshold = {}", self.voicing_threshold);
        let _ = writeln!(s, "n_mels = {}", self.n_mels);
        let _ = writeln!(s, "mcep_dim = {}", self.mcep_dim);
        let _ = writeln!(s, "\n[net]");
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "f0_floor = {}", self.f0_floor);
        let _ = writeln!(s, "f0_ceil = {}", self.f0_ceil);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "crop_len = {}", self.crop_len);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "\n[synth]");
        let _ = writeln!(s, "utterance_s = {}", self.utterance_s);
        let _ = writeln!(s, "f0_low = {}", self.f0_low);
        let _ = writeln!(s, "f0_high = {}", self.f0_high);
        let _ = writeln!(s, "harmonics = {}", self.harmonics);
        let _ = writeln!(s, "spectral_tilt = {}", self.spectral_tilt);
        let _ = writeln!(s, "noise_level = {}", self.noise_level);
        let _ = writeln!(s, "unvoiced_prob = {}", self.unvoiced_prob);
        let _ = writeln!(s, "\n[eval]");
        let ratios: Vec<String> = self.ratios.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "ratios = {}", ratios.join(","));
        let _ = writeln!(
            s,
            "mode = {}",
            match self.mode {
                GenMode::Argmax => "argmax",
                GenMode::Sample => "sample",
            }
        );
        s
    }

    pub fn frame_params(&self) -> FrameParams {
        let ms = |m: f64| (self.sample_rate as f64 * m / 1000.0).round() as usize;
        FrameParams {
            frame_hop: ms(self.frame_hop_ms),
            f0_frame_len: ms(self.f0_frame_ms),
            f0_min: self.f0_min,
            f0_max: self.f0_max,
            voicing_threshold: self.voicing_threshold,
            mcep_frame_len: ms(self.mcep_frame_ms),
            n_mels: self.n_mels,
            mcep_dim: self.mcep_dim,
        }
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let mut cfg = NetConfig::preset(&self.preset, self.sample_rate, 2 + self.mcep_dim)?;
        cfg.f0_floor = self.f0_floor;
        cfg.f0_ceil = self.f0_ceil;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            crop_len: self.crop_len,
            max_steps: self.max_steps,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn corpus_params(&self) -> CorpusParams {
        CorpusParams {
            sample_rate: self.sample_rate,
            utterance_s: self.utterance_s,
            f0_low: self.f0_low,
            f0_high: self.f0_high,
            harmonic_count: self.harmonics,
            spectral_tilt_db: self.spectral_tilt,
            noise_level: self.noise_level,
            unvoiced_prob: self.unvoiced_prob,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 1234;
        cfg.preset = "wnc".into();
        cfg.ratios = vec![Ratio::new(1, 2).unwrap(), Ratio::new(2, 1).unwrap()];
        let echo = cfg.echo();
        let mut back = RunConfig::default();
        back.apply_text(&echo).unwrap();
        assert_eq!(back.seed, 1234);
        assert_eq!(back.preset, "wnc");
        assert_eq!(back.ratios, cfg.ratios);
        assert_eq!(back.echo(), echo);
    }

    #[test]
    fn overrides_and_comments() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("[run]\nseed = 5 # trailing comment\n\n# full comment\n[train]\nmax_steps = 7\n")
            .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.max_steps, 7);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("[run]\nbogus = 1\n").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
    }
}
