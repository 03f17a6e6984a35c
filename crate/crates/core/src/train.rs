//! Teacher-forced maximum-likelihood training: cross-entropy over μ-law
//! classes, Adam updates, mini-batches of fixed-length crops, checkpointing.
//!
//! Batch items run in parallel but per-item gradients are summed in batch
//! order, so a run is reproducible bit-for-bit regardless of thread count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dilation::{build_plan, receptive_field, DilationPlan, NetConfig};
use crate::error::{check_len, Error, Result};
use crate::features::{build_conditioning, continuous_f0, read_qpf1, ConditioningMatrix, FrameTrack};
use crate::net::{
    backward, forward_cached, save_checkpoint, LogitSequence, ModelParams,
};
use crate::num::Scalar;
use crate::signal::{mulaw, read_wav, Waveform};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub crop_len: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 2,
            crop_len: 1200,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of the target classes under the softmax of
/// the logits.
pub fn cross_entropy<T: Scalar>(logits: &LogitSequence<T>, targets: &[u8]) -> Result<f64> {
    check_len("logits vs targets", logits.len(), targets.len())?;
    if targets.is_empty() {
        return Err(Error::domain("cross entropy of an empty sequence"));
    }
    let mut total = 0.0f64;
    for (t, &target) in targets.iter().enumerate() {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max).to_f64();
        let lse: f64 = row.iter().map(|&l| (l.to_f64() - max).exp()).sum();
        total += max + lse.ln() - row[target as usize].to_f64();
    }
    Ok(total / targets.len() as f64)
}

/// Loss plus its gradient at the logits, scaled so the full batch loss is the
/// mean over `scale_denom` samples.
pub fn cross_entropy_grad<T: Scalar>(
    logits: &LogitSequence<T>,
    targets: &[u8],
    scale_denom: usize,
) -> Result<(f64, LogitSequence<T>)> {
    check_len("logits vs targets", logits.len(), targets.len())?;
    let mut dlogits = LogitSequence::zeros(targets.len());
    let scale = 1.0 / scale_denom as f64;
    let mut total = 0.0f64;
    for (t, &target) in targets.iter().enumerate() {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max).to_f64();
        let mut sum = 0.0f64;
        let exps: Vec<f64> = row
            .iter()
            .map(|&l| {
                let e = (l.to_f64() - max).exp();
                sum += e;
                e
            })
            .collect();
        total += max + sum.ln() - row[target as usize].to_f64();
        let drow = dlogits.row_mut(t);
        for (j, d) in drow.iter_mut().enumerate() {
            let softmax = exps[j] / sum;
            let one_hot = if j == target as usize { 1.0 } else { 0.0 };
            *d = T::from_f64((softmax - one_hot) * scale);
        }
    }
    Ok((total / targets.len() as f64, dlogits))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &NetConfig) -> Self {
        AdamState {
            step: 0,
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
        }
    }
}

/// One Adam update in place.
pub fn adam_update<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    tc: &TrainConfig,
) {
    state.step += 1;
    let b1 = T::from_f64(tc.beta1);
    let b2 = T::from_f64(tc.beta2);
    let one = T::one();
    let correction1 = T::from_f64(1.0 - tc.beta1.powi(state.step as i32));
    let correction2 = T::from_f64(1.0 - tc.beta2.powi(state.step as i32));
    let lr = T::from_f64(tc.learning_rate);
    let eps = T::from_f64(tc.epsilon);

    let mut p_mats = params.mats_mut();
    let g_mats = grads.mats();
    let mut m_mats = state.m.mats_mut();
    let mut v_mats = state.v.mats_mut();
    for i in 0..p_mats.len() {
        let p = &mut p_mats[i].data;
        let g = &g_mats[i].data;
        let m = &mut m_mats[i].data;
        let v = &mut v_mats[i].data;
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training items
// ---------------------------------------------------------------------------

/// A prepared utterance: targets, teacher-forced input, conditioning, plan.
#[derive(Debug, Clone)]
pub struct Utterance<T: Scalar> {
    pub targets: Vec<u8>,
    pub input: Vec<T>,
    pub cond: ConditioningMatrix<T>,
    pub plan: DilationPlan,
}

impl<T: Scalar> Utterance<T> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Encode a waveform and assemble conditioning and dilation plan.
///
/// The teacher-forcing input at `t` is the quantized (encode-then-decode)
/// amplitude of sample `t-1`, with zero at `t = 0` — exactly what the
/// sampler feeds back at generation time.
pub fn prepare_utterance<T: Scalar>(
    wave: &Waveform,
    track: &FrameTrack,
    config: &NetConfig,
) -> Result<Utterance<T>> {
    if wave.sample_rate != config.sample_rate {
        return Err(Error::config(format!(
            "waveform sample rate {} does not match network sample rate {}",
            wave.sample_rate, config.sample_rate
        )));
    }
    let code = mulaw::encode_waveform(wave)?;
    let mut input = vec![T::zero(); wave.len()];
    for t in 1..wave.len() {
        input[t] = T::from_f64(mulaw::decode(code.classes[t - 1]));
    }
    let cont = continuous_f0(track)?;
    let center = (config.f0_floor * config.f0_ceil).sqrt();
    let cond = build_conditioning(track, &cont, wave.len(), center)?;
    let plan = build_plan(config, &cond)?;
    Ok(Utterance {
        targets: code.classes,
        input,
        cond,
        plan,
    })
}

/// Fixed-length crop of an utterance, re-zeroing the teacher-forcing history
/// at the crop boundary.
pub fn crop_utterance<T: Scalar>(utt: &Utterance<T>, start: usize, len: usize) -> Utterance<T> {
    let end = start + len;
    let targets = utt.targets[start..end].to_vec();
    let mut input = vec![T::zero(); len];
    for t in 1..len {
        input[t] = T::from_f64(mulaw::decode(targets[t - 1]));
    }
    Utterance {
        targets,
        input,
        cond: utt.cond.slice(start, end),
        plan: utt.plan.slice(start, end),
    }
}

// ---------------------------------------------------------------------------
// Steps and the loop
// ---------------------------------------------------------------------------

fn add_grads<T: Scalar>(acc: &mut ModelParams<T>, other: &ModelParams<T>) {
    let mut a_mats = acc.mats_mut();
    let o_mats = other.mats();
    for i in 0..a_mats.len() {
        for (a, &o) in a_mats[i].data.iter_mut().zip(&o_mats[i].data) {
            *a = *a + o;
        }
    }
}

/// One forward/backward/update cycle over a batch. Items are processed in
/// parallel; gradients are reduced in batch order. Returns the batch loss.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut AdamState<T>,
    config: &NetConfig,
    tc: &TrainConfig,
    batch: &[Utterance<T>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let results: Vec<Result<(f64, ModelParams<T>)>> = batch
        .par_iter()
        .map(|item| {
            let (logits, cache) =
                forward_cached(params, config, &item.input, &item.cond, &item.plan)?;
            let (loss, dlogits) =
                cross_entropy_grad(&logits, &item.targets, item.len() * batch.len())?;
            let grads = backward(
                params,
                config,
                &item.input,
                &item.cond,
                &item.plan,
                &cache,
                &dlogits,
            )?;
            Ok((loss, grads))
        })
        .collect();

    let mut total_loss = 0.0f64;
    let mut grads: Option<ModelParams<T>> = None;
    for r in results {
        let (loss, g) = r?;
        total_loss += loss;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => add_grads(acc, &g),
        }
    }
    let loss = total_loss / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: opt.step as usize,
            loss,
        });
    }
    adam_update(params, grads.as_ref().unwrap(), opt, tc);
    Ok(loss)
}

/// One `wav<TAB>features` pair per manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub wav: PathBuf,
    pub features: PathBuf,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (wav, feats) = line.split_once('\t').ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: expected wav_path<TAB>feature_path", i + 1),
        })?;
        entries.push(CorpusEntry {
            wav: PathBuf::from(wav),
            features: PathBuf::from(feats),
        });
    }
    Ok(entries)
}

/// Load every corpus pair and prepare it for training. Fails before any
/// training step if a file is missing or inconsistent.
pub fn load_corpus<T: Scalar>(
    manifest: &[CorpusEntry],
    config: &NetConfig,
) -> Result<Vec<Utterance<T>>> {
    if manifest.is_empty() {
        return Err(Error::domain("corpus manifest is empty"));
    }
    manifest
        .iter()
        .map(|e| {
            let wave = read_wav(&e.wav)?;
            let track = read_qpf1(&e.features)?;
            prepare_utterance(&wave, &track, config)
        })
        .collect()
}

/// Prepare an in-memory corpus of paired waveforms and tracks.
pub fn load_corpus_from_memory<T: Scalar>(
    corpus: &[(Waveform, FrameTrack)],
    config: &NetConfig,
) -> Result<Vec<Utterance<T>>> {
    if corpus.is_empty() {
        return Err(Error::domain("corpus is empty"));
    }
    corpus
        .iter()
        .map(|(w, t)| prepare_utterance(w, t, config))
        .collect()
}

/// Outputs of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub opt_state: PathBuf,
    pub loss_log: PathBuf,
    pub final_loss: f64,
    pub losses: Vec<(usize, f64)>,
}

/// Run `max_steps` batches of random crops and write the final checkpoint
/// plus a `step,loss` CSV. Deterministic given the config seed.
pub fn train_loop<T: Scalar>(
    params: &mut ModelParams<T>,
    config: &NetConfig,
    tc: &TrainConfig,
    corpus: &[Utterance<T>],
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutputs> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    if corpus.is_empty() {
        return Err(Error::domain("corpus manifest is empty"));
    }
    for (i, utt) in corpus.iter().enumerate() {
        if utt.len() < tc.crop_len {
            return Err(Error::config(format!(
                "utterance {i} has {} samples, below crop_len {}",
                utt.len(),
                tc.crop_len
            )));
        }
    }
    let e_max = config.max_dilation_factor();
    let rf = receptive_field(config, e_max);
    if tc.crop_len <= rf {
        eprintln!(
            "warning: crop_len {} does not exceed the receptive field {} at the \
             largest dilation factor {}; crops will train mostly on zero-padded history",
            tc.crop_len, rf, e_max
        );
    }

    let mut opt = AdamState::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut losses = Vec::with_capacity(tc.max_steps);
    let mut final_loss = f64::NAN;
    for step in 0..tc.max_steps {
        let batch: Vec<Utterance<T>> = (0..tc.batch_size)
            .map(|_| {
                let which = rng.random_range(0..corpus.len());
                let utt = &corpus[which];
                let start = rng.random_range(0..=utt.len() - tc.crop_len);
                crop_utterance(utt, start, tc.crop_len)
            })
            .collect();
        let loss = train_step(params, &mut opt, config, tc, &batch)?;
        losses.push((step, loss));
        final_loss = loss;
        if tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 {
            save_checkpoint(out_dir.join(format!("step_{:06}.qpw1", step + 1)), config, params)?;
        }
    }

    let checkpoint = out_dir.join("final.qpw1");
    let opt_state = out_dir.join("final.qpo1");
    save_checkpoint(&checkpoint, config, params)?;
    save_opt_state(&opt_state, config, &opt)?;
    let loss_log = out_dir.join("loss.csv");
    write_loss_log(&loss_log, &losses)?;
    Ok(TrainOutputs {
        checkpoint,
        opt_state,
        loss_log,
        final_loss,
        losses,
    })
}

pub fn write_loss_log(path: impl AsRef<Path>, losses: &[(usize, f64)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,loss")?;
    for (step, loss) in losses {
        writeln!(out, "{step},{loss}")?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Optimizer state files (QPO1)
// ---------------------------------------------------------------------------

const QPO1_MAGIC: &[u8; 4] = b"QPO1";

/// Sidecar for resumable training: magic, step count, first and second
/// moments as f32 LE in declaration order, FNV-1a 64 checksum.
pub fn save_opt_state<T: Scalar>(
    path: impl AsRef<Path>,
    config: &NetConfig,
    state: &AdamState<T>,
) -> Result<()> {
    state.m.check_config(config)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(QPO1_MAGIC);
    bytes.extend_from_slice(&state.step.to_le_bytes());
    for part in [&state.m, &state.v] {
        for m in part.mats() {
            for &v in &m.data {
                bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    let mut hash = crate::net::checkpoint_hash();
    hash.update(&bytes);
    bytes.extend_from_slice(&hash.finish().to_le_bytes());
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn load_opt_state(path: impl AsRef<Path>, config: &NetConfig) -> Result<AdamState<f32>> {
    let path = path.as_ref();
    let fail = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[0..4] != QPO1_MAGIC {
        return Err(fail("bad magic or truncated file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let mut hash = crate::net::checkpoint_hash();
    hash.update(body);
    if hash.finish() != stored {
        return Err(fail("checksum mismatch"));
    }
    let step = u64::from_le_bytes(body[4..12].try_into().unwrap());
    let expected = 2 * crate::net::param_count(config) * 4;
    if body.len() - 12 != expected {
        return Err(fail("moment data does not match the config"));
    }
    let mut off = 12usize;
    let mut state = AdamState::new(config);
    state.step = step;
    for part in [&mut state.m, &mut state.v] {
        for m in part.mats_mut() {
            for v in m.data.iter_mut() {
                *v = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                off += 4;
            }
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cross_entropy_uniform_is_ln_256() {
        let logits = LogitSequence::<f64>::zeros(10);
        let targets = vec![7u8; 10];
        let loss = cross_entropy(&logits, &targets).unwrap();
        assert_abs_diff_eq!(loss, 256.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_is_near_zero() {
        let mut logits = LogitSequence::<f64>::zeros(4);
        for t in 0..4 {
            logits.row_mut(t)[42] = 30.0;
        }
        let loss = cross_entropy(&logits, &[42u8; 4]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let mut logits = LogitSequence::<f64>::zeros(3);
        for t in 0..3 {
            for (j, v) in logits.row_mut(t).iter_mut().enumerate() {
                *v = ((t * 7 + j) as f64 * 0.413).sin();
            }
        }
        let targets = [3u8, 200, 128];
        let a = cross_entropy(&logits, &targets).unwrap();
        for t in 0..3 {
            for v in logits.row_mut(t).iter_mut() {
                *v += 5.0;
            }
        }
        let b = cross_entropy(&logits, &targets).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_length_mismatch() {
        let logits = LogitSequence::<f64>::zeros(4);
        assert!(cross_entropy(&logits, &[0u8; 3]).is_err());
    }

    fn tiny_batch(seed: u64) -> (NetConfig, ModelParams<f32>, Vec<Utterance<f32>>) {
        use crate::features::{FrameParams, analyze};
        use crate::signal::{synth_utterance, F0Segment, SynthSpec};
        let fs = 4000;
        let fp = FrameParams::for_sample_rate(fs);
        let config = NetConfig {
            fixed_layers: 2,
            fixed_repeats: 1,
            adaptive_layers: 2,
            adaptive_repeats: 1,
            residual_channels: 8,
            skip_channels: 8,
            cycle_divisor: 8,
            sample_rate: fs,
            aux_dim: 2 + fp.mcep_dim,
            f0_floor: 60.0,
            f0_ceil: 600.0,
        };
        let spec = SynthSpec {
            sample_rate: fs,
            segments: vec![F0Segment::voiced(0.25, 200.0, 220.0)],
            harmonic_count: 6,
            spectral_tilt_db: 6.0,
            noise_level: 0.02,
            seed,
        };
        let (wave, gt) = synth_utterance(&spec, &fp).unwrap();
        let analyzed = analyze(&wave, &fp).unwrap();
        let track = gt.with_spectral_from(&analyzed).unwrap();
        let params = ModelParams::init(&config, seed).unwrap();
        let utt = prepare_utterance(&wave, &track, &config).unwrap();
        (config, params, vec![crop_utterance(&utt, 100, 256)])
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (config, mut params, batch) = tiny_batch(3);
        let before = params.clone();
        let mut opt = AdamState::new(&config);
        let tc = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        train_step(&mut params, &mut opt, &config, &tc, &batch).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn small_step_does_not_increase_loss_much() {
        let (config, mut params, batch) = tiny_batch(5);
        let tc = TrainConfig {
            learning_rate: 1e-6,
            ..TrainConfig::default()
        };
        let mut opt = AdamState::new(&config);
        let logits =
            crate::net::forward(&params, &config, &batch[0].input, &batch[0].cond, &batch[0].plan)
                .unwrap();
        let before = cross_entropy(&logits, &batch[0].targets).unwrap();
        train_step(&mut params, &mut opt, &config, &tc, &batch).unwrap();
        let logits =
            crate::net::forward(&params, &config, &batch[0].input, &batch[0].cond, &batch[0].plan)
                .unwrap();
        let after = cross_entropy(&logits, &batch[0].targets).unwrap();
        assert!(after - before <= 1e-3, "loss rose from {before} to {after}");
    }

    #[test]
    fn train_step_is_deterministic() {
        let (config, params0, batch) = tiny_batch(7);
        let tc = TrainConfig::default();
        let mut a = params0.clone();
        let mut b = params0.clone();
        let mut oa = AdamState::new(&config);
        let mut ob = AdamState::new(&config);
        let la = train_step(&mut a, &mut oa, &config, &tc, &batch).unwrap();
        let lb = train_step(&mut b, &mut ob, &config, &tc, &batch).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_on_short_overfit() {
        let (config, mut params, batch) = tiny_batch(11);
        let tc = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut opt = AdamState::new(&config);
        let first = train_step(&mut params, &mut opt, &config, &tc, &batch).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = train_step(&mut params, &mut opt, &config, &tc, &batch).unwrap();
        }
        assert!(
            last < first,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn opt_state_round_trip() {
        let (config, mut params, batch) = tiny_batch(13);
        let tc = TrainConfig::default();
        let mut opt = AdamState::new(&config);
        for _ in 0..3 {
            train_step(&mut params, &mut opt, &config, &tc, &batch).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("p.qpw1");
        let opt_path = dir.path().join("p.qpo1");
        save_checkpoint(&ckpt, &config, &params).unwrap();
        save_opt_state(&opt_path, &config, &opt).unwrap();
        let (cfg2, params2) = crate::net::load_checkpoint(&ckpt).unwrap();
        let opt2 = load_opt_state(&opt_path, &cfg2).unwrap();
        assert_eq!(params, params2);
        assert_eq!(opt, opt2);
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "a.wav\tb.qpf1\n\nc.wav\td.qpf1\n").unwrap();
        let entries = load_manifest(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].wav, PathBuf::from("c.wav"));

        std::fs::write(&path, "no-tab-here\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
