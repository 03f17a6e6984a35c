//! Command implementations.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use qpnet_core::dilation::{build_plan, dilation_factor, receptive_field, NetConfig};
use qpnet_core::eval::{scaling_experiment, ModelSynthesizer, Ratio};
use qpnet_core::features::{
    analyze, build_conditioning, continuous_f0, read_qpf1, scale_f0, write_qpf1,
    ConditioningMatrix,
};
use qpnet_core::generate::generate as generate_wave;
use qpnet_core::net::{load_checkpoint, ModelParams};
use qpnet_core::signal::{corpus_spec, read_wav, synth_utterance, write_wav};
use qpnet_core::train::{load_corpus, load_manifest, train_loop};

use crate::config::RunConfig;

fn write_echo(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.echo())
        .with_context(|| format!("cannot write config echo {}", path.display()))?;
    Ok(())
}

pub fn synth_corpus(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let fp = cfg.frame_params();
    let cp = cfg.corpus_params();
    let mut manifest = String::new();
    for i in 0..count {
        let spec = corpus_spec(&cp, i, cfg.seed);
        let (wave, truth) = synth_utterance(&spec, &fp)?;
        let analyzed = analyze(&wave, &fp)?;
        let track = truth.with_spectral_from(&analyzed)?;
        let wav_path = out.join(format!("utt_{i:04}.wav"));
        let feat_path = out.join(format!("utt_{i:04}.qpf1"));
        write_wav(&wav_path, &wave)?;
        write_qpf1(&feat_path, &track)?;
        manifest.push_str(&format!("{}\t{}\n", wav_path.display(), feat_path.display()));
    }
    let manifest_path = out.join("manifest.txt");
    fs::write(&manifest_path, manifest)?;
    write_echo(cfg, &out.join("config_echo.cfg"))?;
    println!(
        "wrote {count} utterances and {} ({} Hz, F0 {}-{} Hz)",
        manifest_path.display(),
        cfg.sample_rate,
        cfg.f0_low,
        cfg.f0_high
    );
    Ok(())
}

pub fn extract(cfg: &RunConfig, wav: &Path, out: &Path) -> Result<()> {
    let wave = read_wav(wav)?;
    let mut run = cfg.clone();
    run.sample_rate = wave.sample_rate; // analysis follows the file
    let track = analyze(&wave, &run.frame_params())?;
    write_qpf1(out, &track)?;
    println!(
        "extracted {} frames ({} voiced) from {}",
        track.len(),
        track.voiced_count(),
        wav.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let net = cfg.net_config()?;
    let entries = load_manifest(manifest)?;
    let corpus = load_corpus::<f32>(&entries, &net)?;
    let mut params: ModelParams<f32> = ModelParams::init(&net, cfg.seed)?;
    fs::create_dir_all(out)?;
    write_echo(cfg, &out.join("config_echo.cfg"))?;
    let outputs = train_loop(&mut params, &net, &cfg.train_config(), &corpus, out)?;
    println!(
        "trained {} steps on {} utterances; final loss {:.4}",
        cfg.max_steps,
        corpus.len(),
        outputs.final_loss
    );
    println!("checkpoint: {}", outputs.checkpoint.display());
    println!("loss log:   {}", outputs.loss_log.display());
    Ok(())
}

/// Build conditioning and dilation plan from a QPF1 track, optionally with a
/// scaled F0.
fn conditioning_from_track(
    net: &NetConfig,
    features: &Path,
    ratio: Option<Ratio>,
) -> Result<(ConditioningMatrix<f32>, qpnet_core::dilation::DilationPlan)> {
    let track = read_qpf1(features)?;
    let track = match ratio {
        Some(r) => scale_f0(&track, r.value(), net.sample_rate)?,
        None => track,
    };
    let cont = continuous_f0(&track)?;
    let target_len = track.len() * track.frame_hop;
    let center = (net.f0_floor * net.f0_ceil).sqrt();
    let cond = build_conditioning(&track, &cont, target_len, center)?;
    let plan = build_plan(net, &cond)?;
    Ok((cond, plan))
}

pub fn generate(
    cfg: &RunConfig,
    checkpoint: &Path,
    features: &Path,
    ratio: Option<Ratio>,
    out: &Path,
) -> Result<()> {
    let (net, params) = load_checkpoint(checkpoint)?;
    let (cond, plan) = conditioning_from_track(&net, features, ratio)?;
    let wave = generate_wave(&params, &net, &cond, &plan, cfg.mode, cfg.seed)?;
    write_wav(out, &wave)?;
    write_echo(cfg, &out.with_extension("config_echo.cfg"))?;
    println!(
        "generated {} samples ({:.2} s) to {}",
        wave.len(),
        wave.duration_s(),
        out.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let (net, params) = load_checkpoint(checkpoint)?;
    let mut run = cfg.clone();
    run.sample_rate = net.sample_rate; // framing follows the checkpoint
    let fp = run.frame_params();
    let entries = load_manifest(manifest)?;
    let corpus = entries
        .iter()
        .map(|e| {
            let wave = read_wav(&e.wav)?;
            let track = read_qpf1(&e.features)?;
            Ok((wave, track))
        })
        .collect::<qpnet_core::Result<Vec<_>>>()?;
    let mut synth = ModelSynthesizer {
        config: &net,
        params: &params,
        mode: cfg.mode,
    };
    let report = scaling_experiment(&net, &fp, &mut synth, &corpus, &cfg.ratios, cfg.seed)?;
    let csv = report.to_csv();
    fs::write(out, &csv)?;
    write_echo(cfg, &out.with_extension("config_echo.cfg"))?;
    print!("{csv}");
    println!("report: {}", out.display());
    Ok(())
}

pub fn rf_analyze(f0_arg: &str, sample_rate: u32) -> Result<()> {
    let points: Vec<f64> = if f0_arg == "sweep" {
        vec![50.0, 100.0, 200.0, 300.0, 500.0]
    } else {
        vec![f0_arg
            .parse()
            .with_context(|| format!("bad --f0 value '{f0_arg}'"))?]
    };
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<12} {:>8} {:>16} {:>18}",
        "preset", "f0_hz", "dilation_factor", "receptive_field"
    )?;
    for name in ["wnf", "wnc", "qpnet"] {
        let cfg = NetConfig::preset(name, sample_rate, 12)?;
        if cfg.n_adaptive_blocks() == 0 {
            writeln!(
                out,
                "{:<12} {:>8} {:>16} {:>18}",
                name,
                "any",
                "-",
                receptive_field(&cfg, 1)
            )?;
        } else {
            for &f0 in &points {
                let e = dilation_factor(
                    f0,
                    cfg.sample_rate,
                    cfg.cycle_divisor,
                    (cfg.f0_floor, cfg.f0_ceil),
                )?;
                writeln!(
                    out,
                    "{:<12} {:>8} {:>16} {:>18}",
                    name,
                    f0,
                    e,
                    receptive_field(&cfg, e)
                )?;
            }
        }
    }
    Ok(())
}
