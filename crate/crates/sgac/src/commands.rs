//! The five commands. Each takes a fully merged [`RunConfig`] and writes
//! its human-readable output to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use sgac_core::bench::{
    baseline_method, curves_csv, gap_curves_csv, mean_curves, mean_gap_curves, psnr, rd_points_csv, rd_sweep_traced,
    Ablation, SweepCoder, SweepMethod,
};
use sgac_core::coder::{
    bitsback_decode, bitsback_encode, decode_standard, encode_standard, BbviConfig, BitsBackConfig, Bitstream,
    JointConfig, Mode,
};
use sgac_core::model::{ModelConfig, ModelParams};
use sgac_core::numcore::Tensor;
use sgac_core::relaxations::InferenceConfig;
use sgac_core::synth::{self, PATCH_SIZE};
use sgac_core::train::{train, TrainConfig};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_method, require, RunConfig, SYNTHETIC};
use crate::error::{read, write_atomic, Error, Result};
use crate::image_io::{quantize8, read_png, write_png};
use crate::report::{self, BASELINE_BITS_BACK};

pub const DEFAULT_TRAIN_CORPUS: usize = 512;
pub const DEFAULT_EVAL_IMAGES: usize = 32;
pub const DEFAULT_ABLATE_CORPUS: usize = 20;
/// Synthetic corpus seeds: training, held-out training loss, evaluation.
pub const TRAIN_SEED: u64 = 0;
pub const ABLATE_SEED: u64 = 2;
pub const DEFAULT_INFERENCE_STEPS: u64 = 2000;

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => { say($out, format_args!($($t)*)) };
}

/// PNG files of a directory in name order, or a single PNG.
fn png_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no PNG files", path.display())));
    }
    Ok(files)
}

/// Images of the configured corpus; `seed` and `size` are the synthetic
/// defaults of the calling command.
pub fn load_corpus(cfg: &RunConfig, seed: u64, size: usize) -> Result<Vec<Tensor>> {
    match cfg.corpus.as_deref() {
        None | Some(SYNTHETIC) => Ok(synth::corpus(cfg.corpus_seed.unwrap_or(seed), cfg.corpus_size.unwrap_or(size))),
        Some(dir) => png_files(Path::new(dir))?.iter().map(|p| read_png(p)).collect(),
    }
}

/// Non-overlapping training patches cut from each image.
pub fn patches(images: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    for x in images {
        let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        for r in (0..h.saturating_sub(PATCH_SIZE - 1)).step_by(PATCH_SIZE) {
            for q in (0..w.saturating_sub(PATCH_SIZE - 1)).step_by(PATCH_SIZE) {
                out.push(Tensor::from_fn([1, c, PATCH_SIZE, PATCH_SIZE], |i| {
                    let (ch, y, xx) = (i / (PATCH_SIZE * PATCH_SIZE), (i / PATCH_SIZE) % PATCH_SIZE, i % PATCH_SIZE);
                    x.data()[(ch * h + r + y) * w + q + xx]
                }));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("corpus has no {PATCH_SIZE}x{PATCH_SIZE} patch")));
    }
    if out.iter().any(|p| p.shape()[1] != out[0].shape()[1]) {
        return Err(Error::Config("corpus mixes grayscale and RGB images".into()));
    }
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let lambda = *require(&cfg.lambda, "lambda")?;
    let path = require(&cfg.checkpoint, "checkpoint")?;
    let data = patches(&load_corpus(cfg, TRAIN_SEED, DEFAULT_TRAIN_CORPUS)?)?;
    let eval = match cfg.corpus.as_deref() {
        None | Some(SYNTHETIC) => synth::corpus(cfg.corpus_seed.unwrap_or(TRAIN_SEED) + 1, DEFAULT_EVAL_IMAGES),
        _ => data[..data.len().min(DEFAULT_EVAL_IMAGES)].to_vec(),
    };
    let config = ModelConfig {
        lambda,
        bits_back: cfg.bits_back.unwrap_or(false),
        image_channels: data[0].shape()[1],
        ..ModelConfig::default()
    };
    let seed = cfg.seed.unwrap_or(0);
    let mut params = ModelParams::init(config, seed)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        steps: cfg.steps.unwrap_or(d.steps),
        batch_size: cfg.batch_size.unwrap_or(d.batch_size),
        learning_rate: cfg.learning_rate.unwrap_or(d.learning_rate),
        seed,
        log_every: cfg.log_every.unwrap_or(d.log_every),
    };
    say!(
        out,
        "training lambda={lambda} bits_back={} on {} patches, hyper-encoder outputs {} channels",
        params.config.bits_back,
        data.len(),
        params.config.hyper_encoder_out()
    )?;
    let mut logged = Vec::new();
    let result = train(&mut params, &data, &eval, &tc, |l| logged.push(*l));
    for l in &logged {
        say!(out, "step {} nelbo {:.4}", l.step, l.nelbo)?;
    }
    match result {
        Ok(r) => {
            let ckpt = Checkpoint { params, steps: tc.steps };
            ckpt.save(path)?;
            let drop = 100.0 * (1.0 - r.final_nelbo / r.initial_nelbo);
            say!(out, "held-out nelbo {:.4} -> {:.4} ({drop:.1}% lower)", r.initial_nelbo, r.final_nelbo)?;
            say!(out, "wrote {} (model {:016x})", path.display(), ckpt.model_hash())
        }
        Err(e) => {
            // `train` leaves the parameters at the last finite iterate.
            let steps = logged.last().map_or(0, |l| l.step);
            Checkpoint { params, steps }.save(path)?;
            say!(out, "aborted; last good parameters written to {}", path.display())?;
            Err(e.into())
        }
    }
}

fn load_image(cfg: &RunConfig, params: &ModelParams) -> Result<Tensor> {
    let x = read_png(require(&cfg.input, "input")?)?;
    if x.shape()[1] != params.config.image_channels {
        return Err(Error::Config(format!(
            "image has {} channels, model expects {}",
            x.shape()[1],
            params.config.image_channels
        )));
    }
    Ok(x)
}

fn inference_config(cfg: &RunConfig) -> Result<Option<InferenceConfig>> {
    let Some(method) = parse_method(cfg.method.as_deref().unwrap_or("sga"))? else {
        return Ok(None);
    };
    let mut ic = InferenceConfig::new(method)
        .with_steps(cfg.inference_steps.unwrap_or(DEFAULT_INFERENCE_STEPS))
        .with_seed(cfg.seed.unwrap_or(0));
    if let Some(lr) = cfg.inference_learning_rate {
        ic.learning_rate = lr;
    }
    ic.schedule = cfg.schedule();
    Ok(Some(ic))
}

pub fn bbvi_config(cfg: &RunConfig) -> BbviConfig {
    BbviConfig::with_steps(cfg.bbvi_steps.unwrap_or(BbviConfig::default().steps))
}

fn bits_back_config(cfg: &RunConfig) -> BitsBackConfig {
    let d = JointConfig::default();
    let steps = cfg.joint_steps.unwrap_or(d.steps);
    let joint = (steps > 0).then(|| JointConfig {
        steps,
        learning_rate: cfg.inference_learning_rate.unwrap_or(d.learning_rate),
        schedule: cfg.schedule(),
        seed: cfg.seed.unwrap_or(d.seed),
    });
    BitsBackConfig { joint, bbvi: bbvi_config(cfg) }
}

fn pixels(x: &Tensor) -> f64 {
    (x.shape()[2] * x.shape()[3]) as f64
}

pub fn cmd_compress(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let params = &ckpt.params;
    let output = require(&cfg.output, "output")?;
    let lambda_index = cfg.lambda_index.unwrap_or(0);
    if cfg.bits_back_mode() {
        if !params.config.bits_back {
            return Err(Error::Config("bits-back mode needs a checkpoint trained with bits_back".into()));
        }
        let side_path = require(&cfg.side_info, "side_info")?;
        let x = load_image(cfg, params)?;
        let side = read(side_path)?;
        let enc = bitsback_encode(params, &x, &side, &bits_back_config(cfg), lambda_index)?;
        let bytes = enc.bitstream.to_bytes();
        write_atomic(output, &bytes)?;
        let q = psnr(&x, &quantize8(&enc.reconstruction))?;
        say!(
            out,
            "wrote {} bytes; net {:.4} bpp; psnr {q:.6} dB; side information {} bytes, {:.1} bits used, {} padding bytes",
            bytes.len(),
            enc.net_rate_bits / pixels(&x),
            side.len(),
            enc.q_bits,
            enc.pads
        )
    } else {
        let search = inference_config(cfg)?;
        let x = load_image(cfg, params)?;
        let enc = encode_standard(params, &x, search.as_ref(), lambda_index)?;
        let bytes = enc.bitstream.to_bytes();
        write_atomic(output, &bytes)?;
        let q = psnr(&x, &quantize8(&enc.reconstruction))?;
        say!(
            out,
            "wrote {} bytes; {:.4} bpp; psnr {q:.6} dB; estimated {:.1} bits, coded {} bits",
            bytes.len(),
            enc.payload_bits() as f64 / pixels(&x),
            enc.rd.rate_bits,
            enc.payload_bits()
        )
    }
}

pub fn cmd_decompress(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let input = require(&cfg.input, "input")?;
    let output = require(&cfg.output, "output")?;
    let bs = Bitstream::from_bytes(&read(input)?)?;
    let x_hat = match bs.mode {
        Mode::Standard => decode_standard(&ckpt.params, &bs)?,
        Mode::BitsBack => {
            let side_path = require(&cfg.side_info, "side_info")?;
            let (x_hat, side) = bitsback_decode(&ckpt.params, &bs)?;
            write_atomic(side_path, &side)?;
            say!(out, "recovered {} bytes of side information into {}", side.len(), side_path.display())?;
            x_hat
        }
    };
    write_png(output, &x_hat)?;
    let px = pixels(&x_hat);
    let bits = if bs.mode == Mode::BitsBack {
        8.0 * (bs.payload.len() as f64 - bs.side_info_len as f64)
    } else {
        8.0 * bs.payload.len() as f64
    };
    say!(out, "wrote {}; {:.4} bpp", output.display(), bits / px)?;
    if let Some(r) = &cfg.reference {
        let x = read_png(r)?;
        say!(out, "psnr {:.6} dB", psnr(&x, &quantize8(&x_hat))?)?;
    }
    Ok(())
}

/// Sweep entries for one checkpoint: its direct-rounding baseline and the
/// requested methods it supports.
fn methods_for(bits_back: bool, wanted: &[Ablation], steps: u64, seed: u64) -> Vec<SweepMethod> {
    let mut base = baseline_method();
    if bits_back {
        base.name = BASELINE_BITS_BACK.into();
    }
    let mut out = vec![base];
    for a in wanted.iter().filter(|a| a.bits_back() == bits_back) {
        let mut m = a.sweep_method(steps);
        match &mut m.coder {
            SweepCoder::Standard(Some(c)) => c.seed = seed,
            SweepCoder::BitsBack(BitsBackConfig { joint: Some(j), .. }) => j.seed = seed,
            _ => {}
        }
        out.push(m);
    }
    out
}

pub fn cmd_ablate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let paths = require(&cfg.checkpoints, "checkpoints")?;
    let dir = require(&cfg.output, "output")?;
    let wanted: Vec<Ablation> = match &cfg.methods {
        None => Ablation::ALL.to_vec(),
        Some(ms) => ms.iter().map(|m| Ablation::parse(m).ok_or_else(|| Error::Config(format!("unknown method {m:?}")))).collect::<Result<_>>()?,
    };
    let steps = cfg.inference_steps.unwrap_or(DEFAULT_INFERENCE_STEPS);
    let corpus = load_corpus(cfg, ABLATE_SEED, DEFAULT_ABLATE_CORPUS)?;
    let mut missing = Vec::new();
    let mut models = Vec::new();
    for p in paths {
        match Checkpoint::load(p) {
            Ok(c) => models.push(c),
            Err(e) => {
                say!(out, "skipping {}: {e}", p.display())?;
                missing.push(p.display().to_string());
            }
        }
    }
    if models.is_empty() {
        return Err(Error::Config("none of the checkpoints could be loaded".into()));
    }
    for a in &wanted {
        if !models.iter().any(|m| m.params.config.bits_back == a.bits_back()) {
            say!(out, "{} needs a {} checkpoint; none given", a.id(), if a.bits_back() { "bits-back" } else { "standard" })?;
        }
    }
    let mut traced = Vec::new();
    for m in &models {
        let p = &m.params;
        let methods = methods_for(p.config.bits_back, &wanted, steps, cfg.seed.unwrap_or(0));
        say!(out, "lambda {}: {} methods x {} images", p.config.lambda, methods.len(), corpus.len())?;
        traced.extend(rd_sweep_traced(&[(p.config.lambda, p)], &corpus, &methods)?);
    }
    let points: Vec<_> = traced.iter().map(|(p, _)| p.clone()).collect();
    let gaps = mean_gap_curves(&traced)?;
    let mut rep = report::build(&points, &gaps);
    rep.missing = missing;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("rd_points.csv"), rd_points_csv(&points).as_bytes())?;
    write_atomic(&dir.join("curves.csv"), curves_csv(&mean_curves(&points)).as_bytes())?;
    write_atomic(&dir.join("gap_curves.csv"), gap_curves_csv(&gaps).as_bytes())?;
    write_atomic(&dir.join("report.json"), rep.to_json().as_bytes())?;
    write_atomic(&dir.join("report.md"), rep.to_markdown().as_bytes())?;
    say!(out, "{}", rep.to_markdown())
}

pub fn cmd_report(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = require(&cfg.input, "input")?;
    let points = report::read_points(&dir.join("rd_points.csv"))?;
    let gap_path = dir.join("gap_curves.csv");
    let gaps = if gap_path.exists() { report::read_gaps(&gap_path)? } else { Vec::new() };
    let rep = report::build(&points, &gaps);
    let text = match cfg.format.as_deref().unwrap_or("markdown") {
        "json" => rep.to_json(),
        _ => rep.to_markdown(),
    };
    match &cfg.output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => say!(out, "{text}"),
    }
}
