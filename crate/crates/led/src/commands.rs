//! The six subcommands. Each writes its effective configuration and all of
//! its outputs under the configured output directory and never touches its
//! inputs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use led_core::degrade::filters::unsharp_mask;
use led_core::diffusion::{
    enhance, refine, SamplerConfig, Trainer, TrainingExample, COARSE_TO_FINE_FRACTION, ONE_STEP_FRACTION,
};
use led_core::metrics::{self, MetricError, DATA_RANGE, FCNR_RADIUS};
use led_core::nn::{Checkpoint, NoiseEstimator};
use led_core::phantom::make_dataset_with;
use led_core::rng::{derive_seed, stream};
use led_core::schedule::NoiseSchedule;
use led_core::Image;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, RunConfig, CONFIG_FILE, CONFIG_VERSION};
use crate::error::CliError;
use crate::io;

pub const LOSS_LOG: &str = "loss_log.csv";
pub const LOSS_LOG_HEADER: &str = "epoch,step,loss,lr";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";

const MODEL_SALT: u64 = 0x006d_6f64_656c;

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub outputs: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Runs `config` in the mode it was resolved with.
pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    let mode = config
        .mode
        .ok_or_else(|| CliError::Usage("no mode selected".into()))?;
    fs::create_dir_all(&config.out_dir).map_err(|e| CliError::io(&config.out_dir, e))?;
    io::write_text(&config.out_dir.join(CONFIG_FILE), &config.to_json())?;
    match mode {
        Mode::Train => cmd_train(config),
        Mode::Degrade => cmd_degrade(config),
        Mode::Enhance => cmd_infer(config, false),
        Mode::Refine => cmd_infer(config, true),
        Mode::Eval => cmd_eval(config),
        Mode::Phantom => cmd_phantom(config),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("this mode needs `data.{field}` in the config")))
}

fn check_dims(name: &str, a: &Image, b: &Image) -> Result<(), CliError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{name}: extents {}x{}x{} do not match {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )))
    }
}

fn load_training(config: &RunConfig) -> Result<Vec<TrainingExample>, CliError> {
    if let Some(set) = &config.data.phantoms {
        let data = make_dataset_with(&set.image, set.count, set.seed)?;
        return Ok(data.train.into_iter().map(|p| TrainingExample::clean(p.image)).collect());
    }
    let root = require(&config.data.dataset, "dataset or data.phantoms")?;
    let clean = io::list_pngs(&root.join("clean"))?;
    clean
        .par_iter()
        .map(|(name, path)| {
            let img = io::read_image(path)?;
            let degraded = if config.degradation.paired {
                let p = root.join("degraded").join(name);
                if !p.is_file() {
                    return Err(CliError::Data(format!("missing degraded pair for {name}: {}", p.display())));
                }
                let d = io::read_image(&p)?;
                check_dims(name, &d, &img)?;
                Some(d)
            } else {
                None
            };
            Ok(TrainingExample { clean: img, degraded })
        })
        .collect()
}

pub fn cmd_train(config: &RunConfig) -> Result<Outcome, CliError> {
    let examples = load_training(config)?;
    if examples.is_empty() {
        return Err(CliError::Data("no training images found".into()));
    }
    let spec = config.degradation.spec();
    let mut trainer = match &config.data.checkpoint {
        Some(path) => {
            info!("resuming from {}", path.display());
            Trainer::resume(config.model.clone(), &io::load_checkpoint(path)?, config.train.clone())?
        }
        None => {
            let mut rng = stream(derive_seed(config.seed, MODEL_SALT), 0);
            let model = NoiseEstimator::new(config.model.clone(), &mut rng)?;
            Trainer::new(model, config.schedule.clone(), config.train.clone())?
        }
    };
    let log_path = config.out_dir.join(LOSS_LOG);
    let resuming = config.data.checkpoint.is_some() && log_path.is_file();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;
    if !resuming {
        writeln!(log, "{LOSS_LOG_HEADER}").map_err(|e| CliError::io(&log_path, e))?;
    }
    let ckpt_dir = config.out_dir.join(CHECKPOINT_DIR);
    let mut outputs = vec![log_path.clone()];
    let mut last_loss = f64::NAN;
    while trainer.epoch() < config.train.epochs {
        let report = trainer.train_epoch(&examples, &spec)?;
        let mut rows = String::new();
        for s in &report.steps {
            rows.push_str(&format!("{},{},{},{}\n", s.epoch + 1, s.step, s.loss, s.lr));
        }
        log.write_all(rows.as_bytes())
            .and_then(|_| log.flush())
            .map_err(|e| CliError::io(&log_path, e))?;
        let path = ckpt_dir.join(checkpoint_name(trainer.epoch()));
        io::save_checkpoint(&path, &trainer.checkpoint())?;
        info!("epoch {} mean loss {:.5}", trainer.epoch(), report.mean_loss);
        last_loss = report.mean_loss;
        outputs.push(path);
    }
    Ok(Outcome {
        summary: format!("trained to epoch {} (last mean loss {last_loss:.5})", trainer.epoch()),
        outputs,
    })
}

/// Model and schedule stored in the configured checkpoint.
pub fn load_model(config: &RunConfig) -> Result<(NoiseEstimator, NoiseSchedule), CliError> {
    let path = require(&config.data.checkpoint, "checkpoint")?;
    let ckpt: Checkpoint = io::load_checkpoint(path)?;
    let mut model = NoiseEstimator::new(config.model.clone(), &mut stream(0, 0))?;
    model.params_mut().load(&ckpt.params)?;
    Ok((model, ckpt.schedule.build()?))
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    input: PathBuf,
    coarse: Option<PathBuf>,
    output: PathBuf,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: u32,
    mode: Mode,
    checkpoint: Option<&'a Path>,
    sampler: &'a SamplerConfig,
    noise_depth: usize,
    seed: u64,
    entries: Vec<ManifestEntry>,
}

fn cmd_infer(config: &RunConfig, refining: bool) -> Result<Outcome, CliError> {
    let (model, schedule) = load_model(config)?;
    let fraction = if refining { COARSE_TO_FINE_FRACTION } else { ONE_STEP_FRACTION };
    let depth = config.sampler.depth(schedule.steps(), fraction)?;
    let input_dir = require(&config.data.input, "input")?;
    let inputs = io::list_pngs(input_dir)?;
    let sub = if refining { "refined" } else { "enhanced" };
    let out_dir = config.out_dir.join(sub);

    let entries = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (name, path))| {
            let x = io::read_image(path)?;
            let (cond, coarse_path) = if refining {
                match &config.data.coarse {
                    Some(dir) => {
                        let p = dir.join(name);
                        if !p.is_file() {
                            return Err(CliError::Data(format!(
                                "missing coarse image for {name}: {}",
                                p.display()
                            )));
                        }
                        let c = io::read_image(&p)?;
                        check_dims(name, &c, &x)?;
                        (c, Some(p))
                    }
                    None => (unsharp_mask(&x, config.coarse.sigma, config.coarse.amount), None),
                }
            } else {
                (x, None)
            };
            let seed = derive_seed(config.seed, i as u64);
            let sampler = SamplerConfig {
                seed,
                noise_depth: Some(depth),
                ..config.sampler.clone()
            };
            let t = cond.to_tensor()?;
            let y = if refining {
                refine(&model, &schedule, &t, &sampler)?
            } else {
                enhance(&model, &schedule, &t, &sampler)?
            };
            let output = out_dir.join(name);
            io::write_image(&output, &Image::unbatch(&y).remove(0))?;
            Ok(ManifestEntry {
                input: path.clone(),
                coarse: coarse_path,
                output,
                seed,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let outputs = entries.iter().map(|e| e.output.clone()).collect();
    let manifest = Manifest {
        version: CONFIG_VERSION,
        mode: if refining { Mode::Refine } else { Mode::Enhance },
        checkpoint: config.data.checkpoint.as_deref(),
        sampler: &config.sampler,
        noise_depth: depth,
        seed: config.seed,
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    io::write_text(&config.out_dir.join(MANIFEST), &text)?;
    Ok(Outcome {
        summary: format!("{sub} {} images at noise depth {depth}", inputs.len()),
        outputs,
    })
}

pub fn cmd_degrade(config: &RunConfig) -> Result<Outcome, CliError> {
    let dir = match (&config.data.input, &config.data.dataset) {
        (Some(d), _) => d.clone(),
        (None, Some(root)) => root.join("clean"),
        (None, None) => return Err(CliError::Usage("degrade needs `data.input` or `data.dataset`".into())),
    };
    let spec = config.degradation.spec();
    let out_dir = config.out_dir.join("degraded");
    let outputs = io::list_pngs(&dir)?
        .par_iter()
        .enumerate()
        .map(|(i, (name, path))| {
            let img = io::read_image(path)?;
            let out = spec.apply(&img, derive_seed(config.seed, i as u64))?;
            let p = out_dir.join(name);
            io::write_image(&p, &out)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Outcome {
        summary: format!("degraded {} images", outputs.len()),
        outputs,
    })
}

pub fn cmd_phantom(config: &RunConfig) -> Result<Outcome, CliError> {
    let set = config.data.phantoms.unwrap_or_default();
    let data = make_dataset_with(&set.image, set.count, set.seed)?;
    let spec = config.degradation.spec();
    let mut outputs = Vec::new();
    let splits = [("train", &data.train, 0), ("val", &data.val, data.train.len())];
    for (split, items, offset) in splits {
        let root = config.out_dir.join(split);
        let written = items
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let index = offset + i;
                let name = format!("phantom_{index:04}.png");
                let degraded = spec.apply(&p.image, derive_seed(config.seed, index as u64))?;
                io::write_image(&root.join("clean").join(&name), &p.image)?;
                io::write_image(&root.join("degraded").join(&name), &degraded)?;
                io::write_mask(&root.join("masks").join(&name), &p.vessel)?;
                io::write_mask(&root.join("fov").join(&name), &p.fov)?;
                Ok(root.join("clean").join(&name))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        outputs.extend(written);
    }
    Ok(Outcome {
        summary: format!("{} train and {} validation phantoms", data.train.len(), data.val.len()),
        outputs,
    })
}

/// One row of the evaluation table. Absent values could not be computed
/// (missing mask, degenerate contrast, image smaller than the SSIM window).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub fcnr: Option<f64>,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

fn soft(name: &str, what: &str, r: Result<f64, MetricError>) -> Result<Option<f64>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ MetricError::ShapeMismatch(..)) => Err(CliError::Data(format!("{name}: {e}"))),
        Err(e) => {
            warn!("{name}: {what} unavailable: {e}");
            Ok(None)
        }
    }
}

pub fn evaluate(reference: &Path, candidate: &Path, masks: Option<&Path>) -> Result<Vec<EvalRow>, CliError> {
    let candidates = io::list_pngs(candidate)?;
    if candidates.is_empty() {
        warn!("no candidate images in {}", candidate.display());
    }
    candidates
        .par_iter()
        .map(|(name, path)| {
            let cand = io::read_image(path)?;
            let ref_path = reference.join(name);
            if !ref_path.is_file() {
                return Err(CliError::Data(format!(
                    "missing reference image for {name}: {}",
                    ref_path.display()
                )));
            }
            let refr = io::read_image(&ref_path)?;
            check_dims(name, &cand, &refr)?;
            let psnr = metrics::psnr(&cand, &refr, DATA_RANGE)?;
            let ssim = soft(name, "ssim", metrics::ssim(&cand, &refr))?;
            let mask_path = masks.map(|m| m.join(name)).filter(|p| p.is_file());
            let fcnr = match mask_path {
                Some(p) => soft(name, "fcnr", metrics::fcnr(&cand, &io::read_mask(&p)?, FCNR_RADIUS))?,
                None => {
                    warn!("{name}: no vessel mask, fcnr left blank");
                    None
                }
            };
            Ok(EvalRow {
                image_id: name.clone(),
                fcnr,
                psnr,
                ssim,
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-image rows followed by a `mean` row averaging the finite values.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "fcnr", "psnr", "ssim"])?;
    for r in rows {
        w.write_record([r.image_id.clone(), cell(r.fcnr), r.psnr.to_string(), cell(r.ssim)])?;
    }
    if !rows.is_empty() {
        w.write_record([
            "mean".to_string(),
            cell(mean(rows.iter().filter_map(|r| r.fcnr))),
            cell(mean(rows.iter().map(|r| r.psnr))),
            cell(mean(rows.iter().filter_map(|r| r.ssim))),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_eval(config: &RunConfig) -> Result<Outcome, CliError> {
    let reference = require(&config.data.reference, "reference")?;
    let candidate = require(&config.data.candidate, "candidate")?;
    let rows = evaluate(reference, candidate, config.data.masks.as_deref())?;
    let path = config.out_dir.join(METRICS_CSV);
    write_eval_csv(&path, &rows)?;
    Ok(Outcome {
        summary: format!("evaluated {} images", rows.len()),
        outputs: vec![path],
    })
}
