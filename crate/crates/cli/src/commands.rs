use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvsm::data::{
    example_dir_name, generate_dataset, read_dataset, read_image, read_manifest, write_dataset_as,
    write_image, write_png, ViewRole, MANIFEST_NAME,
};
use lvsm::diffnum::Scalar;
use lvsm::eval::{
    comparison_grid, decode_timing, evaluate_copy_nearest, evaluate_model, view_count_sweep,
    EvalReport,
};
use lvsm::model::{init_weights, synthesize_views, LvsmConfig, LvsmWeights};
use lvsm::seed::derive_seed;
use lvsm::training::{train_until, StepMetrics, TrainState};
use lvsm::Error;

use crate::config::{LoadedConfig, RunConfig};

pub const CHECKPOINT_NAME: &str = "checkpoint.lvsm";
pub const METRICS_NAME: &str = "metrics.log";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let d = &cfg.data;
    let dir = out.unwrap_or_else(|| d.dir.clone());
    let views = d.views();
    let train = generate_dataset(
        derive_seed(cfg.seed, "data"),
        d.scenes,
        d.mode,
        views,
        d.resolution,
    )?;
    write_dataset_as(&train, &dir, d.format)?;
    println!("wrote {} examples to {}", train.len(), dir.display());
    if d.eval_scenes > 0 {
        let held_out = generate_dataset(
            derive_seed(cfg.seed, "eval-data"),
            d.eval_scenes,
            d.mode,
            views,
            d.resolution,
        )?;
        write_dataset_as(&held_out, &d.eval_dir, d.format)?;
        println!(
            "wrote {} examples to {}",
            held_out.len(),
            d.eval_dir.display()
        );
    }
    Ok(())
}

fn check_model(config: &LvsmConfig, checkpoint: &LvsmConfig, path: &Path) -> Result<()> {
    if config != checkpoint {
        return Err(Error::Incompatible(format!(
            "config model ({} {}x{} d{}) does not match checkpoint {} ({} {}x{} d{})",
            config.architecture,
            config.encoder_layers,
            config.decoder_layers,
            config.dim,
            path.display(),
            checkpoint.architecture,
            checkpoint.encoder_layers,
            checkpoint.decoder_layers,
            checkpoint.dim,
        ))
        .into());
    }
    Ok(())
}

/// Keeps the log lines of steps before `step`, so a resumed run appends
/// exactly where its checkpoint left off.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: String = text
        .lines()
        .filter(|l| l.parse::<StepMetrics>().is_ok_and(|m| m.step < step))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).with_context(|| format!("rewriting {}", path.display()))
}

pub fn train<T: Scalar>(
    loaded: &LoadedConfig,
    resume: Option<&Path>,
    until: Option<u64>,
) -> Result<()> {
    let cfg = &loaded.config;
    cfg.train.validate()?;
    let dataset = read_dataset(&cfg.data.dir)?;
    let out = &cfg.output.dir;
    create_dir(out)?;
    let mut state = match resume {
        Some(path) => {
            let (state, header, _) = TrainState::<T>::load(path)?;
            check_model(&cfg.model, &header.model, path)?;
            if header.seed != cfg.seed {
                bail!(
                    "checkpoint seed {} differs from config seed {}",
                    header.seed,
                    cfg.seed
                );
            }
            state
        }
        None => TrainState::new(
            init_weights::<T>(&cfg.model, derive_seed(cfg.seed, "init"))?,
            cfg.seed,
        ),
    };
    let end = until
        .unwrap_or(cfg.train.total_steps)
        .min(cfg.train.total_steps);
    fs::write(out.join("config.toml"), cfg.to_toml()?).context("writing config snapshot")?;
    let log_path = out.join(METRICS_NAME);
    if resume.is_some() {
        truncate_log(&log_path, state.step)?;
    } else {
        fs::write(&log_path, "").with_context(|| format!("creating {}", log_path.display()))?;
    }
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let ckpt = out.join(CHECKPOINT_NAME);
    let run = cfg.to_table()?;
    let every = cfg.output.checkpoint_every.max(1);
    train_until(&mut state, &cfg.model, &cfg.train, &dataset, end, |s, m| {
        writeln!(log, "{m}").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if s.step % every == 0 || s.step == end {
            s.save(&ckpt, &cfg.model, Some(run.clone()))?;
        }
        Ok(())
    })?;
    if !ckpt.exists() {
        state.save(&ckpt, &cfg.model, Some(run))?;
    }
    println!(
        "trained to step {} ({} skipped); checkpoint {}",
        state.step,
        state.skipped,
        ckpt.display()
    );
    Ok(())
}

fn load_weights<T: Scalar>(
    loaded: &LoadedConfig,
    path: &Path,
) -> Result<(LvsmWeights<T>, LvsmConfig)> {
    let (state, header, _) = TrainState::<T>::load(path)?;
    if loaded.model_given {
        check_model(&loaded.config.model, &header.model, path)?;
    }
    Ok((state.weights, header.model))
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub sweep: Vec<usize>,
    pub timing: Vec<usize>,
    pub images: bool,
}

pub fn eval<T: Scalar>(loaded: &LoadedConfig, args: &EvalArgs) -> Result<()> {
    let cfg = &loaded.config;
    let (weights, model) = load_weights::<T>(loaded, &args.checkpoint)?;
    let dataset = read_dataset(&cfg.eval_dataset())?;
    let mut report = EvalReport::new();
    let scores = evaluate_model(&weights, &model, &dataset)?;
    report.set_scenes(&scores);
    report.set_baseline(&evaluate_copy_nearest(&dataset)?);
    if !args.sweep.is_empty() {
        report.sweep = view_count_sweep(&weights, &model, &dataset, &args.sweep)?;
    }
    if !args.timing.is_empty() {
        let res = dataset
            .first()
            .and_then(|e| e.resolution())
            .map_or(cfg.data.resolution, |(h, _)| h);
        report.timing = decode_timing(&weights, &model, &args.timing, cfg.eval.repetitions, res)?;
    }
    let out = &cfg.output.dir;
    create_dir(out)?;
    if args.images {
        let dir = out.join("eval_images");
        create_dir(&dir)?;
        for (i, (ex, s)) in dataset.iter().zip(&scores).enumerate() {
            for (j, (pred, t)) in s.predictions.iter().zip(&ex.targets).enumerate() {
                let grid = comparison_grid(&ex.inputs[0].image, pred, &t.image)?;
                write_png(
                    &dir.join(format!("{}_target_{j:02}.png", example_dir_name(i))),
                    &grid,
                )?;
            }
        }
    }
    let text = report.to_text();
    fs::write(out.join("report.txt"), &text).context("writing report.txt")?;
    fs::write(out.join("report.toml"), report.to_toml()?).context("writing report.toml")?;
    print!("{text}");
    Ok(())
}

/// Renders every target camera listed in `views/cameras.json` from its input views.
pub fn render<T: Scalar>(
    loaded: &LoadedConfig,
    checkpoint: &Path,
    views: &Path,
    out: &Path,
) -> Result<()> {
    let (weights, model) = load_weights::<T>(loaded, checkpoint)?;
    let manifest = read_manifest(&views.join(MANIFEST_NAME))?;
    let mut inputs = Vec::new();
    for v in manifest.views.iter().filter(|v| v.role == ViewRole::Input) {
        let name = v.image.as_ref().context("input view without an image")?;
        inputs.push((read_image(&views.join(name))?, v.camera()?));
    }
    let targets = manifest.cameras(ViewRole::Target)?;
    if inputs.is_empty() || targets.is_empty() {
        bail!(
            "{} needs at least one input and one target view",
            views.join(MANIFEST_NAME).display()
        );
    }
    let pairs: Vec<_> = inputs.iter().map(|(i, c)| (i, c)).collect();
    let refs: Vec<_> = targets.iter().collect();
    let images = synthesize_views(&weights, &model, &pairs, &refs)?;
    create_dir(out)?;
    let ext = loaded.config.data.format.extension();
    for (j, img) in images.iter().enumerate() {
        let path = out.join(format!("target_{j:02}.{ext}"));
        write_image(&path, img)?;
    }
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}
