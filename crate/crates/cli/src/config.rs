use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvsm::data::{ImageFormat, SampleMode};
use lvsm::model::LvsmConfig;
use lvsm::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training dataset directory.
    pub dir: PathBuf,
    pub mode: SampleMode,
    pub scenes: usize,
    /// Input views per example; 0 picks the mode default (4 object, 2 scene).
    pub inputs: usize,
    /// Target views per example; 0 picks the mode default (8 object, 6 scene).
    pub targets: usize,
    pub resolution: usize,
    pub format: ImageFormat,
    /// Held-out split written next to the training set; skipped when 0.
    pub eval_scenes: usize,
    pub eval_dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/train"),
            mode: SampleMode::Object,
            scenes: 16,
            inputs: 0,
            targets: 0,
            resolution: 32,
            format: ImageFormat::Ppm,
            eval_scenes: 0,
            eval_dir: PathBuf::from("data/eval"),
        }
    }
}

impl DataSection {
    pub fn views(&self) -> (usize, usize) {
        let (n, m) = self.mode.default_views();
        (
            if self.inputs == 0 { n } else { self.inputs },
            if self.targets == 0 { m } else { self.targets },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Checkpoints, metrics log, config snapshot and reports go here.
    pub dir: PathBuf,
    /// Steps between checkpoint writes; the final step is always written.
    pub checkpoint_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            checkpoint_every: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Dataset to score; empty means `data.eval_dir` when it exists, else `data.dir`.
    pub dataset: PathBuf,
    /// Timed runs per view count (after one warmup run).
    pub repetitions: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            repetitions: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// Root seed; init, data and batch sampling seeds are derived from it.
    pub seed: u64,
    pub model: LvsmConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// A loaded configuration plus which top-level sections the user wrote.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub model_given: bool,
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    let mut table = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<toml::Table>().map_err(|e| {
                anyhow::anyhow!("{}: {}", p.display(), e.to_string().replace('\n', " "))
            })?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let model_given = table.contains_key("model");
    let config: RunConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let inner = inner.trim();
            if path == "." || path.is_empty() {
                anyhow::anyhow!("config error: {inner}")
            } else {
                anyhow::anyhow!("config error at `{path}`: {inner}")
            }
        })?;
    config.model.validate()?;
    Ok(LoadedConfig {
        config,
        model_given,
    })
}

impl RunConfig {
    pub fn to_table(&self) -> Result<toml::Table> {
        Ok(toml::Table::try_from(self)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn eval_dataset(&self) -> PathBuf {
        if !self.eval.dataset.as_os_str().is_empty() {
            self.eval.dataset.clone()
        } else if self.data.eval_dir.is_dir() {
            self.data.eval_dir.clone()
        } else {
            self.data.dir.clone()
        }
    }
}
