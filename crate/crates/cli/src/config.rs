//! Option groups shared by flags and the TOML config file. Every field is
//! optional so that flags can be layered over the file, and the file over
//! the defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use ctlogic_core::dataset::{load_splits, CategorySource, Dataset, HistoryScope, RowFormat};
use ctlogic_core::evaluator::{Direction, EvalConfig, Task};
use ctlogic_core::{Aggregation, ApplyParams, LearnParams, Mode, StopCriterion};

use crate::ConfigError;

macro_rules! layer {
    ($self:ident, $other:ident; $($field:ident),+ $(,)?) => {
        $( if $self.$field.is_none() { $self.$field = $other.$field.clone(); } )+
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataOptions {
    /// Directory holding train.txt, test.txt and optionally valid.txt
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// quadruple or sextuple
    #[arg(long)]
    pub format: Option<String>,
    /// entity<TAB>category map
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Put every entity in one category
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub single_category: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
    pub format: String,
    pub categories: String,
}

impl DataOptions {
    pub fn layer(&mut self, other: &Self) {
        layer!(self, other; dataset, train, valid, test, format, categories, single_category);
    }

    pub fn resolve(&self) -> anyhow::Result<(DataConfig, RowFormat, CategorySource)> {
        let in_dir = |name: &str| self.dataset.as_ref().map(|d| d.join(name));
        let train = self.train.clone().or_else(|| in_dir("train.txt"));
        let test = self.test.clone().or_else(|| in_dir("test.txt"));
        let valid = self
            .valid
            .clone()
            .or_else(|| in_dir("valid.txt").filter(|p| p.exists()));
        let (Some(train), Some(test)) = (train, test) else {
            return Err(ConfigError::msg(
                "need --dataset DIR or both --train and --test",
            ));
        };
        for p in std::iter::once(&train)
            .chain(valid.iter())
            .chain(std::iter::once(&test))
        {
            if !p.is_file() {
                return Err(ConfigError::msg(format!(
                    "dataset file {} does not exist",
                    p.display()
                )));
            }
        }
        let format_name = self.format.clone().unwrap_or_else(|| "sextuple".into());
        let format: RowFormat = format_name.parse().map_err(ConfigError::wrap)?;
        let (source, describe) = match (&self.categories, self.single_category.unwrap_or(false)) {
            (Some(_), true) => {
                return Err(ConfigError::msg(
                    "--categories and --single-category are exclusive",
                ))
            }
            (Some(path), false) => {
                if !path.is_file() {
                    return Err(ConfigError::msg(format!(
                        "category map {} does not exist",
                        path.display()
                    )));
                }
                (
                    CategorySource::Map(path.clone()),
                    format!("map:{}", path.display()),
                )
            }
            (None, true) => (CategorySource::Single, "single".to_string()),
            (None, false) => (CategorySource::Rows, "rows".to_string()),
        };
        let config = DataConfig {
            train,
            valid,
            test,
            format: format_name,
            categories: describe,
        };
        Ok((config, format, source))
    }
}

pub fn load(
    config: &DataConfig,
    format: RowFormat,
    source: &CategorySource,
) -> anyhow::Result<Dataset> {
    let ds = load_splits(
        &config.train,
        config.valid.as_deref(),
        &config.test,
        format,
        source,
    )
    .map_err(crate::classify)?;
    log::info!(
        "loaded {} train / {} valid / {} test facts, {} entities, {} relations, {} categories",
        ds.train.base_facts().len(),
        ds.valid.base_facts().len(),
        ds.test.base_facts().len(),
        ds.vocab.entities.len(),
        ds.vocab.relations.len(),
        ds.vocab.categories.len()
    );
    Ok(ds)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnOptions {
    /// tlogic or ctlogic
    #[arg(long)]
    pub mode: Option<String>,
    /// Walk budget per relation
    #[arg(long)]
    pub walks: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Grounding samples per rule for confidence estimation
    #[arg(long)]
    pub confidence_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl LearnOptions {
    pub fn layer(&mut self, other: &Self) {
        layer!(self, other; mode, walks, max_length, confidence_samples, seed);
    }

    pub fn resolve(&self) -> anyhow::Result<LearnParams> {
        let d = LearnParams::default();
        Ok(LearnParams {
            mode: parse_or(&self.mode, d.mode)?,
            walks: self.walks.unwrap_or(d.walks),
            max_length: self.max_length.unwrap_or(d.max_length),
            confidence_samples: self.confidence_samples.unwrap_or(d.confidence_samples),
            seed: self.seed.unwrap_or(d.seed),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApplyOptions {
    /// tlogic or ctlogic; defaults to the mode the bank was learned in
    #[arg(long = "apply-mode")]
    pub mode: Option<String>,
    #[arg(long)]
    pub window: Option<u32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<usize>,
    /// distinct_vectors or candidates
    #[arg(long)]
    pub stop: Option<String>,
    /// Splits used as grounding history: train, train+valid or all
    #[arg(long)]
    pub history: Option<String>,
}

impl ApplyOptions {
    pub fn layer(&mut self, other: &Self) {
        layer!(self, other; mode, window, alpha, lambda, gamma, stop, history);
    }

    pub fn resolve(&self, bank_mode: Mode) -> anyhow::Result<(ApplyParams, HistoryScope)> {
        let d = ApplyParams::default();
        let params = ApplyParams {
            window: self.window.unwrap_or(d.window),
            alpha: self.alpha.unwrap_or(d.alpha),
            lambda: self.lambda.unwrap_or(d.lambda),
            gamma: self.gamma.unwrap_or(d.gamma),
            stop: parse_or::<StopCriterion>(&self.stop, d.stop)?,
            mode: parse_or(&self.mode, bank_mode)?,
        };
        params.validate().map_err(ConfigError::wrap)?;
        let history = parse_or(&self.history, HistoryScope::All)?;
        Ok((params, history))
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// entity, category or both
    #[arg(long)]
    pub task: Option<String>,
    /// noisy_or, max_plus or both
    #[arg(long)]
    pub aggregation: Option<String>,
    /// object, subject or both
    #[arg(long)]
    pub direction: Option<String>,
    /// Write per-query audit logs
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub logs: Option<bool>,
    /// Candidates listed per audit record
    #[arg(long)]
    pub log_top: Option<usize>,
}

impl EvalOptions {
    pub fn layer(&mut self, other: &Self) {
        layer!(self, other; task, aggregation, direction, logs, log_top);
    }

    pub fn configs(&self) -> anyhow::Result<Vec<EvalConfig>> {
        let tasks: Vec<Task> = match self.task.as_deref().unwrap_or("both") {
            "both" => vec![Task::Entity, Task::Category],
            other => vec![other.parse().map_err(ConfigError::wrap)?],
        };
        let aggs: Vec<Aggregation> = match self.aggregation.as_deref().unwrap_or("both") {
            "both" => vec![Aggregation::NoisyOr, Aggregation::MaxPlus],
            other => vec![other.parse().map_err(ConfigError::wrap)?],
        };
        Ok(tasks
            .iter()
            .flat_map(|&task| {
                aggs.iter()
                    .map(move |&aggregation| EvalConfig { task, aggregation })
            })
            .collect())
    }

    pub fn direction(&self) -> anyhow::Result<Direction> {
        parse_or(&self.direction, Direction::Object)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategorizeOptions {
    /// entity<TAB>v1,v2,... file
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// PCA sizes to try, comma separated
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Mixture sizes to try, comma separated
    #[arg(long = "k", value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// diagonal or full
    #[arg(long)]
    pub covariance: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// bic or aic
    #[arg(long)]
    pub criterion: Option<String>,
    /// Force `DIMS,K` instead of the best-scoring cell
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub force: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CategorizeOptions {
    pub fn layer(&mut self, other: &Self) {
        layer!(self, other; embeddings, dims, k, covariance, restarts, max_iters, criterion, force, seed);
    }
}

/// The config file: one table per option group plus run-wide settings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: DataOptions,
    pub learn: LearnOptions,
    pub apply: ApplyOptions,
    pub evaluate: EvalOptions,
    pub categorize: CategorizeOptions,
}

impl FileConfig {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| ConfigError::msg(format!("{e:#}")))?;
        toml::from_str(&text).map_err(|e| ConfigError::msg(format!("{}: {e}", path.display())))
    }
}

pub fn parse_or<T>(value: &Option<String>, default: T) -> anyhow::Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    match value {
        Some(v) => v
            .parse()
            .map_err(|e: T::Err| ConfigError::msg(e.to_string())),
        None => Ok(default),
    }
}
