//! Run configuration: a flat `key = value` file (TOML syntax) layered over
//! built-in defaults, with command-line flags applied last.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mclnn::systems::{DatasetConfig, SystemKind, SystemSpec};
use mclnn::training::{BatchMode, ModelKind, TrainConfig};
use mclnn::{Error, Result};

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<String>,
    pub model: Option<String>,
    /// Seeds both data generation and training.
    pub seed: Option<u64>,

    pub k: Option<f64>,
    pub q0: Option<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    pub masses: Option<Vec<f64>>,
    pub n_particles: Option<usize>,

    pub n_trajectories: Option<usize>,
    pub points_per_trajectory: Option<usize>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub perturbation: Option<f64>,
    pub n_samples: Option<usize>,

    pub hidden: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub loss_threshold: Option<f64>,
    pub batch: Option<BatchMode>,
    pub minibatch: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub checkpoint_every: Option<usize>,

    pub records: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub task: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub n_particles: Option<usize>,
    pub records: Option<usize>,
}

/// A fully concrete configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: SystemKind,
    pub model: ModelKind,
    pub spec: SystemSpec,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub n_samples: usize,
    pub checkpoint_every: usize,
    pub records: usize,
}

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 1000;
pub const DEFAULT_RECORDS: usize = 100;

impl RunConfig {
    pub fn resolve(file: &ConfigFile, cli: &Overrides) -> Result<Self> {
        let task: SystemKind = cli
            .task
            .as_deref()
            .or(file.task.as_deref())
            .ok_or_else(|| Error::config("no task given (use --task or `task = ...`)"))?
            .parse()?;
        let model: ModelKind = match cli.model.as_deref().or(file.model.as_deref()) {
            Some(m) => m.parse()?,
            None => ModelKind::Mclnn,
        };
        let n = cli
            .n_particles
            .or(file.n_particles)
            .unwrap_or_else(|| task.default_particles());
        let mut spec = SystemSpec::with_particles(task, n);
        if let Some(k) = file.k {
            spec.k = k;
        }
        if let Some(q0) = file.q0 {
            spec.q0 = q0;
        }
        if let Some(g) = file.g {
            spec.g = g;
        }
        if let Some(m) = &file.masses {
            spec.masses = m.clone();
        }
        spec.validate()?;

        let seed = cli.seed.or(file.seed);
        let d = DatasetConfig::default();
        let dataset = DatasetConfig {
            n_trajectories: file.n_trajectories.unwrap_or(d.n_trajectories),
            points_per_trajectory: file.points_per_trajectory.unwrap_or(d.points_per_trajectory),
            dt: file.dt.unwrap_or(d.dt),
            stride: file.stride.unwrap_or(d.stride),
            seed: seed.unwrap_or(d.seed),
            perturbation: file.perturbation.unwrap_or(d.perturbation),
        };
        dataset.validate()?;

        let t = TrainConfig::default();
        let train = TrainConfig {
            model_kind: model,
            hidden: file.hidden.clone().unwrap_or(t.hidden),
            learning_rate: file.learning_rate.unwrap_or(t.learning_rate),
            epochs: cli.epochs.or(file.epochs).unwrap_or(t.epochs),
            loss_threshold: file.loss_threshold.unwrap_or(t.loss_threshold),
            batch: file.batch.unwrap_or(t.batch),
            minibatch: file.minibatch.unwrap_or(t.minibatch),
            validation_fraction: file.validation_fraction.unwrap_or(t.validation_fraction),
            seed: seed.unwrap_or(t.seed),
        };
        train.validate()?;

        let n_samples = file.n_samples.unwrap_or(DEFAULT_SAMPLES);
        let checkpoint_every = file.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY);
        let records = cli.records.or(file.records).unwrap_or(DEFAULT_RECORDS);
        if n_samples == 0 || checkpoint_every == 0 || records == 0 {
            return Err(Error::config(
                "n_samples, checkpoint_every and records must be at least 1",
            ));
        }
        Ok(RunConfig {
            task,
            model,
            spec,
            dataset,
            train,
            n_samples,
            checkpoint_every,
            records,
        })
    }
}
