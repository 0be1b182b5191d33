//! Fitting the pairwise model to position trajectories and the baseline to
//! accelerations, with Adam.

mod baseline;
mod mclnn;

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{
    baseline_accelerations, baseline_accelerations_with, baseline_batch, baseline_loss,
    baseline_potential,
};
pub use mclnn::{mclnn_loss, MclnnLossFn, MclnnObjective};

use crate::error::{Error, Result};
use crate::lagrangian::Trajectory;
use crate::nn::{layer_sizes_for, AdamState, MlpParams, MlpWorkspace, DEFAULT_HIDDEN};
use crate::systems::AccelSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mclnn,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mclnn => "mclnn",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mclnn" => Ok(ModelKind::Mclnn),
            "baseline" | "lnn" => Ok(ModelKind::Baseline),
            _ => Err(Error::config(format!("unknown model '{s}' (expected mclnn or baseline)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One update per epoch on all training trajectories.
    Full,
    /// One update per training trajectory, in a shuffled order each epoch.
    PerTrajectory,
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(BatchMode::Full),
            "per_trajectory" => Ok(BatchMode::PerTrajectory),
            _ => Err(Error::config(format!("unknown batch mode '{s}' (expected full or per_trajectory)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Training stops once the train loss is at or below this.
    pub loss_threshold: f64,
    pub batch: BatchMode,
    /// Baseline mini-batch size.
    pub minibatch: usize,
    /// Share of trajectories (or baseline samples) held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Mclnn,
            hidden: DEFAULT_HIDDEN.to_vec(),
            learning_rate: 1e-3,
            epochs: 100_000,
            loss_threshold: 1e-8,
            batch: BatchMode::Full,
            minibatch: 1000,
            validation_fraction: 0.2,
            seed: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden layers must be non-empty with positive widths"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("minibatch must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must be in [0, 1)"));
        }
        if !(self.loss_threshold >= 0.0) {
            return Err(Error::config("loss_threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    LossThreshold,
    EpochBudget,
    /// The observer asked to stop.
    Interrupted,
    /// A non-finite loss or gradient; parameters are the last good ones.
    NumericalFailure { epoch: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub wall_clock_seconds: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn failed(&self) -> bool {
        matches!(self.stop_reason, StopReason::NumericalFailure { .. })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub adam: AdamState,
    pub report: TrainReport,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// What the observer sees after each epoch: the record for the epoch and
/// the parameters after its update.
pub struct EpochEvent<'a> {
    pub loss: &'a EpochLoss,
    pub params: &'a MlpParams,
    pub adam: &'a AdamState,
}

pub type Observer<'o> = dyn FnMut(&EpochEvent<'_>) -> ControlFlow<()> + 'o;

/// Seeded shuffle of `0..n` split into (train, validation). At least one
/// item stays in training.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * validation_fraction).round() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn numerical_or(e: Error, epoch: usize) -> Result<StopReason> {
    if e.is_numerical() {
        Ok(StopReason::NumericalFailure {
            epoch,
            message: e.to_string(),
        })
    } else {
        Err(e)
    }
}

/// Trains the pairwise model on trajectories with the default settings of
/// `config`, starting from a seeded initialization.
pub fn train_mclnn(trajectories: &[Trajectory], config: &TrainConfig) -> Result<TrainOutcome> {
    train_mclnn_observed(trajectories, config, None, &mut |_| ControlFlow::Continue(()))
}

/// As [`train_mclnn`], optionally resuming from `start`, with an observer
/// called after every epoch.
pub fn train_mclnn_observed(
    trajectories: &[Trajectory],
    config: &TrainConfig,
    start: Option<(MlpParams, AdamState)>,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if trajectories.is_empty() {
        return Err(Error::config("no trajectories to train on"));
    }
    let (train_idx, val_idx) =
        split_indices(trajectories.len(), config.validation_fraction, config.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| trajectories[i].clone()).collect::<Vec<_>>();
    let mut train_obj = MclnnObjective::new(&pick(&train_idx))?;
    let mut val_obj = if val_idx.is_empty() {
        None
    } else {
        Some(MclnnObjective::new(&pick(&val_idx))?)
    };
    let (mut params, mut adam) = match start {
        Some(s) => s,
        None => {
            let p = MlpParams::init(&layer_sizes_for(1, &config.hidden), config.seed)?;
            let a = AdamState::new(p.num_params(), config.learning_rate);
            (p, a)
        }
    };
    if params.input_dim() != 1 {
        return Err(Error::config("pair network must take a single distance"));
    }
    adam.learning_rate = config.learning_rate;
    let mut grad = vec![0.0; params.num_params()];
    let mut flat = params.to_flat();
    let clock = Instant::now();
    let mut history = Vec::new();
    let mut reason = StopReason::EpochBudget;
    let n_train = train_obj.len();

    'epochs: for epoch in 1..=config.epochs {
        let before = (params.clone(), adam.clone());
        let train_loss = match config.batch {
            BatchMode::Full => {
                let loss = match train_obj.loss_and_grad(&params, &mut grad) {
                    Ok(l) => l,
                    Err(e) => {
                        reason = numerical_or(e, epoch)?;
                        break;
                    }
                };
                if loss <= config.loss_threshold {
                    let val = match val_obj.as_mut().map(|o| o.loss(&params)).transpose() {
                        Ok(v) => v,
                        Err(e) => {
                            reason = numerical_or(e, epoch)?;
                            break;
                        }
                    };
                    history.push(EpochLoss {
                        epoch,
                        train_loss: loss,
                        val_loss: val,
                    });
                    reason = StopReason::LossThreshold;
                    break;
                }
                if let Err(e) = adam.step(&mut flat, &grad) {
                    reason = numerical_or(e, epoch)?;
                    break;
                }
                params.set_flat(&flat)?;
                loss
            }
            BatchMode::PerTrajectory => {
                let mut order: Vec<usize> = (0..n_train).collect();
                order.shuffle(&mut epoch_rng(config.seed, epoch));
                let mut sum = 0.0;
                for t in order {
                    match train_obj.subset_loss_and_grad(&[t], &params, &mut grad) {
                        Ok(l) => sum += l,
                        Err(e) => {
                            (params, adam) = before;
                            reason = numerical_or(e, epoch)?;
                            break 'epochs;
                        }
                    }
                    if let Err(e) = adam.step(&mut flat, &grad) {
                        (params, adam) = before;
                        reason = numerical_or(e, epoch)?;
                        break 'epochs;
                    }
                    params.set_flat(&flat)?;
                }
                sum / n_train as f64
            }
        };
        let val = match val_obj.as_mut().map(|o| o.loss(&params)).transpose() {
            Ok(v) => v,
            Err(e) => {
                (params, adam) = before;
                reason = numerical_or(e, epoch)?;
                break;
            }
        };
        let record = EpochLoss {
            epoch,
            train_loss,
            val_loss: val,
        };
        history.push(record);
        let flow = observer(&EpochEvent {
            loss: &record,
            params: &params,
            adam: &adam,
        });
        if config.batch == BatchMode::PerTrajectory && train_loss <= config.loss_threshold {
            reason = StopReason::LossThreshold;
            break;
        }
        if flow.is_break() {
            reason = StopReason::Interrupted;
            break;
        }
    }

    // Final losses at the returned parameters.
    let final_train_loss = match train_obj.loss(&params) {
        Ok(l) => l,
        Err(e) => {
            // Parameters from a completed update that cannot be rolled out:
            // report as a numerical failure.
            reason = numerical_or(e, history.len())?;
            f64::NAN
        }
    };
    let final_val_loss = match val_obj.as_mut() {
        Some(o) => o.loss(&params).ok(),
        None => None,
    };
    Ok(TrainOutcome {
        params,
        adam,
        report: TrainReport {
            history,
            final_train_loss,
            final_val_loss,
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
            stop_reason: reason,
        },
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Trains the baseline on acceleration samples with seeded mini-batches.
pub fn train_baseline(samples: &[AccelSample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_baseline_observed(samples, config, None, &mut |_| ControlFlow::Continue(()))
}

pub fn train_baseline_observed(
    samples: &[AccelSample],
    config: &TrainConfig,
    start: Option<(MlpParams, AdamState)>,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("no samples to train on"));
    }
    let n = samples[0].state.len();
    let (train_idx, val_idx) =
        split_indices(samples.len(), config.validation_fraction, config.seed);
    let (mut params, mut adam) = match start {
        Some(s) => s,
        None => {
            let p = MlpParams::init(&layer_sizes_for(3 * n, &config.hidden), config.seed)?;
            let a = AdamState::new(p.num_params(), config.learning_rate);
            (p, a)
        }
    };
    if params.input_dim() != 3 * n {
        return Err(Error::config(format!(
            "baseline network takes {} inputs but samples have {} particles",
            params.input_dim(),
            n
        )));
    }
    adam.learning_rate = config.learning_rate;
    let mut ws = MlpWorkspace::new(&params.layer_sizes);
    let mut grad = vec![0.0; params.num_params()];
    let mut flat = params.to_flat();
    let clock = Instant::now();
    let mut history = Vec::new();
    let mut reason = StopReason::EpochBudget;

    'epochs: for epoch in 1..=config.epochs {
        let before = (params.clone(), adam.clone());
        let mut order = train_idx.clone();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut sum = 0.0;
        for batch in order.chunks(config.minibatch) {
            match baseline_batch(&params, &mut ws, samples, batch, Some(&mut grad)) {
                Ok(l) => sum += l * batch.len() as f64,
                Err(e) => {
                    (params, adam) = before;
                    reason = numerical_or(e, epoch)?;
                    break 'epochs;
                }
            }
            if let Err(e) = adam.step(&mut flat, &grad) {
                (params, adam) = before;
                reason = numerical_or(e, epoch)?;
                break 'epochs;
            }
            params.set_flat(&flat)?;
        }
        let train_loss = sum / order.len() as f64;
        let val = if val_idx.is_empty() {
            None
        } else {
            match baseline_batch(&params, &mut ws, samples, &val_idx, None) {
                Ok(v) => Some(v),
                Err(e) => {
                    (params, adam) = before;
                    reason = numerical_or(e, epoch)?;
                    break;
                }
            }
        };
        let record = EpochLoss {
            epoch,
            train_loss,
            val_loss: val,
        };
        history.push(record);
        let flow = observer(&EpochEvent {
            loss: &record,
            params: &params,
            adam: &adam,
        });
        if train_loss <= config.loss_threshold {
            reason = StopReason::LossThreshold;
            break;
        }
        if flow.is_break() {
            reason = StopReason::Interrupted;
            break;
        }
    }

    let final_train_loss =
        baseline_batch(&params, &mut ws, samples, &train_idx, None).unwrap_or(f64::NAN);
    let final_val_loss = if val_idx.is_empty() {
        None
    } else {
        baseline_batch(&params, &mut ws, samples, &val_idx, None).ok()
    };
    Ok(TrainOutcome {
        params,
        adam,
        report: TrainReport {
            history,
            final_train_loss,
            final_val_loss,
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
            stop_reason: reason,
        },
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: Vec<usize>,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub epochs_run: usize,
    /// Set when the run failed; the losses are then NaN.
    pub error: Option<String>,
}

/// Trains one pairwise model per hidden-layer configuration with otherwise
/// identical settings. A failing run is recorded and the sweep continues.
pub fn hyperparameter_sweep(
    trajectories: &[Trajectory],
    widths: &[Vec<usize>],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if widths.is_empty() {
        return Err(Error::config("sweep needs at least one layer configuration"));
    }
    let mut rows = Vec::with_capacity(widths.len());
    for hidden in widths {
        let cfg = TrainConfig {
            hidden: hidden.clone(),
            ..config.clone()
        };
        let row = match train_mclnn(trajectories, &cfg) {
            Ok(out) => SweepRow {
                hidden: hidden.clone(),
                train_loss: out.report.final_train_loss,
                val_loss: out.report.final_val_loss,
                epochs_run: out.report.epochs_run(),
                error: match &out.report.stop_reason {
                    StopReason::NumericalFailure { message, .. } => Some(message.clone()),
                    _ => None,
                },
            },
            Err(e) => SweepRow {
                hidden: hidden.clone(),
                train_loss: f64::NAN,
                val_loss: None,
                epochs_run: 0,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}
