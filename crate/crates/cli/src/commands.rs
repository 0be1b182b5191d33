use std::ops::ControlFlow;
use std::path::Path;

use serde::Serialize;

use mclnn::evaluation::{
    baseline_gauge_offset, evaluate_forward, evaluation_state, export_potential_curve,
    force_scatter, least_squares_slope, mclnn_gauge, ConservationReport, Divergence, MaeSummary,
    Model, TrainingRange, EVAL_SEED_OFFSET,
};
use mclnn::io::{self, Checkpoint, DatasetManifest};
use mclnn::lagrangian::Trajectory;
use mclnn::systems::{generate_dataset, sample_acceleration_dataset, AccelSample};
use mclnn::training::{
    hyperparameter_sweep, train_baseline_observed, train_mclnn_observed, EpochEvent, ModelKind,
    TrainOutcome,
};
use mclnn::{Error, Result};

use crate::config::{ConfigFile, Overrides, RunConfig};
use crate::{Command, Output};

/// What each output directory records so the command can be re-run.
#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: Vec<String>,
    settings: &'a T,
}

fn write_run_manifest<T: Serialize>(dir: &Path, settings: &T) -> Result<()> {
    let manifest = RunManifest {
        command: std::env::args().collect(),
        settings,
    };
    io::write_summary(&dir.join("run.json"), &manifest)
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Generate {
            task,
            model,
            config,
            seed,
            n_particles,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            let cli = Overrides {
                task,
                model,
                seed,
                n_particles,
                ..Default::default()
            };
            generate(&RunConfig::resolve(&file, &cli)?, &output)
        }
        Command::Train {
            data,
            task,
            model,
            config,
            seed,
            epochs,
            resume,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            let manifest = io::read_manifest(&data)?;
            let cli = Overrides {
                task: Some(task.unwrap_or_else(|| manifest.spec.kind.name().to_string())),
                model,
                seed,
                epochs,
                n_particles: Some(manifest.spec.n_particles),
                ..Default::default()
            };
            let mut cfg = RunConfig::resolve(&file, &cli)?;
            // the dataset fixes the physics
            cfg.spec = manifest.spec.clone();
            train(&cfg, &data, &manifest, resume.as_deref(), &output)
        }
        Command::Simulate {
            checkpoint,
            records,
            n_particles,
            seed,
            output,
        } => simulate(&checkpoint, records, n_particles, seed, &output),
        Command::Potential {
            checkpoint,
            r_min,
            r_max,
            points,
            output,
        } => potential(&checkpoint, r_min, r_max, points, &output),
        Command::Sweep {
            data,
            widths,
            config,
            seed,
            epochs,
            output,
        } => {
            let widths = parse_widths(&widths)?;
            let file = load_config(config.as_deref())?;
            let manifest = io::read_manifest(&data)?;
            let cli = Overrides {
                task: Some(manifest.spec.kind.name().to_string()),
                model: Some("mclnn".into()),
                seed,
                epochs,
                n_particles: Some(manifest.spec.n_particles),
                ..Default::default()
            };
            sweep(&RunConfig::resolve(&file, &cli)?, &data, &widths, &output)
        }
        Command::Compare {
            mclnn,
            baseline,
            task,
            records,
            seed,
            output,
        } => compare(&mclnn, &baseline, task.as_deref(), records, seed, &output),
    }
}

fn generate(cfg: &RunConfig, out: &Output) -> Result<u8> {
    match cfg.model {
        ModelKind::Mclnn => {
            let data = generate_dataset(&cfg.spec, &cfg.dataset)?;
            let m = io::write_dataset(&out.out, &data, out.force)?;
            write_run_manifest(&out.out, cfg)?;
            let check = m.conservation.expect("trajectory manifests carry a check");
            println!(
                "{}: {} trajectories x {} records, {} resampled starts",
                cfg.task,
                data.trajectories.len(),
                cfg.dataset.points_per_trajectory,
                data.log.len()
            );
            println!(
                "conservation check {}: max |dp| = {:e}, max |dL| = {:e}",
                if check.passed() { "passed" } else { "FAILED" },
                check.max_linear_momentum_drift,
                check.max_angular_momentum_drift
            );
        }
        ModelKind::Baseline => {
            let samples = sample_acceleration_dataset(&cfg.spec, cfg.n_samples, cfg.dataset.seed)?;
            let config = mclnn::systems::DatasetConfig {
                seed: cfg.dataset.seed,
                ..Default::default()
            };
            io::write_samples(&out.out, &cfg.spec, &config, &samples, out.force)?;
            write_run_manifest(&out.out, cfg)?;
            println!("{}: {} acceleration samples", cfg.task, samples.len());
        }
    }
    Ok(0)
}

enum TrainData {
    Trajectories(Vec<Trajectory>),
    Samples(Vec<AccelSample>),
}

impl TrainData {
    /// Energy constants fitted over the whole dataset: one per
    /// training-range segment for the pairwise model.
    fn offsets(&self, cfg: &RunConfig, params: &mclnn::nn::MlpParams) -> Result<Vec<f64>> {
        match self {
            TrainData::Trajectories(t) => Ok(mclnn_gauge(params, &cfg.spec, t)?.offsets),
            TrainData::Samples(s) => Ok(vec![baseline_gauge_offset(params, &cfg.spec, s)?]),
        }
    }
}

fn train(
    cfg: &RunConfig,
    data_dir: &Path,
    manifest: &DatasetManifest,
    resume: Option<&Path>,
    out: &Output,
) -> Result<u8> {
    if manifest.spec.kind != cfg.task {
        return Err(Error::config(format!(
            "dataset {} holds {} data but the task is {}",
            data_dir.display(),
            manifest.spec.kind,
            cfg.task
        )));
    }
    let data = match cfg.model {
        ModelKind::Mclnn => TrainData::Trajectories(io::read_dataset(data_dir)?.trajectories),
        ModelKind::Baseline => {
            if manifest.kind != io::DatasetKind::Accelerations {
                return Err(Error::config(format!(
                    "the baseline trains on acceleration samples but {} holds trajectories \
                     (generate with --model baseline)",
                    data_dir.display()
                )));
            }
            TrainData::Samples(io::read_samples(data_dir)?.1)
        }
    };
    let (start, start_epoch) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.model_kind != cfg.model {
                return Err(Error::config(format!(
                    "checkpoint {} is a {} model, not {}",
                    p.display(),
                    ck.model_kind,
                    cfg.model
                )));
            }
            let adam = ck
                .adam
                .ok_or_else(|| Error::config("checkpoint has no optimizer state to resume"))?;
            (Some((ck.params, adam)), ck.epoch)
        }
        None => (None, 0),
    };
    io::prepare_output_dir(&out.out, out.force)?;
    write_run_manifest(&out.out, cfg)?;

    let training_range = match &data {
        TrainData::Trajectories(t) => Some(TrainingRange::from_trajectories(t)?),
        TrainData::Samples(_) => None,
    };
    let checkpoint = |params: &mclnn::nn::MlpParams,
                      adam: &mclnn::nn::AdamState,
                      epoch: usize,
                      offsets: Vec<f64>| Checkpoint {
        model_kind: cfg.model,
        spec: cfg.spec.clone(),
        params: params.clone(),
        adam: Some(adam.clone()),
        gauge_offsets: offsets,
        training_range: training_range.clone(),
        epoch: start_epoch + epoch,
        train_config: cfg.train.clone(),
        dataset: manifest.config.clone(),
        dataset_sha256: manifest.sha256.clone(),
    };
    let mut save_error = None;
    let mut observer = |e: &EpochEvent<'_>| {
        if !e.loss.epoch.is_multiple_of(cfg.checkpoint_every) {
            return ControlFlow::Continue(());
        }
        let path = out
            .out
            .join("checkpoints")
            .join(format!("epoch_{:06}.json", start_epoch + e.loss.epoch));
        let saved = data
            .offsets(cfg, e.params)
            .and_then(|off| checkpoint(e.params, e.adam, e.loss.epoch, off).save(&path));
        match saved {
            Ok(()) => ControlFlow::Continue(()),
            Err(err) => {
                save_error = Some(err);
                ControlFlow::Break(())
            }
        }
    };
    let outcome: TrainOutcome = match &data {
        TrainData::Trajectories(t) => train_mclnn_observed(t, &cfg.train, start, &mut observer)?,
        TrainData::Samples(s) => train_baseline_observed(s, &cfg.train, start, &mut observer)?,
    };
    if let Some(e) = save_error {
        return Err(e);
    }
    let report = &outcome.report;
    let offsets = data.offsets(cfg, &outcome.params)?;
    checkpoint(&outcome.params, &outcome.adam, report.epochs_run(), offsets)
        .save(&out.out.join("checkpoint.json"))?;
    io::write_loss_csv(&out.out.join("loss.csv"), &report.history)?;
    io::write_summary(&out.out.join("train_report.json"), report)?;
    println!(
        "{} on {}: {} epochs, train loss {:e}, validation loss {}, stopped: {:?} ({:.1} s)",
        cfg.model,
        cfg.task,
        report.epochs_run(),
        report.final_train_loss,
        report.final_val_loss.map_or("-".into(), |v| format!("{v:e}")),
        report.stop_reason,
        report.wall_clock_seconds
    );
    if let (TrainData::Samples(_), false) = (&data, report.failed()) {
        let offset = data.offsets(cfg, &outcome.params)?[0];
        held_out_forces(cfg, manifest, outcome.params.clone(), offset, &out.out)?;
    }
    if report.failed() {
        eprintln!("training aborted on a numerical failure; checkpoint holds the last good parameters");
        return Ok(3);
    }
    Ok(0)
}

/// Held-out acceleration samples for the force scatter.
const HELD_OUT_SAMPLES: usize = 1000;

/// Predicted against true accelerations on samples drawn from seeds the
/// training data never used; writes force.csv and prints the fitted slope.
fn held_out_forces(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    params: mclnn::nn::MlpParams,
    offset: f64,
    dir: &Path,
) -> Result<()> {
    let seed = EVAL_SEED_OFFSET + manifest.config.seed;
    let samples = sample_acceleration_dataset(&cfg.spec, HELD_OUT_SAMPLES, seed)?;
    let points = force_scatter(&Model::Baseline { params, offset }, &samples)?;
    io::write_force_csv(&dir.join("force.csv"), &points)?;
    let truth: Vec<f64> = points.iter().map(|p| p.truth).collect();
    let predicted: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    println!(
        "held-out acceleration slope {:.4} over {} samples",
        least_squares_slope(&truth, &predicted)?,
        samples.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportSummary {
    records_requested: usize,
    records: usize,
    mae: MaeSummary,
    relative_lagrangian_mae: f64,
    linear_momentum_drift: f64,
    angular_momentum_drift: f64,
    hamiltonian_relative_drift: f64,
    divergence: Option<Divergence>,
}

impl ReportSummary {
    fn of(rep: &ConservationReport, requested: usize) -> Self {
        ReportSummary {
            records_requested: requested,
            records: rep.len(),
            mae: rep.mae,
            relative_lagrangian_mae: rep.relative_lagrangian_mae(),
            linear_momentum_drift: rep.model.linear_momentum_drift(),
            angular_momentum_drift: rep.model.angular_momentum_drift(),
            hamiltonian_relative_drift: rep.model.hamiltonian_relative_drift(),
            divergence: rep.divergence.clone(),
        }
    }

    fn print(&self, name: &str) {
        println!(
            "{name}: {} of {} records, MAE L {:e} ({:.2}% of range), H {:e}, p {:e}, angular {:e}",
            self.records,
            self.records_requested,
            self.mae.lagrangian,
            100.0 * self.relative_lagrangian_mae,
            self.mae.hamiltonian,
            self.mae.linear_momentum,
            self.mae.angular_momentum
        );
        if let Some(d) = &self.divergence {
            println!("{name}: diverged at record {}: {}", d.record, d.message);
        }
    }
}

fn write_states(path: &Path, rep_states: &[mclnn::lagrangian::ParticleState], ck: &Checkpoint) -> Result<()> {
    let traj = Trajectory::new(
        rep_states.to_vec(),
        ck.dataset.dt * ck.dataset.stride as f64,
        ck.dataset.stride,
    )?;
    io::write_trajectory_csv(path, &traj)
}

fn simulate(
    checkpoint: &Path,
    records: Option<usize>,
    n_particles: Option<usize>,
    seed: Option<u64>,
    out: &Output,
) -> Result<u8> {
    let ck = Checkpoint::load(checkpoint)?;
    let records = records.unwrap_or(crate::config::DEFAULT_RECORDS);
    if records == 0 {
        return Err(Error::config("records must be at least 1"));
    }
    let n = n_particles.unwrap_or(ck.spec.n_particles);
    let spec = if n == ck.spec.n_particles { ck.spec.clone() } else { ck.spec.resized(n) };
    spec.validate()?;
    let model = ck.model();
    model.check_size(n)?;
    let seed = seed.unwrap_or(ck.train_config.seed);
    let s0 = evaluation_state(&spec, seed)?;
    let rep = evaluate_forward(&model, &spec, &s0, records, ck.dataset.stride, ck.dataset.dt)?;

    io::prepare_output_dir(&out.out, out.force)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        checkpoint: &'a Path,
        records: usize,
        n_particles: usize,
        seed: u64,
    }
    write_run_manifest(
        &out.out,
        &Settings { checkpoint, records, n_particles: n, seed },
    )?;
    io::write_report_csv(&out.out.join("report.csv"), &rep)?;
    write_states(&out.out.join("model_trajectory.csv"), &rep.model_states, &ck)?;
    write_states(&out.out.join("true_trajectory.csv"), &rep.truth_states, &ck)?;
    let summary = ReportSummary::of(&rep, records);
    io::write_summary(&out.out.join("summary.json"), &summary)?;
    summary.print(ck.model_kind.name());
    Ok(0)
}

fn potential(
    checkpoint: &Path,
    r_min: Option<f64>,
    r_max: Option<f64>,
    points: usize,
    out: &Output,
) -> Result<u8> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.model_kind != ModelKind::Mclnn {
        return Err(Error::Unsupported(
            "the baseline has no pair potential to export".into(),
        ));
    }
    let range = ck
        .training_range
        .clone()
        .ok_or_else(|| Error::format(checkpoint, "checkpoint has no training distance range"))?;
    let r_min = r_min.unwrap_or(0.5 * range.min());
    let r_max = r_max.unwrap_or(1.5 * range.max());
    let curve = export_potential_curve(&ck.params, &ck.spec, r_min, r_max, points, &range)
        .map_err(|e| match e {
            Error::Contract(m) => Error::config(m),
            other => other,
        })?;
    io::prepare_output_dir(&out.out, out.force)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        checkpoint: &'a Path,
        r_min: f64,
        r_max: f64,
        points: usize,
        shifts: &'a [f64],
        training_range: &'a TrainingRange,
    }
    write_run_manifest(
        &out.out,
        &Settings { checkpoint, r_min, r_max, points, shifts: &curve.shifts, training_range: &range },
    )?;
    io::write_potential_csv(&out.out.join("potential.csv"), &curve)?;
    match (curve.max_in_range_error(), curve.analytic_in_range_span()) {
        (Some(err), Some(span)) => println!(
            "{} points on [{r_min}, {r_max}]; in range: max |V - V_true| = {err:e} ({:.2}% of the true range)",
            curve.rows.len(),
            100.0 * err / span
        ),
        _ => println!("{} points on [{r_min}, {r_max}]; none inside the training range", curve.rows.len()),
    }
    Ok(0)
}

fn parse_widths(text: &str) -> Result<Vec<Vec<usize>>> {
    let widths: Vec<Vec<usize>> = text
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|group| {
            group
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config(format!("bad layer width '{w}' in --widths")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if widths.is_empty() {
        return Err(Error::config("--widths needs at least one layer configuration"));
    }
    Ok(widths)
}

fn sweep(cfg: &RunConfig, data_dir: &Path, widths: &[Vec<usize>], out: &Output) -> Result<u8> {
    let data = io::read_dataset(data_dir)?;
    io::prepare_output_dir(&out.out, out.force)?;
    write_run_manifest(&out.out, cfg)?;
    let rows = hyperparameter_sweep(&data.trajectories, widths, &cfg.train)?;
    io::write_sweep_csv(&out.out.join("sweep.csv"), &rows)?;
    for r in &rows {
        match &r.error {
            None => println!(
                "{:?}: train {:e}, validation {} after {} epochs",
                r.hidden,
                r.train_loss,
                r.val_loss.map_or("-".into(), |v| format!("{v:e}")),
                r.epochs_run
            ),
            Some(e) => println!("{:?}: failed: {e}", r.hidden),
        }
    }
    Ok(if rows.iter().any(|r| r.error.is_none()) { 0 } else { 3 })
}

fn compare(
    mclnn_path: &Path,
    baseline_path: &Path,
    task: Option<&str>,
    records: Option<usize>,
    seed: Option<u64>,
    out: &Output,
) -> Result<u8> {
    let a = Checkpoint::load(mclnn_path)?;
    let b = Checkpoint::load(baseline_path)?;
    if a.model_kind != ModelKind::Mclnn || b.model_kind != ModelKind::Baseline {
        return Err(Error::config(
            "compare takes a pairwise checkpoint (--mclnn) and a baseline checkpoint (--baseline)",
        ));
    }
    if a.spec != b.spec {
        return Err(Error::config("the two checkpoints were trained on different systems"));
    }
    if let Some(t) = task {
        let t: mclnn::systems::SystemKind = t.parse()?;
        if t != a.spec.kind {
            return Err(Error::config(format!("checkpoints are for {}, not {t}", a.spec.kind)));
        }
    }
    let records = records.unwrap_or(crate::config::DEFAULT_RECORDS);
    if records == 0 {
        return Err(Error::config("records must be at least 1"));
    }
    let seed = seed.unwrap_or(a.train_config.seed);
    let s0 = evaluation_state(&a.spec, seed)?;
    let (stride, dt) = (a.dataset.stride, a.dataset.dt);
    let ra = evaluate_forward(&a.model(), &a.spec, &s0, records, stride, dt)?;
    let rb = evaluate_forward(&b.model(), &b.spec, &s0, records, stride, dt)?;

    io::prepare_output_dir(&out.out, out.force)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        mclnn: &'a Path,
        baseline: &'a Path,
        records: usize,
        seed: u64,
    }
    write_run_manifest(
        &out.out,
        &Settings { mclnn: mclnn_path, baseline: baseline_path, records, seed },
    )?;
    io::write_report_csv(&out.out.join("report_mclnn.csv"), &ra)?;
    io::write_report_csv(&out.out.join("report_baseline.csv"), &rb)?;
    io::write_compare_csv(&out.out.join("compare.csv"), &[("mclnn", &ra), ("baseline", &rb)])?;
    let sa = ReportSummary::of(&ra, records);
    let sb = ReportSummary::of(&rb, records);
    #[derive(Serialize)]
    struct Both {
        mclnn: ReportSummary,
        baseline: ReportSummary,
    }
    sa.print("mclnn");
    sb.print("baseline");
    io::write_summary(&out.out.join("summary.json"), &Both { mclnn: sa, baseline: sb })?;
    Ok(0)
}
