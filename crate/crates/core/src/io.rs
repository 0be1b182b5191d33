//! On-disk formats: dataset directories, checkpoints and the result CSVs.
//!
//! CSV files are plain comma-separated text with a single header row.
//! Floats are written in Rust's shortest round-trip form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    ConservationReport, ForcePoint, Model, PairGauge, PotentialCurve, TrainingRange,
};
use crate::lagrangian::{ParticleState, Trajectory};
use crate::nn::{AdamState, MlpParams};
use crate::systems::{AccelSample, Dataset, DatasetConfig, SystemSpec};
use crate::training::{EpochLoss, ModelKind, SweepRow, TrainConfig};

pub const TRAJECTORY_COLUMNS: [&str; 8] = ["record", "particle", "qx", "qy", "qz", "vx", "vy", "vz"];
pub const SAMPLE_COLUMNS: [&str; 11] = [
    "sample", "particle", "qx", "qy", "qz", "vx", "vy", "vz", "ax", "ay", "az",
];
pub const LOSS_COLUMNS: [&str; 3] = ["epoch", "train_loss", "val_loss"];
pub const REPORT_COLUMNS: [&str; 17] = [
    "record", "L_model", "L_true", "H_model", "H_true", "px", "py", "pz", "lx", "ly", "lz",
    "px_true", "py_true", "pz_true", "lx_true", "ly_true", "lz_true",
];
pub const POTENTIAL_COLUMNS: [&str; 5] =
    ["r", "V_learned", "V_learned_shifted", "V_analytic", "in_range"];
pub const SWEEP_COLUMNS: [&str; 3] = ["hidden_layers", "train_loss", "val_loss"];
pub const FORCE_COLUMNS: [&str; 5] = ["sample", "particle", "component", "a_true", "a_pred"];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.csv";

/// A parsed CSV file: header plus string cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(Error::format(path, "empty file, expected a header row"));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(CsvTable {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// Errors naming every column of `expected` missing from the header.
    pub fn require(&self, expected: &[&str]) -> Result<()> {
        let missing: Vec<&str> = expected
            .iter()
            .copied()
            .filter(|c| !self.header.iter().any(|h| h == c))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::format(&self.path, format!("missing columns: {}", missing.join(", "))))
        }
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(&self.path, format!("missing columns: {name}")))
    }

    /// Cell `(row, column)` parsed as `T`.
    pub fn get<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let cell = &self.rows[row][col];
        cell.parse().map_err(|_| {
            Error::format(
                &self.path,
                format!("row {}: cannot parse {:?} in column {}", row + 1, cell, self.header[col]),
            )
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => Error::format(path, message),
    }
}

/// Writes `header` and `rows`, creating parent directories.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| csv_error(path, e);
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("cannot serialize: {e}")))?;
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::config(format!(
                "{} already exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut rows = Vec::new();
    for (record, s) in traj.states.iter().enumerate() {
        for (i, (q, v)) in s.positions.iter().zip(&s.velocities).enumerate() {
            let mut row = vec![record.to_string(), i.to_string()];
            row.extend(q.iter().chain(v).map(|&x| num(x)));
            rows.push(row);
        }
    }
    write_csv(path, &TRAJECTORY_COLUMNS, &rows)
}

/// Reads a trajectory CSV; masses and timing are not stored in the file.
pub fn read_trajectory_csv(
    path: &Path,
    masses: &[f64],
    recorded_dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    let t = CsvTable::read(path)?;
    t.require(&TRAJECTORY_COLUMNS)?;
    let cols: Vec<usize> = TRAJECTORY_COLUMNS
        .iter()
        .map(|c| t.column(c))
        .collect::<Result<_>>()?;
    let n = masses.len();
    if n == 0 || t.rows.len() % n != 0 || t.rows.is_empty() {
        return Err(Error::format(
            path,
            format!("{} rows do not split into records of {n} particles", t.rows.len()),
        ));
    }
    let mut states = Vec::with_capacity(t.rows.len() / n);
    for (rec, chunk) in (0..t.rows.len()).collect::<Vec<_>>().chunks(n).enumerate() {
        let mut q = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, &row) in chunk.iter().enumerate() {
            if t.get::<usize>(row, cols[0])? != rec || t.get::<usize>(row, cols[1])? != i {
                return Err(Error::format(
                    path,
                    format!("row {}: expected record {rec}, particle {i}", row + 1),
                ));
            }
            let f = |k: usize| t.get::<f64>(row, cols[k]);
            q.push([f(2)?, f(3)?, f(4)?]);
            v.push([f(5)?, f(6)?, f(7)?]);
        }
        states.push(
            ParticleState::new(q, v, masses.to_vec())
                .map_err(|e| Error::format(path, e.to_string()))?,
        );
    }
    Trajectory::new(states, recorded_dt, substeps).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Trajectories,
    Accelerations,
}

/// Largest momentum drift over all generated trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationCheck {
    pub max_linear_momentum_drift: f64,
    pub max_angular_momentum_drift: f64,
}

impl ConservationCheck {
    pub fn of(trajectories: &[Trajectory]) -> Self {
        use crate::lagrangian::{angular_momentum, linear_momentum};
        let drift = |f: fn(&ParticleState) -> [f64; 3]| {
            trajectories
                .iter()
                .flat_map(|t| {
                    let p0 = f(&t.states[0]);
                    t.states
                        .iter()
                        .map(move |s| (0..3).map(|k| (f(s)[k] - p0[k]).abs()).fold(0.0, f64::max))
                })
                .fold(0.0, f64::max)
        };
        ConservationCheck {
            max_linear_momentum_drift: drift(linear_momentum),
            max_angular_momentum_drift: drift(angular_momentum),
        }
    }

    /// Within 1e-10 (linear) and 1e-8 (angular).
    pub fn passed(&self) -> bool {
        self.max_linear_momentum_drift <= 1e-10 && self.max_angular_momentum_drift <= 1e-8
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub spec: SystemSpec,
    pub config: DatasetConfig,
    /// Per-trajectory seeds (trajectory datasets only).
    pub seeds: Vec<u64>,
    pub log: Vec<String>,
    pub files: Vec<String>,
    /// SHA-256 over the data files in `files` order.
    pub sha256: String,
    pub conservation: Option<ConservationCheck>,
}

fn hash_files(dir: &Path, files: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let p = dir.join(f);
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

fn check_hash(dir: &Path, m: &DatasetManifest) -> Result<()> {
    let actual = hash_files(dir, &m.files)?;
    if actual != m.sha256 {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            "data files do not match the manifest hash",
        ));
    }
    Ok(())
}

/// Writes one CSV per trajectory plus the manifest.
pub fn write_dataset(dir: &Path, data: &Dataset, force: bool) -> Result<DatasetManifest> {
    prepare_output_dir(dir, force)?;
    let mut files = Vec::with_capacity(data.trajectories.len());
    for (t, traj) in data.trajectories.iter().enumerate() {
        let name = format!("trajectory_{t:04}.csv");
        write_trajectory_csv(&dir.join(&name), traj)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        kind: DatasetKind::Trajectories,
        spec: data.spec.clone(),
        config: data.config.clone(),
        seeds: data.seeds.clone(),
        log: data.log.clone(),
        sha256: hash_files(dir, &files)?,
        files,
        conservation: Some(ConservationCheck::of(&data.trajectories)),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    if m.kind != DatasetKind::Trajectories {
        return Err(Error::config(format!(
            "{} holds acceleration samples, not trajectories",
            dir.display()
        )));
    }
    check_hash(dir, &m)?;
    let trajectories = m
        .files
        .iter()
        .map(|f| {
            read_trajectory_csv(
                &dir.join(f),
                &m.spec.masses,
                m.config.dt * m.config.stride as f64,
                m.config.stride,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: m.spec,
        config: m.config,
        trajectories,
        seeds: m.seeds,
        log: m.log,
    })
}

/// Writes acceleration samples as a single CSV plus the manifest. `config`
/// records the simulation settings the samples came from.
pub fn write_samples(
    dir: &Path,
    spec: &SystemSpec,
    config: &DatasetConfig,
    samples: &[AccelSample],
    force: bool,
) -> Result<DatasetManifest> {
    prepare_output_dir(dir, force)?;
    let mut rows = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        for i in 0..s.state.len() {
            let mut row = vec![k.to_string(), i.to_string()];
            let cells = s.state.positions[i]
                .iter()
                .chain(&s.state.velocities[i])
                .chain(&s.accelerations[i]);
            row.extend(cells.map(|&x| num(x)));
            rows.push(row);
        }
    }
    write_csv(&dir.join(SAMPLES_FILE), &SAMPLE_COLUMNS, &rows)?;
    let files = vec![SAMPLES_FILE.to_string()];
    let manifest = DatasetManifest {
        kind: DatasetKind::Accelerations,
        spec: spec.clone(),
        config: config.clone(),
        seeds: Vec::new(),
        log: Vec::new(),
        sha256: hash_files(dir, &files)?,
        files,
        conservation: None,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_samples(dir: &Path) -> Result<(DatasetManifest, Vec<AccelSample>)> {
    let m = read_manifest(dir)?;
    if m.kind != DatasetKind::Accelerations {
        return Err(Error::config(format!(
            "{} holds trajectories; the baseline trains on an acceleration dataset \
             (generate one with --model baseline)",
            dir.display()
        )));
    }
    check_hash(dir, &m)?;
    let path = dir.join(SAMPLES_FILE);
    let t = CsvTable::read(&path)?;
    t.require(&SAMPLE_COLUMNS)?;
    let n = m.spec.n_particles;
    if t.rows.len() % n != 0 {
        return Err(Error::format(&path, "rows do not split into whole samples"));
    }
    let cols: Vec<usize> = SAMPLE_COLUMNS.iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(t.rows.len() / n);
    for k in 0..t.rows.len() / n {
        let (mut q, mut v, mut a) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let row = k * n + i;
            if t.get::<usize>(row, cols[0])? != k || t.get::<usize>(row, cols[1])? != i {
                return Err(Error::format(
                    &path,
                    format!("row {}: expected sample {k}, particle {i}", row + 1),
                ));
            }
            let f = |c: usize| t.get::<f64>(row, cols[c]);
            q.push([f(2)?, f(3)?, f(4)?]);
            v.push([f(5)?, f(6)?, f(7)?]);
            a.push([f(8)?, f(9)?, f(10)?]);
        }
        out.push(AccelSample {
            state: ParticleState::new(q, v, m.spec.masses.clone())
                .map_err(|e| Error::format(&path, e.to_string()))?,
            accelerations: a,
        });
    }
    Ok((m, out))
}

/// Everything needed to resume training or run a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model_kind: ModelKind,
    pub spec: SystemSpec,
    pub params: MlpParams,
    pub adam: Option<AdamState>,
    /// Energy constants: one per training-range segment for the pairwise
    /// model, a single one added to the total potential for the baseline.
    pub gauge_offsets: Vec<f64>,
    /// Pair distances seen in training (pairwise model only).
    pub training_range: Option<TrainingRange>,
    pub epoch: usize,
    pub train_config: TrainConfig,
    /// Settings of the training data; rollouts reuse its step and stride.
    pub dataset: DatasetConfig,
    pub dataset_sha256: String,
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        match self.model_kind {
            ModelKind::Mclnn => Model::Mclnn {
                params: self.params.clone(),
                gauge: match &self.training_range {
                    Some(range) if self.gauge_offsets.len() == range.segments.len() => PairGauge {
                        segments: range.segments.clone(),
                        offsets: self.gauge_offsets.clone(),
                    },
                    _ => PairGauge::constant(self.gauge_offsets.first().copied().unwrap_or(0.0)),
                },
            },
            ModelKind::Baseline => Model::Baseline {
                params: self.params.clone(),
                offset: self.gauge_offsets.first().copied().unwrap_or(0.0),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        c.params
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let expected = match (&c.model_kind, &c.training_range) {
            (ModelKind::Mclnn, Some(range)) => range.segments.len(),
            _ => 1,
        };
        if c.gauge_offsets.len() != expected {
            return Err(Error::format(
                path,
                format!("{} gauge offsets, expected {expected}", c.gauge_offsets.len()),
            ));
        }
        Ok(c)
    }
}

pub fn write_loss_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| vec![h.epoch.to_string(), num(h.train_loss), opt(h.val_loss)])
        .collect();
    write_csv(path, &LOSS_COLUMNS, &rows)
}

fn report_rows(report: &ConservationReport) -> Vec<Vec<String>> {
    let (m, t) = (&report.model, &report.truth);
    (0..report.len())
        .map(|k| {
            let mut row = vec![
                k.to_string(),
                num(m.lagrangian[k]),
                num(t.lagrangian[k]),
                num(m.hamiltonian[k]),
                num(t.hamiltonian[k]),
            ];
            for v in [
                m.linear_momentum[k],
                m.angular_momentum[k],
                t.linear_momentum[k],
                t.angular_momentum[k],
            ] {
                row.extend(v.iter().map(|&x| num(x)));
            }
            row
        })
        .collect()
}

pub fn write_report_csv(path: &Path, report: &ConservationReport) -> Result<()> {
    write_csv(path, &REPORT_COLUMNS, &report_rows(report))
}

/// Several named reports stacked into one table with a leading `model`
/// column.
pub fn write_compare_csv(path: &Path, reports: &[(&str, &ConservationReport)]) -> Result<()> {
    let header: Vec<&str> = std::iter::once("model").chain(REPORT_COLUMNS).collect();
    let mut rows = Vec::new();
    for (name, rep) in reports {
        for row in report_rows(rep) {
            rows.push(std::iter::once(name.to_string()).chain(row).collect());
        }
    }
    write_csv(path, &header, &rows)
}

pub fn write_potential_csv(path: &Path, curve: &PotentialCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.r),
                num(r.v_learned),
                num(r.v_learned_shifted),
                num(r.v_analytic),
                r.in_range.to_string(),
            ]
        })
        .collect();
    write_csv(path, &POTENTIAL_COLUMNS, &rows)
}

/// Hidden widths are written as `8;8` so the cell holds no comma. Failed
/// runs have empty loss cells.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let hidden = r.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";");
            let train = if r.error.is_some() { String::new() } else { num(r.train_loss) };
            let val = if r.error.is_some() { String::new() } else { opt(r.val_loss) };
            vec![hidden, train, val]
        })
        .collect();
    write_csv(path, &SWEEP_COLUMNS, &rows)
}

pub fn write_force_csv(path: &Path, points: &[ForcePoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.sample.to_string(),
                p.particle.to_string(),
                p.component.to_string(),
                num(p.truth),
                num(p.predicted),
            ]
        })
        .collect();
    write_csv(path, &FORCE_COLUMNS, &rows)
}

/// Any serializable summary as pretty JSON.
pub fn write_summary<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_dataset, sample_acceleration_dataset, SystemKind};

    fn small(kind: SystemKind) -> Dataset {
        let cfg = DatasetConfig {
            n_trajectories: 3,
            points_per_trajectory: 4,
            ..Default::default()
        };
        generate_dataset(&SystemSpec::new(kind), &cfg).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = small(SystemKind::Gravity);
        let m = write_dataset(dir.path(), &data, false).unwrap();
        assert_eq!(m.files.len(), 3);
        assert!(m.conservation.unwrap().passed());
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.trajectories, data.trajectories);
        assert_eq!(back.seeds, data.seeds);
        assert!(write_dataset(dir.path(), &data, false).is_err());
        assert!(write_dataset(dir.path(), &data, true).is_ok());
    }

    #[test]
    fn tampered_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &small(SystemKind::LinearSpring), false).unwrap();
        let f = dir.path().join("trajectory_0001.csv");
        let text = fs::read_to_string(&f).unwrap().replacen("0,0,", "0,0,1", 1);
        fs::write(&f, text).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn samples_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SystemSpec::new(SystemKind::NonlinearSpring);
        let samples = sample_acceleration_dataset(&spec, 7, 3).unwrap();
        write_samples(dir.path(), &spec, &DatasetConfig::default(), &samples, false).unwrap();
        let (_, back) = read_samples(dir.path()).unwrap();
        assert_eq!(back, samples);
        assert!(matches!(read_dataset(dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn missing_columns_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &["r", "V_learned"], &[vec!["1".into(), "2".into()]]).unwrap();
        let err = CsvTable::read(&p).unwrap().require(&POTENTIAL_COLUMNS).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("V_learned_shifted") && msg.contains("V_analytic") && msg.contains("in_range"));
        assert!(!msg.contains("V_learned,"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = MlpParams::init(&[1, 3, 3, 1], 9).unwrap();
        let c = Checkpoint {
            model_kind: ModelKind::Mclnn,
            spec: SystemSpec::new(SystemKind::LinearSpring),
            adam: Some(AdamState::new(params.num_params(), 1e-3)),
            params,
            gauge_offsets: vec![0.1 + 0.2, -1.0],
            training_range: Some(TrainingRange::from_values([0.9, 1.7]).unwrap()),
            epoch: 12,
            train_config: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            dataset_sha256: "abc".into(),
        };
        let p = dir.path().join("c.json");
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert!(matches!(Checkpoint::load(&dir.path().join("nope.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn result_csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = [
            EpochLoss { epoch: 1, train_loss: 0.5, val_loss: Some(0.25) },
            EpochLoss { epoch: 2, train_loss: 1e-9, val_loss: None },
        ];
        write_loss_csv(&p, &h).unwrap();
        let t = CsvTable::read(&p).unwrap();
        t.require(&LOSS_COLUMNS).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.get::<f64>(1, 1).unwrap(), 1e-9);
        assert_eq!(t.rows[1][2], "");

        let sweep = [SweepRow {
            hidden: vec![4, 4],
            train_loss: 1e-3,
            val_loss: Some(2e-3),
            epochs_run: 3,
            error: None,
        }];
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&p, &sweep).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "hidden_layers,train_loss,val_loss\n4;4,0.001,0.002\n");
    }
}
