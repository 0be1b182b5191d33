//! Analytic ground-truth physics for the three benchmark tasks and dataset
//! generation by forward simulation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, ScalarFn};
use crate::error::{Error, Result};
use crate::lagrangian::{
    pair_accelerations, pair_potential_energy, pairwise_lagrangian, rollout, PairPotential,
    ParticleState, Trajectory, Vec3,
};

/// Pair distances below this are treated as a collision for gravity.
pub const GRAVITY_FLOOR: f64 = 1e-6;

pub const DEFAULT_PERTURBATION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    LinearSpring,
    NonlinearSpring,
    Gravity,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::LinearSpring,
        SystemKind::NonlinearSpring,
        SystemKind::Gravity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::LinearSpring => "linear_spring",
            SystemKind::NonlinearSpring => "nonlinear_spring",
            SystemKind::Gravity => "gravity",
        }
    }

    pub fn is_spring(self) -> bool {
        !matches!(self, SystemKind::Gravity)
    }

    /// Particle count of the reference initial condition.
    pub fn default_particles(self) -> usize {
        if self.is_spring() {
            3
        } else {
            4
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown task '{s}' (expected linear_spring, nonlinear_spring or gravity)"
                ))
            })
    }
}

/// Physical constants and particle masses for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Spring stiffness.
    pub k: f64,
    /// Spring rest length.
    pub q0: f64,
    /// Gravitational constant.
    #[serde(rename = "G")]
    pub g: f64,
    pub masses: Vec<f64>,
    pub n_particles: usize,
}

impl SystemSpec {
    /// Unit constants and unit masses at the task's reference particle count.
    pub fn new(kind: SystemKind) -> Self {
        Self::with_particles(kind, kind.default_particles())
    }

    pub fn with_particles(kind: SystemKind, n_particles: usize) -> Self {
        SystemSpec {
            kind,
            k: 1.0,
            q0: 1.0,
            g: 1.0,
            masses: vec![1.0; n_particles],
            n_particles,
        }
    }

    /// Same constants, `n` unit-mass particles.
    pub fn resized(&self, n: usize) -> Self {
        SystemSpec {
            masses: vec![self.masses.first().copied().unwrap_or(1.0); n],
            n_particles: n,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::config("n_particles must be at least 2"));
        }
        if self.masses.len() != self.n_particles {
            return Err(Error::config(format!(
                "{} masses given for {} particles",
                self.masses.len(),
                self.n_particles
            )));
        }
        if self.masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::config("masses must be positive"));
        }
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return Err(Error::config("q0 must be positive"));
        }
        if self.kind.is_spring() && !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config("spring stiffness k must be positive"));
        }
        if !self.kind.is_spring() && !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::config("gravitational constant G must be positive"));
        }
        Ok(())
    }

    /// The pair energy on any scalar type, without range checks.
    pub fn pair_energy_generic<S: Real>(&self, r: S, mi: f64, mj: f64) -> S {
        match self.kind {
            SystemKind::LinearSpring => {
                let d = r.offset(-self.q0);
                (d * d).scale(0.5 * self.k)
            }
            SystemKind::NonlinearSpring => r.offset(-self.q0).powi(4).scale(0.5 * self.k),
            SystemKind::Gravity => r.recip().scale(-self.g * mi * mj),
        }
    }

    fn check_distance(&self, r: f64) -> Result<()> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::contract(format!("pair distance must be finite and non-negative, got {r}")));
        }
        if self.kind == SystemKind::Gravity && r < GRAVITY_FLOOR {
            return Err(Error::numerical(format!(
                "gravity singularity: pair distance {r:e} below {GRAVITY_FLOOR:e}"
            )));
        }
        Ok(())
    }
}

impl PairPotential for SystemSpec {
    fn energy(&self, r: f64, mi: f64, mj: f64) -> Result<f64> {
        analytic_pair_potential(self, r, mi, mj)
    }

    fn slope(&self, r: f64, mi: f64, mj: f64) -> Result<f64> {
        Ok(-analytic_pair_force(self, r, mi, mj)?)
    }
}

/// `V(r)` for a pair with masses `mi`, `mj`.
pub fn analytic_pair_potential(spec: &SystemSpec, r: f64, mi: f64, mj: f64) -> Result<f64> {
    spec.check_distance(r)?;
    Ok(spec.pair_energy_generic(r, mi, mj))
}

/// `-dV/dr`; negative means attraction.
pub fn analytic_pair_force(spec: &SystemSpec, r: f64, mi: f64, mj: f64) -> Result<f64> {
    spec.check_distance(r)?;
    Ok(match spec.kind {
        SystemKind::LinearSpring => -spec.k * (r - spec.q0),
        SystemKind::NonlinearSpring => -2.0 * spec.k * (r - spec.q0).powi(3),
        SystemKind::Gravity => -spec.g * mi * mj / (r * r),
    })
}

/// True total potential energy.
pub fn analytic_potential(spec: &SystemSpec, state: &ParticleState) -> Result<f64> {
    pair_potential_energy(spec, &state.positions, &state.masses)
}

pub fn analytic_accelerations(spec: &SystemSpec, state: &ParticleState) -> Result<Vec<Vec3>> {
    pair_accelerations(spec, &state.positions, &state.masses)
}

/// The true Lagrangian as a differentiable function of `[q; q̇]`.
pub struct AnalyticLagrangian<'a> {
    pub spec: &'a SystemSpec,
    pub masses: &'a [f64],
}

impl ScalarFn for AnalyticLagrangian<'_> {
    fn eval<S: Real>(&self, z: &[S]) -> S {
        pairwise_lagrangian(z, self.masses, |r, mi, mj| self.spec.pair_energy_generic(r, mi, mj))
    }
}

const SPRING_POSITIONS: [Vec3; 3] = [
    [0.486657678894505, 0.755041888583519, 0.0],
    [-0.681737994414464, 0.293660233197210, 0.0],
    [-0.022596327468640, -0.612645601255358, 0.0],
];
const SPRING_VELOCITIES: [Vec3; 3] = [
    [-0.182709864466916, 0.363013287999004, 0.0],
    [-0.579074922540872, -0.748157481446087, 0.0],
    [0.761784787007641, 0.385144193447218, 0.0],
];
const GRAVITY_POSITIONS: [Vec3; 4] = [
    [1.0, 0.0, 0.0],
    [9.0, 0.0, 0.0],
    [11.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
];
const GRAVITY_VELOCITIES: [Vec3; 4] = [
    [0.0, 0.05, 0.0],
    [0.0, -0.05, 0.0],
    [0.0, 0.65, 0.0],
    [0.0, -0.65, 0.0],
];

/// The reference initial condition of each task (unit masses).
pub fn initial_conditions(kind: SystemKind) -> ParticleState {
    let (q, v): (&[Vec3], &[Vec3]) = match kind {
        SystemKind::LinearSpring | SystemKind::NonlinearSpring => {
            (&SPRING_POSITIONS, &SPRING_VELOCITIES)
        }
        SystemKind::Gravity => (&GRAVITY_POSITIONS, &GRAVITY_VELOCITIES),
    };
    ParticleState::with_unit_masses(q.to_vec(), v.to_vec()).expect("reference state is valid")
}

/// Starting configuration for `spec.n_particles`: the reference initial
/// condition when the count matches it, otherwise a generated layout whose
/// pair distances are on the scale of the reference ones.
///
/// Springs: points on a sphere relaxed to a minimum of the true potential,
/// stretched by 15% and spun about z so the system breathes and rotates.
/// This layout is not planar. Gravity: circular binaries (separation 2) on
/// a rotating planar ring with neighbouring centres 10 apart, like the
/// reference pair of binaries.
pub fn base_configuration(spec: &SystemSpec) -> Result<ParticleState> {
    spec.validate()?;
    let n = spec.n_particles;
    let mut state = if n == spec.kind.default_particles() {
        initial_conditions(spec.kind)
    } else if spec.kind.is_spring() {
        let mut s = spring_layout(spec)?;
        remove_drift(&mut s);
        s
    } else {
        let mut s = gravity_layout(spec);
        remove_drift(&mut s);
        s
    };
    state.masses = spec.masses.clone();
    Ok(state)
}

/// Shifts velocities so the total linear momentum is zero.
fn remove_drift(state: &mut ParticleState) {
    let total: f64 = state.masses.iter().sum();
    let p = crate::lagrangian::linear_momentum(state);
    for v in &mut state.velocities {
        for k in 0..3 {
            v[k] -= p[k] / total;
        }
    }
}

/// Spin rate and radial stretch applied to the relaxed spring layout.
const SPRING_SPIN: f64 = 0.5;
const SPRING_STRETCH: f64 = 1.15;

fn spring_layout(spec: &SystemSpec) -> Result<ParticleState> {
    let n = spec.n_particles;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut q: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            let r = 0.65 * spec.q0;
            [r * rho * c, r * rho * s, r * z]
        })
        .collect();
    let step = 0.05 / spec.k;
    for _ in 0..4000 {
        let a = pair_accelerations(spec, &q, &spec.masses)?;
        for (x, f) in q.iter_mut().zip(&a) {
            for k in 0..3 {
                x[k] += step * f[k];
            }
        }
    }
    let total: f64 = spec.masses.iter().sum();
    let mut centre = [0.0; 3];
    for (x, m) in q.iter().zip(&spec.masses) {
        for k in 0..3 {
            centre[k] += m * x[k] / total;
        }
    }
    let omega = SPRING_SPIN;
    let mut v = Vec::with_capacity(n);
    for x in &mut q {
        for k in 0..3 {
            x[k] = SPRING_STRETCH * (x[k] - centre[k]);
        }
        v.push([-omega * x[1], omega * x[0], 0.0]);
    }
    ParticleState::new(q, v, spec.masses.clone())
}

fn gravity_layout(spec: &SystemSpec) -> ParticleState {
    use std::f64::consts::PI;
    let n = spec.n_particles;
    let m = spec.masses[0];
    let groups = n.div_ceil(2);
    let spacing = 10.0;
    let separation = 2.0;
    let (radius, ring_speed) = if groups == 1 {
        (0.0, 0.0)
    } else {
        let radius = spacing / (2.0 * (PI / groups as f64).sin());
        // equal masses on a ring: v² = G M S / R with S = ¼ Σ 1/sin(πj/k)
        let s: f64 = (1..groups).map(|j| 1.0 / (PI * j as f64 / groups as f64).sin()).sum::<f64>() / 4.0;
        (radius, (spec.g * 2.0 * m * s / radius).sqrt())
    };
    let inner_speed = 0.5 * (spec.g * 2.0 * m / separation).sqrt();
    let mut q = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for g in 0..groups {
        let theta = 2.0 * PI * g as f64 / groups as f64;
        let (s, c) = theta.sin_cos();
        let centre = [radius * c, radius * s, 0.0];
        let drift = [-ring_speed * s, ring_speed * c, 0.0];
        let members = if 2 * g + 1 < n { 2 } else { 1 };
        for side in [1.0, -1.0].into_iter().take(members) {
            let h = if members == 2 { 0.5 * separation * side } else { 0.0 };
            let w = if members == 2 { inner_speed * side } else { 0.0 };
            q.push([centre[0] + h * c, centre[1] + h * s, 0.0]);
            v.push([drift[0] - w * s, drift[1] + w * c, 0.0]);
        }
    }
    ParticleState::new(q, v, spec.masses.clone()).expect("layout is valid")
}

/// Adds seeded uniform noise in `[-magnitude, magnitude]` to the x and y
/// components of every position and velocity. z is left untouched.
pub fn perturb_initial_conditions(
    base: &ParticleState,
    seed: u64,
    magnitude: f64,
) -> Result<ParticleState> {
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::config(format!("perturbation magnitude must be non-negative, got {magnitude}")));
    }
    let mut out = base.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in out.positions.iter_mut().chain(out.velocities.iter_mut()) {
        for c in x.iter_mut().take(2) {
            *c += rng.gen_range(-magnitude..=magnitude);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_trajectories: usize,
    pub points_per_trajectory: usize,
    pub dt: f64,
    pub stride: usize,
    pub seed: u64,
    pub perturbation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_trajectories: 100,
            points_per_trajectory: 20,
            dt: 0.01,
            stride: 10,
            seed: 100,
            perturbation: DEFAULT_PERTURBATION,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 || self.points_per_trajectory == 0 || self.stride == 0 {
            return Err(Error::config(
                "n_trajectories, points_per_trajectory and stride must be positive",
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(Error::config("perturbation must be non-negative"));
        }
        Ok(())
    }
}

/// Generated trajectories with the seed each was started from. `log`
/// records every rejected seed and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub config: DatasetConfig,
    pub trajectories: Vec<Trajectory>,
    pub seeds: Vec<u64>,
    pub log: Vec<String>,
}

/// Upper bound on rejected seeds before generation gives up.
const MAX_RESAMPLES: usize = 1000;

/// Rolls out one perturbed start per trajectory under the analytic field.
/// Trajectory `t` is seeded with `config.seed + t`; a start that hits a
/// singularity is replaced by seed `config.seed + n_trajectories + r` for
/// the `r`-th replacement.
pub fn generate_dataset(spec: &SystemSpec, config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let base = base_configuration(spec)?;
    let field = |s: &ParticleState| analytic_accelerations(spec, s);
    let mut trajectories = Vec::with_capacity(config.n_trajectories);
    let mut seeds = Vec::with_capacity(config.n_trajectories);
    let mut log = Vec::new();
    let mut resamples = 0usize;
    for t in 0..config.n_trajectories {
        let mut seed = config.seed.wrapping_add(t as u64);
        loop {
            let start = perturb_initial_conditions(&base, seed, config.perturbation)?;
            match rollout(&field, &start, config.dt, config.stride, config.points_per_trajectory) {
                Ok(traj) => {
                    trajectories.push(traj);
                    seeds.push(seed);
                    break;
                }
                Err(fail) if fail.error.is_numerical() => {
                    log.push(format!(
                        "trajectory {t}: seed {seed} rejected after {} records ({})",
                        fail.partial.len(),
                        fail.error
                    ));
                    if resamples >= MAX_RESAMPLES {
                        return Err(Error::Trajectory {
                            index: t,
                            source: Box::new(fail.error),
                        });
                    }
                    seed = config
                        .seed
                        .wrapping_add((config.n_trajectories + resamples) as u64);
                    resamples += 1;
                }
                Err(fail) => return Err(fail.error),
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        config: config.clone(),
        trajectories,
        seeds,
        log,
    })
}

/// One supervised example for the baseline: a state and its true
/// accelerations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub state: ParticleState,
    pub accelerations: Vec<Vec3>,
}

/// `n_samples` states taken record by record from forward simulations with
/// perturbed starts (the default dataset settings with `seed`), each paired
/// with its analytic acceleration.
pub fn sample_acceleration_dataset(
    spec: &SystemSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<AccelSample>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let defaults = DatasetConfig::default();
    let config = DatasetConfig {
        n_trajectories: n_samples.div_ceil(defaults.points_per_trajectory),
        seed,
        ..defaults
    };
    let data = generate_dataset(spec, &config)?;
    let mut out = Vec::with_capacity(n_samples);
    for state in data.trajectories.iter().flat_map(|t| &t.states).take(n_samples) {
        out.push(AccelSample {
            accelerations: analytic_accelerations(spec, state)?,
            state: state.clone(),
        });
    }
    Ok(out)
}
