//! Forward-simulation evaluation: conserved quantities along model and
//! ground-truth rollouts, MAE summaries, size generalization and the learned
//! pair potential as a curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{
    angular_momentum, el_acceleration_fixedke, kinetic_energy, linear_momentum, norm,
    pair_potential_energy, pairwise_distances, rollout, PairNetwork, ParticleState, Trajectory,
    Vec3,
};
use crate::nn::MlpParams;
use crate::systems::{
    analytic_accelerations, analytic_pair_potential, analytic_potential, base_configuration,
    perturb_initial_conditions, AccelSample, DatasetConfig, SystemSpec, DEFAULT_PERTURBATION,
};
use crate::training::{baseline_accelerations, baseline_potential};

/// A rollout is cut off once any particle is farther than this from the
/// origin.
pub const DIVERGENCE_RADIUS: f64 = 1e6;

/// Evaluation starts are drawn with `EVAL_SEED_OFFSET + seed` so they never
/// coincide with a training start drawn from `seed`.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Mean absolute difference of two equally long series.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "mae needs two nonempty series of equal length (got {} and {})",
            pred.len(),
            truth.len()
        )));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Component-wise MAE of two vector series.
pub fn mae_vec(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    let flat = |v: &[Vec3]| v.iter().flatten().copied().collect::<Vec<_>>();
    mae(&flat(pred), &flat(truth))
}

/// Something that can drive a rollout and report its own potential energy.
#[derive(Clone, Debug)]
pub enum Model {
    /// Pairwise network; `gauge` shifts each pair energy.
    Mclnn { params: MlpParams, gauge: PairGauge },
    /// Joint-position network; `offset` is added to the total potential.
    Baseline { params: MlpParams, offset: f64 },
    /// The true potential, used as a reference model.
    Analytic(SystemSpec),
}

impl Model {
    /// Errors with [`Error::Unsupported`] when the model cannot handle `n`
    /// particles.
    pub fn check_size(&self, n: usize) -> Result<()> {
        match self {
            Model::Baseline { params, .. } if params.input_dim() != 3 * n => {
                Err(Error::Unsupported(format!(
                    "the baseline was trained on {} particles and cannot simulate {n}",
                    params.input_dim() / 3
                )))
            }
            Model::Analytic(spec) if spec.n_particles != n => Err(Error::Unsupported(format!(
                "analytic model is set up for {} particles, not {n}",
                spec.n_particles
            ))),
            _ => Ok(()),
        }
    }

    pub fn accelerations(&self, state: &ParticleState) -> Result<Vec<Vec3>> {
        match self {
            Model::Mclnn { params, .. } => el_acceleration_fixedke(params, state),
            Model::Baseline { params, .. } => baseline_accelerations(params, state),
            Model::Analytic(spec) => analytic_accelerations(spec, state),
        }
    }

    pub fn potential(&self, state: &ParticleState) -> Result<f64> {
        match self {
            Model::Mclnn { params, gauge } => {
                let mut v = pair_potential_energy(
                    &PairNetwork::new(params)?,
                    &state.positions,
                    &state.masses,
                )?;
                for (_, r) in pairwise_distances(state) {
                    v += gauge.offset(r);
                }
                Ok(v)
            }
            Model::Baseline { params, offset } => Ok(baseline_potential(params, state)? + offset),
            Model::Analytic(spec) => analytic_potential(spec, state),
        }
    }
}

/// Constant added to a learned pair energy. Forces fix the pair potential
/// only up to a constant on each connected stretch of observed distances,
/// so there is one constant per training-range segment; a distance outside
/// every segment takes the constant of the nearest one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGauge {
    pub segments: Vec<(f64, f64)>,
    pub offsets: Vec<f64>,
}

impl PairGauge {
    /// The same constant at every distance.
    pub fn constant(offset: f64) -> Self {
        PairGauge {
            segments: Vec::new(),
            offsets: vec![offset],
        }
    }

    pub fn new(range: &TrainingRange, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != range.segments.len() {
            return Err(Error::contract(format!(
                "{} gauge offsets for {} range segments",
                offsets.len(),
                range.segments.len()
            )));
        }
        Ok(PairGauge {
            segments: range.segments.clone(),
            offsets,
        })
    }

    pub fn offset(&self, r: f64) -> f64 {
        if self.segments.is_empty() {
            return self.offsets[0];
        }
        self.offsets[nearest_segment(&self.segments, r)]
    }
}

fn nearest_segment(segments: &[(f64, f64)], r: f64) -> usize {
    let gap = |&(lo, hi): &(f64, f64)| (lo - r).max(r - hi).max(0.0);
    (0..segments.len())
        .min_by(|&a, &b| gap(&segments[a]).total_cmp(&gap(&segments[b])))
        .unwrap_or(0)
}

/// Per-segment constants that best align the network with the true pair
/// potential in least squares over every pair distance seen in
/// `trajectories`.
pub fn mclnn_gauge(
    params: &MlpParams,
    spec: &SystemSpec,
    trajectories: &[Trajectory],
) -> Result<PairGauge> {
    let range = TrainingRange::from_trajectories(trajectories)?;
    let mut sum = vec![0.0; range.segments.len()];
    let mut count = vec![0usize; range.segments.len()];
    for state in trajectories.iter().flat_map(|t| &t.states) {
        for (p, r) in pairwise_distances(state) {
            let truth = analytic_pair_potential(spec, r, state.masses[p.i], state.masses[p.j])?;
            let s = nearest_segment(&range.segments, r);
            sum[s] += truth - params.forward(&[r])?;
            count[s] += 1;
        }
    }
    let offsets = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    PairGauge::new(&range, offsets)
}

/// Constant that best aligns the baseline potential with the true total
/// potential over `samples`.
pub fn baseline_gauge_offset(
    params: &MlpParams,
    spec: &SystemSpec,
    samples: &[AccelSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("gauge offset needs at least one sample"));
    }
    let mut sum = 0.0;
    for s in samples {
        sum += analytic_potential(spec, &s.state)? - baseline_potential(params, &s.state)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Lagrangian, Hamiltonian and momenta at every record of one rollout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantitySeries {
    pub lagrangian: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    pub linear_momentum: Vec<Vec3>,
    pub angular_momentum: Vec<Vec3>,
}

impl QuantitySeries {
    pub fn from_states(
        states: &[ParticleState],
        potential: impl Fn(&ParticleState) -> Result<f64>,
    ) -> Result<Self> {
        let mut out = QuantitySeries::default();
        for s in states {
            let t = kinetic_energy(s);
            let v = potential(s)?;
            out.lagrangian.push(t - v);
            out.hamiltonian.push(t + v);
            out.linear_momentum.push(linear_momentum(s));
            out.angular_momentum.push(angular_momentum(s));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.lagrangian.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lagrangian.is_empty()
    }

    fn truncate(&mut self, n: usize) {
        self.lagrangian.truncate(n);
        self.hamiltonian.truncate(n);
        self.linear_momentum.truncate(n);
        self.angular_momentum.truncate(n);
    }

    /// Largest `‖p(t) - p(0)‖∞` over the series.
    pub fn linear_momentum_drift(&self) -> f64 {
        max_drift(&self.linear_momentum)
    }

    /// Largest `‖L(t) - L(0)‖∞` over the series.
    pub fn angular_momentum_drift(&self) -> f64 {
        max_drift(&self.angular_momentum)
    }

    /// Largest `|H(t) - H(0)| / max(|H(0)|, 1e-12)`.
    pub fn hamiltonian_relative_drift(&self) -> f64 {
        let Some(&h0) = self.hamiltonian.first() else {
            return 0.0;
        };
        let worst = self
            .hamiltonian
            .iter()
            .fold(0.0_f64, |m, h| m.max((h - h0).abs()));
        worst / h0.abs().max(1e-12)
    }

    /// `max L - min L`
    pub fn lagrangian_range(&self) -> f64 {
        let (lo, hi) = self
            .lagrangian
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        if self.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

fn max_drift(series: &[Vec3]) -> f64 {
    let Some(first) = series.first() else {
        return 0.0;
    };
    series
        .iter()
        .flat_map(|v| (0..3).map(move |k| (v[k] - first[k]).abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub lagrangian: f64,
    pub hamiltonian: f64,
    pub linear_momentum: f64,
    pub angular_momentum: f64,
}

/// Where a model rollout stopped early and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// First record that could not be produced.
    pub record: usize,
    pub message: String,
}

/// Model and ground truth rolled out from the same start. When the model
/// diverges both series are cut to the records the model produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub model: QuantitySeries,
    pub truth: QuantitySeries,
    pub mae: MaeSummary,
    pub divergence: Option<Divergence>,
    pub model_states: Vec<ParticleState>,
    pub truth_states: Vec<ParticleState>,
}

impl ConservationReport {
    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    /// Lagrangian MAE as a fraction of the true Lagrangian's range.
    pub fn relative_lagrangian_mae(&self) -> f64 {
        self.mae.lagrangian / self.truth.lagrangian_range().max(1e-300)
    }
}

/// Rolls `model` and the analytic system out from `state0` for `n_records`
/// records of `substeps` steps of size `dt` and compares the conserved
/// quantities. The model's energies use its own potential on its own
/// trajectory; the truth uses the analytic potential.
pub fn evaluate_forward(
    model: &Model,
    spec: &SystemSpec,
    state0: &ParticleState,
    n_records: usize,
    substeps: usize,
    dt: f64,
) -> Result<ConservationReport> {
    spec.validate()?;
    if state0.len() != spec.n_particles {
        return Err(Error::contract(format!(
            "start state has {} particles, system has {}",
            state0.len(),
            spec.n_particles
        )));
    }
    model.check_size(state0.len())?;
    let truth_field = |s: &ParticleState| analytic_accelerations(spec, s);
    let truth = rollout(&truth_field, state0, dt, substeps, n_records).map_err(|f| f.error)?;

    let model_field = |s: &ParticleState| -> Result<Vec<Vec3>> {
        if let Some(q) = s.positions.iter().find(|q| !(norm(**q) <= DIVERGENCE_RADIUS)) {
            return Err(Error::numerical(format!(
                "rollout left the ball of radius {DIVERGENCE_RADIUS:e} (|q| = {:e})",
                norm(*q)
            )));
        }
        model.accelerations(s)
    };
    let (model_states, divergence) = match rollout(&model_field, state0, dt, substeps, n_records)
    {
        Ok(t) => (t.states, None),
        Err(f) if f.error.is_numerical() && !f.partial.is_empty() => {
            let record = f.partial.len();
            (
                f.partial,
                Some(Divergence {
                    record,
                    message: f.error.to_string(),
                }),
            )
        }
        Err(f) => return Err(f.error),
    };
    let mut truth_states = truth.states;
    truth_states.truncate(model_states.len());

    let model_series = QuantitySeries::from_states(&model_states, |s| model.potential(s))?;
    let mut truth_series = QuantitySeries::from_states(&truth_states, |s| analytic_potential(spec, s))?;
    truth_series.truncate(model_series.len());
    let mae = MaeSummary {
        lagrangian: mae(&model_series.lagrangian, &truth_series.lagrangian)?,
        hamiltonian: mae(&model_series.hamiltonian, &truth_series.hamiltonian)?,
        linear_momentum: mae_vec(&model_series.linear_momentum, &truth_series.linear_momentum)?,
        angular_momentum: mae_vec(&model_series.angular_momentum, &truth_series.angular_momentum)?,
    };
    Ok(ConservationReport {
        model: model_series,
        truth: truth_series,
        mae,
        divergence,
        model_states,
        truth_states,
    })
}

/// A held-out start for `spec`: the base configuration perturbed with
/// `EVAL_SEED_OFFSET + seed`.
pub fn evaluation_state(spec: &SystemSpec, seed: u64) -> Result<ParticleState> {
    let base = base_configuration(spec)?;
    perturb_initial_conditions(&base, EVAL_SEED_OFFSET.wrapping_add(seed), DEFAULT_PERTURBATION)
}

/// Evaluates a pairwise model trained on `spec_small` on an `n_large`
/// particle version of the same system, at the default dataset step size
/// and stride.
pub fn generalization_eval(
    model: &Model,
    spec_small: &SystemSpec,
    n_large: usize,
    seed: u64,
    n_records: usize,
) -> Result<ConservationReport> {
    if n_large == spec_small.n_particles {
        return Err(Error::contract(format!(
            "generalization needs a particle count other than {}",
            spec_small.n_particles
        )));
    }
    if let Model::Baseline { .. } = model {
        return Err(Error::Unsupported(
            "the baseline cannot simulate a different number of particles".into(),
        ));
    }
    let large = spec_small.resized(n_large);
    let model = match model {
        Model::Analytic(_) => Model::Analytic(large.clone()),
        other => other.clone(),
    };
    let state0 = evaluation_state(&large, seed)?;
    let d = DatasetConfig::default();
    evaluate_forward(&model, &large, &state0, n_records, d.stride, d.dt)
}

/// Union of intervals covered by the pair distances seen in training.
/// Sorted distances are split wherever consecutive values are more than
/// 5% of the overall span apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRange {
    pub segments: Vec<(f64, f64)>,
}

impl TrainingRange {
    pub const GAP_FRACTION: f64 = 0.05;

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(Error::contract("training range needs at least one distance"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("training range distances"));
        }
        v.sort_by(f64::total_cmp);
        let gap = Self::GAP_FRACTION * (v[v.len() - 1] - v[0]);
        let mut segments = vec![(v[0], v[0])];
        for &x in &v[1..] {
            let last = segments.last_mut().unwrap();
            if x - last.1 > gap {
                segments.push((x, x));
            } else {
                last.1 = x;
            }
        }
        Ok(TrainingRange { segments })
    }

    pub fn from_trajectories(trajectories: &[Trajectory]) -> Result<Self> {
        Self::from_values(
            trajectories
                .iter()
                .flat_map(|t| &t.states)
                .flat_map(|s| pairwise_distances(s).into_iter().map(|(_, r)| r)),
        )
    }

    pub fn contains(&self, r: f64) -> bool {
        self.segments.iter().any(|&(lo, hi)| lo <= r && r <= hi)
    }

    pub fn min(&self) -> f64 {
        self.segments[0].0
    }

    pub fn max(&self) -> f64 {
        self.segments[self.segments.len() - 1].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialRow {
    pub r: f64,
    pub v_learned: f64,
    pub v_learned_shifted: f64,
    pub v_analytic: f64,
    pub in_range: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialCurve {
    pub rows: Vec<PotentialRow>,
    /// Constant subtracted from `v_learned` on each training-range segment
    /// (a single entry when no grid point is in range).
    pub shifts: Vec<f64>,
}

impl PotentialCurve {
    /// Largest `|shifted - analytic|` over in-range rows, or `None` when no
    /// row is in range.
    pub fn max_in_range_error(&self) -> Option<f64> {
        self.in_range()
            .map(|r| (r.v_learned_shifted - r.v_analytic).abs())
            .reduce(f64::max)
    }

    /// `max - min` of the analytic potential over in-range rows.
    pub fn analytic_in_range_span(&self) -> Option<f64> {
        let lo = self.in_range().map(|r| r.v_analytic).reduce(f64::min)?;
        let hi = self.in_range().map(|r| r.v_analytic).reduce(f64::max)?;
        Some(hi - lo)
    }

    fn in_range(&self) -> impl Iterator<Item = &PotentialRow> {
        self.rows.iter().filter(|r| r.in_range)
    }
}

/// The learned pair potential on a uniform grid next to the analytic one for
/// the first two particle masses of `spec`. Each training-range segment gets
/// its own least-squares shift over the in-range grid points it contains
/// (the residual at its midpoint if it contains none); points outside the
/// range use the nearest segment's shift. With no grid point in range a
/// single shift is fitted over all points.
pub fn export_potential_curve(
    params: &MlpParams,
    spec: &SystemSpec,
    r_min: f64,
    r_max: f64,
    n_points: usize,
    range: &TrainingRange,
) -> Result<PotentialCurve> {
    if !(r_min < r_max) || !r_min.is_finite() || !r_max.is_finite() {
        return Err(Error::contract(format!("need r_min < r_max (got {r_min}, {r_max})")));
    }
    if n_points < 2 {
        return Err(Error::contract("a potential curve needs at least two points"));
    }
    spec.validate()?;
    params.validate()?;
    let (mi, mj) = (spec.masses[0], spec.masses[1.min(spec.masses.len() - 1)]);
    let residual = |r: f64| -> Result<f64> {
        Ok(params.forward(&[r])? - analytic_pair_potential(spec, r, mi, mj)?)
    };
    let mut rows = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let r = if k == n_points - 1 {
            r_max
        } else {
            r_min + (r_max - r_min) * k as f64 / (n_points - 1) as f64
        };
        rows.push(PotentialRow {
            r,
            v_learned: params.forward(&[r])?,
            v_learned_shifted: 0.0,
            v_analytic: analytic_pair_potential(spec, r, mi, mj)?,
            in_range: range.contains(r),
        });
    }
    let shifts = if rows.iter().any(|r| r.in_range) {
        let mut shifts = Vec::with_capacity(range.segments.len());
        for &(lo, hi) in &range.segments {
            let inside: Vec<&PotentialRow> =
                rows.iter().filter(|p| lo <= p.r && p.r <= hi).collect();
            shifts.push(if inside.is_empty() {
                residual(0.5 * (lo + hi))?
            } else {
                inside.iter().map(|p| p.v_learned - p.v_analytic).sum::<f64>() / inside.len() as f64
            });
        }
        shifts
    } else {
        vec![rows.iter().map(|p| p.v_learned - p.v_analytic).sum::<f64>() / n_points as f64]
    };
    for row in &mut rows {
        let s = if shifts.len() == 1 {
            shifts[0]
        } else {
            shifts[nearest_segment(&range.segments, row.r)]
        };
        row.v_learned_shifted = row.v_learned - s;
    }
    Ok(PotentialCurve { rows, shifts })
}

/// One acceleration component: ground truth against a model prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcePoint {
    pub sample: usize,
    pub particle: usize,
    pub component: usize,
    pub truth: f64,
    pub predicted: f64,
}

/// Predicted against true accelerations for every sample, particle and
/// component.
pub fn force_scatter(model: &Model, samples: &[AccelSample]) -> Result<Vec<ForcePoint>> {
    let mut out = Vec::new();
    for (sample, s) in samples.iter().enumerate() {
        model.check_size(s.state.len())?;
        let pred = model.accelerations(&s.state)?;
        for (particle, (p, t)) in pred.iter().zip(&s.accelerations).enumerate() {
            for component in 0..3 {
                out.push(ForcePoint {
                    sample,
                    particle,
                    component,
                    truth: t[component],
                    predicted: p[component],
                });
            }
        }
    }
    Ok(out)
}

/// Ordinary least-squares slope of `y` on `x` (with intercept).
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract("slope needs two equally long series of at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("slope is undefined for constant x"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{initial_conditions, SystemKind};

    #[test]
    fn mae_examples() {
        let a = [1.0, -2.0, 3.5];
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!((mae(&b, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(mae(&a, &a[..2]).is_err());
        assert!(mae(&[], &[]).is_err());
        let mut explicit = 0.0;
        let c = [0.5, 0.25, -4.0];
        for i in 0..3 {
            explicit += (a[i] - c[i]).abs();
        }
        assert_eq!(mae(&a, &c).unwrap(), explicit / 3.0);
        assert_eq!(mae_vec(&[[1.0, 2.0, 3.0]], &[[0.0, 2.0, 0.0]]).unwrap(), 4.0 / 3.0);
    }

    #[test]
    fn analytic_model_is_a_fixed_point() {
        for kind in SystemKind::ALL {
            let spec = SystemSpec::new(kind);
            let s0 = initial_conditions(kind);
            let rep = evaluate_forward(&Model::Analytic(spec.clone()), &spec, &s0, 100, 10, 0.01)
                .unwrap();
            assert_eq!(rep.len(), 100);
            assert!(rep.divergence.is_none());
            let m = rep.mae;
            for v in [m.lagrangian, m.hamiltonian, m.linear_momentum, m.angular_momentum] {
                assert!(v < 1e-8, "{kind}: {m:?}");
            }
        }
    }

    #[test]
    fn single_record_report() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let s0 = initial_conditions(SystemKind::LinearSpring);
        let rep = evaluate_forward(&Model::Analytic(spec.clone()), &spec, &s0, 1, 10, 0.01).unwrap();
        assert_eq!(rep.len(), 1);
        assert_eq!(rep.truth.len(), 1);
    }

    #[test]
    fn untrained_pair_network_conserves_momentum() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let params = MlpParams::init(&[1, 10, 10, 1], 4).unwrap();
        let model = Model::Mclnn { params, gauge: PairGauge::constant(0.0) };
        let s0 = evaluation_state(&spec, 0).unwrap();
        let rep = evaluate_forward(&model, &spec, &s0, 100, 10, 0.01).unwrap();
        if rep.divergence.is_none() {
            assert!(rep.model.linear_momentum_drift() < 1e-8);
            assert!(rep.model.angular_momentum_drift() < 1e-6);
        }
    }

    #[test]
    fn divergence_truncates_both_series() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        // a steeply repulsive pair network blows the system apart
        let mut params = MlpParams::zeros(&[1, 1]).unwrap();
        params.set_flat(&[-1e9, 0.0]).unwrap();
        let model = Model::Mclnn { params, gauge: PairGauge::constant(0.0) };
        let s0 = initial_conditions(SystemKind::LinearSpring);
        let rep = evaluate_forward(&model, &spec, &s0, 50, 10, 0.01).unwrap();
        let d = rep.divergence.clone().expect("diverged");
        assert_eq!(rep.len(), d.record);
        assert_eq!(rep.truth.len(), rep.len());
        assert_eq!(rep.truth_states.len(), rep.model_states.len());
    }

    #[test]
    fn baseline_refuses_other_sizes() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let params = MlpParams::init(&[9, 4, 1], 1).unwrap();
        let model = Model::Baseline { params, offset: 0.0 };
        let err = generalization_eval(&model, &spec, 6, 0, 10).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        let big = spec.resized(6);
        let s0 = evaluation_state(&big, 0).unwrap();
        let err = evaluate_forward(&model, &big, &s0, 10, 10, 0.01).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn generalization_uses_all_pairs() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let rep = generalization_eval(&Model::Analytic(spec.clone()), &spec, 6, 3, 20).unwrap();
        assert_eq!(rep.model_states[0].len(), 6);
        assert_eq!(pairwise_distances(&rep.model_states[0]).len(), 15);
        assert!(rep.mae.lagrangian < 1e-10);
        assert!(generalization_eval(&Model::Analytic(spec.clone()), &spec, 3, 0, 5).is_err());
    }

    #[test]
    fn gauge_uses_the_nearest_segment() {
        let range = TrainingRange::from_values([1.0, 1.1, 5.0, 5.1]).unwrap();
        let g = PairGauge::new(&range, vec![0.5, -2.0]).unwrap();
        assert_eq!(g.offset(1.05), 0.5);
        assert_eq!(g.offset(0.2), 0.5);
        assert_eq!(g.offset(4.0), -2.0);
        assert_eq!(g.offset(9.0), -2.0);
        assert_eq!(PairGauge::constant(3.0).offset(7.0), 3.0);
        assert!(PairGauge::new(&range, vec![1.0]).is_err());
    }

    #[test]
    fn training_range_clusters() {
        let r = TrainingRange::from_values([1.0, 1.1, 1.2, 5.0, 5.05, 2.0]).unwrap();
        assert_eq!(r.segments, vec![(1.0, 1.2), (2.0, 2.0), (5.0, 5.05)]);
        assert!(r.contains(1.15) && r.contains(5.0) && !r.contains(3.0));
        assert_eq!((r.min(), r.max()), (1.0, 5.05));
        assert!(TrainingRange::from_values([]).is_err());
    }

    #[test]
    fn potential_curve_grid_and_shift() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let params = MlpParams::init(&[1, 4, 1], 1).unwrap();
        let near = (0..=16).map(|k| 0.8 + 0.05 * k as f64);
        let far = (0..=4).map(|k| 2.2 + 0.05 * k as f64);
        let range = TrainingRange::from_values(near.chain(far)).unwrap();
        let c = export_potential_curve(&params, &spec, 0.3, 2.7, 100, &range).unwrap();
        assert_eq!(c.rows.len(), 100);
        assert_eq!(c.rows[0].r, 0.3);
        assert_eq!(c.rows[99].r, 2.7);
        for &(lo, hi) in &range.segments {
            let fit: Vec<_> = c.rows.iter().filter(|r| lo <= r.r && r.r <= hi).collect();
            let resid: f64 = fit.iter().map(|r| r.v_learned_shifted - r.v_analytic).sum();
            assert!(!fit.is_empty() && resid.abs() < 1e-10);
        }
        assert_eq!(c.shifts.len(), 2);
        assert!(export_potential_curve(&params, &spec, 1.0, 1.0, 10, &range).is_err());
        assert!(export_potential_curve(&params, &spec, 0.0, 1.0, 1, &range).is_err());
    }

    #[test]
    fn gauge_offset_recovers_a_known_shift() {
        let spec = SystemSpec::new(SystemKind::LinearSpring);
        let mut params = MlpParams::init(&[1, 3, 1], 2).unwrap();
        let base = params.clone();
        let mut flat = params.to_flat();
        *flat.last_mut().unwrap() += 2.5;
        params.set_flat(&flat).unwrap();
        let cfg = DatasetConfig { n_trajectories: 2, points_per_trajectory: 3, ..Default::default() };
        let trajs = crate::systems::generate_dataset(&spec, &cfg).unwrap().trajectories;
        let a = mclnn_gauge(&base, &spec, &trajs).unwrap();
        let b = mclnn_gauge(&params, &spec, &trajs).unwrap();
        for (x, y) in a.offsets.iter().zip(&b.offsets) {
            assert!((x - y - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_of_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!((least_squares_slope(&x, &y).unwrap() - 2.0).abs() < 1e-14);
        assert!(least_squares_slope(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn analytic_force_scatter_is_exact() {
        let spec = SystemSpec::new(SystemKind::Gravity);
        let samples = crate::systems::sample_acceleration_dataset(&spec, 5, 1).unwrap();
        let pts = force_scatter(&Model::Analytic(spec), &samples).unwrap();
        assert_eq!(pts.len(), 5 * 4 * 3);
        assert!(pts.iter().all(|p| p.truth == p.predicted));
    }
}
