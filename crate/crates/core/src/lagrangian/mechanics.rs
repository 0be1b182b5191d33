use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use super::state::{cross, dot, norm, pairs, scale, sub, ParticleState, PairIndex, Trajectory, Vec3};
use crate::autodiff::{hessian_vector, Real, ScalarFn};
use crate::error::{Error, Result};
use crate::nn::{mlp_eval, MlpParams, MlpWorkspace};

/// Condition number above which the velocity Hessian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// A central pair interaction `V(r)`. Masses are passed for interactions
/// that scale with them (gravity); learned potentials ignore them.
pub trait PairPotential {
    fn energy(&self, r: f64, mi: f64, mj: f64) -> Result<f64>;

    /// `dV/dr`
    fn slope(&self, r: f64, mi: f64, mj: f64) -> Result<f64>;
}

impl<P: PairPotential + ?Sized> PairPotential for &P {
    fn energy(&self, r: f64, mi: f64, mj: f64) -> Result<f64> {
        (**self).energy(r, mi, mj)
    }

    fn slope(&self, r: f64, mi: f64, mj: f64) -> Result<f64> {
        (**self).slope(r, mi, mj)
    }
}

/// The shared pair network `V_ij = f(q_ij)`, optionally shifted by a
/// constant `offset` (gauge) that affects energies but never forces.
#[derive(Debug)]
pub struct PairNetwork<'a> {
    params: &'a MlpParams,
    offset: f64,
    workspace: RefCell<MlpWorkspace>,
}

impl<'a> PairNetwork<'a> {
    pub fn new(params: &'a MlpParams) -> Result<Self> {
        Self::with_offset(params, 0.0)
    }

    pub fn with_offset(params: &'a MlpParams, offset: f64) -> Result<Self> {
        params.validate()?;
        if params.input_dim() != 1 {
            return Err(Error::contract(format!(
                "pair network takes one distance, layer sizes are {:?}",
                params.layer_sizes
            )));
        }
        Ok(PairNetwork {
            params,
            offset,
            workspace: RefCell::new(MlpWorkspace::new(&params.layer_sizes)),
        })
    }

    pub fn params(&self) -> &MlpParams {
        self.params
    }
}

impl PairPotential for PairNetwork<'_> {
    fn energy(&self, r: f64, _mi: f64, _mj: f64) -> Result<f64> {
        Ok(self.params.forward(&[r])? + self.offset)
    }

    fn slope(&self, r: f64, _mi: f64, _mj: f64) -> Result<f64> {
        let d = self
            .workspace
            .borrow_mut()
            .directional(self.params, &[r], &[1.0], false);
        if !d.slope.is_finite() {
            return Err(Error::numerical("pair network slope"));
        }
        Ok(d.slope)
    }
}

/// `q_ij = |q_i - q_j|` for every pair, in lexicographic pair order.
pub fn pairwise_distances(state: &ParticleState) -> Vec<(PairIndex, f64)> {
    pairs(state.len())
        .map(|p| (p, norm(sub(state.positions[p.i], state.positions[p.j]))))
        .collect()
}

pub fn kinetic_energy(state: &ParticleState) -> f64 {
    state
        .velocities
        .iter()
        .zip(&state.masses)
        .map(|(v, m)| 0.5 * m * dot(*v, *v))
        .sum()
}

/// `Σ_{i<j} V(q_ij)`
pub fn pair_potential_energy<P: PairPotential + ?Sized>(
    potential: &P,
    positions: &[Vec3],
    masses: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs(positions.len()) {
        let r = norm(sub(positions[p.i], positions[p.j]));
        total += potential.energy(r, masses[p.i], masses[p.j])?;
    }
    Ok(total)
}

/// `q̈_i = -(1/m_i) ∂V/∂q_i` for a sum of central pair terms. Forces on each
/// pair are equal and opposite, so `Σ m_i q̈_i` vanishes up to rounding.
pub fn pair_accelerations<P: PairPotential + ?Sized>(
    potential: &P,
    positions: &[Vec3],
    masses: &[f64],
) -> Result<Vec<Vec3>> {
    let mut acc = vec![[0.0; 3]; positions.len()];
    for p in pairs(positions.len()) {
        let d = sub(positions[p.i], positions[p.j]);
        let r = norm(d);
        if r == 0.0 {
            return Err(Error::numerical(format!(
                "pair direction: particles {} and {} coincide",
                p.i, p.j
            )));
        }
        // force on i along d
        let f = -potential.slope(r, masses[p.i], masses[p.j])? / r;
        for k in 0..3 {
            acc[p.i][k] += f * d[k] / masses[p.i];
            acc[p.j][k] -= f * d[k] / masses[p.j];
        }
    }
    if acc.iter().any(|a| a.iter().any(|x| !x.is_finite())) {
        return Err(Error::numerical("pair_accelerations"));
    }
    Ok(acc)
}

/// Total potential of the learned pairwise model.
pub fn mclnn_potential(params: &MlpParams, state: &ParticleState) -> Result<f64> {
    pair_potential_energy(&PairNetwork::new(params)?, &state.positions, &state.masses)
}

/// `L = T - Σ_{i<j} V_ij(q_ij)`
pub fn mclnn_lagrangian(params: &MlpParams, state: &ParticleState) -> Result<f64> {
    Ok(kinetic_energy(state) - mclnn_potential(params, state)?)
}

/// Euler-Lagrange accelerations when `T = Σ ½ m q̇²`: the velocity Hessian
/// is `diag(m)` and the mixed term vanishes, leaving `-∇V / m`.
pub fn el_acceleration_fixedke(params: &MlpParams, state: &ParticleState) -> Result<Vec<Vec3>> {
    pair_accelerations(&PairNetwork::new(params)?, &state.positions, &state.masses)
}

pub fn hamiltonian(
    state: &ParticleState,
    potential: impl FnOnce(&ParticleState) -> Result<f64>,
) -> Result<f64> {
    Ok(kinetic_energy(state) + potential(state)?)
}

pub fn linear_momentum(state: &ParticleState) -> Vec3 {
    let mut p = [0.0; 3];
    for (v, &m) in state.velocities.iter().zip(&state.masses) {
        for k in 0..3 {
            p[k] += m * v[k];
        }
    }
    p
}

/// About the coordinate origin.
pub fn angular_momentum(state: &ParticleState) -> Vec3 {
    let mut l = [0.0; 3];
    for ((q, v), &m) in state.positions.iter().zip(&state.velocities).zip(&state.masses) {
        let c = cross(*q, scale(*v, m));
        for k in 0..3 {
            l[k] += c[k];
        }
    }
    l
}

/// Trapezoidal quadrature of `L` over the recorded states.
pub fn discrete_action(
    traj: &Trajectory,
    lagrangian: impl Fn(&ParticleState) -> Result<f64>,
) -> Result<f64> {
    let values = traj
        .states
        .iter()
        .map(&lagrangian)
        .collect::<Result<Vec<f64>>>()?;
    Ok(values
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * traj.recorded_dt)
        .sum())
}

/// Euler-Lagrange accelerations for an arbitrary Lagrangian
/// `L(z)`, `z = [q; q̇]` flattened particle-major (length `6N`):
///
/// `q̈ = (∇_{q̇q̇} L)⁻¹ [∇_q L − (∇_{q̇q} L) q̇]`
///
/// Second derivatives come from forward-over-reverse Hessian-vector
/// products; the system is solved by pivoted LU, never inverted.
pub fn el_acceleration_general<L: ScalarFn + ?Sized>(
    lagrangian: &L,
    state: &ParticleState,
) -> Result<Vec<Vec3>> {
    state.validate()?;
    let n = 3 * state.len();
    let z = state.phase_vector();

    // Direction [q̇; 0] gives ∇L and the mixed term in one sweep.
    let mut dir = vec![0.0; 2 * n];
    dir[..n].copy_from_slice(&z[n..]);
    let (g, mixed) = hessian_vector(lagrangian, &z, &dir)?;

    let mut hess = DMatrix::<f64>::zeros(n, n);
    dir.iter_mut().for_each(|d| *d = 0.0);
    for k in 0..n {
        dir[n + k] = 1.0;
        let (_, col) = hessian_vector(lagrangian, &z, &dir)?;
        dir[n + k] = 0.0;
        for i in 0..n {
            hess[(i, k)] = col[n + i];
        }
    }

    let sv = hess.clone().svd(false, false).singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular {
            condition,
            limit: MAX_CONDITION,
        });
    }

    let rhs = DVector::from_iterator(n, (0..n).map(|i| g[i] - mixed[n + i]));
    let sol = hess.lu().solve(&rhs).ok_or(Error::Singular {
        condition: f64::INFINITY,
        limit: MAX_CONDITION,
    })?;
    Ok((0..state.len())
        .map(|p| [sol[3 * p], sol[3 * p + 1], sol[3 * p + 2]])
        .collect())
}

/// Distance between particles `i` and `j` of a flattened position vector.
pub fn distance_generic<S: Real>(q: &[S], i: usize, j: usize) -> S {
    let mut s = S::zero();
    for k in 0..3 {
        let d = q[3 * i + k] - q[3 * j + k];
        s = s + d * d;
    }
    s.sqrt()
}

/// `Σ ½ m q̇² − Σ_{i<j} V(q_ij, m_i, m_j)` on a flattened `[q; q̇]`.
pub fn pairwise_lagrangian<S: Real>(
    z: &[S],
    masses: &[f64],
    pair_energy: impl Fn(S, f64, f64) -> S,
) -> S {
    let n = masses.len();
    assert_eq!(z.len(), 6 * n, "phase vector length");
    let (q, v) = z.split_at(3 * n);
    let mut kinetic = S::zero();
    for (i, &m) in masses.iter().enumerate() {
        for k in 0..3 {
            let vi = v[3 * i + k];
            kinetic = kinetic + (vi * vi).scale(0.5 * m);
        }
    }
    let mut potential = S::zero();
    for p in pairs(n) {
        potential = potential + pair_energy(distance_generic(q, p.i, p.j), masses[p.i], masses[p.j]);
    }
    kinetic - potential
}

/// The learned Lagrangian as a differentiable function of `[q; q̇]`.
pub struct MclnnLagrangian<'a> {
    params: &'a MlpParams,
    flat: Vec<f64>,
    masses: Vec<f64>,
}

impl<'a> MclnnLagrangian<'a> {
    pub fn new(params: &'a MlpParams, masses: &[f64]) -> Self {
        MclnnLagrangian {
            params,
            flat: params.to_flat(),
            masses: masses.to_vec(),
        }
    }
}

impl ScalarFn for MclnnLagrangian<'_> {
    fn eval<S: Real>(&self, z: &[S]) -> S {
        let flat: Vec<S> = self.flat.iter().map(|&w| S::constant(w)).collect();
        pairwise_lagrangian(z, &self.masses, |r, _, _| {
            mlp_eval(&self.params.layer_sizes, &flat, &[r])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_at(d: f64) -> ParticleState {
        ParticleState::with_unit_masses(vec![[d, 0.0, 0.0], [0.0; 3]], vec![[0.0; 3]; 2]).unwrap()
    }

    #[test]
    fn distances() {
        assert_eq!(pairwise_distances(&two_at(0.0))[0].1, 0.0);
        assert_eq!(pairwise_distances(&two_at(1.0))[0].1, 1.0);
    }

    #[test]
    fn kinetic_energy_cases() {
        let mut s = two_at(1.0);
        assert_eq!(kinetic_energy(&s), 0.0);
        s.velocities[0] = [1.0, 0.0, 0.0];
        assert_eq!(kinetic_energy(&s), 0.5);
        s.velocities[1] = [0.3, -0.2, 0.7];
        let t = kinetic_energy(&s);
        s.velocities.iter_mut().for_each(|v| *v = scale(*v, 2.0));
        assert!((kinetic_energy(&s) - 4.0 * t).abs() < 1e-15);
    }

    #[test]
    fn zero_network_gives_kinetic_lagrangian() {
        let p = MlpParams::zeros(&[1, 10, 10, 1]).unwrap();
        let mut s = two_at(1.5);
        assert_eq!(mclnn_potential(&p, &s).unwrap(), 0.0);
        assert_eq!(mclnn_lagrangian(&p, &s).unwrap(), 0.0);
        s.velocities[1] = [0.0, 2.0, 0.0];
        assert_eq!(mclnn_lagrangian(&p, &s).unwrap(), 2.0);
        assert_eq!(el_acceleration_fixedke(&p, &s).unwrap(), vec![[0.0; 3]; 2]);
    }

    #[test]
    fn momenta_cases() {
        let mut s = two_at(1.0);
        assert_eq!(linear_momentum(&s), [0.0; 3]);
        assert_eq!(angular_momentum(&s), [0.0; 3]);
        s.velocities = vec![[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        assert_eq!(linear_momentum(&s), [0.0; 3]);
        // particle 1 sits at the origin and contributes no angular momentum
        assert_eq!(angular_momentum(&s), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn hamiltonian_minus_lagrangian_is_twice_potential() {
        let p = MlpParams::init(&[1, 8, 8, 1], 3).unwrap();
        let mut s = two_at(1.3);
        s.velocities[0] = [0.2, 0.1, -0.4];
        let v = mclnn_potential(&p, &s).unwrap();
        let h = hamiltonian(&s, |st| mclnn_potential(&p, st)).unwrap();
        let l = mclnn_lagrangian(&p, &s).unwrap();
        assert!((h - l - 2.0 * v).abs() < 1e-14);
        let zero = MlpParams::zeros(&[1, 4, 1]).unwrap();
        assert_eq!(hamiltonian(&two_at(1.0), |st| mclnn_potential(&zero, st)).unwrap(), 0.0);
    }

    #[test]
    fn action_quadrature() {
        let s = two_at(1.0);
        let single = Trajectory::new(vec![s.clone()], 0.1, 10).unwrap();
        assert_eq!(discrete_action(&single, |_| Ok(3.0)).unwrap(), 0.0);
        let traj = Trajectory::new(vec![s; 5], 0.25, 1).unwrap();
        assert!((discrete_action(&traj, |_| Ok(2.0)).unwrap() - 2.0 * 4.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn coincident_particles_have_no_force_direction() {
        let p = MlpParams::init(&[1, 4, 1], 0).unwrap();
        assert!(el_acceleration_fixedke(&p, &two_at(0.0)).unwrap_err().is_numerical());
    }

    struct FreeParticles(usize);
    impl ScalarFn for FreeParticles {
        fn eval<S: Real>(&self, z: &[S]) -> S {
            pairwise_lagrangian(z, &vec![1.0; self.0], |_, _, _| S::zero())
        }
    }

    #[test]
    fn general_free_particles_do_not_accelerate() {
        let mut s = two_at(1.0);
        s.velocities[0] = [0.5, -0.3, 0.2];
        let a = el_acceleration_general(&FreeParticles(2), &s).unwrap();
        assert!(a.iter().flatten().all(|x| x.abs() < 1e-15));
    }

    /// L = ½ q̇ₓ² − ½ qₓ² on the x coordinate of one particle, plus
    /// ½ q̇ on the other axes so the velocity Hessian stays regular.
    struct Oscillator;
    impl ScalarFn for Oscillator {
        fn eval<S: Real>(&self, z: &[S]) -> S {
            (z[3] * z[3] + z[4] * z[4] + z[5] * z[5] - z[0] * z[0]).scale(0.5)
        }
    }

    #[test]
    fn general_harmonic_oscillator() {
        let s = ParticleState::with_unit_masses(vec![[0.7, 0.0, 0.0]], vec![[0.1, 0.0, 0.0]]).unwrap();
        let a = el_acceleration_general(&Oscillator, &s).unwrap();
        assert!((a[0][0] + 0.7).abs() < 1e-15);
    }

    struct Degenerate;
    impl ScalarFn for Degenerate {
        fn eval<S: Real>(&self, z: &[S]) -> S {
            z[3] * z[3]
        }
    }

    #[test]
    fn singular_velocity_hessian_is_reported() {
        let s = ParticleState::with_unit_masses(vec![[0.0; 3]], vec![[0.1, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            el_acceleration_general(&Degenerate, &s),
            Err(Error::Singular { .. })
        ));
    }
}
