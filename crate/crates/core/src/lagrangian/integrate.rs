use super::state::{ParticleState, Trajectory, Vec3};
use crate::error::{Error, Result};

/// Anything that maps a state to per-particle accelerations.
pub trait AccelerationField {
    fn accelerations(&self, state: &ParticleState) -> Result<Vec<Vec3>>;
}

impl<F> AccelerationField for F
where
    F: Fn(&ParticleState) -> Result<Vec<Vec3>>,
{
    fn accelerations(&self, state: &ParticleState) -> Result<Vec<Vec3>> {
        self(state)
    }
}

/// Kick-drift-kick step reusing the acceleration already known at `state`.
/// Returns the new state and the acceleration there.
pub fn verlet_step_with<A: AccelerationField + ?Sized>(
    accel: &A,
    state: &ParticleState,
    current: &[Vec3],
    dt: f64,
) -> Result<(ParticleState, Vec<Vec3>)> {
    let half = 0.5 * dt;
    let mut next = state.clone();
    for i in 0..state.len() {
        for k in 0..3 {
            next.velocities[i][k] += half * current[i][k];
            next.positions[i][k] += dt * next.velocities[i][k];
        }
    }
    let a = accel.accelerations(&next)?;
    if a.len() != state.len() {
        return Err(Error::contract("acceleration count does not match particle count"));
    }
    for i in 0..state.len() {
        for k in 0..3 {
            next.velocities[i][k] += half * a[i][k];
        }
    }
    if !next.is_finite() {
        return Err(Error::numerical("velocity_verlet_step"));
    }
    Ok((next, a))
}

/// One velocity-Verlet step:
/// `v½ = v + (dt/2) a(q)`, `q' = q + dt v½`, `v' = v½ + (dt/2) a(q')`.
pub fn velocity_verlet_step<A: AccelerationField + ?Sized>(
    accel: &A,
    state: &ParticleState,
    dt: f64,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(Error::contract(format!("time step must be positive, got {dt}")));
    }
    let a = accel.accelerations(state)?;
    verlet_step_with(accel, state, &a, dt).map(|(s, _)| s)
}

/// A rollout that stopped early; `partial` holds the records made so far.
#[derive(Debug, thiserror::Error)]
#[error("rollout failed after {} records: {error}", partial.len())]
pub struct RolloutFailure {
    pub partial: Vec<ParticleState>,
    #[source]
    pub error: Error,
}

impl From<RolloutFailure> for Error {
    fn from(f: RolloutFailure) -> Self {
        f.error
    }
}

/// Integrates at `dt`, recording `state0` and then every `substeps` steps
/// until `n_records` states are held.
pub fn rollout<A: AccelerationField + ?Sized>(
    accel: &A,
    state0: &ParticleState,
    dt: f64,
    substeps: usize,
    n_records: usize,
) -> std::result::Result<Trajectory, RolloutFailure> {
    let fail = |partial: Vec<ParticleState>, error: Error| RolloutFailure { partial, error };
    if let Err(e) = state0.validate() {
        return Err(fail(Vec::new(), e));
    }
    if !(dt > 0.0) || substeps == 0 || n_records == 0 {
        return Err(fail(
            Vec::new(),
            Error::contract(format!(
                "rollout needs dt > 0, substeps >= 1, n_records >= 1 (got {dt}, {substeps}, {n_records})"
            )),
        ));
    }
    let mut records = Vec::with_capacity(n_records);
    records.push(state0.clone());
    if n_records > 1 {
        let mut state = state0.clone();
        let mut a = match accel.accelerations(&state) {
            Ok(a) => a,
            Err(e) => return Err(fail(records, e)),
        };
        while records.len() < n_records {
            for _ in 0..substeps {
                match verlet_step_with(accel, &state, &a, dt) {
                    Ok((s, next)) => {
                        state = s;
                        a = next;
                    }
                    Err(e) => return Err(fail(records, e)),
                }
            }
            records.push(state.clone());
        }
    }
    Ok(Trajectory {
        states: records,
        recorded_dt: dt * substeps as f64,
        substeps,
    })
}
