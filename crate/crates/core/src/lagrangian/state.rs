use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Positions, velocities and masses of `N` particles at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
}

impl ParticleState {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>, masses: Vec<f64>) -> Result<Self> {
        let state = ParticleState {
            positions,
            velocities,
            masses,
        };
        state.validate()?;
        Ok(state)
    }

    /// All masses 1.0.
    pub fn with_unit_masses(positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, velocities, vec![1.0; n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::contract("a state needs at least one particle"));
        }
        if self.velocities.len() != n || self.masses.len() != n {
            return Err(Error::contract(format!(
                "{} positions, {} velocities, {} masses",
                n,
                self.velocities.len(),
                self.masses.len()
            )));
        }
        if self.masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::contract("masses must be positive and finite"));
        }
        if !self.is_finite() {
            return Err(Error::contract("state contains non-finite entries"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `[q; q̇]` flattened, particle-major.
    pub fn phase_vector(&self) -> Vec<f64> {
        self.positions
            .iter()
            .chain(&self.velocities)
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    /// Largest coordinate magnitude.
    pub fn max_abs_position(&self) -> f64 {
        self.positions
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Relabels particles: particle `i` of the result is particle `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::contract("not a permutation of the particle indices"));
        }
        Ok(ParticleState {
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            velocities: perm.iter().map(|&p| self.velocities[p]).collect(),
            masses: perm.iter().map(|&p| self.masses[p]).collect(),
        })
    }
}

/// A pair of particle indices with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
}

/// All `n(n-1)/2` pairs in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = PairIndex> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| PairIndex { i, j }))
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Recorded states of one rollout. Consecutive records are `recorded_dt`
/// apart and `substeps` integrator steps were taken between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    pub recorded_dt: f64,
    pub substeps: usize,
}

impl Trajectory {
    pub fn new(states: Vec<ParticleState>, recorded_dt: f64, substeps: usize) -> Result<Self> {
        let traj = Trajectory {
            states,
            recorded_dt,
            substeps,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::contract("a trajectory needs at least one state"))?;
        if !(self.recorded_dt > 0.0) {
            return Err(Error::contract("recorded_dt must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::contract("substeps must be at least 1"));
        }
        let n = first.len();
        for s in &self.states {
            s.validate()?;
            if s.len() != n {
                return Err(Error::contract("particle count changes along trajectory"));
            }
        }
        Ok(())
    }

    /// Integrator step size.
    pub fn dt(&self) -> f64 {
        self.recorded_dt / self.substeps as f64
    }

    pub fn n_particles(&self) -> usize {
        self.states.first().map_or(0, ParticleState::len)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_enumeration() {
        let p: Vec<_> = pairs(4).map(|p| (p.i, p.j)).collect();
        assert_eq!(p, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        for n in 1..9 {
            assert_eq!(pairs(n).count(), pair_count(n));
        }
        assert_eq!(pair_count(6), 15);
    }

    #[test]
    fn state_validation() {
        assert!(ParticleState::with_unit_masses(vec![], vec![]).is_err());
        assert!(ParticleState::new(vec![[0.0; 3]], vec![[0.0; 3]], vec![0.0]).is_err());
        assert!(ParticleState::with_unit_masses(vec![[f64::NAN, 0.0, 0.0]], vec![[0.0; 3]]).is_err());
        assert!(ParticleState::with_unit_masses(vec![[0.0; 3]; 2], vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let s = ParticleState::with_unit_masses(vec![[0.0; 3]], vec![[0.0; 3]]).unwrap();
        assert!(Trajectory::new(vec![], 0.1, 10).is_err());
        assert!(Trajectory::new(vec![s.clone()], 0.0, 10).is_err());
        assert!(Trajectory::new(vec![s.clone()], 0.1, 0).is_err());
        let t = Trajectory::new(vec![s], 0.1, 10).unwrap();
        assert!((t.dt() - 0.01).abs() < 1e-18);
    }

    #[test]
    fn permutation_checks() {
        let s = ParticleState::with_unit_masses(
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0.0; 3]; 2],
        )
        .unwrap();
        assert_eq!(s.permuted(&[1, 0]).unwrap().positions[0], [2.0, 0.0, 0.0]);
        assert!(s.permuted(&[0, 0]).is_err());
    }
}
