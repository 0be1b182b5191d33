//! Particle states, the pairwise Lagrangian, Euler-Lagrange accelerations,
//! velocity-Verlet integration, conserved quantities and the rigid-motion
//! transforms they are invariant under.

mod integrate;
mod mechanics;
mod state;
mod symmetry;

pub use integrate::{rollout, velocity_verlet_step, verlet_step_with, AccelerationField, RolloutFailure};
pub use mechanics::{
    angular_momentum, discrete_action, distance_generic, el_acceleration_fixedke,
    el_acceleration_general, hamiltonian, kinetic_energy, linear_momentum, mclnn_lagrangian,
    mclnn_potential, pair_accelerations, pair_potential_energy, pairwise_distances,
    pairwise_lagrangian, MclnnLagrangian, PairNetwork, PairPotential, MAX_CONDITION,
};
pub use state::{
    add, cross, dot, norm, pair_count, pairs, scale, sub, PairIndex, ParticleState, Trajectory,
    Vec3,
};
pub use symmetry::{
    apply, determinant, orthogonality_error, random_rotation, rotate, rotate_positions,
    translate, transpose, Mat3, IDENTITY,
};
