use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::{add, ParticleState, Vec3};
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn apply(q: &Mat3, v: Vec3) -> Vec3 {
    [
        q[0][0] * v[0] + q[0][1] * v[1] + q[0][2] * v[2],
        q[1][0] * v[0] + q[1][1] * v[1] + q[1][2] * v[2],
        q[2][0] * v[0] + q[2][1] * v[1] + q[2][2] * v[2],
    ]
}

pub fn transpose(q: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = q[j][i];
        }
    }
    t
}

/// `max |QᵀQ − I|`
pub fn orthogonality_error(q: &Mat3) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let qtq: f64 = (0..3).map(|k| q[k][i] * q[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((qtq - target).abs());
        }
    }
    worst
}

pub fn determinant(q: &Mat3) -> f64 {
    Matrix3::from_fn(|i, j| q[i][j]).determinant()
}

fn check_orthogonal(q: &Mat3) -> Result<()> {
    let err = orthogonality_error(q);
    if !(err < 1e-10) {
        return Err(Error::contract(format!("matrix is not orthogonal (|QᵀQ − I| = {err:e})")));
    }
    Ok(())
}

/// Shifts every position by `eps`; velocities are untouched.
pub fn translate(state: &ParticleState, eps: Vec3) -> ParticleState {
    let mut out = state.clone();
    out.positions.iter_mut().for_each(|q| *q = add(*q, eps));
    out
}

/// Rigid rotation: positions and velocities both mapped by `q`.
pub fn rotate(state: &ParticleState, q: &Mat3) -> Result<ParticleState> {
    check_orthogonal(q)?;
    let mut out = state.clone();
    out.positions.iter_mut().for_each(|p| *p = apply(q, *p));
    out.velocities.iter_mut().for_each(|v| *v = apply(q, *v));
    Ok(out)
}

/// Rotates positions only, leaving velocities as they were: the
/// transformation `L(Qq, q̇)`.
pub fn rotate_positions(state: &ParticleState, q: &Mat3) -> Result<ParticleState> {
    check_orthogonal(q)?;
    let mut out = state.clone();
    out.positions.iter_mut().for_each(|p| *p = apply(q, *p));
    Ok(out)
}

/// A proper rotation from the QR factorization of a seeded random matrix.
pub fn random_rotation(seed: u64) -> Mat3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the column signs so the factorization is unique.
    for k in 0..3 {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = q[(i, j)];
        }
    }
    out
}
