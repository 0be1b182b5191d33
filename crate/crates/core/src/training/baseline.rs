//! The baseline: one network maps all flattened positions to a scalar
//! potential and is fit to true accelerations.

use crate::error::{Error, Result};
use crate::lagrangian::{ParticleState, Vec3};
use crate::nn::{MlpParams, MlpWorkspace};
use crate::systems::AccelSample;

fn check_input(params: &MlpParams, n: usize) -> Result<()> {
    params.validate()?;
    if params.input_dim() != 3 * n {
        return Err(Error::contract(format!(
            "baseline network takes {} inputs, state has {} particles",
            params.input_dim(),
            n
        )));
    }
    Ok(())
}

/// `q̈ = -(1/m) ∇_q V(q)` for the joint potential network.
pub fn baseline_accelerations_with(
    params: &MlpParams,
    ws: &mut MlpWorkspace,
    state: &ParticleState,
) -> Result<Vec<Vec3>> {
    check_input(params, state.len())?;
    let x: Vec<f64> = state.positions.iter().flatten().copied().collect();
    let mut g = vec![0.0; x.len()];
    ws.input_gradient(params, &x, &mut g);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("baseline potential gradient"));
    }
    Ok(state
        .masses
        .iter()
        .enumerate()
        .map(|(i, m)| [-g[3 * i] / m, -g[3 * i + 1] / m, -g[3 * i + 2] / m])
        .collect())
}

pub fn baseline_accelerations(params: &MlpParams, state: &ParticleState) -> Result<Vec<Vec3>> {
    baseline_accelerations_with(params, &mut MlpWorkspace::new(&params.layer_sizes), state)
}

/// Potential energy predicted by the baseline network.
pub fn baseline_potential(params: &MlpParams, state: &ParticleState) -> Result<f64> {
    check_input(params, state.len())?;
    let x: Vec<f64> = state.positions.iter().flatten().copied().collect();
    params.forward(&x)
}

/// Mean squared error between predicted and true accelerations over every
/// sample, particle and component.
pub fn baseline_loss(params: &MlpParams, samples: &[AccelSample]) -> Result<f64> {
    let mut ws = MlpWorkspace::new(&params.layer_sizes);
    let all: Vec<usize> = (0..samples.len()).collect();
    baseline_batch(params, &mut ws, samples, &all, None)
}

/// Loss over `batch` (indices into `samples`) and, when `grad` is given,
/// its parameter gradient written there.
pub fn baseline_batch(
    params: &MlpParams,
    ws: &mut MlpWorkspace,
    samples: &[AccelSample],
    batch: &[usize],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("baseline loss needs at least one sample"));
    }
    let n = samples[batch[0]].state.len();
    check_input(params, n)?;
    if let Some(g) = grad.as_deref_mut() {
        if g.len() != params.num_params() {
            return Err(Error::contract("gradient buffer has the wrong length"));
        }
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let terms = (batch.len() * 3 * n) as f64;
    let mut x = vec![0.0; 3 * n];
    let mut dv = vec![0.0; 3 * n];
    let mut u = vec![0.0; 3 * n];
    let mut sse = 0.0;
    for &b in batch {
        let s = &samples[b];
        if s.state.len() != n {
            return Err(Error::contract("all samples must have the same particle count"));
        }
        for (dst, src) in x.iter_mut().zip(s.state.positions.iter().flatten()) {
            *dst = *src;
        }
        ws.input_gradient(params, &x, &mut dv);
        for i in 0..n {
            let m = s.state.masses[i];
            for k in 0..3 {
                let e = -dv[3 * i + k] / m - s.accelerations[i][k];
                sse += e * e;
                // cotangent on ∂V/∂x
                u[3 * i + k] = -2.0 * e / (m * terms);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            // ∇_θ (u · ∇_x V) is the gradient of the directional derivative.
            ws.directional(params, &x, &u, false);
            ws.directional_vjp(params, 0.0, 1.0, g);
        }
    }
    let loss = sse / terms;
    if !loss.is_finite() {
        return Err(Error::numerical("baseline loss"));
    }
    if let Some(g) = grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("baseline loss gradient"));
        }
    }
    Ok(loss)
}
