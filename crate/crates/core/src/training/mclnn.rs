//! The trajectory loss of the pairwise model and its parameter gradient.
//!
//! Two independent routes compute the gradient:
//!
//! - [`MclnnObjective`] runs batched `f64` kernels forward through the
//!   velocity-Verlet rollout and then a hand-written discrete adjoint back
//!   through it. Training uses this one.
//! - [`MclnnLossFn`] writes the same rollout over a generic [`Real`] with the
//!   pair force taken by forward-mode differentiation of the network, so
//!   [`crate::autodiff::nested_grad`] can differentiate it end to end.

use crate::autodiff::{Dual, Real, ScalarFn};
use crate::error::{Error, Result};
use crate::lagrangian::{pairs, PairIndex, Trajectory};
use crate::nn::{mlp_eval, MlpParams, ScalarBatch};

/// A trajectory unpacked into flat buffers: start state, per-record target
/// positions, masses and integration settings.
#[derive(Clone, Debug)]
struct FlatTrajectory {
    masses: Vec<f64>,
    q0: Vec<f64>,
    v0: Vec<f64>,
    /// Positions at records 1.., each `3N` long.
    targets: Vec<Vec<f64>>,
    dt: f64,
    substeps: usize,
}

fn flatten(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

impl FlatTrajectory {
    fn new(traj: &Trajectory) -> Result<Self> {
        traj.validate()?;
        let first = &traj.states[0];
        Ok(FlatTrajectory {
            masses: first.masses.clone(),
            q0: flatten(&first.positions),
            v0: flatten(&first.velocities),
            targets: traj.states[1..].iter().map(|s| flatten(&s.positions)).collect(),
            dt: traj.dt(),
            substeps: traj.substeps,
        })
    }

    fn n_terms(&self) -> usize {
        self.targets.len() * self.q0.len()
    }

    /// Trajectories with equal keys can be integrated in lockstep.
    fn key(&self) -> (u64, usize, usize) {
        (self.dt.to_bits(), self.substeps, self.targets.len())
    }
}

/// Evaluates `mclnn_loss` and its gradient for a fixed set of trajectories.
/// Trajectories that share step size, stride and length are integrated
/// together so every network evaluation is batched.
#[derive(Clone, Debug)]
pub struct MclnnObjective {
    trajectories: Vec<FlatTrajectory>,
    pairs: Vec<PairIndex>,
    n_terms: usize,
    batch: Option<ScalarBatch>,
    scratch: Scratch,
}

#[derive(Clone, Debug, Default)]
struct Scratch {
    q: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    qs: Vec<f64>,
    sse: Vec<f64>,
    d: Vec<f64>,
    r: Vec<f64>,
    slope: Vec<f64>,
    curv: Vec<f64>,
    cot: Vec<f64>,
    cq: Vec<f64>,
    cv: Vec<f64>,
    ca: Vec<f64>,
    ca_total: Vec<f64>,
}

impl MclnnObjective {
    pub fn new(trajectories: &[Trajectory]) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::contract("loss needs at least one trajectory"));
        }
        let n = trajectories[0].n_particles();
        if trajectories.iter().any(|t| t.n_particles() != n) {
            return Err(Error::contract("all trajectories must have the same particle count"));
        }
        let flat = trajectories
            .iter()
            .map(FlatTrajectory::new)
            .collect::<Result<Vec<_>>>()?;
        let n_terms = flat.iter().map(FlatTrajectory::n_terms).sum();
        Ok(MclnnObjective {
            trajectories: flat,
            pairs: pairs(n).collect(),
            n_terms,
            batch: None,
            scratch: Scratch::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Number of squared position errors the full loss averages over.
    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    fn prepare(&mut self, params: &MlpParams) -> Result<()> {
        params.validate()?;
        if params.input_dim() != 1 {
            return Err(Error::contract("pair network must take a single distance"));
        }
        if self.batch.as_ref().is_none_or(|b| !b.fits(&params.layer_sizes)) {
            self.batch = Some(ScalarBatch::new(&params.layer_sizes));
        }
        Ok(())
    }

    /// Mean squared position error over every trajectory, record after the
    /// first, particle and coordinate.
    pub fn loss(&mut self, params: &MlpParams) -> Result<f64> {
        self.prepare(params)?;
        let all: Vec<usize> = (0..self.trajectories.len()).collect();
        let sse = self.run(&all, params, None)?;
        Ok(sse / self.n_terms as f64)
    }

    /// Loss and its gradient, written to `grad` in the flat parameter
    /// layout.
    pub fn loss_and_grad(&mut self, params: &MlpParams, grad: &mut [f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.trajectories.len()).collect();
        self.subset_loss_and_grad(&all, params, grad)
    }

    /// As [`Self::loss_and_grad`] restricted to the trajectories `subset`
    /// and averaged over their terms only.
    pub fn subset_loss_and_grad(
        &mut self,
        subset: &[usize],
        params: &MlpParams,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.prepare(params)?;
        if grad.len() != params.num_params() {
            return Err(Error::contract("gradient buffer has the wrong length"));
        }
        if let Some(&bad) = subset.iter().find(|&&t| t >= self.trajectories.len()) {
            return Err(Error::contract(format!("no trajectory {bad}")));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let terms: usize = subset.iter().map(|&t| self.trajectories[t].n_terms()).sum();
        if terms == 0 {
            return Ok(0.0);
        }
        let scale = 1.0 / terms as f64;
        let sse = self.run(subset, params, Some((scale, grad)))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical("loss gradient"));
        }
        Ok(sse * scale)
    }

    /// Total squared error over `subset`, grouped into lockstep batches.
    fn run(
        &mut self,
        subset: &[usize],
        params: &MlpParams,
        mut grad: Option<(f64, &mut [f64])>,
    ) -> Result<f64> {
        let mut groups: Vec<((u64, usize, usize), Vec<usize>)> = Vec::new();
        for &t in subset {
            let key = self.trajectories[t].key();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, ids)) => ids.push(t),
                None => groups.push((key, vec![t])),
            }
        }
        let mut total = 0.0;
        for (_, ids) in &groups {
            let g = grad.as_mut().map(|(s, g)| (*s, &mut **g));
            total += self.lockstep(ids, params, g)?;
        }
        Ok(total)
    }

    /// Integrates the trajectories `ids` together; returns their summed
    /// squared error and, with `grad`, adds `scale ·` its gradient.
    fn lockstep(
        &mut self,
        ids: &[usize],
        params: &MlpParams,
        grad: Option<(f64, &mut [f64])>,
    ) -> Result<f64> {
        let first = &self.trajectories[ids[0]];
        let (h, substeps, records) = (first.dt, first.substeps, first.targets.len());
        let dim = first.q0.len();
        let nb = ids.len();
        let np = self.pairs.len();
        let steps = substeps * records;
        let keep = grad.is_some();
        let batch = self.batch.as_mut().expect("prepared");
        let s = &mut self.scratch;
        let trajs = &self.trajectories;
        let pairs = &self.pairs;

        s.q.clear();
        s.v.clear();
        for &t in ids {
            s.q.extend_from_slice(&trajs[t].q0);
            s.v.extend_from_slice(&trajs[t].v0);
        }
        s.a.resize(nb * dim, 0.0);
        s.sse.clear();
        s.sse.resize(nb, 0.0);
        s.d.resize(nb * np * 3, 0.0);
        s.r.resize(nb * np, 0.0);
        s.slope.resize(nb * np, 0.0);
        s.curv.resize(nb * np, 0.0);
        s.cot.resize(nb * np, 0.0);
        s.qs.clear();
        if keep {
            s.qs.reserve((steps + 1) * nb * dim);
            s.qs.extend_from_slice(&s.q);
        }

        let fail = |b: usize, e: Error| Error::Trajectory {
            index: ids[b],
            source: Box::new(e),
        };

        forces(batch, params, pairs, ids, trajs, &s.q, &mut s.d, &mut s.r, &mut s.slope, None, &mut s.a)
            .map_err(|(b, e)| fail(b, e))?;
        for step in 1..=steps {
            for k in 0..nb * dim {
                s.v[k] += 0.5 * h * s.a[k];
                s.q[k] += h * s.v[k];
            }
            forces(batch, params, pairs, ids, trajs, &s.q, &mut s.d, &mut s.r, &mut s.slope, None, &mut s.a)
                .map_err(|(b, e)| fail(b, e))?;
            for k in 0..nb * dim {
                s.v[k] += 0.5 * h * s.a[k];
            }
            if keep {
                s.qs.extend_from_slice(&s.q);
            }
            if step % substeps == 0 {
                let rec = step / substeps - 1;
                for (b, &t) in ids.iter().enumerate() {
                    let target = &trajs[t].targets[rec];
                    let q = &s.q[b * dim..(b + 1) * dim];
                    s.sse[b] += q.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                }
            }
        }
        if let Some(b) = s.sse.iter().position(|e| !e.is_finite()) {
            return Err(fail(b, Error::numerical("trajectory loss")));
        }
        let total: f64 = s.sse.iter().sum();

        let Some((scale, grad)) = grad else {
            return Ok(total);
        };

        // Backward: cq, cv, ca are the cotangents of q_k, v_k and a_k.
        for buf in [&mut s.cq, &mut s.cv, &mut s.ca, &mut s.ca_total] {
            buf.clear();
            buf.resize(nb * dim, 0.0);
        }
        let qs = std::mem::take(&mut s.qs);
        let mut ca_total = std::mem::take(&mut s.ca_total);
        for step in (1..=steps).rev() {
            let qk = &qs[step * nb * dim..(step + 1) * nb * dim];
            if step % substeps == 0 {
                let rec = step / substeps - 1;
                for (b, &t) in ids.iter().enumerate() {
                    let target = &trajs[t].targets[rec];
                    for k in 0..dim {
                        s.cq[b * dim + k] += 2.0 * scale * (qk[b * dim + k] - target[k]);
                    }
                }
            }
            // a_k feeds the half kick ending this step and the one starting
            // the next.
            for k in 0..nb * dim {
                ca_total[k] = s.ca[k] + 0.5 * h * s.cv[k];
            }
            force_vjp(batch, params, pairs, ids, trajs, qk, &ca_total, s, grad, true);
            // v_half = v_{k-1} + h/2 a_{k-1}, q_k = q_{k-1} + h v_half
            for k in 0..nb * dim {
                let c_half = s.cv[k] + h * s.cq[k];
                s.cv[k] = c_half;
                s.ca[k] = 0.5 * h * c_half;
            }
        }
        // a_0 only depends on the parameters, the start positions are data.
        let ca = std::mem::take(&mut s.ca);
        force_vjp(batch, params, pairs, ids, trajs, &qs[..nb * dim], &ca, s, grad, false);
        s.ca = ca;
        s.qs = qs;
        s.ca_total = ca_total;
        Ok(total)
    }
}

/// Separation vectors, distances and network slopes for every pair of
/// every batched trajectory, then the resulting accelerations in `a`.
/// Errors carry the batch position of the offending trajectory.
#[allow(clippy::too_many_arguments)]
fn forces(
    batch: &mut ScalarBatch,
    params: &MlpParams,
    pairs: &[PairIndex],
    ids: &[usize],
    trajs: &[FlatTrajectory],
    q: &[f64],
    d: &mut [f64],
    r: &mut [f64],
    slope: &mut [f64],
    curv: Option<&mut [f64]>,
    a: &mut [f64],
) -> std::result::Result<(), (usize, Error)> {
    let np = pairs.len();
    let dim = q.len() / ids.len();
    for b in 0..ids.len() {
        let qb = &q[b * dim..(b + 1) * dim];
        for (p, pair) in pairs.iter().enumerate() {
            let (i, j) = (3 * pair.i, 3 * pair.j);
            let at = b * np + p;
            let dx = [qb[i] - qb[j], qb[i + 1] - qb[j + 1], qb[i + 2] - qb[j + 2]];
            let rr = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
            if rr == 0.0 || !rr.is_finite() {
                return Err((
                    b,
                    Error::numerical(format!(
                        "pair direction: particles {} and {} coincide or diverged",
                        pair.i, pair.j
                    )),
                ));
            }
            d[3 * at..3 * at + 3].copy_from_slice(&dx);
            r[at] = rr;
        }
    }
    batch.eval(params, r, slope, curv);
    a.iter_mut().for_each(|x| *x = 0.0);
    for (b, &t) in ids.iter().enumerate() {
        let m = &trajs[t].masses;
        let ab = &mut a[b * dim..(b + 1) * dim];
        for (p, pair) in pairs.iter().enumerate() {
            let at = b * np + p;
            let f = -slope[at] / r[at];
            let (i, j) = (3 * pair.i, 3 * pair.j);
            for k in 0..3 {
                let fk = f * d[3 * at + k];
                ab[i + k] += fk / m[pair.i];
                ab[j + k] -= fk / m[pair.j];
            }
        }
    }
    if let Some(bad) = (0..ids.len()).find(|&b| a[b * dim..(b + 1) * dim].iter().any(|x| !x.is_finite())) {
        return Err((bad, Error::numerical("pair accelerations")));
    }
    Ok(())
}

/// Pulls the cotangent `ca` of the accelerations at `q` back onto the
/// parameters (added to `grad`) and, if `to_positions`, onto the positions
/// (added to `s.cq`).
#[allow(clippy::too_many_arguments)]
fn force_vjp(
    batch: &mut ScalarBatch,
    params: &MlpParams,
    pairs: &[PairIndex],
    ids: &[usize],
    trajs: &[FlatTrajectory],
    q: &[f64],
    ca: &[f64],
    s: &mut Scratch,
    grad: &mut [f64],
    to_positions: bool,
) {
    let np = pairs.len();
    let dim = q.len() / ids.len();
    // Positions were already validated on the forward pass.
    for b in 0..ids.len() {
        let qb = &q[b * dim..(b + 1) * dim];
        for (p, pair) in pairs.iter().enumerate() {
            let (i, j) = (3 * pair.i, 3 * pair.j);
            let at = b * np + p;
            let dx = [qb[i] - qb[j], qb[i + 1] - qb[j + 1], qb[i + 2] - qb[j + 2]];
            s.r[at] = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
            s.d[3 * at..3 * at + 3].copy_from_slice(&dx);
        }
    }
    batch.eval(params, &s.r, &mut s.slope, Some(&mut s.curv));
    for (b, &t) in ids.iter().enumerate() {
        let m = &trajs[t].masses;
        let cb = &ca[b * dim..(b + 1) * dim];
        for (p, pair) in pairs.iter().enumerate() {
            let at = b * np + p;
            let (i, j) = (3 * pair.i, 3 * pair.j);
            let r = s.r[at];
            let u = [s.d[3 * at] / r, s.d[3 * at + 1] / r, s.d[3 * at + 2] / r];
            // a_i = -f u / m_i and a_j = f u / m_j with f = V'(r)
            let mu = [
                -cb[i] / m[pair.i] + cb[j] / m[pair.j],
                -cb[i + 1] / m[pair.i] + cb[j + 1] / m[pair.j],
                -cb[i + 2] / m[pair.i] + cb[j + 2] / m[pair.j],
            ];
            let u_mu = u[0] * mu[0] + u[1] * mu[1] + u[2] * mu[2];
            s.cot[at] = u_mu;
            if to_positions {
                let (f, fp) = (s.slope[at], s.curv[at]);
                // ∂/∂d [f(r) u·μ] = f' (u·μ) u + (f/r)(μ − (u·μ) u)
                let cq = &mut s.cq[b * dim..(b + 1) * dim];
                for k in 0..3 {
                    let g = fp * u_mu * u[k] + f / r * (mu[k] - u_mu * u[k]);
                    cq[i + k] += g;
                    cq[j + k] -= g;
                }
            }
        }
    }
    batch.slope_vjp(params, &s.cot, grad);
}

/// `mclnn_loss` at parameters `params` (fused forward pass).
pub fn mclnn_loss(params: &MlpParams, trajectories: &[Trajectory]) -> Result<f64> {
    MclnnObjective::new(trajectories)?.loss(params)
}

/// The trajectory loss as a generic function of the flat parameter vector.
/// Each pair force is `-∂V/∂r` computed in forward mode inside the rollout,
/// so evaluating at tape variables differentiates through the whole
/// simulation.
pub struct MclnnLossFn<'a> {
    pub layer_sizes: &'a [usize],
    pub trajectories: &'a [Trajectory],
}

impl ScalarFn for MclnnLossFn<'_> {
    fn eval<S: Real>(&self, theta: &[S]) -> S {
        let lifted: Vec<Dual<S>> = theta.iter().map(|&w| Dual::lift(w)).collect();
        let slope = |r: S| -> S {
            mlp_eval(self.layer_sizes, &lifted, &[Dual::variable(r)]).eps
        };
        let mut sse = S::zero();
        let mut terms = 0usize;
        for traj in self.trajectories {
            let first = &traj.states[0];
            let n = first.len();
            let m = &first.masses;
            let mut q: Vec<S> = first.positions.iter().flatten().map(|&x| S::constant(x)).collect();
            let mut v: Vec<S> = first.velocities.iter().flatten().map(|&x| S::constant(x)).collect();
            let h = traj.dt();
            let accel = |q: &[S]| -> Vec<S> {
                let mut a = vec![S::zero(); 3 * n];
                for p in pairs(n) {
                    let d: Vec<S> = (0..3).map(|k| q[3 * p.i + k] - q[3 * p.j + k]).collect();
                    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let f = -slope(r) / r;
                    for k in 0..3 {
                        a[3 * p.i + k] = a[3 * p.i + k] + (f * d[k]).scale(1.0 / m[p.i]);
                        a[3 * p.j + k] = a[3 * p.j + k] - (f * d[k]).scale(1.0 / m[p.j]);
                    }
                }
                a
            };
            let mut a = accel(&q);
            for target in &traj.states[1..] {
                for _ in 0..traj.substeps {
                    for k in 0..3 * n {
                        v[k] = v[k] + a[k].scale(0.5 * h);
                        q[k] = q[k] + v[k].scale(h);
                    }
                    a = accel(&q);
                    for k in 0..3 * n {
                        v[k] = v[k] + a[k].scale(0.5 * h);
                    }
                }
                for (k, x) in target.positions.iter().flatten().enumerate() {
                    let e = q[k].offset(-x);
                    sse = sse + e * e;
                    terms += 1;
                }
            }
        }
        sse.scale(1.0 / terms as f64)
    }
}
