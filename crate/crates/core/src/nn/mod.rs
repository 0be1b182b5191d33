//! Scalar-output multilayer perceptron with squareplus hidden activations,
//! plus the Adam optimizer.
//!
//! The network is available in two forms. [`mlp_eval`] is generic over
//! [`Real`] and is what the autodiff engine differentiates. [`MlpWorkspace`]
//! holds hand-fused `f64` kernels (directional derivatives and their
//! parameter pullbacks) used by the training loops; the generic path is the
//! oracle they are tested against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

mod batch;

pub use batch::ScalarBatch;

use crate::autodiff::{squareplus, Real};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [10, 10];

/// Weights are stored row-major, `weights[l][j * fan_in + k]` connecting
/// input `k` of layer `l` to output `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn check_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::contract("an MLP needs at least input and output sizes"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::contract(format!("zero-width layer in {layer_sizes:?}")));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::contract(format!(
            "output dimension must be 1, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// `[input, hidden.., 1]`
pub fn layer_sizes_for(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        })
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in params.weights.iter_mut().enumerate() {
            let bound = 1.0 / (layer_sizes[l] as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_layer_sizes(&self.layer_sizes)?;
        let n = self.layer_sizes.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::contract("layer count does not match layer_sizes"));
        }
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] || self.biases[l].len() != w[1] {
                return Err(Error::contract(format!("layer {l} has inconsistent shape")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        param_count(&self.layer_sizes)
    }

    /// Per layer: weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        params.set_flat(flat)?;
        Ok(params)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Network output at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = a.len();
            let mut next: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(j, &bj)| bj + dot_f64(&w[j * fan_in..(j + 1) * fan_in], &a))
                .collect();
            if l < last {
                next.iter_mut().for_each(|h| *h = squareplus(*h));
            }
            a = next;
        }
        let out = a[0];
        if !out.is_finite() {
            return Err(Error::numerical("mlp_forward"));
        }
        Ok(out)
    }
}

#[inline]
fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The network at any [`Real`] type, reading parameters from the flat layout
/// of [`MlpParams::to_flat`]. Panics on shape mismatch.
pub fn mlp_eval<S: Real>(layer_sizes: &[usize], flat: &[S], x: &[S]) -> S {
    assert_eq!(flat.len(), param_count(layer_sizes), "parameter count");
    assert_eq!(x.len(), layer_sizes[0], "input dimension");
    let mut a: Vec<S> = x.to_vec();
    let mut at = 0;
    let last = layer_sizes.len() - 2;
    for (l, w) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &flat[at..at + fan_in * fan_out];
        let biases = &flat[at + fan_in * fan_out..at + fan_in * fan_out + fan_out];
        at += fan_in * fan_out + fan_out;
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let mut h = biases[j];
            for k in 0..fan_in {
                h = h + weights[j * fan_in + k] * a[k];
            }
            next.push(if l < last { squareplus(h) } else { h });
        }
        a = next;
    }
    a[0]
}

/// Squareplus and its first two derivatives.
#[inline]
pub fn squareplus_derivs(x: f64) -> (f64, f64, f64) {
    let s = (x * x + 4.0).sqrt();
    (0.5 * (x + s), 0.5 * (1.0 + x / s), 2.0 / (s * s * s))
}

/// Value, first and second derivative along one input direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Directional {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// Scratch buffers for the fused `f64` kernels. One workspace per thread;
/// reusable across parameter updates with the same layer sizes.
#[derive(Clone, Debug)]
pub struct MlpWorkspace {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    // Inputs to each layer and their first and second tangents.
    acts: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
    curvs: Vec<Vec<f64>>,
    // Per hidden layer: tangent of the pre-activation, σ', σ''.
    pre_tan: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    g_act: Vec<f64>,
    g_tan: Vec<f64>,
    g_act_next: Vec<f64>,
    g_tan_next: Vec<f64>,
}

impl MlpWorkspace {
    pub fn new(layer_sizes: &[usize]) -> Self {
        let n = layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n);
        let mut at = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        let widest = *layer_sizes.iter().max().unwrap_or(&1);
        let inputs = |_: ()| -> Vec<Vec<f64>> {
            layer_sizes[..n].iter().map(|&s| vec![0.0; s]).collect()
        };
        let hidden = |_: ()| -> Vec<Vec<f64>> {
            layer_sizes[1..n].iter().map(|&s| vec![0.0; s]).collect()
        };
        MlpWorkspace {
            sizes: layer_sizes.to_vec(),
            offsets,
            acts: inputs(()),
            tans: inputs(()),
            curvs: inputs(()),
            pre_tan: hidden(()),
            d1: hidden(()),
            d2: hidden(()),
            g_act: vec![0.0; widest],
            g_tan: vec![0.0; widest],
            g_act_next: vec![0.0; widest],
            g_tan_next: vec![0.0; widest],
        }
    }

    fn check(&self, params: &MlpParams, x: &[f64], u: &[f64]) {
        assert_eq!(self.sizes, params.layer_sizes, "workspace built for other layer sizes");
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        assert_eq!(u.len(), self.sizes[0], "direction dimension");
    }

    /// Evaluates the network at `x` along direction `u`, keeping what
    /// [`Self::directional_vjp`] needs. `curvature` is only computed when
    /// `second` is set (it is reported as 0 otherwise).
    pub fn directional(
        &mut self,
        params: &MlpParams,
        x: &[f64],
        u: &[f64],
        second: bool,
    ) -> Directional {
        self.check(params, x, u);
        let n = self.sizes.len() - 1;
        self.acts[0].copy_from_slice(x);
        self.tans[0].copy_from_slice(u);
        self.curvs[0].iter_mut().for_each(|c| *c = 0.0);
        let mut out = Directional {
            value: 0.0,
            slope: 0.0,
            curvature: 0.0,
        };
        for l in 0..n {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let w = &params.weights[l];
            let b = &params.biases[l];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut h = b[j];
                let mut th = 0.0;
                let mut sh = 0.0;
                if second {
                    for k in 0..fan_in {
                        h += row[k] * self.acts[l][k];
                        th += row[k] * self.tans[l][k];
                        sh += row[k] * self.curvs[l][k];
                    }
                } else {
                    for k in 0..fan_in {
                        h += row[k] * self.acts[l][k];
                        th += row[k] * self.tans[l][k];
                    }
                }
                if l + 1 < n {
                    let (s0, s1, s2) = squareplus_derivs(h);
                    self.acts[l + 1][j] = s0;
                    self.tans[l + 1][j] = s1 * th;
                    if second {
                        self.curvs[l + 1][j] = s2 * th * th + s1 * sh;
                    }
                    self.pre_tan[l][j] = th;
                    self.d1[l][j] = s1;
                    self.d2[l][j] = s2;
                } else {
                    out = Directional {
                        value: h,
                        slope: th,
                        curvature: sh,
                    };
                }
            }
        }
        out
    }

    /// Accumulates into `grad` (flat layout) the parameter gradient of
    /// `cot_value · value + cot_slope · slope` from the last
    /// [`Self::directional`] call.
    pub fn directional_vjp(
        &mut self,
        params: &MlpParams,
        cot_value: f64,
        cot_slope: f64,
        grad: &mut [f64],
    ) {
        let n = self.sizes.len() - 1;
        debug_assert_eq!(grad.len(), param_count(&self.sizes));

        // Output layer.
        let l = n - 1;
        let fan_in = self.sizes[l];
        let off = self.offsets[l];
        let w = &params.weights[l];
        for k in 0..fan_in {
            grad[off + k] += cot_value * self.acts[l][k] + cot_slope * self.tans[l][k];
            self.g_act[k] = cot_value * w[k];
            self.g_tan[k] = cot_slope * w[k];
        }
        grad[off + fan_in] += cot_value;

        for l in (0..n - 1).rev() {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let off = self.offsets[l];
            let w = &params.weights[l];
            let propagate = l > 0;
            if propagate {
                self.g_act_next[..fan_in].iter_mut().for_each(|g| *g = 0.0);
                self.g_tan_next[..fan_in].iter_mut().for_each(|g| *g = 0.0);
            }
            for j in 0..fan_out {
                let gt = self.g_tan[j];
                let g_th = gt * self.d1[l][j];
                let g_h = gt * self.pre_tan[l][j] * self.d2[l][j] + self.g_act[j] * self.d1[l][j];
                grad[off + fan_in * fan_out + j] += g_h;
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let grow = &mut grad[off + j * fan_in..off + (j + 1) * fan_in];
                for k in 0..fan_in {
                    grow[k] += g_h * self.acts[l][k] + g_th * self.tans[l][k];
                }
                if propagate {
                    for k in 0..fan_in {
                        self.g_act_next[k] += row[k] * g_h;
                        self.g_tan_next[k] += row[k] * g_th;
                    }
                }
            }
            if propagate {
                std::mem::swap(&mut self.g_act, &mut self.g_act_next);
                std::mem::swap(&mut self.g_tan, &mut self.g_tan_next);
            }
        }
    }

    /// Network value and input gradient (written to `out`).
    pub fn input_gradient(&mut self, params: &MlpParams, x: &[f64], out: &mut [f64]) -> f64 {
        let zero_dir = vec![0.0; x.len()];
        let value = self.directional(params, x, &zero_dir, false).value;
        let n = self.sizes.len() - 1;
        let l = n - 1;
        let fan_in = self.sizes[l];
        self.g_act[..fan_in].copy_from_slice(&params.weights[l][..fan_in]);
        for l in (0..n - 1).rev() {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let w = &params.weights[l];
            self.g_act_next[..fan_in].iter_mut().for_each(|g| *g = 0.0);
            for j in 0..fan_out {
                let g_h = self.g_act[j] * self.d1[l][j];
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for k in 0..fan_in {
                    self.g_act_next[k] += row[k] * g_h;
                }
            }
            std::mem::swap(&mut self.g_act, &mut self.g_act_next);
        }
        out.copy_from_slice(&self.g_act[..x.len()]);
        value
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    /// Standard Adam defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: state for {} parameters, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical("adam_step gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}
