//! Batched kernels for networks with a single input, laid out with the
//! batch as the innermost dimension so the loops vectorize. They compute
//! the same quantities as [`super::MlpWorkspace::directional`] with unit
//! direction, for many inputs at once.

use super::{squareplus_derivs, MlpParams};

/// Scratch for evaluating `f'(r)` and `f''(r)` of a scalar network over a
/// batch of inputs, and pulling cotangents on `f'` back to the parameters.
#[derive(Clone, Debug)]
pub struct ScalarBatch {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    capacity: usize,
    len: usize,
    // Per layer input: activations and their first/second derivatives in r.
    acts: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
    curvs: Vec<Vec<f64>>,
    // Per hidden layer: pre-activation derivative, σ', σ''.
    pre_tan: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    h: Vec<f64>,
    th: Vec<f64>,
    sh: Vec<f64>,
    g_act: Vec<f64>,
    g_tan: Vec<f64>,
    g_act_next: Vec<f64>,
    g_tan_next: Vec<f64>,
    g_h: Vec<f64>,
    g_th: Vec<f64>,
}

impl ScalarBatch {
    /// # Panics
    /// If the network input is not one-dimensional.
    pub fn new(layer_sizes: &[usize]) -> Self {
        assert_eq!(layer_sizes[0], 1, "batched kernels take a scalar input");
        let mut offsets = Vec::new();
        let mut at = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        let n = layer_sizes.len() - 1;
        ScalarBatch {
            sizes: layer_sizes.to_vec(),
            offsets,
            capacity: 0,
            len: 0,
            acts: vec![Vec::new(); n],
            tans: vec![Vec::new(); n],
            curvs: vec![Vec::new(); n],
            pre_tan: vec![Vec::new(); n - 1],
            d1: vec![Vec::new(); n - 1],
            d2: vec![Vec::new(); n - 1],
            h: Vec::new(),
            th: Vec::new(),
            sh: Vec::new(),
            g_act: Vec::new(),
            g_tan: Vec::new(),
            g_act_next: Vec::new(),
            g_tan_next: Vec::new(),
            g_h: Vec::new(),
            g_th: Vec::new(),
        }
    }

    /// Whether this scratch was built for `layer_sizes`.
    pub fn fits(&self, layer_sizes: &[usize]) -> bool {
        self.sizes == layer_sizes
    }

    fn reserve(&mut self, batch: usize) {
        self.len = batch;
        if batch <= self.capacity {
            return;
        }
        self.capacity = batch;
        let n = self.sizes.len() - 1;
        for l in 0..n {
            let m = self.sizes[l] * batch;
            self.acts[l].resize(m, 0.0);
            self.tans[l].resize(m, 0.0);
            self.curvs[l].resize(m, 0.0);
        }
        for l in 0..n - 1 {
            let m = self.sizes[l + 1] * batch;
            self.pre_tan[l].resize(m, 0.0);
            self.d1[l].resize(m, 0.0);
            self.d2[l].resize(m, 0.0);
        }
        let widest = *self.sizes.iter().max().unwrap();
        for buf in [
            &mut self.g_act,
            &mut self.g_tan,
            &mut self.g_act_next,
            &mut self.g_tan_next,
        ] {
            buf.resize(widest * batch, 0.0);
        }
        for buf in [&mut self.h, &mut self.th, &mut self.sh, &mut self.g_h, &mut self.g_th] {
            buf.resize(batch, 0.0);
        }
    }

    /// Writes `f'(r_b)` to `slope` and, when `curv` is given, `f''(r_b)`
    /// to it. With `curv` set the state needed by [`Self::slope_vjp`] is
    /// kept.
    pub fn eval(
        &mut self,
        params: &MlpParams,
        r: &[f64],
        slope: &mut [f64],
        mut curv: Option<&mut [f64]>,
    ) {
        assert_eq!(params.layer_sizes, self.sizes, "batch built for other layer sizes");
        let b = r.len();
        assert_eq!(slope.len(), b);
        self.reserve(b);
        let second = curv.is_some();
        let n = self.sizes.len() - 1;
        self.acts[0][..b].copy_from_slice(r);
        self.tans[0][..b].iter_mut().for_each(|t| *t = 1.0);
        self.curvs[0][..b].iter_mut().for_each(|c| *c = 0.0);
        for l in 0..n {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let w = &params.weights[l];
            let bias = &params.biases[l];
            for j in 0..fan_out {
                let h = &mut self.h[..b];
                let th = &mut self.th[..b];
                let sh = &mut self.sh[..b];
                h.iter_mut().for_each(|x| *x = bias[j]);
                th.iter_mut().for_each(|x| *x = 0.0);
                if second {
                    sh.iter_mut().for_each(|x| *x = 0.0);
                }
                for k in 0..fan_in {
                    let wk = w[j * fan_in + k];
                    let a = &self.acts[l][k * b..(k + 1) * b];
                    let t = &self.tans[l][k * b..(k + 1) * b];
                    for i in 0..b {
                        h[i] += wk * a[i];
                        th[i] += wk * t[i];
                    }
                    if second {
                        let c = &self.curvs[l][k * b..(k + 1) * b];
                        for i in 0..b {
                            sh[i] += wk * c[i];
                        }
                    }
                }
                if l + 1 < n {
                    let (acts, tans, curvs) = (
                        &mut self.acts[l + 1][j * b..(j + 1) * b],
                        &mut self.tans[l + 1][j * b..(j + 1) * b],
                        &mut self.curvs[l + 1][j * b..(j + 1) * b],
                    );
                    let (pt, d1, d2) = (
                        &mut self.pre_tan[l][j * b..(j + 1) * b],
                        &mut self.d1[l][j * b..(j + 1) * b],
                        &mut self.d2[l][j * b..(j + 1) * b],
                    );
                    for i in 0..b {
                        let (s0, s1, s2) = squareplus_derivs(h[i]);
                        acts[i] = s0;
                        tans[i] = s1 * th[i];
                        if second {
                            curvs[i] = s2 * th[i] * th[i] + s1 * sh[i];
                        }
                        pt[i] = th[i];
                        d1[i] = s1;
                        d2[i] = s2;
                    }
                } else {
                    slope.copy_from_slice(th);
                    if let Some(c) = curv.as_deref_mut() {
                        c.copy_from_slice(sh);
                    }
                }
            }
        }
    }

    /// Adds to `grad` (flat layout) the parameter gradient of
    /// `Σ_b cot[b] · f'(r_b)` for the batch of the last [`Self::eval`].
    pub fn slope_vjp(&mut self, params: &MlpParams, cot: &[f64], grad: &mut [f64]) {
        let b = self.len;
        assert_eq!(cot.len(), b);
        let n = self.sizes.len() - 1;

        let l = n - 1;
        let fan_in = self.sizes[l];
        let off = self.offsets[l];
        let w = &params.weights[l];
        for k in 0..fan_in {
            let t = &self.tans[l][k * b..(k + 1) * b];
            grad[off + k] += dot(cot, t);
            let gt = &mut self.g_tan[k * b..(k + 1) * b];
            let ga = &mut self.g_act[k * b..(k + 1) * b];
            for i in 0..b {
                gt[i] = cot[i] * w[k];
                ga[i] = 0.0;
            }
        }

        for l in (0..n - 1).rev() {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let off = self.offsets[l];
            let w = &params.weights[l];
            let propagate = l > 0;
            if propagate {
                self.g_act_next[..fan_in * b].iter_mut().for_each(|g| *g = 0.0);
                self.g_tan_next[..fan_in * b].iter_mut().for_each(|g| *g = 0.0);
            }
            for j in 0..fan_out {
                let s = j * b..(j + 1) * b;
                let (gt, ga) = (&self.g_tan[s.clone()], &self.g_act[s.clone()]);
                let (pt, d1, d2) = (&self.pre_tan[l][s.clone()], &self.d1[l][s.clone()], &self.d2[l][s]);
                let g_h = &mut self.g_h[..b];
                let g_th = &mut self.g_th[..b];
                for i in 0..b {
                    g_th[i] = gt[i] * d1[i];
                    g_h[i] = gt[i] * pt[i] * d2[i] + ga[i] * d1[i];
                }
                grad[off + fan_in * fan_out + j] += g_h.iter().sum::<f64>();
                for k in 0..fan_in {
                    let a = &self.acts[l][k * b..(k + 1) * b];
                    let t = &self.tans[l][k * b..(k + 1) * b];
                    grad[off + j * fan_in + k] += dot(g_h, a) + dot(g_th, t);
                    if propagate {
                        let wk = w[j * fan_in + k];
                        let na = &mut self.g_act_next[k * b..(k + 1) * b];
                        for i in 0..b {
                            na[i] += wk * g_h[i];
                        }
                        let nt = &mut self.g_tan_next[k * b..(k + 1) * b];
                        for i in 0..b {
                            nt[i] += wk * g_th[i];
                        }
                    }
                }
            }
            if propagate {
                std::mem::swap(&mut self.g_act, &mut self.g_act_next);
                std::mem::swap(&mut self.g_tan, &mut self.g_tan_next);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler keep several lanes busy.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpWorkspace;

    #[test]
    fn matches_single_kernels() {
        let p = MlpParams::init(&[1, 7, 5, 1], 11).unwrap();
        let r: Vec<f64> = (0..13).map(|i| 0.3 + 0.17 * i as f64).collect();
        let cot: Vec<f64> = (0..13).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut batch = ScalarBatch::new(&p.layer_sizes);
        let mut slope = vec![0.0; r.len()];
        let mut curv = vec![0.0; r.len()];
        batch.eval(&p, &r, &mut slope, Some(&mut curv));
        let mut g_batch = vec![0.0; p.num_params()];
        batch.slope_vjp(&p, &cot, &mut g_batch);

        let mut ws = MlpWorkspace::new(&p.layer_sizes);
        let mut g_single = vec![0.0; p.num_params()];
        for i in 0..r.len() {
            let d = ws.directional(&p, &[r[i]], &[1.0], true);
            assert!((d.slope - slope[i]).abs() < 1e-14);
            assert!((d.curvature - curv[i]).abs() < 1e-14);
            ws.directional_vjp(&p, 0.0, cot[i], &mut g_single);
        }
        for (a, b) in g_batch.iter().zip(&g_single) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn first_order_only() {
        let p = MlpParams::init(&[1, 4, 1], 2).unwrap();
        let mut batch = ScalarBatch::new(&p.layer_sizes);
        let mut slope = vec![0.0; 3];
        batch.eval(&p, &[0.5, 1.0, 2.0], &mut slope, None);
        let mut ws = MlpWorkspace::new(&p.layer_sizes);
        for (i, r) in [0.5, 1.0, 2.0].into_iter().enumerate() {
            assert!((ws.directional(&p, &[r], &[1.0], false).slope - slope[i]).abs() < 1e-15);
        }
        // shrinking batches reuse the buffers
        let mut one = vec![0.0; 1];
        batch.eval(&p, &[2.0], &mut one, None);
        assert_eq!(one[0], slope[2]);
    }
}
