//! Single-layer unidirectional GRU, gate order `[reset, update, candidate]`:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use rand::Rng;

use super::{dot, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    /// `[3H, I]`
    pub w_ih: Tensor,
    /// `[3H, H]`
    pub w_hh: Tensor,
    /// `[3H]`
    pub b_ih: Tensor,
    /// `[3H]`
    pub b_hh: Tensor,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    inputs: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
    steps: usize,
}

impl GruCache {
    /// Hidden state after `k` steps, for `k < steps`.
    pub fn h_prev_at(&self, k: usize) -> Vec<f64> {
        let hd = self.h_prev.len() / self.steps.max(1);
        self.h_prev[k * hd..(k + 1) * hd].to_vec()
    }
}

impl Gru {
    /// Weights uniform in ±1/√H, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(&[3 * hidden, input], bound, rng),
            w_hh: Tensor::uniform(&[3 * hidden, hidden], bound, rng),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_ih: Tensor::zeros(&self.w_ih.shape),
            w_hh: Tensor::zeros(&self.w_hh.shape),
            b_ih: Tensor::zeros(&self.b_ih.shape),
            b_hh: Tensor::zeros(&self.b_hh.shape),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape[1]
    }

    fn affine(w: &Tensor, b: &Tensor, x: &[f64], out: &mut [f64]) {
        let cols = w.shape[1];
        for (row, o) in out.iter_mut().enumerate() {
            *o = b.data[row] + dot(&w.data[row * cols..(row + 1) * cols], x);
        }
    }

    /// Runs the sequence `xs` (`steps × input`, row-major) from `h = 0` and
    /// returns the final hidden state. Pass a cache to enable [`Gru::backward`].
    pub fn forward(&self, xs: &[f64], steps: usize, mut cache: Option<&mut GruCache>) -> Vec<f64> {
        let (hd, inp) = (self.hidden(), self.input());
        debug_assert_eq!(xs.len(), steps * inp);
        let mut h = vec![0.0; hd];
        let mut gi = vec![0.0; 3 * hd];
        let mut gh = vec![0.0; 3 * hd];
        if let Some(c) = cache.as_deref_mut() {
            *c = GruCache {
                inputs: xs.to_vec(),
                steps,
                ..Default::default()
            };
        }
        for t in 0..steps {
            let x = &xs[t * inp..(t + 1) * inp];
            Self::affine(&self.w_ih, &self.b_ih, x, &mut gi);
            Self::affine(&self.w_hh, &self.b_hh, &h, &mut gh);
            let mut next = vec![0.0; hd];
            for j in 0..hd {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[hd + j] + gh[hd + j]);
                let n = (gi[2 * hd + j] + r * gh[2 * hd + j]).tanh();
                next[j] = (1.0 - z) * n + z * h[j];
                if let Some(c) = cache.as_deref_mut() {
                    c.r.push(r);
                    c.z.push(z);
                    c.n.push(n);
                    c.hn.push(gh[2 * hd + j]);
                }
            }
            if let Some(c) = cache.as_deref_mut() {
                c.h_prev.extend_from_slice(&h);
            }
            h = next;
        }
        h
    }

    /// Backpropagates `dh_final` through the cached sequence, accumulating
    /// parameter gradients and returning the input-sequence gradient.
    pub fn backward(&self, cache: &GruCache, dh_final: &[f64], grad: &mut Gru) -> Vec<f64> {
        let (hd, inp) = (self.hidden(), self.input());
        let mut dxs = vec![0.0; cache.steps * inp];
        let mut dh = dh_final.to_vec();
        let mut dgi = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        for t in (0..cache.steps).rev() {
            let off = t * hd;
            let h_prev = &cache.h_prev[off..off + hd];
            let mut dh_prev = vec![0.0; hd];
            for j in 0..hd {
                let (r, z, n, hn) = (cache.r[off + j], cache.z[off + j], cache.n[off + j], cache.hn[off + j]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * hn;
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                dgi[j] = dr_pre;
                dgi[hd + j] = dz_pre;
                dgi[2 * hd + j] = dn_pre;
                dgh[j] = dr_pre;
                dgh[hd + j] = dz_pre;
                dgh[2 * hd + j] = dn_pre * r;
            }
            let x = &cache.inputs[t * inp..(t + 1) * inp];
            let dx = &mut dxs[t * inp..(t + 1) * inp];
            for row in 0..3 * hd {
                let (gi, gh) = (dgi[row], dgh[row]);
                grad.b_ih.data[row] += gi;
                grad.b_hh.data[row] += gh;
                if gi != 0.0 {
                    let w = &self.w_ih.data[row * inp..(row + 1) * inp];
                    let gw = &mut grad.w_ih.data[row * inp..(row + 1) * inp];
                    for c in 0..inp {
                        gw[c] += gi * x[c];
                        dx[c] += gi * w[c];
                    }
                }
                if gh != 0.0 {
                    let w = &self.w_hh.data[row * hd..(row + 1) * hd];
                    let gw = &mut grad.w_hh.data[row * hd..(row + 1) * hd];
                    for c in 0..hd {
                        gw[c] += gh * h_prev[c];
                        dh_prev[c] += gh * w[c];
                    }
                }
            }
            dh = dh_prev;
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Gru, Vec<f64>, usize) {
        let mut rng = crate::seed::rng(8, &[]);
        let mut g = Gru::init(3, 5, &mut rng);
        g.b_ih = Tensor::normal(&[15], 0.2, &mut rng);
        g.b_hh = Tensor::normal(&[15], 0.2, &mut rng);
        let steps = 6;
        let xs = (0..steps * 3).map(|i| (i as f64 * 0.53).sin()).collect();
        (g, xs, steps)
    }

    #[test]
    fn zero_input_zero_bias_stays_at_zero() {
        let mut rng = crate::seed::rng(1, &[]);
        let g = Gru::init(4, 128, &mut rng);
        let h = g.forward(&vec![0.0; 10 * 4], 10, None);
        assert_eq!(h.len(), 128);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_equals_fewer_steps() {
        let (g, xs, steps) = setup();
        let mut cache = GruCache::default();
        let full = g.forward(&xs, steps, Some(&mut cache));
        let direct = g.forward(&xs, steps, None);
        assert_eq!(full, direct);
        // running k steps equals the state after step k of a longer run
        for k in 1..steps {
            let trunc = g.forward(&xs[..k * 3], k, None);
            let longer = g.forward(&xs[..(k + 1) * 3], k + 1, Some(&mut cache));
            assert_eq!(cache.h_prev_at(k), trunc);
            assert_ne!(trunc, longer);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (g, xs, steps) = setup();
        let r: Vec<f64> = (0..5).map(|i| 1.0 - i as f64 * 0.3).collect();
        let loss = |g: &Gru, xs: &[f64]| dot(&g.forward(xs, steps, None), &r);
        let mut cache = GruCache::default();
        g.forward(&xs, steps, Some(&mut cache));
        let mut grad = g.zeros_like();
        let dxs = g.backward(&cache, &r, &mut grad);
        let eps = 1e-6;
        let check = |a: f64, fd: f64| assert!((a - fd).abs() < 1e-7 * (1.0 + fd.abs()), "{a} vs {fd}");
        for j in 0..xs.len() {
            let mut p = xs.clone();
            p[j] += eps;
            let mut m = xs.clone();
            m[j] -= eps;
            check(dxs[j], (loss(&g, &p) - loss(&g, &m)) / (2.0 * eps));
        }
        let fields: [fn(&mut Gru) -> &mut Tensor; 4] = [|g| &mut g.w_ih, |g| &mut g.w_hh, |g| &mut g.b_ih, |g| &mut g.b_hh];
        for field in fields {
            let n = field(&mut g.clone()).numel();
            for j in 0..n {
                let mut gp = g.clone();
                field(&mut gp).data[j] += eps;
                let mut gm = g.clone();
                field(&mut gm).data[j] -= eps;
                let fd = (loss(&gp, &xs) - loss(&gm, &xs)) / (2.0 * eps);
                check(field(&mut grad).data[j], fd);
            }
        }
    }
}
