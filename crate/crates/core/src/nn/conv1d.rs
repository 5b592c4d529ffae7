use rand::Rng;

use super::{axpy, gemm, Layout, Tensor};

/// Valid (unpadded) 1D convolution over a `[channels][length]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out, in, kernel]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv1d {
    /// He-normal weights (variance 2/fan_in), zero bias.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel) as f64;
        Self {
            weight: Tensor::normal(&[out_ch, in_ch, kernel], (2.0 / fan_in).sqrt(), rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(&self.weight.shape),
            bias: Tensor::zeros(&self.bias.shape),
            stride: self.stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn out_len(&self, l_in: usize) -> Option<usize> {
        (l_in >= self.kernel()).then(|| (l_in - self.kernel()) / self.stride + 1)
    }

    /// Unfolds `n` inputs of `[in][l_in]` into a `[in·kernel][n·l_out]` patch
    /// matrix.
    fn im2col(&self, x: &[f64], n: usize, l_in: usize, l_out: usize) -> Vec<f64> {
        let (c_in, k, s) = (self.in_channels(), self.kernel(), self.stride);
        let cols = n * l_out;
        let mut col = vec![0.0; c_in * k * cols];
        for i in 0..c_in {
            for q in 0..k {
                let row = &mut col[(i * k + q) * cols..(i * k + q + 1) * cols];
                for f in 0..n {
                    let xi = &x[(f * c_in + i) * l_in..(f * c_in + i + 1) * l_in];
                    let dst = &mut row[f * l_out..(f + 1) * l_out];
                    if s == 1 {
                        dst.copy_from_slice(&xi[q..q + l_out]);
                    } else {
                        dst.iter_mut().enumerate().for_each(|(t, d)| *d = xi[t * s + q]);
                    }
                }
            }
        }
        col
    }

    /// `x` holds `n` independent inputs of `[in][l_in]`; writes `n` outputs of
    /// `[out][l_out]` into `y`.
    pub fn forward(&self, x: &[f64], n: usize, l_in: usize, y: &mut Vec<f64>) -> usize {
        let (c_out, c_in, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let l_out = self.out_len(l_in).expect("input shorter than kernel");
        assert_eq!(x.len(), n * c_in * l_in, "conv1d input size");
        let cols = n * l_out;
        let col = self.im2col(x, n, l_in, l_out);
        let mut prod = vec![0.0; c_out * cols];
        let ck = c_in * k;
        gemm(c_out, ck, cols, 1.0, &self.weight.data, Layout::row_major(ck), &col, Layout::row_major(cols), 0.0, &mut prod, Layout::row_major(cols));
        y.clear();
        y.resize(n * c_out * l_out, 0.0);
        for f in 0..n {
            for o in 0..c_out {
                let b = self.bias.data[o];
                let src = &prod[o * cols + f * l_out..o * cols + (f + 1) * l_out];
                let dst = &mut y[(f * c_out + o) * l_out..(f * c_out + o + 1) * l_out];
                dst.iter_mut().zip(src).for_each(|(d, v)| *d = v + b);
            }
        }
        l_out
    }

    /// Accumulates parameter gradients into `grad` and, when given, the input
    /// gradient into `gx` (which must be zeroed by the caller).
    pub fn backward(&self, x: &[f64], n: usize, l_in: usize, gy: &[f64], grad: &mut Conv1d, gx: Option<&mut [f64]>) {
        let (c_out, c_in, k, s) = (self.out_channels(), self.in_channels(), self.kernel(), self.stride);
        let l_out = self.out_len(l_in).expect("input shorter than kernel");
        assert_eq!(gy.len(), n * c_out * l_out, "conv1d output gradient size");
        let cols = n * l_out;
        let ck = c_in * k;
        let mut g = vec![0.0; c_out * cols];
        for f in 0..n {
            for o in 0..c_out {
                g[o * cols + f * l_out..o * cols + (f + 1) * l_out]
                    .copy_from_slice(&gy[(f * c_out + o) * l_out..(f * c_out + o + 1) * l_out]);
            }
        }
        for o in 0..c_out {
            grad.bias.data[o] += g[o * cols..(o + 1) * cols].iter().sum::<f64>();
        }
        let col = self.im2col(x, n, l_in, l_out);
        gemm(c_out, cols, ck, 1.0, &g, Layout::row_major(cols), &col, Layout::transposed(cols), 1.0, &mut grad.weight.data, Layout::row_major(ck));
        if let Some(gx) = gx {
            let mut dcol = vec![0.0; ck * cols];
            gemm(ck, c_out, cols, 1.0, &self.weight.data, Layout::transposed(ck), &g, Layout::row_major(cols), 0.0, &mut dcol, Layout::row_major(cols));
            for i in 0..c_in {
                for q in 0..k {
                    let row = &dcol[(i * k + q) * cols..(i * k + q + 1) * cols];
                    for f in 0..n {
                        let gxi = &mut gx[(f * c_in + i) * l_in..(f * c_in + i + 1) * l_in];
                        let src = &row[f * l_out..(f + 1) * l_out];
                        if s == 1 {
                            axpy(1.0, src, &mut gxi[q..q + l_out]);
                        } else {
                            src.iter().enumerate().for_each(|(t, v)| gxi[t * s + q] += v);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(c: &Conv1d, x: &[f64], l_in: usize) -> Vec<f64> {
        let l_out = c.out_len(l_in).unwrap();
        let mut y = vec![0.0; c.out_channels() * l_out];
        for o in 0..c.out_channels() {
            for t in 0..l_out {
                let mut acc = c.bias.data[o];
                for i in 0..c.in_channels() {
                    for k in 0..c.kernel() {
                        acc += c.weight.data[(o * c.in_channels() + i) * c.kernel() + k] * x[i * l_in + t * c.stride + k];
                    }
                }
                y[o * l_out + t] = acc;
            }
        }
        y
    }

    #[test]
    fn matches_direct_sum_and_finite_differences() {
        let mut rng = crate::seed::rng(3, &[]);
        for stride in [1, 2, 3] {
            let mut c = Conv1d::init(2, 3, 4, stride, &mut rng);
            c.bias = Tensor::normal(&[3], 0.1, &mut rng);
            let (n, l_in) = (2, 13);
            let x: Vec<f64> = (0..n * 2 * l_in).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4).collect();
            let mut y = Vec::new();
            let l_out = c.forward(&x, n, l_in, &mut y);
            assert_eq!(l_out, (l_in - 4) / stride + 1);
            let direct_all: Vec<f64> = x.chunks(2 * l_in).flat_map(|xf| direct(&c, xf, l_in)).collect();
            assert_eq!(y.len(), direct_all.len());
            for (a, b) in y.iter().zip(&direct_all) {
                assert!((a - b).abs() < 1e-12);
            }

            // loss = sum(y * r) for a fixed r
            let r: Vec<f64> = (0..y.len()).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut g = c.zeros_like();
            let mut gx = vec![0.0; x.len()];
            c.backward(&x, n, l_in, &r, &mut g, Some(&mut gx));
            let loss = |c: &Conv1d, x: &[f64]| {
                let d: Vec<f64> = x.chunks(2 * l_in).flat_map(|xf| direct(c, xf, l_in)).collect();
                d.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let h = 1e-6;
            for j in 0..x.len() {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (loss(&c, &xp) - loss(&c, &xm)) / (2.0 * h);
                assert!((fd - gx[j]).abs() < 1e-7, "stride {stride} x[{j}]");
            }
            for j in 0..c.weight.numel() {
                let mut cp = c.clone();
                cp.weight.data[j] += h;
                let mut cm = c.clone();
                cm.weight.data[j] -= h;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
                assert!((fd - g.weight.data[j]).abs() < 1e-7);
            }
            for j in 0..3 {
                let mut cp = c.clone();
                cp.bias.data[j] += h;
                let mut cm = c.clone();
                cm.bias.data[j] -= h;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
                assert!((fd - g.bias.data[j]).abs() < 1e-7);
            }
        }
    }
}
