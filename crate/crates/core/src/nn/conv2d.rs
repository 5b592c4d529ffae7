use rand::Rng;

use super::{gemm, Layout, Tensor};

/// Zero-padded 2D convolution over a `[channels][height][width]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out, in, kh, kw]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    pub fn init<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel.0 * kernel.1) as f64;
        Self {
            weight: Tensor::normal(&[out_ch, in_ch, kernel.0, kernel.1], (2.0 / fan_in).sqrt(), rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(&self.weight.shape),
            bias: Tensor::zeros(&self.bias.shape),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape[2], self.weight.shape[3])
    }

    fn out_dim(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        (n + 2 * p >= k).then(|| (n + 2 * p - k) / s + 1)
    }

    pub fn out_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        Some((
            Self::out_dim(h, kh, self.stride.0, self.padding.0)?,
            Self::out_dim(w, kw, self.stride.1, self.padding.1)?,
        ))
    }

    /// Unfolds `[in][h][w]` into a zero-padded `[in·kh·kw][ho·wo]` patch
    /// matrix; `scatter` runs the inverse, adding patches back into `x`.
    fn unfold(&self, (h, w): (usize, usize), (ho, wo): (usize, usize), mut visit: impl FnMut(usize, usize)) {
        let (kh, kw) = self.kernel();
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let cols = ho * wo;
        for i in 0..self.in_channels() {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((i * kh + dh) * kw + dw) * cols;
                    for oh in 0..ho {
                        let ih = (oh * sh + dh) as isize - ph as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let base = (i * h + ih as usize) * w;
                        for ow in 0..wo {
                            let iw = (ow * sw + dw) as isize - pw as isize;
                            if iw >= 0 && iw < w as isize {
                                visit(row + oh * wo + ow, base + iw as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], hw: (usize, usize), out: (usize, usize)) -> Vec<f64> {
        let (kh, kw) = self.kernel();
        let mut col = vec![0.0; self.in_channels() * kh * kw * out.0 * out.1];
        self.unfold(hw, out, |c, i| col[c] = x[i]);
        col
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize, y: &mut Vec<f64>) -> (usize, usize) {
        let (ho, wo) = self.out_shape(h, w).expect("input smaller than kernel");
        let (c_out, c_in) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.kernel();
        assert_eq!(x.len(), c_in * h * w, "conv2d input size");
        let (cols, ck) = (ho * wo, c_in * kh * kw);
        let col = self.im2col(x, (h, w), (ho, wo));
        y.clear();
        y.resize(c_out * cols, 0.0);
        for o in 0..c_out {
            y[o * cols..(o + 1) * cols].fill(self.bias.data[o]);
        }
        gemm(c_out, ck, cols, 1.0, &self.weight.data, Layout::row_major(ck), &col, Layout::row_major(cols), 1.0, y, Layout::row_major(cols));
        (ho, wo)
    }

    pub fn backward(&self, x: &[f64], h: usize, w: usize, gy: &[f64], grad: &mut Conv2d, gx: Option<&mut [f64]>) {
        let (ho, wo) = self.out_shape(h, w).expect("input smaller than kernel");
        let (c_out, c_in) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.kernel();
        let (cols, ck) = (ho * wo, c_in * kh * kw);
        assert_eq!(gy.len(), c_out * cols, "conv2d output gradient size");
        for o in 0..c_out {
            grad.bias.data[o] += gy[o * cols..(o + 1) * cols].iter().sum::<f64>();
        }
        let col = self.im2col(x, (h, w), (ho, wo));
        gemm(c_out, cols, ck, 1.0, gy, Layout::row_major(cols), &col, Layout::transposed(cols), 1.0, &mut grad.weight.data, Layout::row_major(ck));
        if let Some(gx) = gx {
            let mut dcol = vec![0.0; ck * cols];
            gemm(ck, c_out, cols, 1.0, &self.weight.data, Layout::transposed(ck), gy, Layout::row_major(cols), 0.0, &mut dcol, Layout::row_major(cols));
            self.unfold((h, w), (ho, wo), |c, i| gx[i] += dcol[c]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dot;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(5, &[]);
        let mut c = Conv2d::init(2, 3, (3, 3), (2, 2), (1, 1), &mut rng);
        c.bias = Tensor::normal(&[3], 0.1, &mut rng);
        let (h, w) = (7, 6);
        let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let mut y = Vec::new();
        let (ho, wo) = c.forward(&x, h, w, &mut y);
        assert_eq!((ho, wo), (4, 3));
        let r: Vec<f64> = (0..y.len()).map(|i| (i as f64 * 0.71).cos()).collect();
        let loss = |c: &Conv2d, x: &[f64]| {
            let mut y = Vec::new();
            c.forward(x, h, w, &mut y);
            dot(&y, &r)
        };
        let mut g = c.zeros_like();
        let mut gx = vec![0.0; x.len()];
        c.backward(&x, h, w, &r, &mut g, Some(&mut gx));
        let eps = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += eps;
            let mut xm = x.clone();
            xm[j] -= eps;
            assert!(((loss(&c, &xp) - loss(&c, &xm)) / (2.0 * eps) - gx[j]).abs() < 1e-7);
        }
        for j in 0..c.weight.numel() {
            let mut cp = c.clone();
            cp.weight.data[j] += eps;
            let mut cm = c.clone();
            cm.weight.data[j] -= eps;
            assert!(((loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps) - g.weight.data[j]).abs() < 1e-7);
        }
        for j in 0..3 {
            let mut cp = c.clone();
            cp.bias.data[j] += eps;
            let mut cm = c.clone();
            cm.bias.data[j] -= eps;
            assert!(((loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps) - g.bias.data[j]).abs() < 1e-7);
        }
    }
}
