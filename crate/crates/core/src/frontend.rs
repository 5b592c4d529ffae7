//! Learnable raw-waveform filterbank: each 25 ms frame goes through its own
//! small 1D conv stack and is average-pooled to one feature vector, giving a
//! `T × C` feature sequence at 100 frames/s.

use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_inplace, Conv1d, Tensor};
use crate::seed;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self { window: 200, hop: 80 }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window {
            return Err(Error::Config(format!(
                "framing needs 0 < hop <= window (hop {}, window {})",
                self.hop, self.window
            )));
        }
        Ok(())
    }

    /// `floor((n - window) / hop) + 1`, or `None` when `n < window`.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.window).then(|| (n_samples - self.window) / self.hop + 1)
    }

    pub fn frame_rate(&self) -> f64 {
        crate::audio::SAMPLE_RATE as f64 / self.hop as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
}

/// Frames as a `count × window` row-major matrix. No window function is
/// applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub data: Vec<f64>,
    pub count: usize,
    pub window: usize,
}

impl Frames {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.window..(t + 1) * self.window]
    }
}

pub fn frame_signal(samples: &[f64], cfg: FramingConfig) -> Result<Frames> {
    cfg.validate()?;
    let count = cfg.frame_count(samples.len()).ok_or(Error::ShortInput {
        len: samples.len(),
        window: cfg.window,
    })?;
    let mut data = Vec::with_capacity(count * cfg.window);
    for t in 0..count {
        data.extend_from_slice(&samples[t * cfg.hop..t * cfg.hop + cfg.window]);
    }
    Ok(Frames {
        data,
        count,
        window: cfg.window,
    })
}

/// `frames × dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Time average of every feature.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for t in 0..self.frames {
            m.iter_mut().zip(self.row(t)).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.frames as f64);
        m
    }
}

/// Running per-feature statistics applied as a fixed affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Tensor,
    pub var: Tensor,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        let mut var = Tensor::zeros(&[dim]);
        var.fill(1.0);
        Self {
            mean: Tensor::zeros(&[dim]),
            var,
        }
    }

    fn inv_std(&self, c: usize) -> f64 {
        1.0 / (self.var.data[c] + NORM_EPS).sqrt()
    }

    /// Exponential update from raw (pre-normalization) features.
    pub fn update(&mut self, batch: &[&[f64]], dim: usize, momentum: f64) {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for raw in batch {
            for row in raw.chunks_exact(dim) {
                n += 1;
                for c in 0..dim {
                    sum[c] += row[c];
                    sq[c] += row[c] * row[c];
                }
            }
        }
        if n == 0 {
            return;
        }
        for c in 0..dim {
            let m = sum[c] / n as f64;
            let v = (sq[c] / n as f64 - m * m).max(0.0);
            self.mean.data[c] = (1.0 - momentum) * self.mean.data[c] + momentum * m;
            self.var.data[c] = (1.0 - momentum) * self.var.data[c] + momentum * v;
        }
        self.mean.round_f32();
        self.var.round_f32();
    }
}

/// The filterbank's learnable conv stack plus optional normalizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankParams {
    pub layers: Vec<Conv1d>,
    pub norm: Option<FeatureNorm>,
}

/// Activations kept for backpropagation: post-ReLU outputs of every layer
/// except the last, per frame.
#[derive(Debug, Clone)]
pub struct FrontendCache {
    acts: Vec<Vec<f64>>,
    /// Raw pooled features before normalization, `frames × dim`.
    pub raw: Vec<f64>,
}

/// Filterbank layers drawn with He-normal weights and zero biases.
pub fn init_filterbank(layers: &[ConvSpec], feature_norm: bool, seed: u64) -> FilterbankParams {
    let mut rng = seed::rng(seed, &[seed::tag("frontend")]);
    let mut in_ch = 1;
    let layers: Vec<Conv1d> = layers
        .iter()
        .map(|s| {
            let c = Conv1d::init(in_ch, s.channels, s.kernel, s.stride, &mut rng);
            in_ch = s.channels;
            c
        })
        .collect();
    FilterbankParams {
        norm: feature_norm.then(|| FeatureNorm::identity(in_ch)),
        layers,
    }
}

impl FilterbankParams {
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_channels()).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Conv1d::zeros_like).collect(),
            norm: self.norm.clone(),
        }
    }

    /// Per-layer output lengths for one frame of `window` samples.
    pub fn layer_lengths(&self, window: usize) -> Result<Vec<usize>> {
        let mut len = window;
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                len = l.out_len(len).ok_or_else(|| {
                    Error::Shape(format!("frontend.conv{i}: input length {len} shorter than kernel {}", l.kernel()))
                })?;
                Ok(len)
            })
            .collect()
    }

    fn check_frames(&self, frames: &Frames) -> Result<Vec<usize>> {
        if self.layers.is_empty() {
            return Err(Error::Shape("filterbank has no layers".into()));
        }
        if self.layers[0].in_channels() != 1 {
            return Err(Error::Shape("first filterbank layer must take one channel".into()));
        }
        self.layer_lengths(frames.window)
    }

    fn apply_norm(&self, raw: &[f64]) -> Vec<f64> {
        let dim = self.output_dim();
        match &self.norm {
            None => raw.to_vec(),
            Some(n) => raw
                .chunks_exact(dim)
                .flat_map(|row| row.iter().enumerate().map(|(c, v)| (v - n.mean.data[c]) * n.inv_std(c)))
                .collect(),
        }
    }

    fn run(&self, frames: &Frames, mut cache: Option<&mut FrontendCache>) -> Result<FeatureSequence> {
        let lens = self.check_frames(frames)?;
        let dim = self.output_dim();
        let n_layers = self.layers.len();
        let n = frames.count;
        // All frames go through each layer together, as `n × [channels][len]`.
        let mut cur = Vec::new();
        let mut len = frames.window;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { &frames.data } else { &cur };
            let mut next = Vec::new();
            len = layer.forward(input, n, len, &mut next);
            debug_assert_eq!(len, lens[l]);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow(format!("frontend.conv{l}")));
            }
            if l + 1 < n_layers {
                relu_inplace(&mut next);
                if let Some(c) = cache.as_deref_mut() {
                    c.acts[l].clone_from(&next);
                }
            }
            cur = next;
        }
        let raw: Vec<f64> = cur.chunks(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        debug_assert_eq!(raw.len(), n * dim);
        let values = self.apply_norm(&raw);
        if let Some(c) = cache {
            c.raw = raw;
        }
        Ok(FeatureSequence {
            values,
            frames: frames.count,
            dim,
            frame_rate: 0.0,
        })
    }

    pub fn forward(&self, frames: &Frames) -> Result<FeatureSequence> {
        self.run(frames, None)
    }

    pub fn forward_cached(&self, frames: &Frames) -> Result<(FeatureSequence, FrontendCache)> {
        let mut cache = FrontendCache {
            acts: vec![Vec::new(); self.layers.len().saturating_sub(1)],
            raw: Vec::new(),
        };
        let f = self.run(frames, Some(&mut cache))?;
        Ok((f, cache))
    }

    /// Accumulates parameter gradients given the gradient of the (normalized)
    /// feature matrix.
    pub fn backward(&self, frames: &Frames, cache: &FrontendCache, d_features: &[f64], grad: &mut FilterbankParams) {
        let lens = self.layer_lengths(frames.window).expect("validated in forward");
        let dim = self.output_dim();
        let n_layers = self.layers.len();
        let last_len = lens[n_layers - 1];
        let n = frames.count;
        let mut gy = Vec::with_capacity(n * dim * last_len);
        for gf in d_features.chunks(dim) {
            for (o, g) in gf.iter().enumerate() {
                let g = match &self.norm {
                    Some(norm) => g * norm.inv_std(o),
                    None => *g,
                };
                gy.extend(std::iter::repeat_n(g / last_len as f64, last_len));
            }
        }
        for l in (0..n_layers).rev() {
            if l == 0 {
                self.layers[0].backward(&frames.data, n, frames.window, &gy, &mut grad.layers[0], None);
            } else {
                let input = &cache.acts[l - 1];
                let mut gx = vec![0.0; input.len()];
                self.layers[l].backward(input, n, lens[l - 1], &gy, &mut grad.layers[l], Some(&mut gx));
                relu_backward(input, &mut gx);
                gy = gx;
            }
        }
    }
}

pub fn extract_features(samples: &[f64], framing: FramingConfig, params: &FilterbankParams) -> Result<FeatureSequence> {
    let frames = frame_signal(samples, framing)?;
    let mut f = params.forward(&frames)?;
    f.frame_rate = framing.frame_rate();
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layers() -> Vec<ConvSpec> {
        [(7, 16), (5, 32), (5, 32), (3, 40)]
            .into_iter()
            .map(|(kernel, channels)| ConvSpec { kernel, channels, stride: 1 })
            .collect()
    }

    fn mini_layers() -> Vec<ConvSpec> {
        vec![
            ConvSpec { kernel: 5, channels: 4, stride: 2 },
            ConvSpec { kernel: 3, channels: 4, stride: 1 },
        ]
    }

    #[test]
    fn framing_arithmetic() {
        let cfg = FramingConfig::default();
        let f = frame_signal(&vec![0.1; 40_000], cfg).unwrap();
        assert_eq!(f.count, 498);
        assert_eq!(frame_signal(&vec![0.0; 200], cfg).unwrap().count, 1);
        let err = frame_signal(&vec![0.0; 199], cfg).unwrap_err();
        assert!(err.to_string().contains("input shorter than one frame"));
        let c = frame_signal(&vec![0.3; 1000], cfg).unwrap();
        assert!((1..c.count).all(|t| c.frame(t) == c.frame(0)));
        assert!(FramingConfig { window: 10, hop: 11 }.validate().is_err());
    }

    #[test]
    fn shape_and_zero_input() {
        let p = init_filterbank(&default_layers(), false, 1);
        let frames = frame_signal(&vec![0.0; 40_000], FramingConfig::default()).unwrap();
        let f = p.forward(&frames).unwrap();
        assert_eq!((f.frames, f.dim), (498, 40));
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_determinism_and_variance() {
        let a = init_filterbank(&default_layers(), false, 4);
        assert_eq!(a, init_filterbank(&default_layers(), false, 4));
        assert_ne!(a, init_filterbank(&default_layers(), false, 5));
        // layer 2: 32 x 32 x 5 = 5120 weights; use a wider layer for >= 10^4
        let wide = init_filterbank(
            &[ConvSpec { kernel: 5, channels: 40, stride: 1 }, ConvSpec { kernel: 5, channels: 50, stride: 1 }],
            false,
            9,
        );
        let w = &wide.layers[1].weight.data;
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / (40.0 * 5.0);
        assert!((var / target - 1.0).abs() < 0.2, "variance {var} vs {target}");
    }

    #[test]
    fn frame_locality() {
        let p = init_filterbank(&mini_layers(), false, 2);
        let samples: Vec<f64> = (0..16 * 6).map(|i| (i as f64 * 0.3).sin()).collect();
        let cfg = FramingConfig { window: 16, hop: 16 };
        let frames = frame_signal(&samples, cfg).unwrap();
        let f = p.forward(&frames).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted: Vec<f64> = perm.iter().flat_map(|&t| frames.frame(t).to_vec()).collect();
        let g = p.forward(&frame_signal(&permuted, cfg).unwrap()).unwrap();
        for (i, &t) in perm.iter().enumerate() {
            assert_eq!(g.row(i), f.row(t));
        }
    }

    #[test]
    fn homogeneous_without_bias() {
        let p = init_filterbank(&default_layers(), false, 3);
        let samples: Vec<f64> = (0..400).map(|i| (i as f64 * 0.21).sin() * 0.4).collect();
        let doubled: Vec<f64> = samples.iter().map(|x| 2.0 * x).collect();
        let cfg = FramingConfig::default();
        let a = extract_features(&samples, cfg, &p).unwrap();
        let b = extract_features(&doubled, cfg, &p).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn overflow_is_reported_with_layer() {
        let mut p = init_filterbank(&mini_layers(), false, 2);
        p.layers[1].weight.fill(f64::MAX);
        let frames = frame_signal(&[1.0; 32], FramingConfig { window: 16, hop: 8 }).unwrap();
        let err = p.forward(&frames).unwrap_err();
        assert!(err.to_string().contains("frontend.conv1"), "{err}");
    }
}
