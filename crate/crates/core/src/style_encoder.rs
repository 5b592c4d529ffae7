//! Style-token prosody encoder: a strided 2D conv stack over the feature map,
//! a GRU summarizing the downsampled time axis, and single-head attention
//! over a learnable bank of style tokens.

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::nn::{dot, relu_backward, relu_inplace, Conv2d, Gru, GruCache, Tensor};
use crate::seed;

/// Fewest feature frames the reference encoder accepts.
pub const MIN_FRAMES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RefEncoderParams {
    pub convs: Vec<Conv2d>,
    pub gru: Gru,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleTokenBank {
    /// `[n_tokens, dim]`
    pub tokens: Tensor,
}

/// Softmax attention over the token bank.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding {
    pub vector: Vec<f64>,
    pub weights: AttentionWeights,
}

/// Spatial size after each 3×3, stride-2, pad-1 layer.
fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

impl RefEncoderParams {
    /// 3×3 stride-2 convs with the given channel counts feeding a GRU of
    /// `hidden` units; `feature_dim` is the filterbank output width.
    pub fn init(channels: &[usize], feature_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::tag("ref-encoder")]);
        let mut in_ch = 1;
        let mut width = feature_dim;
        let convs = channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::init(in_ch, c, (3, 3), (2, 2), (1, 1), &mut rng);
                in_ch = c;
                width = halve(width);
                conv
            })
            .collect();
        Self {
            convs,
            gru: Gru::init(in_ch * width, hidden, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            gru: self.gru.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }
}

impl StyleTokenBank {
    /// Zero-mean unit-variance draw scaled by 1/√dim.
    pub fn init(n_tokens: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::tag("tokens")]);
        Self {
            tokens: Tensor::normal(&[n_tokens, dim], 1.0 / (dim as f64).sqrt(), &mut rng),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape[1]
    }

    /// `tanh(token_i)`, the keys and values of the attention.
    pub fn squashed(&self) -> Vec<Vec<f64>> {
        self.tokens
            .data
            .chunks_exact(self.dim())
            .map(|t| t.iter().map(|v| v.tanh()).collect())
            .collect()
    }
}

/// Activations kept for backpropagation through the reference encoder.
#[derive(Debug, Clone)]
pub struct RefCache {
    /// Input of every conv layer (layer 0 input is the feature map) and its
    /// `(height, width)`.
    inputs: Vec<(Vec<f64>, usize, usize)>,
    gru: GruCache,
    gru_steps: usize,
    out_shape: (usize, usize, usize),
}

fn run_reference(f: &FeatureSequence, p: &RefEncoderParams, mut cache: Option<&mut RefCache>) -> Result<Vec<f64>> {
    if f.frames < MIN_FRAMES {
        return Err(Error::TooFewFrames {
            got: f.frames,
            required: MIN_FRAMES,
        });
    }
    let (mut h, mut w) = (f.frames, f.dim);
    let mut cur = f.values.clone();
    let mut next = Vec::new();
    let mut channels = 1;
    for (l, conv) in p.convs.iter().enumerate() {
        let (ho, wo) = conv.forward(&cur, h, w, &mut next);
        relu_inplace(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("encoder.conv{l}")));
        }
        let prev = std::mem::replace(&mut cur, std::mem::take(&mut next));
        if let Some(c) = cache.as_deref_mut() {
            c.inputs.push((prev, h, w));
        }
        (h, w, channels) = (ho, wo, conv.out_channels());
    }
    // [C][H][W] -> H steps of C*W inputs
    let input = channels * w;
    if input != p.gru.input() {
        return Err(Error::Shape(format!(
            "GRU expects {} inputs per step, conv stack yields {input} (feature dim {})",
            p.gru.input(),
            f.dim
        )));
    }
    let mut seq = vec![0.0; h * input];
    for c in 0..channels {
        for t in 0..h {
            for k in 0..w {
                seq[t * input + c * w + k] = cur[(c * h + t) * w + k];
            }
        }
    }
    let out = match cache.as_deref_mut() {
        Some(c) => {
            c.gru_steps = h;
            c.out_shape = (channels, h, w);
            // last conv output doubles as the ReLU mask for its gradient
            c.inputs.push((cur, h, w));
            p.gru.forward(&seq, h, Some(&mut c.gru))
        }
        None => p.gru.forward(&seq, h, None),
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("encoder.gru".into()));
    }
    Ok(out)
}

/// Fixed-size reference encoding: the GRU's final hidden state.
pub fn reference_encode(f: &FeatureSequence, p: &RefEncoderParams) -> Result<Vec<f64>> {
    run_reference(f, p, None)
}

pub fn reference_encode_cached(f: &FeatureSequence, p: &RefEncoderParams) -> Result<(Vec<f64>, RefCache)> {
    let mut cache = RefCache {
        inputs: Vec::new(),
        gru: GruCache::default(),
        gru_steps: 0,
        out_shape: (0, 0, 0),
    };
    let out = run_reference(f, p, Some(&mut cache))?;
    Ok((out, cache))
}

/// Gradient w.r.t. the feature map, accumulating parameter gradients.
pub fn reference_backward(p: &RefEncoderParams, cache: &RefCache, d_ref: &[f64], grad: &mut RefEncoderParams) -> Vec<f64> {
    let dseq = p.gru.backward(&cache.gru, d_ref, &mut grad.gru);
    let (channels, h, w) = cache.out_shape;
    let input = channels * w;
    let mut gy = vec![0.0; channels * h * w];
    for c in 0..channels {
        for t in 0..h {
            for k in 0..w {
                gy[(c * h + t) * w + k] = dseq[t * input + c * w + k];
            }
        }
    }
    let n = p.convs.len();
    relu_backward(&cache.inputs[n].0, &mut gy);
    for l in (0..n).rev() {
        let (x, xh, xw) = &cache.inputs[l];
        let mut gx = vec![0.0; x.len()];
        p.convs[l].backward(x, *xh, *xw, &gy, &mut grad.convs[l], Some(&mut gx));
        if l > 0 {
            relu_backward(x, &mut gx);
        }
        gy = gx;
    }
    gy
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn attention_scores(reference: &[f64], squashed: &[Vec<f64>]) -> Vec<f64> {
    let scale = 1.0 / (reference.len() as f64).sqrt();
    squashed.iter().map(|v| dot(reference, v) * scale).collect()
}

/// Scaled dot-product attention: `softmax(ref · tanh(token_i) / √dim)`.
pub fn attend(reference: &[f64], bank: &StyleTokenBank) -> AttentionWeights {
    assert_eq!(reference.len(), bank.dim(), "reference and token dimensions differ");
    AttentionWeights(softmax(&attention_scores(reference, &bank.squashed())))
}

/// `Σ w_i · tanh(token_i)`.
pub fn combine(weights: &AttentionWeights, bank: &StyleTokenBank) -> Vec<f64> {
    let mut out = vec![0.0; bank.dim()];
    for (w, v) in weights.0.iter().zip(bank.squashed()) {
        out.iter_mut().zip(&v).for_each(|(o, x)| *o += w * x);
    }
    out
}

pub(crate) fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NumericOverflow(format!("embedding normalization (norm {norm})")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Attention and combination state for backpropagation.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    reference: Vec<f64>,
    squashed: Vec<Vec<f64>>,
    weights: Vec<f64>,
    combined: Vec<f64>,
    normalized: bool,
}

/// Reference encoding → embedding, optionally L2-normalized.
pub fn style_embedding(reference: &[f64], bank: &StyleTokenBank, normalize: bool) -> Result<(StyleEmbedding, AttentionCache)> {
    let squashed = bank.squashed();
    let weights = softmax(&attention_scores(reference, &squashed));
    let w = AttentionWeights(weights.clone());
    let combined = combine(&w, bank);
    let vector = if normalize { l2_normalize(&combined)? } else { combined.clone() };
    Ok((
        StyleEmbedding { vector, weights: w },
        AttentionCache {
            reference: reference.to_vec(),
            squashed,
            weights,
            combined,
            normalized: normalize,
        },
    ))
}

/// Returns the gradient w.r.t. the reference encoding and accumulates the
/// token-bank gradient.
pub fn attention_backward(cache: &AttentionCache, d_emb: &[f64], grad: &mut StyleTokenBank) -> Vec<f64> {
    let dim = cache.reference.len();
    let dc: Vec<f64> = if cache.normalized {
        let norm = dot(&cache.combined, &cache.combined).sqrt();
        let e: Vec<f64> = cache.combined.iter().map(|x| x / norm).collect();
        let proj = dot(&e, d_emb);
        d_emb.iter().zip(&e).map(|(g, ei)| (g - ei * proj) / norm).collect()
    } else {
        d_emb.to_vec()
    };
    let k = cache.weights.len();
    let scale = 1.0 / (dim as f64).sqrt();
    let dw: Vec<f64> = cache.squashed.iter().map(|v| dot(&dc, v)).collect();
    let mean_dw: f64 = cache.weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
    let ds: Vec<f64> = (0..k).map(|i| cache.weights[i] * (dw[i] - mean_dw)).collect();
    let mut dref = vec![0.0; dim];
    for i in 0..k {
        let v = &cache.squashed[i];
        let g_tok = &mut grad.tokens.data[i * dim..(i + 1) * dim];
        for j in 0..dim {
            dref[j] += ds[i] * v[j] * scale;
            let dv = cache.weights[i] * dc[j] + ds[i] * cache.reference[j] * scale;
            g_tok[j] += dv * (1.0 - v[j] * v[j]);
        }
    }
    dref
}
