//! The full encoder: filterbank → reference encoder → token attention →
//! embedding, with a named-tensor view used by the optimizer and checkpoints.

use std::collections::BTreeMap;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::frontend::{
    frame_signal, init_filterbank, ConvSpec, FilterbankParams, Frames, FramingConfig, FrontendCache,
};
use crate::nn::Tensor;
use crate::seed;
use crate::style_encoder::{
    attention_backward, l2_normalize, reference_backward, reference_encode, reference_encode_cached, style_embedding,
    AttentionCache, RefCache, RefEncoderParams, StyleEmbedding, StyleTokenBank,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub framing: FramingConfig,
    pub frontend: Vec<ConvSpec>,
    pub feature_norm: bool,
    /// Channels of the 3×3 stride-2 reference-encoder convs.
    pub encoder_channels: Vec<usize>,
    pub gru_hidden: usize,
    pub n_tokens: usize,
    pub normalize_embedding: bool,
    /// Shortest waveform [`Model::embed`] accepts, in seconds.
    pub min_seconds: f64,
}

impl Default for ModelConfig {
    /// Four-layer filterbank (kernels 7/5/5/3, channels 16/32/32/40),
    /// reference convs 16/16/32/32, 128-unit GRU, ten tokens.
    fn default() -> Self {
        Self {
            framing: FramingConfig::default(),
            frontend: specs(&[(7, 16, 1), (5, 32, 1), (5, 32, 1), (3, 40, 1)]),
            feature_norm: false,
            encoder_channels: vec![16, 16, 32, 32],
            gru_hidden: 128,
            n_tokens: 10,
            normalize_embedding: true,
            min_seconds: 1.0,
        }
    }
}

fn specs(layers: &[(usize, usize, usize)]) -> Vec<ConvSpec> {
    layers
        .iter()
        .map(|&(kernel, channels, stride)| ConvSpec { kernel, channels, stride })
        .collect()
}

impl ModelConfig {
    /// Same shape of network with a strided, narrower filterbank; roughly 40×
    /// cheaper per frame, for single-core training runs.
    pub fn compact() -> Self {
        Self {
            frontend: specs(&[(8, 8, 4), (5, 16, 2), (3, 40, 1)]),
            ..Self::default()
        }
    }

    /// Window 16, two filterbank layers of 4 channels, 4 tokens of dim 8.
    pub fn tiny() -> Self {
        Self {
            framing: FramingConfig { window: 16, hop: 8 },
            frontend: specs(&[(5, 4, 2), (3, 4, 1)]),
            feature_norm: false,
            encoder_channels: vec![2, 2],
            gru_hidden: 8,
            n_tokens: 4,
            normalize_embedding: true,
            min_seconds: 0.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "compact" => Ok(Self::compact()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.framing.validate()?;
        if self.frontend.is_empty() {
            return Err(Error::Config("filterbank needs at least one layer".into()));
        }
        if self.frontend.iter().any(|s| s.kernel == 0 || s.channels == 0 || s.stride == 0) {
            return Err(Error::Config("filterbank layers need positive kernel, channels and stride".into()));
        }
        if self.gru_hidden == 0 || self.n_tokens == 0 {
            return Err(Error::Config("gru_hidden and n_tokens must be positive".into()));
        }
        let mut len = self.framing.window;
        for (i, s) in self.frontend.iter().enumerate() {
            if len < s.kernel {
                return Err(Error::Config(format!("filterbank layer {i}: length {len} shorter than kernel {}", s.kernel)));
            }
            len = (len - s.kernel) / s.stride + 1;
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.frontend.last().map(|s| s.channels).unwrap_or(0)
    }

    /// `key=value` pairs, inverse of [`ModelConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let layers = |v: &[ConvSpec]| {
            v.iter()
                .map(|s| format!("{}:{}:{}", s.kernel, s.channels, s.stride))
                .collect::<Vec<_>>()
                .join(",")
        };
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("frame_window".into(), self.framing.window.to_string()),
            ("frame_hop".into(), self.framing.hop.to_string()),
            ("frontend_layers".into(), layers(&self.frontend)),
            ("feature_norm".into(), self.feature_norm.to_string()),
            ("encoder_channels".into(), list(&self.encoder_channels)),
            ("gru_hidden".into(), self.gru_hidden.to_string()),
            ("n_tokens".into(), self.n_tokens.to_string()),
            ("normalize_embedding".into(), self.normalize_embedding.to_string()),
            ("min_seconds".into(), self.min_seconds.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing model key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::Config(format!("model key {k}: {e}")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|e| Error::Config(format!("model key {k}: {e}")))
        };
        let frontend = parse_layers(get("frontend_layers")?)?;
        let encoder_channels = parse_list(get("encoder_channels")?)?;
        let cfg = Self {
            framing: FramingConfig {
                window: num("frame_window")?,
                hop: num("frame_hop")?,
            },
            frontend,
            feature_norm: flag("feature_norm")?,
            encoder_channels,
            gru_hidden: num("gru_hidden")?,
            n_tokens: num("n_tokens")?,
            normalize_embedding: flag("normalize_embedding")?,
            min_seconds: get("min_seconds")?
                .parse()
                .map_err(|e| Error::Config(format!("model key min_seconds: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `kernel:channels:stride` triples separated by commas.
pub fn parse_layers(s: &str) -> Result<Vec<ConvSpec>> {
    s.split(',')
        .map(|item| {
            let parts = parse_list_sep(item, ':')?;
            match parts[..] {
                [kernel, channels, stride] => Ok(ConvSpec { kernel, channels, stride }),
                _ => Err(Error::Config(format!("layer {item:?} is not kernel:channels:stride"))),
            }
        })
        .collect()
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    parse_list_sep(s, ',')
}

fn parse_list_sep(s: &str, sep: char) -> Result<Vec<usize>> {
    s.split(sep)
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{x:?}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub frontend: FilterbankParams,
    pub encoder: RefEncoderParams,
    pub tokens: StyleTokenBank,
}

/// Intermediate state of one utterance's forward pass.
#[derive(Debug, Clone)]
pub struct TrainCache {
    frames: Frames,
    frontend: FrontendCache,
    reference: RefCache,
    attention: AttentionCache,
}

impl TrainCache {
    /// Raw filterbank outputs before the optional normalizer.
    pub fn raw_features(&self) -> &[f64] {
        &self.frontend.raw
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let frontend = init_filterbank(&config.frontend, config.feature_norm, seed::derive(seed, &[1]));
        let encoder = RefEncoderParams::init(
            &config.encoder_channels,
            config.feature_dim(),
            config.gru_hidden,
            seed::derive(seed, &[2]),
        );
        let tokens = StyleTokenBank::init(config.n_tokens, config.gru_hidden, seed::derive(seed, &[3]));
        Ok(Self {
            config,
            frontend,
            encoder,
            tokens,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            frontend: self.frontend.zeros_like(),
            encoder: self.encoder.zeros_like(),
            tokens: StyleTokenBank {
                tokens: Tensor::zeros(&self.tokens.tokens.shape),
            },
        }
    }

    /// Learnable tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.frontend.layers.iter().enumerate() {
            out.push((format!("frontend.conv{i}.weight"), &l.weight));
            out.push((format!("frontend.conv{i}.bias"), &l.bias));
        }
        for (i, c) in self.encoder.convs.iter().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &c.weight));
            out.push((format!("encoder.conv{i}.bias"), &c.bias));
        }
        let g = &self.encoder.gru;
        out.push(("encoder.gru.w_ih".into(), &g.w_ih));
        out.push(("encoder.gru.w_hh".into(), &g.w_hh));
        out.push(("encoder.gru.b_ih".into(), &g.b_ih));
        out.push(("encoder.gru.b_hh".into(), &g.b_hh));
        out.push(("tokens".into(), &self.tokens.tokens));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.frontend.layers.iter_mut().enumerate() {
            out.push((format!("frontend.conv{i}.weight"), &mut l.weight));
            out.push((format!("frontend.conv{i}.bias"), &mut l.bias));
        }
        for (i, c) in self.encoder.convs.iter_mut().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &mut c.weight));
            out.push((format!("encoder.conv{i}.bias"), &mut c.bias));
        }
        let g = &mut self.encoder.gru;
        out.push(("encoder.gru.w_ih".into(), &mut g.w_ih));
        out.push(("encoder.gru.w_hh".into(), &mut g.w_hh));
        out.push(("encoder.gru.b_ih".into(), &mut g.b_ih));
        out.push(("encoder.gru.b_hh".into(), &mut g.b_hh));
        out.push(("tokens".into(), &mut self.tokens.tokens));
        out
    }

    /// Non-learnable state (normalizer statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        match &self.frontend.norm {
            Some(n) => vec![("frontend.norm.mean".into(), &n.mean), ("frontend.norm.var".into(), &n.var)],
            None => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.frontend.norm {
            Some(n) => vec![
                ("frontend.norm.mean".into(), &mut n.mean),
                ("frontend.norm.var".into(), &mut n.var),
            ],
            None => Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Filterbank feature sequence of raw samples.
    pub fn features(&self, samples: &[f64]) -> Result<crate::frontend::FeatureSequence> {
        let frames = frame_signal(samples, self.config.framing)?;
        let mut f = self.frontend.forward(&frames)?;
        f.frame_rate = self.config.framing.frame_rate();
        Ok(f)
    }

    fn check_duration(&self, w: &Waveform) -> Result<()> {
        let min = (self.config.min_seconds * SAMPLE_RATE as f64).round() as usize;
        if w.len() < min {
            return Err(Error::InvalidWaveform(format!(
                "{}: {:.3} s is shorter than the {} s minimum",
                w.source_id(),
                w.duration_secs(),
                self.config.min_seconds
            )));
        }
        Ok(())
    }

    /// Style embedding with its attention weights.
    pub fn embed(&self, w: &Waveform) -> Result<StyleEmbedding> {
        self.check_duration(w)?;
        self.embed_samples(w.samples())
    }

    pub fn embed_samples(&self, samples: &[f64]) -> Result<StyleEmbedding> {
        let f = self.features(samples)?;
        let reference = reference_encode(&f, &self.encoder)?;
        Ok(style_embedding(&reference, &self.tokens, self.config.normalize_embedding)?.0)
    }

    /// Filterbank-only utterance vector: time-averaged features, L2-normalized.
    pub fn filterbank_embedding(&self, w: &Waveform) -> Result<Vec<f64>> {
        self.check_duration(w)?;
        l2_normalize(&self.features(w.samples())?.mean())
    }

    pub fn forward_train(&self, samples: &[f64]) -> Result<(StyleEmbedding, TrainCache)> {
        let frames = frame_signal(samples, self.config.framing)?;
        let (features, frontend) = self.frontend.forward_cached(&frames)?;
        let (reference, ref_cache) = reference_encode_cached(&features, &self.encoder)?;
        let (emb, attention) = style_embedding(&reference, &self.tokens, self.config.normalize_embedding)?;
        Ok((
            emb,
            TrainCache {
                frames,
                frontend,
                reference: ref_cache,
                attention,
            },
        ))
    }

    /// Accumulates the gradient of a scalar with `d_emb = ∂L/∂embedding`.
    pub fn backward(&self, cache: &TrainCache, d_emb: &[f64], grad: &mut Model) {
        let d_ref = attention_backward(&cache.attention, d_emb, &mut grad.tokens);
        let d_features = reference_backward(&self.encoder, &cache.reference, &d_ref, &mut grad.encoder);
        self.frontend
            .backward(&cache.frames, &cache.frontend, &d_features, &mut grad.frontend);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_pairs() {
        for cfg in [ModelConfig::default(), ModelConfig::compact(), ModelConfig::tiny()] {
            let pairs: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
            assert_eq!(ModelConfig::from_pairs(&pairs).unwrap(), cfg);
        }
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let m = Model::init(ModelConfig::compact(), 3).unwrap();
        let w = Waveform::new((0..8000).map(|i| (i as f64 * 0.11).sin() * 0.5).collect(), "x").unwrap();
        let a = m.embed(&w).unwrap();
        let b = m.embed(&w).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), 128);
        assert_eq!(a.weights.0.len(), 10);
        let n: f64 = a.vector.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
        let short = Waveform::new(vec![0.1; 4000], "short").unwrap();
        assert!(m.embed(&short).is_err());
    }

    #[test]
    fn default_shapes() {
        let m = Model::init(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.encoder.gru.hidden(), 128);
        assert_eq!(m.encoder.gru.input(), 32 * 3);
        assert_eq!(m.tokens.tokens.shape, vec![10, 128]);
        let names: Vec<_> = m.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"frontend.conv3.weight".to_string()));
        assert_eq!(m.tensors().len(), m.zeros_like().tensors().len());
    }
}
