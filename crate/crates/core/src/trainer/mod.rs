//! Joint triplet training of the filterbank and the style encoder.

mod checkpoint;
mod mining;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use mining::{sample_triplets, select_negative, Mining, MiningSchedule, Triplet};

use crate::audio::{load_wav, CorpusManifest, Split, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{Model, TrainCache};
use crate::nn::dot;
use crate::seed;

/// `max(0, d(a,p) − d(a,n) + margin)` with cosine distance `d = 1 − a·b`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let d_ap = 1.0 - dot(anchor, positive);
    let d_an = 1.0 - dot(anchor, negative);
    (d_ap - d_an + margin).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub triplets_per_batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mining: MiningSchedule,
    /// `None`: three triplets per training utterance, `ceil(3n / batch)`.
    pub steps_per_epoch: Option<usize>,
    /// Random crop length per utterance and step; `None` uses whole utterances.
    pub crop_seconds: Option<f64>,
    /// Semi-hard mining draws a pool of this many speakers...
    pub pool_speakers: usize,
    /// ...with this many utterances each.
    pub pool_utterances: usize,
    pub norm_momentum: f64,
    /// Rescales the whole gradient to at most this L2 norm before the update.
    pub grad_clip: Option<f64>,
    /// Forbids parallel reductions.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 1e-3,
            triplets_per_batch: 32,
            epochs: 30,
            seed: 0,
            mining: MiningSchedule::SemiHardAfter(2),
            steps_per_epoch: None,
            crop_seconds: Some(1.0),
            pool_speakers: 8,
            pool_utterances: 4,
            norm_momentum: 0.05,
            grad_clip: Some(0.05),
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.triplets_per_batch == 0 {
            return Err(Error::Config("triplets_per_batch must be positive".into()));
        }
        if self.pool_speakers < 2 || self.pool_utterances < 2 {
            return Err(Error::Config("mining pool needs at least 2 speakers and 2 utterances each".into()));
        }
        if matches!(self.crop_seconds, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("crop_seconds must be positive".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub id: String,
    pub speaker: usize,
    pub samples: Vec<f64>,
}

/// Training utterances indexed by speaker.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub utterances: Vec<TrainUtterance>,
    pub speakers: Vec<String>,
    pub by_speaker: Vec<Vec<usize>>,
}

impl TrainSet {
    pub fn new(items: Vec<(String, String, Vec<f64>)>) -> Self {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (_, spk, _) in &items {
            let n = index.len();
            index.entry(spk.clone()).or_insert(n);
        }
        let mut speakers = vec![String::new(); index.len()];
        for (name, &i) in &index {
            speakers[i] = name.clone();
        }
        let mut by_speaker = vec![Vec::new(); speakers.len()];
        let utterances = items
            .into_iter()
            .enumerate()
            .map(|(u, (id, spk, samples))| {
                let speaker = index[&spk];
                by_speaker[speaker].push(u);
                TrainUtterance { id, speaker, samples }
            })
            .collect();
        Self {
            utterances,
            speakers,
            by_speaker,
        }
    }

    /// Loads every train-split entry of the manifest.
    pub fn from_manifest(manifest: &CorpusManifest) -> Result<Self> {
        let items = manifest
            .select(Split::Train, None)
            .map(|e| {
                let w = load_wav(manifest.resolve(e))?;
                Ok((e.utterance_id(), e.speaker_id.clone(), w.into_samples()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(items))
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// First/second-moment gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Model,
    pub v: Model,
}

impl Adam {
    pub fn new(model: &Model, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    /// Moments always advance; parameters move only when some gradient is
    /// nonzero. Parameters and moments are rounded to f32 after the update.
    pub fn step(&mut self, params: &mut Model, grads: &Model) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let active = grads.tensors().iter().any(|(_, g)| g.data.iter().any(|&x| x != 0.0));
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            let (p, g, m, v) = (p.1, g.1, m.1, v.1);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                if active {
                    let mh = m.data[i] / c1;
                    let vh = v.data[i] / c2;
                    p.data[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            p.round_f32();
            m.round_f32();
            v.round_f32();
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub active_triplets: usize,
    pub grad_norm_frontend: f64,
    pub grad_norm_encoder: f64,
    pub grad_norm_tokens: f64,
}

fn group_norm(grads: &Model, prefix: &str) -> f64 {
    grads
        .tensors()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(_, t)| t.sq_norm())
        .sum::<f64>()
        .sqrt()
}

fn clip_norm(grads: &mut Model, limit: f64) {
    let norm = grads.tensors().iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt();
    if norm > limit {
        let scale = limit / norm;
        for (_, t) in grads.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

/// Which samples of each utterance a given step sees.
#[derive(Debug, Clone, Copy)]
pub struct StepKey {
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
}

impl StepKey {
    pub fn rng(&self, stream: &str) -> rand_chacha::ChaCha8Rng {
        seed::rng(self.seed, &[seed::tag(stream), self.epoch as u64, self.step])
    }

    pub fn crop<'a>(&self, set: &'a TrainSet, utt: usize, crop_seconds: Option<f64>) -> &'a [f64] {
        let samples = &set.utterances[utt].samples;
        let Some(secs) = crop_seconds else {
            return samples;
        };
        let len = ((secs * SAMPLE_RATE as f64).round() as usize).min(samples.len());
        let mut rng = seed::rng(self.seed, &[seed::tag("crop"), self.epoch as u64, self.step, utt as u64]);
        let offset = rng.random_range(0..=samples.len() - len);
        &samples[offset..offset + len]
    }
}

/// Inference-only embeddings of the given utterances under a step's crops.
pub fn embed_for_step(model: &Model, set: &TrainSet, utts: &[usize], key: StepKey, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let run = |&u: &usize| model.embed_samples(key.crop(set, u, cfg.crop_seconds)).map(|e| e.vector);
    #[cfg(feature = "parallel")]
    if !cfg.deterministic {
        use rayon::prelude::*;
        return utts.par_iter().map(run).collect();
    }
    utts.iter().map(run).collect()
}

fn forward_all(model: &Model, set: &TrainSet, utts: &[usize], key: StepKey, cfg: &TrainConfig) -> Result<Vec<(Vec<f64>, TrainCache)>> {
    let run = |&u: &usize| {
        model
            .forward_train(key.crop(set, u, cfg.crop_seconds))
            .map(|(e, c)| (e.vector, c))
    };
    #[cfg(feature = "parallel")]
    if !cfg.deterministic {
        use rayon::prelude::*;
        return utts.par_iter().map(run).collect();
    }
    utts.iter().map(run).collect()
}

#[cfg(feature = "parallel")]
fn add_into(acc: &mut Model, g: &Model) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
    }
}

/// Batch gradient of the mean triplet loss. Returns `(loss, active, grads,
/// forward caches)`.
pub fn batch_gradient(
    model: &Model,
    set: &TrainSet,
    triplets: &[Triplet],
    key: StepKey,
    cfg: &TrainConfig,
) -> Result<(f64, usize, Model, Vec<TrainCache>)> {
    batch_gradient_reusing(model, set, triplets, key, cfg, BTreeMap::new())
}

/// Training forwards already run under this step's crops, by utterance.
type Forwards = BTreeMap<usize, (Vec<f64>, TrainCache)>;

fn batch_gradient_reusing(
    model: &Model,
    set: &TrainSet,
    triplets: &[Triplet],
    key: StepKey,
    cfg: &TrainConfig,
    mut known: Forwards,
) -> Result<(f64, usize, Model, Vec<TrainCache>)> {
    let mut utts: Vec<usize> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    utts.sort_unstable();
    utts.dedup();
    let slot: BTreeMap<usize, usize> = utts.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let missing: Vec<usize> = utts.iter().copied().filter(|u| !known.contains_key(u)).collect();
    known.extend(missing.iter().copied().zip(forward_all(model, set, &missing, key, cfg)?));
    let outputs: Vec<(Vec<f64>, TrainCache)> = utts.iter().map(|u| known.remove(u).expect("forward run")).collect();
    let dim = model.tokens.dim();
    let mut d_emb = vec![vec![0.0; dim]; utts.len()];
    let b = triplets.len() as f64;
    let mut total = 0.0;
    let mut active = 0;
    for (i, t) in triplets.iter().enumerate() {
        let (a, p, n) = (slot[&t.anchor], slot[&t.positive], slot[&t.negative]);
        let (ea, ep, en) = (&outputs[a].0, &outputs[p].0, &outputs[n].0);
        let loss = triplet_loss(ea, ep, en, cfg.margin);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                index: i,
                anchor: set.utterances[t.anchor].id.clone(),
                positive: set.utterances[t.positive].id.clone(),
                negative: set.utterances[t.negative].id.clone(),
            });
        }
        total += loss;
        if loss > 0.0 {
            active += 1;
            for j in 0..dim {
                d_emb[a][j] += (en[j] - ep[j]) / b;
                d_emb[p][j] -= ea[j] / b;
                d_emb[n][j] += ea[j] / b;
            }
        }
    }
    let (embs, caches): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    drop(embs);
    let mut grads = model.zeros_like();
    let jobs: Vec<usize> = (0..utts.len()).filter(|&i| d_emb[i].iter().any(|&g| g != 0.0)).collect();
    #[cfg(feature = "parallel")]
    let parallel = !cfg.deterministic;
    #[cfg(not(feature = "parallel"))]
    let parallel = false;
    if parallel {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let parts: Vec<Model> = jobs
                .par_iter()
                .map(|&i| {
                    let mut g = model.zeros_like();
                    model.backward(&caches[i], &d_emb[i], &mut g);
                    g
                })
                .collect();
            for g in &parts {
                add_into(&mut grads, g);
            }
        }
    } else {
        for &i in &jobs {
            model.backward(&caches[i], &d_emb[i], &mut grads);
        }
    }
    Ok((total / b, active, grads, caches))
}

/// Mean triplet loss of a batch, forward pass only.
pub fn batch_loss(model: &Model, set: &TrainSet, triplets: &[Triplet], key: StepKey, cfg: &TrainConfig) -> Result<f64> {
    let emb = |u: usize| model.embed_samples(key.crop(set, u, cfg.crop_seconds)).map(|e| e.vector);
    let mut total = 0.0;
    for t in triplets {
        total += triplet_loss(&emb(t.anchor)?, &emb(t.positive)?, &emb(t.negative)?, cfg.margin);
    }
    Ok(total / triplets.len() as f64)
}

/// One optimizer step on a batch of triplets.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Adam,
    set: &TrainSet,
    triplets: &[Triplet],
    key: StepKey,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    train_step_reusing(model, optimizer, set, triplets, key, cfg, BTreeMap::new())
}

fn train_step_reusing(
    model: &mut Model,
    optimizer: &mut Adam,
    set: &TrainSet,
    triplets: &[Triplet],
    key: StepKey,
    cfg: &TrainConfig,
    known: Forwards,
) -> Result<StepStats> {
    if !model.is_finite() {
        return Err(Error::NumericOverflow("parameters before train step".into()));
    }
    let (loss, active, mut grads, caches) = batch_gradient_reusing(model, set, triplets, key, cfg, known)?;
    let stats = StepStats {
        epoch: key.epoch,
        step: key.step,
        loss,
        active_triplets: active,
        grad_norm_frontend: group_norm(&grads, "frontend."),
        grad_norm_encoder: group_norm(&grads, "encoder."),
        grad_norm_tokens: group_norm(&grads, "tokens"),
    };
    if let Some(norm) = model.frontend.norm.as_mut() {
        let raws: Vec<&[f64]> = caches.iter().map(TrainCache::raw_features).collect();
        norm.update(&raws, model.config.feature_dim(), cfg.norm_momentum);
    }
    if let Some(limit) = cfg.grad_clip {
        clip_norm(&mut grads, limit);
    }
    optimizer.step(model, &grads);
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based.
    pub epoch: usize,
    /// 0-based global step.
    pub step: u64,
    pub loss: f64,
}

pub fn loss_log_tsv(log: &[LossRecord]) -> String {
    let mut out = String::from("epoch\tstep\tloss\n");
    for r in log {
        out.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.step, r.loss));
    }
    out
}

/// Mean loss of each epoch, in order.
pub fn epoch_means(log: &[LossRecord]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in log {
        let e = acc.entry(r.epoch).or_default();
        e.0 += r.loss;
        e.1 += 1;
    }
    acc.into_iter().map(|(e, (s, n))| (e, s / n as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    pub stats: Vec<StepStats>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.tsv";

/// Runs `cfg.epochs` epochs from `start`, writing the checkpoint and loss log
/// to `out_dir` after every epoch when given.
pub fn train_loop(start: Checkpoint, cfg: &TrainConfig, set: &TrainSet, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Checkpoint { mut model, state } = start;
    let mut optimizer = state.optimizer.unwrap_or_else(|| Adam::new(&model, cfg.learning_rate));
    optimizer.learning_rate = cfg.learning_rate;
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| (3 * set.len()).div_ceil(cfg.triplets_per_batch))
        .max(1);
    let mut step = state.step;
    let mut log = Vec::new();
    let mut stats = Vec::new();
    let mut completed = state.epoch;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for epoch in state.epoch..cfg.epochs {
        let mining = cfg.mining.at(epoch);
        for _ in 0..steps_per_epoch {
            let key = StepKey {
                seed: cfg.seed,
                epoch,
                step,
            };
            // Mining forwards double as the step's training forwards.
            let mut known = Forwards::new();
            let triplets = sample_triplets(set, cfg, mining, key, |utts| {
                let outputs = forward_all(&model, set, utts, key, cfg)?;
                let embs = outputs.iter().map(|(e, _)| e.clone()).collect();
                known.extend(utts.iter().copied().zip(outputs));
                Ok(embs)
            })?;
            let s = train_step_reusing(&mut model, &mut optimizer, set, &triplets, key, cfg, known)?;
            log.push(LossRecord {
                epoch: epoch + 1,
                step,
                loss: s.loss,
            });
            stats.push(s);
            step += 1;
        }
        completed = epoch + 1;
        if let Some(dir) = out_dir {
            let ck = Checkpoint {
                model: model.clone(),
                state: TrainState {
                    seed: cfg.seed,
                    epoch: completed,
                    step,
                    optimizer: Some(optimizer.clone()),
                },
            };
            save_checkpoint(dir.join(CHECKPOINT_FILE), &ck)?;
            let path = dir.join(LOSS_LOG_FILE);
            crate::io::write_text(&path, &loss_log_tsv(&log))?;
            crate::io::write_sidecar(&path, cfg.seed, &[])?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            state: TrainState {
                seed: cfg.seed,
                epoch: completed,
                step,
                optimizer: Some(optimizer),
            },
        },
        log,
        stats,
    })
}

/// A fresh checkpoint: initialized model, no optimizer state.
pub fn initial_checkpoint(config: crate::model::ModelConfig, seed: u64) -> Result<Checkpoint> {
    Ok(Checkpoint {
        model: Model::init(config, seed)?,
        state: TrainState {
            seed,
            epoch: 0,
            step: 0,
            optimizer: None,
        },
    })
}

#[cfg(test)]
mod tests;
