use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{StepKey, TrainConfig, TrainSet};
use crate::error::{Error, Result};
use crate::nn::dot;

/// Utterance indices into a [`TrainSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mining {
    Random,
    SemiHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningSchedule {
    Fixed(Mining),
    /// Random mining for the first `n` epochs, semi-hard afterwards.
    SemiHardAfter(usize),
}

impl MiningSchedule {
    pub fn at(&self, epoch: usize) -> Mining {
        match *self {
            MiningSchedule::Fixed(m) => m,
            MiningSchedule::SemiHardAfter(n) if epoch < n => Mining::Random,
            MiningSchedule::SemiHardAfter(_) => Mining::SemiHard,
        }
    }
}

/// Picks a negative with `d_ap < d_an < d_ap + margin` uniformly at random;
/// without one, the hardest (closest) candidate. `candidates` holds
/// `(utterance, d_an)` pairs and must be non-empty.
pub fn select_negative<R: Rng + ?Sized>(d_ap: f64, candidates: &[(usize, f64)], margin: f64, rng: &mut R) -> usize {
    let semi: Vec<usize> = candidates
        .iter()
        .filter(|(_, d)| *d > d_ap && *d < d_ap + margin)
        .map(|(u, _)| *u)
        .collect();
    if let Some(&u) = semi.choose(rng) {
        return u;
    }
    candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(u, _)| *u)
        .expect("no negative candidates")
}

fn eligible_speakers(set: &TrainSet) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..set.speakers.len())
        .filter(|&s| set.by_speaker[s].len() >= 2)
        .collect();
    if eligible.len() < 2 {
        return Err(Error::InfeasibleTriplets(format!(
            "{} speaker(s) with at least 2 utterances; need 2",
            eligible.len()
        )));
    }
    Ok(eligible)
}

/// Draws `cfg.triplets_per_batch` triplets, deterministic in `key`.
/// Semi-hard mining embeds a pool of `cfg.pool_speakers` ×
/// `cfg.pool_utterances` utterances through `embed` (called once) and picks
/// negatives inside the pool.
pub fn sample_triplets<F>(set: &TrainSet, cfg: &TrainConfig, mining: Mining, key: StepKey, embed: F) -> Result<Vec<Triplet>>
where
    F: FnOnce(&[usize]) -> Result<Vec<Vec<f64>>>,
{
    let (batch, margin) = (cfg.triplets_per_batch, cfg.margin);
    let eligible = eligible_speakers(set)?;
    let mut rng = key.rng("triplets");
    match mining {
        Mining::Random => Ok((0..batch)
            .map(|_| {
                let s = *eligible.choose(&mut rng).expect("non-empty");
                let pair: Vec<usize> = set.by_speaker[s].choose_multiple(&mut rng, 2).copied().collect();
                let mut ns = rng.random_range(0..set.speakers.len() - 1);
                if ns >= s {
                    ns += 1;
                }
                let negative = *set.by_speaker[ns].choose(&mut rng).expect("speaker has utterances");
                Triplet {
                    anchor: pair[0],
                    positive: pair[1],
                    negative,
                }
            })
            .collect()),
        Mining::SemiHard => {
            let mut speakers = eligible.clone();
            speakers.shuffle(&mut rng);
            speakers.truncate(cfg.pool_speakers.min(speakers.len()));
            let pool: Vec<(usize, Vec<usize>)> = speakers
                .iter()
                .map(|&s| {
                    let k = set.by_speaker[s].len().min(cfg.pool_utterances);
                    (s, set.by_speaker[s].choose_multiple(&mut rng, k).copied().collect())
                })
                .collect();
            let members: Vec<usize> = pool.iter().flat_map(|(_, u)| u.iter().copied()).collect();
            let embs = embed(&members)?;
            let emb_of = |u: usize| &embs[members.iter().position(|&m| m == u).expect("pool member")];
            let mut out = Vec::with_capacity(batch);
            for _ in 0..batch {
                let (s, utts) = pool.choose(&mut rng).expect("non-empty pool");
                let pair: Vec<usize> = utts.choose_multiple(&mut rng, 2).copied().collect();
                let (a, p) = (pair[0], pair[1]);
                let ea = emb_of(a);
                let d_ap = 1.0 - dot(ea, emb_of(p));
                let candidates: Vec<(usize, f64)> = pool
                    .iter()
                    .filter(|(o, _)| o != s)
                    .flat_map(|(_, us)| us.iter().map(|&n| (n, 1.0 - dot(ea, emb_of(n)))))
                    .collect();
                let negative = select_negative(d_ap, &candidates, margin, &mut rng);
                out.push(Triplet {
                    anchor: a,
                    positive: p,
                    negative,
                });
            }
            Ok(out)
        }
    }
}
