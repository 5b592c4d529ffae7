//! Seeded synthetic-speaker corpus: clean and noise-degraded chunks written
//! as WAV files, a TSV manifest, per-speaker generator parameters and eval
//! trial lists.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::synth::{synth_utterance, SyntheticSpeakerSpec};
use super::{mix_noise_at_snr, save_wav, split_into_chunks, white_noise, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEAKERS_FILE: &str = "speakers.tsv";
const MANIFEST_HEADER: &str = "path\tspeaker_id\tsplit\tcondition";
const BABBLE_CLIPS: usize = 4;
const BABBLE_TALKERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Clean,
    Degraded,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Clean => "clean",
            Condition::Degraded => "degraded",
        })
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clean" => Ok(Condition::Clean),
            "degraded" => Ok(Condition::Degraded),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub split: Split,
    pub condition: Condition,
}

impl ManifestEntry {
    /// Utterance id: the file stem.
    pub fn utterance_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn select(&self, split: Split, condition: Option<Condition>) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.split == split && condition.is_none_or(|c| e.condition == c))
    }

    pub fn speakers(&self, split: Split) -> BTreeSet<&str> {
        self.select(split, None).map(|e| e.speaker_id.as_str()).collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Checks unique paths and disjoint train/eval speakers.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Config(format!("duplicate manifest path {}", e.path.display())));
            }
        }
        let train = self.speakers(Split::Train);
        if let Some(s) = self.speakers(Split::Eval).intersection(&train).next() {
            return Err(Error::Config(format!("speaker {s} appears in both train and eval splits")));
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.path.display(),
                e.speaker_id,
                e.split,
                e.condition
            ));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))?;
        crate::io::write_sidecar(path, self.seed, &[])
    }

    /// Reads a manifest; entry paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => return Err(Error::parse(path, 1, format!("expected header {MANIFEST_HEADER:?}"))),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(path, i + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(cols[0]),
                speaker_id: cols[1].to_string(),
                split: cols[2].parse().map_err(|m| Error::parse(path, i + 1, m))?,
                condition: cols[3].parse().map_err(|m| Error::parse(path, i + 1, m))?,
            });
        }
        let seed = crate::io::read_sidecar_seed(path).unwrap_or(0);
        let manifest = Self {
            entries,
            seed,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    /// Eval speakers; `None` reserves a third of the speakers (at least 2).
    pub eval_speakers: Option<usize>,
    pub recording_seconds: f64,
    pub chunk_seconds: f64,
    pub snr_db: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts_per_speaker: 20,
            seed: 0,
            eval_speakers: None,
            recording_seconds: 10.0,
            chunk_seconds: 5.0,
            snr_db: 5.0,
        }
    }
}

impl CorpusConfig {
    pub fn n_eval(&self) -> usize {
        self.eval_speakers
            .unwrap_or_else(|| ((self.n_speakers as f64 / 3.0).round() as usize).max(2))
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers < 4 {
            return Err(Error::Config(format!("need at least 4 speakers, got {}", self.n_speakers)));
        }
        let n_eval = self.n_eval();
        if n_eval < 2 || self.n_speakers - n_eval.min(self.n_speakers) < 2 {
            return Err(Error::Config(format!(
                "{n_eval} eval speakers leaves fewer than 2 speakers in one split"
            )));
        }
        if self.utts_per_speaker < 2 {
            return Err(Error::Config("need at least 2 utterances per speaker".into()));
        }
        if !(self.chunk_seconds > 0.0 && self.chunk_seconds <= self.recording_seconds) {
            return Err(Error::Config("chunk_seconds must be in (0, recording_seconds]".into()));
        }
        if !(1.0..=10.0).contains(&self.recording_seconds) {
            return Err(Error::Config("recording_seconds must be in [1, 10]".into()));
        }
        Ok(())
    }

    fn chunks_per_recording(&self) -> usize {
        (self.recording_seconds / self.chunk_seconds + 1e-9).floor() as usize
    }
}

/// One speaker's generated material, in utterance order.
struct SpeakerAudio {
    clean: Vec<Waveform>,
    degraded: Vec<Waveform>,
}

fn babble_bank(cfg: &CorpusConfig) -> Result<Vec<Waveform>> {
    let seconds = (2.0 * cfg.chunk_seconds).clamp(1.0, 10.0).max(cfg.chunk_seconds);
    (0..BABBLE_CLIPS)
        .map(|b| {
            let mut rng = seed::rng(cfg.seed, &[seed::tag("babble"), b as u64]);
            let mut acc: Option<Vec<f64>> = None;
            for t in 0..BABBLE_TALKERS {
                let spec = SyntheticSpeakerSpec::draw(format!("babble{b}-{t}"), &mut rng);
                let w = synth_utterance(&spec, seconds, seed::derive(cfg.seed, &[b as u64, t as u64]))?;
                match acc.as_mut() {
                    None => acc = Some(w.into_samples()),
                    Some(a) => a.iter_mut().zip(w.samples()).for_each(|(x, y)| *x += y),
                }
            }
            Waveform::new(acc.expect("at least one talker"), format!("babble{b}"))
        })
        .collect()
}

fn speaker_audio(
    cfg: &CorpusConfig,
    speaker_index: usize,
    spec: &SyntheticSpeakerSpec,
    babble: &[Waveform],
) -> Result<SpeakerAudio> {
    let per_rec = cfg.chunks_per_recording();
    let n_rec = cfg.utts_per_speaker.div_ceil(per_rec);
    let mut clean = Vec::with_capacity(cfg.utts_per_speaker);
    for r in 0..n_rec {
        let global = (speaker_index * n_rec + r) as u64;
        let mut session_rng = seed::rng(cfg.seed ^ global, &[seed::tag("session")]);
        let variant = spec.session_variant(&mut session_rng);
        let rec = synth_utterance(&variant, cfg.recording_seconds, cfg.seed ^ global)?;
        clean.extend(split_into_chunks(&rec, cfg.chunk_seconds));
    }
    clean.truncate(cfg.utts_per_speaker);
    let n_chunk = clean[0].len();

    let mut degraded = Vec::with_capacity(clean.len());
    for (u, c) in clean.iter().enumerate() {
        let idx = (speaker_index * cfg.utts_per_speaker + u) as u64;
        let mut rng = seed::rng(cfg.seed ^ idx, &[seed::tag("degrade")]);
        let noise = if rng.random_bool(0.5) {
            white_noise(2 * n_chunk, rng.random())
        } else {
            babble[rng.random_range(0..babble.len())].clone()
        };
        degraded.push(mix_noise_at_snr(c, &noise, cfg.snr_db, &mut rng)?);
    }
    Ok(SpeakerAudio { clean, degraded })
}

/// Draws speaker specs and the train/eval split for a config.
pub fn corpus_speakers(cfg: &CorpusConfig) -> (Vec<SyntheticSpeakerSpec>, Vec<Split>) {
    let mut rng = seed::rng(cfg.seed, &[seed::tag("corpus")]);
    let specs: Vec<_> = (0..cfg.n_speakers)
        .map(|s| SyntheticSpeakerSpec::draw(format!("spk{s:03}"), &mut rng))
        .collect();
    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    order.shuffle(&mut rng);
    let mut split = vec![Split::Train; cfg.n_speakers];
    for &s in &order[..cfg.n_eval()] {
        split[s] = Split::Eval;
    }
    (specs, split)
}

/// Synthesizes the corpus into `out_dir` and writes the manifest, the
/// speaker parameter table and eval trial lists for both conditions.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    if cfg.chunk_seconds * SAMPLE_RATE as f64 > cfg.recording_seconds * SAMPLE_RATE as f64 {
        return Err(Error::Config("chunk longer than recording".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (specs, splits) = corpus_speakers(cfg);
    let babble = babble_bank(cfg)?;

    let jobs: Vec<usize> = (0..cfg.n_speakers).collect();
    let run = |s: &usize| speaker_audio(cfg, *s, &specs[*s], &babble);
    #[cfg(feature = "parallel")]
    let audio: Vec<Result<SpeakerAudio>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let audio: Vec<Result<SpeakerAudio>> = jobs.iter().map(run).collect();

    let mut entries = Vec::new();
    for (s, a) in audio.into_iter().enumerate() {
        let a = a?;
        let spk = &specs[s].speaker_id;
        let dir = out_dir.join("wav").join(spk);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (condition, waves) in [(Condition::Clean, &a.clean), (Condition::Degraded, &a.degraded)] {
            for (u, w) in waves.iter().enumerate() {
                let rel = PathBuf::from("wav").join(spk).join(format!("{spk}_u{u:03}_{condition}.wav"));
                save_wav(out_dir.join(&rel), w)?;
                entries.push(ManifestEntry {
                    path: rel,
                    speaker_id: spk.clone(),
                    split: splits[s],
                    condition,
                });
            }
        }
    }
    let manifest = CorpusManifest {
        entries,
        seed: cfg.seed,
        root: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    write_speakers(out_dir.join(SPEAKERS_FILE), &specs, &splits, cfg.seed)?;
    for condition in [Condition::Clean, Condition::Degraded] {
        let trials = crate::verification::corpus_trials(&manifest, condition, cfg.seed);
        let path = out_dir.join(format!("trials_{condition}.tsv"));
        crate::verification::write_trials(&path, &trials)?;
        crate::io::write_sidecar(&path, cfg.seed, &[])?;
    }
    Ok(manifest)
}

fn write_speakers(path: PathBuf, specs: &[SyntheticSpeakerSpec], splits: &[Split], seed: u64) -> Result<()> {
    let mut out = String::from(
        "speaker_id\tsplit\tbase_f0\tslope\tvibrato_rate\tvibrato_depth\tf1\tb1\tf2\tb2\tf3\tb3\tjitter\tnoise_floor\n",
    );
    for (s, split) in specs.iter().zip(splits) {
        let c = &s.contour;
        let f = &s.formants;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            s.speaker_id,
            split,
            s.base_f0,
            c.declination_slope,
            c.vibrato_rate,
            c.vibrato_depth,
            f[0].center,
            f[0].bandwidth,
            f[1].center,
            f[1].bandwidth,
            f[2].center,
            f[2].bandwidth,
            s.jitter,
            s.noise_floor
        ));
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    crate::io::write_sidecar(&path, seed, &[])
}
