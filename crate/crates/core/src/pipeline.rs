//! End-to-end experiment: corpus → training → embeddings → scores → reports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::{distance_report, distance_tsv, DistanceReport};
use crate::audio::{build_corpus, load_wav, Condition, CorpusConfig, CorpusManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::io::{write_sidecar, write_text, write_vectors};
use crate::model::{Model, ModelConfig};
use crate::trainer::{initial_checkpoint, train_loop, Checkpoint, TrainConfig, TrainOutcome, TrainSet};
use crate::verification::{
    evaluate, fuse_normalized, read_trials, score_trials, write_report, write_scores, DcfConfig, ScoreSet,
    VerificationReport,
};

pub const STYLE_SYSTEM: &str = "style";
pub const FILTERBANK_SYSTEM: &str = "filterbank";
pub const FUSED_SYSTEM: &str = "fused";

/// Which embedding a system uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Attention-weighted style-token embedding.
    Style,
    /// Time-averaged filterbank features.
    Filterbank,
}

/// Embeds waveforms by utterance id.
pub fn embed_entries(
    model: &Model,
    manifest: &CorpusManifest,
    entries: &[&ManifestEntry],
    kind: EmbeddingKind,
    deterministic: bool,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let run = |e: &&ManifestEntry| -> Result<(String, Vec<f64>)> {
        let w = load_wav(manifest.resolve(e))?;
        let v = match kind {
            EmbeddingKind::Style => model.embed(&w)?.vector,
            EmbeddingKind::Filterbank => model.filterbank_embedding(&w)?,
        };
        Ok((e.utterance_id(), v))
    };
    #[cfg(feature = "parallel")]
    if !deterministic {
        use rayon::prelude::*;
        return entries.par_iter().map(run).collect();
    }
    let _ = deterministic;
    entries.iter().map(run).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Weights of the style and filterbank systems in score fusion.
    pub fusion_weights: (f64, f64),
    pub dcf: DcfConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig {
                n_speakers: 30,
                eval_speakers: Some(10),
                ..CorpusConfig::default()
            },
            model: ModelConfig::compact(),
            train: TrainConfig::default(),
            fusion_weights: (1.0, 3.0),
            dcf: DcfConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// One seed drives corpus, initialization and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReports {
    pub style: VerificationReport,
    pub filterbank: VerificationReport,
    pub fused: VerificationReport,
}

impl ConditionReports {
    pub fn best_single_eer(&self) -> f64 {
        self.style.eer.min(self.filterbank.eer)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed: u64,
    pub clean: ConditionReports,
    pub degraded: ConditionReports,
    /// Style-embedding distances on the clean eval split.
    pub distances: DistanceReport,
    pub training: TrainOutcome,
}

/// Scores one condition's trials with both systems and their fusion, writing
/// embeddings, scores and reports into `dir`.
pub fn evaluate_condition(
    model: &Model,
    manifest: &CorpusManifest,
    condition: Condition,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(ConditionReports, BTreeMap<String, Vec<f64>>)> {
    let seed = cfg.train.seed;
    let det = cfg.train.deterministic;
    let entries: Vec<&ManifestEntry> = manifest.select(Split::Eval, Some(condition)).collect();
    let trials = read_trials(&manifest.root.join(format!("trials_{condition}.tsv")))?;
    let mut sets: Vec<ScoreSet> = Vec::new();
    let mut style_embeddings = BTreeMap::new();
    for (system, kind) in [(STYLE_SYSTEM, EmbeddingKind::Style), (FILTERBANK_SYSTEM, EmbeddingKind::Filterbank)] {
        let emb = embed_entries(model, manifest, &entries, kind, det)?;
        let path = dir.join(format!("embeddings_{system}_{condition}.tsv"));
        write_vectors(&path, &emb.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>())?;
        write_sidecar(&path, seed, &[])?;
        sets.push(score_trials(system, &emb, &trials)?);
        if kind == EmbeddingKind::Style {
            style_embeddings = emb;
        }
    }
    let (w1, w2) = cfg.fusion_weights;
    let mut fused = fuse_normalized(&sets[0], &sets[1], w1, w2)?;
    fused.system_id = FUSED_SYSTEM.into();
    sets.push(fused);
    let mut reports = Vec::new();
    for set in &sets {
        let path = dir.join(format!("scores_{}_{condition}.tsv", set.system_id));
        write_scores(&path, set)?;
        write_sidecar(&path, seed, &[])?;
        let report = evaluate(set, &cfg.dcf)?;
        let stem = format!("report_{}_{condition}", set.system_id);
        write_report(dir, &stem, &report)?;
        write_sidecar(&dir.join(format!("{stem}.tsv")), seed, &[])?;
        write_sidecar(&dir.join(format!("{stem}_det.tsv")), seed, &[])?;
        reports.push(report);
    }
    let fused = reports.pop().expect("three reports");
    let filterbank = reports.pop().expect("three reports");
    let style = reports.pop().expect("three reports");
    Ok((
        ConditionReports {
            style,
            filterbank,
            fused,
        },
        style_embeddings,
    ))
}

/// Groups embeddings by the speaker of each utterance.
pub fn group_by_speaker(
    manifest: &CorpusManifest,
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for e in &manifest.entries {
        if let Some(v) = embeddings.get(&e.utterance_id()) {
            groups.entry(e.speaker_id.clone()).or_default().push(v.clone());
        }
    }
    if groups.is_empty() {
        return Err(Error::DegenerateGrouping("no embeddings match the manifest".into()));
    }
    Ok(groups)
}

/// Builds the corpus under `out_dir/corpus`, trains under `out_dir/train`
/// and evaluates both conditions under `out_dir/eval`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let seed = cfg.train.seed;
    let manifest = build_corpus(&cfg.corpus, out_dir.join("corpus"))?;
    let set = TrainSet::from_manifest(&manifest)?;
    let start: Checkpoint = initial_checkpoint(cfg.model.clone(), seed)?;
    let training = train_loop(start, &cfg.train, &set, Some(&out_dir.join("train")))?;
    let model = &training.checkpoint.model;
    let eval_dir = out_dir.join("eval");
    std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    let (clean, clean_emb) = evaluate_condition(model, &manifest, Condition::Clean, cfg, &eval_dir)?;
    let (degraded, _) = evaluate_condition(model, &manifest, Condition::Degraded, cfg, &eval_dir)?;
    let distances = distance_report(&group_by_speaker(&manifest, &clean_emb)?)?;
    let path = eval_dir.join("distances.tsv");
    write_text(&path, &distance_tsv(&distances))?;
    write_sidecar(&path, seed, &[])?;
    let report = ExperimentReport {
        seed,
        clean,
        degraded,
        distances,
        training,
    };
    let path = out_dir.join("summary.tsv");
    write_text(&path, &summary_tsv(&report))?;
    write_sidecar(&path, seed, &[])?;
    Ok(report)
}

pub fn summary_tsv(r: &ExperimentReport) -> String {
    let mut out = String::from("condition\tsystem\teer\ttmr_at_fmr1\tmindcf_normalized\n");
    for (cond, c) in [("clean", &r.clean), ("degraded", &r.degraded)] {
        for rep in [&c.style, &c.filterbank, &c.fused] {
            out.push_str(&format!(
                "{cond}\t{}\t{}\t{}\t{}\n",
                rep.system_id, rep.eer, rep.tmr_at_fmr1, rep.min_dcf_normalized
            ));
        }
    }
    out.push_str(&format!("# intra_distance\t{}\n# inter_distance\t{}\n", r.distances.intra, r.distances.inter));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_experiment_runs_and_is_reproducible() {
        let cfg = ExperimentConfig {
            corpus: CorpusConfig {
                n_speakers: 6,
                utts_per_speaker: 4,
                eval_speakers: Some(3),
                recording_seconds: 2.0,
                chunk_seconds: 1.0,
                ..CorpusConfig::default()
            },
            model: ModelConfig::compact(),
            train: TrainConfig {
                epochs: 1,
                steps_per_epoch: Some(1),
                triplets_per_batch: 2,
                deterministic: true,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
        .with_seed(3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&cfg, a.path()).unwrap();
        let rb = run_experiment(&cfg, b.path()).unwrap();
        assert_eq!(ra.clean.style, rb.clean.style);
        for r in [&ra.clean.style, &ra.degraded.fused] {
            assert!((0.0..=1.0).contains(&r.eer));
        }
        for f in ["summary.tsv", "eval/scores_fused_degraded.tsv", "train/checkpoint.ckpt"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(crate::io::read_sidecar_seed(&a.path().join("summary.tsv")), Some(3));
    }
}
