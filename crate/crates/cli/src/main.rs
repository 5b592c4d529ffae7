mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, UsageError};
use vocal_style::analysis::{
    distance_report, distance_tsv, estimate_f0, f0_tsv, project_2d, projection_tsv, render_heatmap, spectrogram,
    spectrogram_tsv,
};
use vocal_style::audio::{build_corpus, load_wav, Condition, CorpusManifest, Split};
use vocal_style::io::{read_vectors, write_sidecar, write_vectors};
use vocal_style::pipeline::{embed_entries, group_by_speaker, EmbeddingKind};
use vocal_style::trainer::{initial_checkpoint, load_checkpoint, train_loop, TrainSet, CHECKPOINT_FILE};
use vocal_style::verification::{
    evaluate, fuse_normalized, read_scores, read_trials, report_tsv, score_trials, write_report, write_scores,
};

#[derive(Parser, Debug)]
#[command(name = "vocalstyle", version, about = "Vocal-style speaker embeddings: corpus, training, verification, analysis")]
struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single-threaded reductions everywhere.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Directory for every artifact the command writes.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.margin=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the speaker corpus, manifest and trial lists.
    SynthCorpus(SynthArgs),
    /// Train the filterbank and style encoder jointly with a triplet loss.
    Train(TrainArgs),
    /// Embed manifest utterances.
    Embed(EmbedArgs),
    /// Cosine-score a trial list from an embedding file.
    Score(ScoreArgs),
    /// DET curve, EER, TMR@FMR=1% and minDCF of a score file.
    Evaluate(EvaluateArgs),
    /// Z-normalize two score files and take their weighted mean.
    Fuse(FuseArgs),
    /// Spectrogram and pitch of a WAV file, or distances and a 2-D projection of embeddings.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    speakers: Option<usize>,
    /// Utterances per speaker and condition.
    #[arg(long)]
    utts: Option<usize>,
    #[arg(long)]
    eval_speakers: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Continue from a checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Style,
    Filterbank,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConditionArg {
    Clean,
    Degraded,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "eval")]
    split: SplitArg,
    /// Both conditions when omitted.
    #[arg(long, value_enum)]
    condition: Option<ConditionArg>,
    #[arg(long, value_enum, default_value = "style")]
    kind: KindArg,
    /// Defaults to `<out-dir>/embeddings.tsv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value = "style")]
    system: String,
    /// Defaults to `<out-dir>/scores.tsv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Report file stem inside the output directory.
    #[arg(long, default_value = "report")]
    name: String,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Two score files: the style system first, the filterbank system second.
    #[arg(long, num_args = 2, required = true)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    /// Defaults to `<out-dir>/fused_scores.tsv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Writes spectrogram.tsv, f0.tsv and spectrogram.png.
    #[arg(long, conflicts_with = "embeddings")]
    wav: Option<PathBuf>,
    /// Writes distances.tsv and projection.tsv; needs --manifest for speakers.
    #[arg(long, requires = "manifest")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Skip the PNG rendering.
    #[arg(long)]
    no_png: bool,
}

impl Cli {
    /// Flag values expressed as config keys.
    fn overrides(&self) -> Result<Vec<(String, String)>, UsageError> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("deterministic", self.deterministic.then(|| "true".to_string()));
        push("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        match &self.command {
            Command::SynthCorpus(a) => {
                push("corpus.speakers", a.speakers.map(|v| v.to_string()));
                push("corpus.utts", a.utts.map(|v| v.to_string()));
                push("corpus.eval_speakers", a.eval_speakers.map(|v| v.to_string()));
                push("corpus.snr_db", a.snr_db.map(|v| v.to_string()));
            }
            Command::Train(a) => {
                push("train.epochs", a.epochs.map(|v| v.to_string()));
                push("model.preset", a.preset.clone());
            }
            Command::Fuse(a) => {
                push("fusion.w1", a.w1.map(|v| v.to_string()));
                push("fusion.w2", a.w2.map(|v| v.to_string()));
            }
            _ => {}
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {s:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn out_path(cfg: &RunConfig, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let p = match given {
        Some(p) => p.clone(),
        None => cfg.out_dir().join(default),
    };
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(p)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn synth_corpus(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.corpus()?;
    let dir = ensure_out_dir(cfg)?;
    let manifest = build_corpus(&corpus, dir)?;
    println!(
        "wrote {} utterances from {} speakers to {}",
        manifest.entries.len(),
        corpus.n_speakers,
        dir.display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let set = TrainSet::from_manifest(&manifest)?;
    let tc = cfg.train()?;
    let start = match &a.resume {
        Some(p) => load_checkpoint(p)?,
        None => initial_checkpoint(cfg.model()?, cfg.seed())?,
    };
    let dir = ensure_out_dir(cfg)?;
    let cfg_path = dir.join("config.resolved");
    std::fs::write(&cfg_path, cfg.dump()).with_context(|| format!("writing {}", cfg_path.display()))?;
    eprintln!(
        "training on {} utterances of {} speakers for {} epochs",
        set.len(),
        set.speakers.len(),
        tc.epochs
    );
    let out = train_loop(start, &tc, &set, Some(dir))?;
    write_sidecar(&dir.join(CHECKPOINT_FILE), cfg.seed(), &[])?;
    for (e, loss) in vocal_style::trainer::epoch_means(&out.log) {
        eprintln!("epoch {e}: mean loss {loss:.4}");
    }
    println!("{}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn embed(cfg: &RunConfig, a: &EmbedArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let manifest = CorpusManifest::load(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Eval => Split::Eval,
    };
    let condition = a.condition.map(|c| match c {
        ConditionArg::Clean => Condition::Clean,
        ConditionArg::Degraded => Condition::Degraded,
    });
    let kind = match a.kind {
        KindArg::Style => EmbeddingKind::Style,
        KindArg::Filterbank => EmbeddingKind::Filterbank,
    };
    let entries: Vec<_> = manifest.select(split, condition).collect();
    if entries.is_empty() {
        bail!("no manifest entries for the requested split and condition");
    }
    let emb = embed_entries(&ck.model, &manifest, &entries, kind, cfg.deterministic())?;
    let path = out_path(cfg, &a.output, "embeddings.tsv")?;
    write_vectors(&path, &emb.into_iter().collect::<Vec<_>>())?;
    write_sidecar(&path, cfg.seed(), &[])?;
    println!("{}", path.display());
    Ok(())
}

fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(read_vectors(path)?.into_iter().collect())
}

fn score(cfg: &RunConfig, a: &ScoreArgs) -> Result<()> {
    let emb = read_embeddings(&a.embeddings)?;
    let trials = read_trials(&a.trials)?;
    let set = score_trials(&a.system, &emb, &trials)?;
    let path = out_path(cfg, &a.output, "scores.tsv")?;
    write_scores(&path, &set)?;
    write_sidecar(&path, cfg.seed(), &[])?;
    println!("{}", path.display());
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs) -> Result<()> {
    let trials = read_trials(&a.trials)?;
    let set = read_scores(&a.scores, &trials)?;
    let report = evaluate(&set, &cfg.dcf()?)?;
    let dir = ensure_out_dir(cfg)?;
    write_report(dir, &a.name, &report)?;
    write_sidecar(&dir.join(format!("{}.tsv", a.name)), cfg.seed(), &[])?;
    write_sidecar(&dir.join(format!("{}_det.tsv", a.name)), cfg.seed(), &[])?;
    print!("{}", report_tsv(&report));
    Ok(())
}

fn fuse_cmd(cfg: &RunConfig, a: &FuseArgs) -> Result<()> {
    let trials = read_trials(&a.trials)?;
    let s1 = read_scores(&a.scores[0], &trials)?;
    let s2 = read_scores(&a.scores[1], &trials)?;
    let (w1, w2) = cfg.fusion_weights()?;
    let mut fused = fuse_normalized(&s1, &s2, w1, w2)?;
    fused.system_id = "fused".into();
    let path = out_path(cfg, &a.output, "fused_scores.tsv")?;
    write_scores(&path, &fused)?;
    write_sidecar(&path, cfg.seed(), &[("weights", format!("{w1}:{w2}"))])?;
    println!("{}", path.display());
    Ok(())
}

fn analyze(cfg: &RunConfig, a: &AnalyzeArgs) -> Result<()> {
    let dir = ensure_out_dir(cfg)?;
    let seed = cfg.seed();
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        write_sidecar(&p, seed, &[])?;
        println!("{}", p.display());
        Ok(())
    };
    if let Some(wav) = &a.wav {
        let w = load_wav(wav)?;
        let spec = spectrogram(&w)?;
        let f0 = estimate_f0(&w);
        write("spectrogram.tsv", spectrogram_tsv(&spec))?;
        write("f0.tsv", f0_tsv(&f0))?;
        if !a.no_png {
            let (width, height, rgb) = render_heatmap(&spec, Some(&f0));
            let img = image::RgbImage::from_raw(width, height, rgb).context("heat map buffer size")?;
            let p = dir.join("spectrogram.png");
            img.save(&p).with_context(|| format!("writing {}", p.display()))?;
            println!("{}", p.display());
        }
        return Ok(());
    }
    if let (Some(emb_path), Some(manifest)) = (&a.embeddings, &a.manifest) {
        let emb = read_embeddings(emb_path)?;
        let manifest = CorpusManifest::load(manifest)?;
        let report = distance_report(&group_by_speaker(&manifest, &emb)?)?;
        write("distances.tsv", distance_tsv(&report))?;
        let ids: Vec<String> = emb.keys().cloned().collect();
        let vecs: Vec<Vec<f64>> = emb.into_values().collect();
        write("projection.tsv", projection_tsv(&ids, &project_2d(&vecs)?))?;
        eprintln!("mean intra-speaker distance {:.4}, inter-speaker {:.4}", report.intra, report.inter);
        return Ok(());
    }
    Err(UsageError("analyze needs --wav or --embeddings with --manifest".into()).into())
}

fn run(cli: &Cli) -> Result<()> {
    let flags = cli.overrides()?;
    let cfg = RunConfig::resolve(cli.config.as_deref(), std::env::vars(), &flags)?;
    for line in cfg.dump().lines() {
        eprintln!("config: {line}");
    }
    match &cli.command {
        Command::SynthCorpus(_) => synth_corpus(&cfg),
        Command::Train(a) => train(&cfg, a),
        Command::Embed(a) => embed(&cfg, a),
        Command::Score(a) => score(&cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Fuse(a) => fuse_cmd(&cfg, a),
        Command::Analyze(a) => analyze(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            let kind = if usage { "usage" } else { "runtime" };
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
