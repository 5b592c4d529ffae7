//! Trial scoring, DET sweeps, EER / TMR@FMR / minDCF, and z-normalized
//! weighted score fusion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::audio::{Condition, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::io::{data_lines, read_text, write_text};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Genuine,
    Impostor,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "tgt",
            Label::Impostor => "non",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: Label,
}

impl Trial {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>, label: Label) -> Result<Self> {
        let (enroll, test) = (enroll.into(), test.into());
        if enroll == test {
            return Err(Error::InvalidScores(format!("trial compares {enroll} with itself")));
        }
        Ok(Self { enroll, test, label })
    }

    fn key(&self) -> (&str, &str) {
        (&self.enroll, &self.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub system_id: String,
    pub scores: Vec<(Trial, f64)>,
}

impl ScoreSet {
    pub fn new(system_id: impl Into<String>, scores: Vec<(Trial, f64)>) -> Self {
        Self {
            system_id: system_id.into(),
            scores,
        }
    }

    /// Builds a set from bare genuine and impostor scores with synthetic ids.
    pub fn from_labeled(system_id: &str, genuine: &[f64], impostor: &[f64]) -> Self {
        let mk = |label: Label, i: usize, s: f64| {
            let tag = if label == Label::Genuine { "g" } else { "i" };
            (
                Trial {
                    enroll: format!("{tag}{i}e"),
                    test: format!("{tag}{i}t"),
                    label,
                },
                s,
            )
        };
        let scores = genuine
            .iter()
            .enumerate()
            .map(|(i, &s)| mk(Label::Genuine, i, s))
            .chain(impostor.iter().enumerate().map(|(i, &s)| mk(Label::Impostor, i, s)))
            .collect();
        Self::new(system_id, scores)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Checks finiteness and that both classes are present.
    pub fn validate(&self) -> Result<()> {
        if let Some((t, s)) = self.scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::InvalidScores(format!("non-finite score {s} for ({}, {})", t.enroll, t.test)));
        }
        for label in [Label::Genuine, Label::Impostor] {
            if !self.scores.iter().any(|(t, _)| t.label == label) {
                return Err(Error::InvalidScores(format!("no {label} trials")));
            }
        }
        Ok(())
    }

    fn split_labels(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = Vec::new();
        let mut i = Vec::new();
        for (t, s) in &self.scores {
            match t.label {
                Label::Genuine => g.push(*s),
                Label::Impostor => i.push(*s),
            }
        }
        (g, i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfConfig {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 10.0,
            c_fa: 1.0,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) || !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::Config(format!("invalid DCF parameters {self:?}")));
        }
        Ok(())
    }

    /// Cost of the better trivial system (accept all or reject all).
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

/// Operating point: accept iff `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub system_id: String,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub det: Vec<DetPoint>,
    pub eer: f64,
    pub tmr_at_fmr1: f64,
    pub min_dcf: f64,
    pub min_dcf_normalized: f64,
}

/// Dot product of unit-norm embeddings.
pub fn cosine_score(e1: &[f64], e2: &[f64]) -> f64 {
    crate::nn::dot(e1, e2)
}

/// Exact DET curve over every distinct score plus `−∞`/`+∞` sentinels, in
/// increasing threshold order.
pub fn sweep_det(set: &ScoreSet) -> Result<Vec<DetPoint>> {
    set.validate()?;
    let (mut g, mut i) = set.split_labels();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut out = Vec::with_capacity(thresholds.len() + 2);
    out.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        fmr: 1.0,
        fnmr: 0.0,
    });
    // both lists sorted: count of scores below the threshold advances monotonically
    let (mut gi, mut ii) = (0, 0);
    for &th in &thresholds {
        while gi < g.len() && g[gi] < th {
            gi += 1;
        }
        while ii < i.len() && i[ii] < th {
            ii += 1;
        }
        out.push(DetPoint {
            threshold: th,
            fmr: (i.len() - ii) as f64 / ni,
            fnmr: gi as f64 / ng,
        });
    }
    out.push(DetPoint {
        threshold: f64::INFINITY,
        fmr: 0.0,
        fnmr: 1.0,
    });
    Ok(out)
}

/// Rate at which FMR = FNMR, interpolated linearly between the adjacent DET
/// points that straddle the crossing.
pub fn compute_eer(det: &[DetPoint]) -> f64 {
    for w in det.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.fmr - a.fnmr, b.fmr - b.fnmr);
        if da == 0.0 {
            return a.fmr;
        }
        if da > 0.0 && db <= 0.0 {
            let alpha = da / (da - db);
            return a.fmr + alpha * (b.fmr - a.fmr);
        }
    }
    // unreachable for a valid sweep, which ends at FMR 0, FNMR 1
    det.last().map_or(0.5, |p| p.fmr)
}

/// Best true match rate among operating points with FMR ≤ `target`.
pub fn compute_tmr_at_fmr(det: &[DetPoint], target: f64) -> f64 {
    det.iter()
        .filter(|p| p.fmr <= target)
        .map(|p| 1.0 - p.fnmr)
        .fold(0.0, f64::max)
}

/// `(raw, normalized)` minimum detection cost over the DET grid.
pub fn compute_min_dcf(det: &[DetPoint], cfg: &DcfConfig) -> (f64, f64) {
    let raw = det
        .iter()
        .map(|p| cfg.c_miss * cfg.p_target * p.fnmr + cfg.c_fa * (1.0 - cfg.p_target) * p.fmr)
        .fold(f64::INFINITY, f64::min);
    (raw, raw / cfg.default_cost())
}

/// Whole-set zero mean, unit (population) standard deviation.
pub fn znorm(set: &ScoreSet) -> Result<ScoreSet> {
    let n = set.len() as f64;
    if set.len() < 2 {
        return Err(Error::ZeroVariance(format!("{} has fewer than 2 scores", set.system_id)));
    }
    let mean = set.scores.iter().map(|(_, s)| s).sum::<f64>() / n;
    let var = set.scores.iter().map(|(_, s)| (s - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance(format!("all scores of {} are equal", set.system_id)));
    }
    let sd = var.sqrt();
    Ok(ScoreSet::new(
        set.system_id.clone(),
        set.scores.iter().map(|(t, s)| (t.clone(), (s - mean) / sd)).collect(),
    ))
}

/// Weighted mean `(w1·s1 + w2·s2)/(w1+w2)` of two sets aligned by
/// `(enroll, test)`. Inputs are used as given; z-normalize them first.
pub fn fuse(s1: &ScoreSet, s2: &ScoreSet, w1: f64, w2: f64) -> Result<ScoreSet> {
    if !(w1 >= 0.0 && w2 >= 0.0 && w1 + w2 > 0.0) {
        return Err(Error::Config(format!("fusion weights must be non-negative with positive sum, got ({w1}, {w2})")));
    }
    let index: BTreeMap<(&str, &str), (Label, f64)> = s2.scores.iter().map(|(t, s)| (t.key(), (t.label, *s))).collect();
    let keys1: BTreeSet<(&str, &str)> = s1.scores.iter().map(|(t, _)| t.key()).collect();
    let mut missing: Vec<String> = s1
        .scores
        .iter()
        .filter(|(t, _)| !index.contains_key(&t.key()))
        .map(|(t, _)| format!("({}, {}) absent from {}", t.enroll, t.test, s2.system_id))
        .collect();
    missing.extend(
        index
            .keys()
            .filter(|k| !keys1.contains(*k))
            .map(|(e, t)| format!("({e}, {t}) absent from {}", s1.system_id)),
    );
    if !missing.is_empty() {
        return Err(Error::TrialMismatch(missing.join("; ")));
    }
    let mut scores = Vec::with_capacity(s1.len());
    for (t, a) in &s1.scores {
        let (label, b) = index[&t.key()];
        if label != t.label {
            return Err(Error::TrialMismatch(format!("({}, {}) labelled differently", t.enroll, t.test)));
        }
        scores.push((t.clone(), (w1 * a + w2 * b) / (w1 + w2)));
    }
    Ok(ScoreSet::new(format!("fused({}:{w1},{}:{w2})", s1.system_id, s2.system_id), scores))
}

/// Z-normalizes both systems and fuses them.
pub fn fuse_normalized(s1: &ScoreSet, s2: &ScoreSet, w1: f64, w2: f64) -> Result<ScoreSet> {
    fuse(&znorm(s1)?, &znorm(s2)?, w1, w2)
}

/// Scores trials by cosine similarity of the given embeddings.
pub fn score_trials(system_id: &str, embeddings: &BTreeMap<String, Vec<f64>>, trials: &[Trial]) -> Result<ScoreSet> {
    let get = |id: &str| embeddings.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()));
    let scores = trials
        .iter()
        .map(|t| Ok((t.clone(), cosine_score(get(&t.enroll)?, get(&t.test)?))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet::new(system_id, scores))
}

pub fn evaluate(set: &ScoreSet, cfg: &DcfConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let det = sweep_det(set)?;
    let (g, i) = set.split_labels();
    let (min_dcf, min_dcf_normalized) = compute_min_dcf(&det, cfg);
    Ok(VerificationReport {
        system_id: set.system_id.clone(),
        n_genuine: g.len(),
        n_impostor: i.len(),
        eer: compute_eer(&det),
        tmr_at_fmr1: compute_tmr_at_fmr(&det, 0.01),
        min_dcf,
        min_dcf_normalized,
        det,
    })
}

/// Scores embeddings against a trial list and evaluates the result.
pub fn evaluate_embeddings(
    system_id: &str,
    embeddings: &BTreeMap<String, Vec<f64>>,
    trials: &[Trial],
    cfg: &DcfConfig,
) -> Result<VerificationReport> {
    evaluate(&score_trials(system_id, embeddings, trials)?, cfg)
}

/// Every same-speaker pair of the eval split under `condition`, plus as many
/// seeded different-speaker pairs. Pairs are drawn over (speaker, utterance
/// index) positions independently of `condition`, so the clean and degraded
/// lists compare the same underlying recordings.
pub fn corpus_trials(manifest: &CorpusManifest, condition: Condition, seed: u64) -> Vec<Trial> {
    let mut by_speaker: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for e in manifest.select(Split::Eval, Some(condition)) {
        by_speaker.entry(&e.speaker_id).or_default().push(e.utterance_id());
    }
    for utts in by_speaker.values_mut() {
        utts.sort();
    }
    let speakers: Vec<&Vec<String>> = by_speaker.values().collect();
    let mut trials = Vec::new();
    for utts in &speakers {
        for a in 0..utts.len() {
            for b in a + 1..utts.len() {
                trials.push(Trial {
                    enroll: utts[a].clone(),
                    test: utts[b].clone(),
                    label: Label::Genuine,
                });
            }
        }
    }
    if speakers.len() < 2 {
        return trials;
    }
    let target = trials.len();
    let mut rng = seed::rng(seed, &[seed::tag("impostor-trials")]);
    let mut seen = BTreeSet::new();
    let mut impostors = Vec::with_capacity(target);
    let max_pairs: usize = (0..speakers.len())
        .flat_map(|a| (a + 1..speakers.len()).map(move |b| (a, b)))
        .map(|(a, b)| speakers[a].len() * speakers[b].len())
        .sum();
    while impostors.len() < target.min(max_pairs) {
        let sa = rng.random_range(0..speakers.len());
        let mut sb = rng.random_range(0..speakers.len() - 1);
        if sb >= sa {
            sb += 1;
        }
        let (ua, ub) = (rng.random_range(0..speakers[sa].len()), rng.random_range(0..speakers[sb].len()));
        let key = if sa < sb { (sa, ua, sb, ub) } else { (sb, ub, sa, ua) };
        if seen.insert(key) {
            impostors.push(Trial {
                enroll: speakers[key.0][key.1].clone(),
                test: speakers[key.2][key.3].clone(),
                label: Label::Impostor,
            });
        }
    }
    trials.extend(impostors);
    trials
}

/// `enroll test tgt|non` rows.
pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    let text: String = trials
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.enroll, t.test, t.label))
        .collect();
    write_text(path, &text)
}

fn parse_label(path: &Path, line: usize, s: &str) -> Result<Label> {
    match s {
        "tgt" => Ok(Label::Genuine),
        "non" => Ok(Label::Impostor),
        other => Err(Error::parse(path, line, format!("label must be tgt or non, got {other:?}"))),
    }
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(ln, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(path, ln, format!("expected 3 columns, found {}", cols.len())));
            }
            Trial::new(cols[0], cols[1], parse_label(path, ln, cols[2])?).map_err(|e| Error::parse(path, ln, e.to_string()))
        })
        .collect()
}

/// `enroll test score system` rows. Labels are not stored; reading pairs the
/// rows with a trial list.
pub fn write_scores(path: &Path, set: &ScoreSet) -> Result<()> {
    let text: String = set
        .scores
        .iter()
        .map(|(t, s)| format!("{}\t{}\t{}\t{}\n", t.enroll, t.test, s, set.system_id))
        .collect();
    write_text(path, &text)
}

/// Reads a score file, taking labels from `trials`. Every trial must be
/// scored and every score must belong to a trial.
pub fn read_scores(path: &Path, trials: &[Trial]) -> Result<ScoreSet> {
    let text = read_text(path)?;
    let mut system = None;
    let mut rows: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (ln, line) in data_lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, ln, format!("expected 4 columns, found {}", cols.len())));
        }
        let score: f64 = cols[2]
            .parse()
            .map_err(|e| Error::parse(path, ln, format!("score {:?}: {e}", cols[2])))?;
        match &system {
            None => system = Some(cols[3].to_string()),
            Some(s) if s != cols[3] => {
                return Err(Error::parse(path, ln, format!("mixed systems {s:?} and {:?}", cols[3])))
            }
            _ => {}
        }
        if rows.insert((cols[0].into(), cols[1].into()), score).is_some() {
            return Err(Error::parse(path, ln, format!("duplicate pair ({}, {})", cols[0], cols[1])));
        }
    }
    let mut missing = Vec::new();
    let mut scores = Vec::with_capacity(trials.len());
    for t in trials {
        match rows.remove(&(t.enroll.clone(), t.test.clone())) {
            Some(s) => scores.push((t.clone(), s)),
            None => missing.push(format!("({}, {}) unscored", t.enroll, t.test)),
        }
    }
    missing.extend(rows.keys().map(|(e, t)| format!("({e}, {t}) not in trial list")));
    if !missing.is_empty() {
        return Err(Error::TrialMismatch(missing.join("; ")));
    }
    Ok(ScoreSet::new(system.unwrap_or_default(), scores))
}

/// Key-value summary TSV.
pub fn report_tsv(r: &VerificationReport) -> String {
    format!(
        "key\tvalue\nsystem\t{}\nn_genuine\t{}\nn_impostor\t{}\neer\t{}\ntmr_at_fmr1\t{}\nmindcf\t{}\nmindcf_normalized\t{}\n",
        r.system_id, r.n_genuine, r.n_impostor, r.eer, r.tmr_at_fmr1, r.min_dcf, r.min_dcf_normalized
    )
}

pub fn det_tsv(det: &[DetPoint]) -> String {
    let mut out = String::from("threshold\tfmr\tfnmr\n");
    for p in det {
        out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.fmr, p.fnmr));
    }
    out
}

/// Writes `<stem>.tsv` (summary) and `<stem>_det.tsv` into `dir`.
pub fn write_report(dir: &Path, stem: &str, r: &VerificationReport) -> Result<()> {
    write_text(&dir.join(format!("{stem}.tsv")), &report_tsv(r))?;
    write_text(&dir.join(format!("{stem}_det.tsv")), &det_tsv(&r.det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal};

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::from_labeled("t", g, i)
    }

    fn eer_of(g: &[f64], i: &[f64]) -> f64 {
        compute_eer(&sweep_det(&set(g, i)).unwrap())
    }

    /// Independent recount: for every candidate threshold, count directly.
    fn brute(g: &[f64], i: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut th: Vec<f64> = vec![f64::NEG_INFINITY, f64::INFINITY];
        th.extend(g.iter().chain(i));
        th.sort_by(f64::total_cmp);
        th.dedup();
        th.iter()
            .map(|&t| {
                let fa = i.iter().filter(|&&s| s >= t).count() as f64 / i.len() as f64;
                let miss = g.iter().filter(|&&s| s < t).count() as f64 / g.len() as f64;
                (t, fa, miss)
            })
            .collect()
    }

    fn random_set(seed: u64, ng: usize, ni: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seed::rng(seed, &[]);
        let n = Normal::new(0.0, 1.0).unwrap();
        // coarse rounding creates ties
        let g = (0..ng).map(|_| ((n.sample(&mut rng) + 1.0) * 10.0f64).round() / 10.0).collect();
        let i = (0..ni).map(|_| (n.sample(&mut rng) * 10.0f64).round() / 10.0).collect();
        (g, i)
    }

    #[test]
    fn cosine_trivial_cases() {
        assert_eq!(cosine_score(&[0.6, 0.8], &[0.6, 0.8]), 1.0);
        assert_eq!(cosine_score(&[0.6, 0.8], &[-0.6, -0.8]), -1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn separated_scores_have_perfect_point() {
        let det = sweep_det(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert!(det.iter().any(|p| p.fmr == 0.0 && p.fnmr == 0.0));
    }

    #[test]
    fn equal_scores_give_two_endpoints_only() {
        let det = sweep_det(&set(&[0.5, 0.5], &[0.5])).unwrap();
        let pts: BTreeSet<(u64, u64)> = det.iter().map(|p| (p.fmr.to_bits(), p.fnmr.to_bits())).collect();
        assert_eq!(pts, BTreeSet::from([(1f64.to_bits(), 0f64.to_bits()), (0f64.to_bits(), 1f64.to_bits())]));
        assert_eq!(compute_tmr_at_fmr(&det, 0.01), 0.0);
    }

    #[test]
    fn sweep_matches_recount() {
        let (g, i) = random_set(3, 20, 30);
        let det = sweep_det(&set(&g, &i)).unwrap();
        let b = brute(&g, &i);
        assert_eq!(det.len(), b.len());
        for (p, (t, fa, miss)) in det.iter().zip(&b) {
            assert_eq!(p.threshold, *t);
            assert_eq!(p.fmr, *fa);
            assert_eq!(p.fnmr, *miss);
        }
        for w in det.windows(2) {
            assert!(w[1].fmr <= w[0].fmr && w[1].fnmr >= w[0].fnmr);
        }
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer_of(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.3]), 0.0);
        assert_abs_diff_eq!(eer_of(&[0.8, 0.2], &[0.7, 0.1]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(eer_of(&[0.5], &[0.5]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tmr_and_dcf_separated() {
        let det = sweep_det(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert_eq!(compute_tmr_at_fmr(&det, 0.01), 1.0);
        assert_eq!(compute_min_dcf(&det, &DcfConfig::default()), (0.0, 0.0));
    }

    #[test]
    fn tmr_matches_brute_force() {
        let (g, i) = random_set(11, 60, 200);
        let det = sweep_det(&set(&g, &i)).unwrap();
        let oracle = brute(&g, &i)
            .into_iter()
            .filter(|(_, fa, _)| *fa <= 0.01)
            .map(|(_, _, miss)| 1.0 - miss)
            .fold(0.0, f64::max);
        assert_eq!(compute_tmr_at_fmr(&det, 0.01), oracle);
    }

    #[test]
    fn min_dcf_matches_scan_and_is_bounded() {
        let cfg = DcfConfig::default();
        for s in 0..20 {
            let (g, i) = random_set(100 + s, 50, 50);
            let det = sweep_det(&set(&g, &i)).unwrap();
            let oracle = brute(&g, &i)
                .into_iter()
                .map(|(_, fa, miss)| 10.0 * 0.01 * miss + 0.99 * fa)
                .fold(f64::INFINITY, f64::min);
            let (raw, norm) = compute_min_dcf(&det, &cfg);
            assert_abs_diff_eq!(raw, oracle, epsilon = 1e-12);
            assert_abs_diff_eq!(norm, oracle / 0.1, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&norm));
        }
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(matches!(sweep_det(&set(&[0.1], &[])), Err(Error::InvalidScores(_))));
        assert!(matches!(sweep_det(&set(&[f64::NAN], &[0.1])), Err(Error::InvalidScores(_))));
        assert!(Trial::new("a", "a", Label::Genuine).is_err());
    }

    #[test]
    fn znorm_properties() {
        let (g, i) = random_set(5, 30, 30);
        let s = set(&g, &i);
        let z = znorm(&s).unwrap();
        let n = z.len() as f64;
        let mean = z.scores.iter().map(|x| x.1).sum::<f64>() / n;
        let var = z.scores.iter().map(|x| (x.1 - mean).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        for a in 0..s.len() {
            for b in 0..s.len() {
                if s.scores[a].1 < s.scores[b].1 {
                    assert!(z.scores[a].1 < z.scores[b].1);
                }
            }
        }
        let zz = znorm(&z).unwrap();
        for (x, y) in z.scores.iter().zip(&zz.scores) {
            assert_abs_diff_eq!(x.1, y.1, epsilon = 1e-12);
        }
        assert!(matches!(znorm(&set(&[1.0], &[1.0])), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn fuse_examples() {
        let a = set(&[0.4], &[0.1]);
        let b = set(&[0.8], &[0.3]);
        let f = fuse(&a, &b, 1.0, 3.0).unwrap();
        assert_abs_diff_eq!(f.scores[0].1, 0.7, epsilon = 1e-12);
        let only1 = fuse(&a, &b, 1.0, 0.0).unwrap();
        assert_eq!(only1.scores.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.4, 0.1]);
        let same = fuse(&a, &a, 1.0, 1.0).unwrap();
        assert_eq!(same.scores, a.scores.iter().cloned().collect::<Vec<_>>());
        let scaled = fuse(&a, &b, 2.5, 7.5).unwrap();
        for (x, y) in f.scores.iter().zip(&scaled.scores) {
            assert_abs_diff_eq!(x.1, y.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn fuse_aligns_by_pair_and_reports_missing() {
        let a = set(&[0.4, 0.2], &[0.1]);
        let mut b = a.clone();
        b.system_id = "b".into();
        b.scores.reverse();
        let f = fuse(&a, &b, 1.0, 3.0).unwrap();
        assert_eq!(f.scores.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.4, 0.2, 0.1]);
        b.scores.pop();
        let err = fuse(&a, &b, 1.0, 3.0).unwrap_err().to_string();
        assert!(err.contains("(g0e, g0t)"), "{err}");
    }

    #[test]
    fn evaluate_matches_oracle_and_is_bounded() {
        let (g, i) = random_set(9, 12, 18);
        let s = set(&g, &i);
        let r = evaluate(&s, &DcfConfig::default()).unwrap();
        for v in [r.eer, r.tmr_at_fmr1, r.min_dcf_normalized] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r, evaluate(&s, &DcfConfig::default()).unwrap());
        let b = brute(&g, &i);
        let dcf = b.iter().map(|(_, fa, miss)| 0.1 * miss + 0.99 * fa).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(r.min_dcf, dcf, epsilon = 1e-12);
    }

    #[test]
    fn missing_embedding_named() {
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), vec![1.0, 0.0]);
        let trials = vec![Trial::new("a", "b", Label::Genuine).unwrap()];
        let err = score_trials("s", &e, &trials).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding(ref id) if id == "b"));
    }

    #[test]
    fn trial_and_score_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (g, i) = random_set(2, 5, 5);
        let s = set(&g, &i);
        let trials: Vec<Trial> = s.scores.iter().map(|x| x.0.clone()).collect();
        let tp = dir.path().join("t.tsv");
        write_trials(&tp, &trials).unwrap();
        assert_eq!(read_trials(&tp).unwrap(), trials);
        let sp = dir.path().join("s.tsv");
        write_scores(&sp, &s).unwrap();
        assert_eq!(read_scores(&sp, &trials).unwrap(), s);
        assert!(matches!(read_scores(&sp, &trials[1..]), Err(Error::TrialMismatch(_))));
        std::fs::write(&tp, "a\tb\tmaybe\n").unwrap();
        let err = read_trials(&tp).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
