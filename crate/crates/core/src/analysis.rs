//! Spectrograms, autocorrelation pitch tracking, embedding-distance reports
//! and a 2-D principal-component projection.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::synth::{SyntheticSpeakerSpec, MAX_F0, MIN_F0};
use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::frontend::FramingConfig;

pub const FFT_SIZE: usize = 256;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;
pub const DB_FLOOR: f64 = -80.0;
/// Pitch analysis window (40 ms), centered on each spectrogram frame.
pub const F0_WINDOW: usize = 320;
const VOICING_THRESHOLD: f64 = 0.5;
const ENERGY_THRESHOLD: f64 = 1e-6;
/// The first local maximum within this fraction of the global one wins,
/// which avoids picking a multiple of the period.
const PEAK_RATIO: f64 = 0.9;

fn framing() -> FramingConfig {
    FramingConfig::default()
}

/// Short-time magnitudes, `frames × N_BINS`, in dB with a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub db: Vec<f64>,
    pub frames: usize,
    pub frame_rate: f64,
}

impl Spectrogram {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.db[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn bin_hz(bin: usize) -> f64 {
        bin as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Complex spectrum of every Hann-windowed, zero-padded frame.
pub fn stft(samples: &[f64]) -> Result<Vec<Vec<Complex<f64>>>> {
    let cfg = framing();
    let frames = cfg.frame_count(samples.len()).ok_or(Error::ShortInput {
        len: samples.len(),
        window: cfg.window,
    })?;
    let win = hann(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    Ok((0..frames)
        .map(|t| {
            let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
            let start = t * cfg.hop;
            for (i, (x, w)) in samples[start..start + cfg.window].iter().zip(&win).enumerate() {
                buf[i].re = x * w;
            }
            fft.process(&mut buf);
            buf
        })
        .collect())
}

pub fn spectrogram(w: &Waveform) -> Result<Spectrogram> {
    let spectra = stft(w.samples())?;
    let frames = spectra.len();
    let db = spectra
        .iter()
        .flat_map(|s| s[..N_BINS].iter().map(|c| (20.0 * c.norm().log10()).max(DB_FLOOR)))
        .collect();
    Ok(Spectrogram {
        db,
        frames,
        frame_rate: framing().frame_rate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Frame {
    /// `None` when unvoiced.
    pub f0: Option<f64>,
    pub periodicity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub frames: Vec<F0Frame>,
    pub frame_rate: f64,
}

impl F0Contour {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.frames.iter().filter(|f| f.f0.is_some()).count()
    }

    /// Center time of frame `t` in seconds.
    pub fn time(&self, t: usize) -> f64 {
        frame_center(t) as f64 / SAMPLE_RATE as f64
    }
}

fn frame_center(t: usize) -> usize {
    let cfg = framing();
    t * cfg.hop + cfg.window / 2
}

/// Normalized autocorrelation at `lag` over the overlapping part of `x`.
fn nacf(x: &[f64], lag: usize) -> f64 {
    let (a, b) = (&x[..x.len() - lag], &x[lag..]);
    let ab = crate::nn::dot(a, b);
    let denom = (crate::nn::dot(a, a) * crate::nn::dot(b, b)).sqrt();
    if denom > 0.0 {
        ab / denom
    } else {
        0.0
    }
}

fn pitch_frame(x: &[f64]) -> F0Frame {
    let unvoiced = |p: f64| F0Frame {
        f0: None,
        periodicity: p.clamp(0.0, 1.0),
    };
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let x: Vec<f64> = x.iter().map(|v| v - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() / (x.len() as f64) < ENERGY_THRESHOLD {
        return unvoiced(0.0);
    }
    let fs = SAMPLE_RATE as f64;
    let (lo, hi) = ((fs / MAX_F0).floor() as usize, (fs / MIN_F0).ceil() as usize);
    // one lag of margin on each side for the local-maximum test
    let r: Vec<f64> = (lo - 1..=hi + 1).map(|l| nacf(&x, l)).collect();
    let at = |lag: usize| r[lag + 1 - lo];
    let peaks: Vec<usize> = (lo..=hi).filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1)).collect();
    let Some(global) = peaks.iter().map(|&l| at(l)).reduce(f64::max) else {
        return unvoiced(0.0);
    };
    if global < VOICING_THRESHOLD {
        return unvoiced(global);
    }
    let lag = *peaks.iter().find(|&&l| at(l) >= PEAK_RATIO * global).expect("global peak qualifies");
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    let f0 = fs / (lag as f64 + shift);
    if !(MIN_F0..=MAX_F0).contains(&f0) {
        return unvoiced(b);
    }
    F0Frame {
        f0: Some(f0),
        periodicity: b.clamp(0.0, 1.0),
    }
}

/// One pitch estimate per spectrogram frame from a 40 ms window centered on
/// the frame. Frames whose window runs past the signal are unvoiced.
pub fn estimate_f0(w: &Waveform) -> F0Contour {
    let s = w.samples();
    let n = framing().frame_count(s.len()).unwrap_or(0);
    let frames = (0..n)
        .map(|t| {
            let c = frame_center(t);
            if c < F0_WINDOW / 2 || c + F0_WINDOW / 2 > s.len() {
                return F0Frame {
                    f0: None,
                    periodicity: 0.0,
                };
            }
            pitch_frame(&s[c - F0_WINDOW / 2..c + F0_WINDOW / 2])
        })
        .collect();
    F0Contour {
        frames,
        frame_rate: framing().frame_rate(),
    }
}

/// The generator's programmed F0 sampled at the centers of `frames` frames.
pub fn programmed_contour(spec: &SyntheticSpeakerSpec, frames: usize) -> F0Contour {
    let mut c = F0Contour {
        frames: Vec::with_capacity(frames),
        frame_rate: framing().frame_rate(),
    };
    for t in 0..frames {
        c.frames.push(F0Frame {
            f0: Some(spec.f0_at(c.time(t))),
            periodicity: 1.0,
        });
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Similarity {
    pub pearson_r: f64,
    /// Mutually voiced over jointly-or-singly voiced frames.
    pub voiced_overlap: f64,
}

/// Pearson correlation over mutually voiced frames; contours are cropped to
/// the shorter one.
pub fn f0_similarity(c1: &F0Contour, c2: &F0Contour) -> Result<F0Similarity> {
    let n = c1.len().min(c2.len());
    let mut pairs = Vec::new();
    let mut union = 0;
    for (a, b) in c1.frames[..n].iter().zip(&c2.frames[..n]) {
        if a.f0.is_some() || b.f0.is_some() {
            union += 1;
        }
        if let (Some(x), Some(y)) = (a.f0, b.f0) {
            pairs.push((x, y));
        }
    }
    if pairs.len() < 4 {
        return Err(Error::InsufficientVoicedOverlap(pairs.len()));
    }
    let k = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / k, pairs.iter().map(|p| p.1).sum::<f64>() / k);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("F0 is constant over the mutually voiced frames".into()));
    }
    Ok(F0Similarity {
        pearson_r: sxy / (sxx * syy).sqrt(),
        voiced_overlap: pairs.len() as f64 / union as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerDistances {
    pub speaker: String,
    pub intra: f64,
    pub inter: f64,
    /// `(inter − intra) / max(inter, intra)`, 0 when both vanish.
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub speakers: Vec<SpeakerDistances>,
    /// Mean over all same-speaker pairs.
    pub intra: f64,
    /// Mean over all different-speaker pairs.
    pub inter: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean distance statistics of embeddings grouped by speaker.
pub fn distance_report(groups: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<DistanceReport> {
    if groups.len() < 2 {
        return Err(Error::DegenerateGrouping(format!("{} speaker(s); need 2", groups.len())));
    }
    if let Some((s, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::DegenerateGrouping(format!("speaker {s} has {} utterance(s); need 2", g.len())));
    }
    let names: Vec<&String> = groups.keys().collect();
    let sets: Vec<&Vec<Vec<f64>>> = groups.values().collect();
    let n = sets.len();
    // pairwise sums between groups, (sum, count)
    let mut between = vec![vec![(0.0, 0usize); n]; n];
    for a in 0..n {
        for b in a..n {
            let mut acc = (0.0, 0);
            for (i, x) in sets[a].iter().enumerate() {
                let others = if a == b { &sets[b][i + 1..] } else { &sets[b][..] };
                for y in others {
                    acc.0 += euclid(x, y);
                    acc.1 += 1;
                }
            }
            between[a][b] = acc;
            between[b][a] = acc;
        }
    }
    let mut speakers = Vec::with_capacity(n);
    let (mut intra_all, mut inter_all) = ((0.0, 0), (0.0, 0));
    for a in 0..n {
        let intra = between[a][a].0 / between[a][a].1 as f64;
        let (mut s, mut c) = (0.0, 0);
        for b in (0..n).filter(|&b| b != a) {
            s += between[a][b].0;
            c += between[a][b].1;
            if b > a {
                inter_all.0 += between[a][b].0;
                inter_all.1 += between[a][b].1;
            }
        }
        intra_all.0 += between[a][a].0;
        intra_all.1 += between[a][a].1;
        let inter = s / c as f64;
        let m = inter.max(intra);
        speakers.push(SpeakerDistances {
            speaker: names[a].clone(),
            intra,
            inter,
            separation: if m > 0.0 { (inter - intra) / m } else { 0.0 },
        });
    }
    Ok(DistanceReport {
        speakers,
        intra: intra_all.0 / intra_all.1 as f64,
        inter: inter_all.0 / inter_all.1 as f64,
    })
}

/// Coordinates on the top two principal directions of the centered data.
/// Each axis is oriented so its largest-magnitude coordinate is positive.
pub fn project_2d(embeddings: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::Shape(format!("projection needs at least 3 embeddings, got {n}")));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::Shape("embeddings have different dimensions".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| embeddings.iter().map(|e| e[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j] - mean[j]);
    let svd = x.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let s = svd.singular_values[k];
        let col: Vec<f64> = (0..n).map(|i| u[(i, k)] * s).collect();
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            // exact zeros for degenerate directions
            coords[i][axis] = if s > 1e-12 * (1.0 + svd.singular_values[order[0]]) { sign * col[i] } else { 0.0 };
        }
    }
    Ok(coords)
}

fn colormap(v: f64) -> [u8; 3] {
    // black → blue → magenta → orange → pale yellow
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [30.0, 20.0, 120.0],
        [170.0, 40.0, 130.0],
        [245.0, 130.0, 40.0],
        [252.0, 245.0, 180.0],
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    out
}

/// RGB heat map (`width = frames`, `height = N_BINS`, low frequencies at the
/// bottom) with voiced F0 values drawn in cyan.
pub fn render_heatmap(spec: &Spectrogram, f0: Option<&F0Contour>) -> (u32, u32, Vec<u8>) {
    let (w, h) = (spec.frames, N_BINS);
    let max = spec.db.iter().copied().fold(DB_FLOOR, f64::max);
    let range = (max - DB_FLOOR).max(1e-9);
    let mut rgb = vec![0u8; w * h * 3];
    for t in 0..w {
        for (b, &v) in spec.row(t).iter().enumerate() {
            let y = h - 1 - b;
            let px = (y * w + t) * 3;
            rgb[px..px + 3].copy_from_slice(&colormap((v - DB_FLOOR) / range));
        }
    }
    if let Some(c) = f0 {
        for (t, fr) in c.frames.iter().enumerate().take(w) {
            if let Some(f) = fr.f0 {
                let b = (f * FFT_SIZE as f64 / SAMPLE_RATE as f64).round() as usize;
                for bb in b.min(h - 1)..=(b + 1).min(h - 1) {
                    let px = ((h - 1 - bb) * w + t) * 3;
                    rgb[px..px + 3].copy_from_slice(&[0, 255, 255]);
                }
            }
        }
    }
    (w as u32, h as u32, rgb)
}

/// `time db_0 ... db_128` rows with a header.
pub fn spectrogram_tsv(spec: &Spectrogram) -> String {
    let mut out = String::from("time");
    for b in 0..N_BINS {
        out.push_str(&format!("\t{}", Spectrogram::bin_hz(b)));
    }
    out.push('\n');
    for t in 0..spec.frames {
        out.push_str(&format!("{}", frame_center(t) as f64 / SAMPLE_RATE as f64));
        for v in spec.row(t) {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    out
}

/// `time f0 periodicity` rows; unvoiced frames have `f0 = 0`.
pub fn f0_tsv(c: &F0Contour) -> String {
    let mut out = String::from("time\tf0\tperiodicity\n");
    for (t, f) in c.frames.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{}\n", c.time(t), f.f0.unwrap_or(0.0), f.periodicity));
    }
    out
}

pub fn distance_tsv(r: &DistanceReport) -> String {
    let mut out = String::from("speaker\tintra\tinter\tseparation\n");
    for s in &r.speakers {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", s.speaker, s.intra, s.inter, s.separation));
    }
    out.push_str(&format!("ALL\t{}\t{}\t{}\n", r.intra, r.inter, (r.inter - r.intra) / r.inter.max(r.intra).max(f64::MIN_POSITIVE)));
    out
}

pub fn projection_tsv(ids: &[String], coords: &[[f64; 2]]) -> String {
    let mut out = String::from("id\tx\ty\n");
    for (id, c) in ids.iter().zip(coords) {
        out.push_str(&format!("{id}\t{}\t{}\n", c[0], c[1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth::{Formant, PitchContour};
    use approx::assert_abs_diff_eq;

    fn tone(f: f64, secs: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let s = (0..n).map(|i| 0.5 * (2.0 * PI * f * i as f64 / SAMPLE_RATE as f64).sin()).collect();
        Waveform::new(s, "tone").unwrap()
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let s = spectrogram(&tone(1000.0, 0.5)).unwrap();
        assert_eq!(s.frames, framing().frame_count(4000).unwrap());
        let expect = (1000.0 / Spectrogram::bin_hz(1)).round() as usize;
        for t in 0..s.frames {
            let row = s.row(t);
            let arg = (0..N_BINS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expect);
        }
    }

    #[test]
    fn silence_sits_at_floor() {
        let s = spectrogram(&Waveform::new(vec![0.0; 1000], "z").unwrap()).unwrap();
        assert!(s.db.iter().all(|&v| v == DB_FLOOR));
        assert!(matches!(
            spectrogram(&Waveform::new(vec![0.1; 100], "z").unwrap()),
            Err(Error::ShortInput { .. })
        ));
    }

    #[test]
    fn parseval_per_frame() {
        let w = crate::audio::white_noise(2000, 4);
        let spectra = stft(w.samples()).unwrap();
        let win = hann(200);
        for (t, s) in spectra.iter().enumerate() {
            let time: f64 = w.samples()[t * 80..t * 80 + 200].iter().zip(&win).map(|(x, h)| (x * h).powi(2)).sum();
            let mut freq = s[0].norm_sqr() + s[FFT_SIZE / 2].norm_sqr();
            freq += 2.0 * s[1..FFT_SIZE / 2].iter().map(|c| c.norm_sqr()).sum::<f64>();
            assert!((freq / FFT_SIZE as f64 - time).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn pure_tone_pitch() {
        let c = estimate_f0(&tone(200.0, 1.0));
        let interior: Vec<f64> = c.frames.iter().filter_map(|f| f.f0).collect();
        assert!(interior.len() >= c.len() - 4);
        for f in interior {
            assert!((f - 200.0).abs() <= 2.0, "{f}");
        }
    }

    #[test]
    fn noise_and_silence_are_unvoiced() {
        let c = estimate_f0(&crate::audio::white_noise(8000, 1));
        let unvoiced = c.frames.iter().filter(|f| f.f0.is_none()).count();
        assert!(unvoiced as f64 >= 0.9 * c.len() as f64, "{unvoiced}/{}", c.len());
        let s = estimate_f0(&Waveform::new(vec![0.0; 4000], "z").unwrap());
        assert_eq!(s.voiced_count(), 0);
    }

    fn contour(vals: &[Option<f64>]) -> F0Contour {
        F0Contour {
            frames: vals.iter().map(|&f0| F0Frame { f0, periodicity: 1.0 }).collect(),
            frame_rate: 100.0,
        }
    }

    #[test]
    fn similarity_trivial_cases() {
        let a = contour(&[Some(100.0), Some(120.0), None, Some(110.0), Some(130.0), Some(90.0)]);
        let s = f0_similarity(&a, &a).unwrap();
        assert_abs_diff_eq!(s.pearson_r, 1.0, epsilon = 1e-12);
        assert_eq!(s.voiced_overlap, 1.0);
        let shifted = contour(&a.frames.iter().map(|f| f.f0.map(|v| v + 20.0)).collect::<Vec<_>>());
        assert_abs_diff_eq!(f0_similarity(&a, &shifted).unwrap().pearson_r, 1.0, epsilon = 1e-12);
        let sparse = contour(&[Some(100.0), None, None, Some(110.0), None, None]);
        assert!(matches!(f0_similarity(&a, &sparse), Err(Error::InsufficientVoicedOverlap(2))));
    }

    #[test]
    fn estimated_contour_tracks_programmed() {
        let spec = SyntheticSpeakerSpec {
            speaker_id: "s".into(),
            base_f0: 150.0,
            contour: PitchContour {
                declination_slope: -3.0,
                vibrato_rate: 4.0,
                vibrato_depth: 12.0,
            },
            formants: [
                Formant { center: 600.0, bandwidth: 90.0 },
                Formant { center: 1400.0, bandwidth: 120.0 },
                Formant { center: 2600.0, bandwidth: 180.0 },
            ],
            jitter: 0.0,
            noise_floor: 0.0,
        };
        let w = crate::audio::synth_utterance(&spec, 3.0, 5).unwrap();
        let est = estimate_f0(&w);
        let prog = programmed_contour(&spec, est.len());
        let s = f0_similarity(&prog, &est).unwrap();
        assert!(s.pearson_r >= 0.9, "{s:?}");
    }

    fn groups(data: &[(&str, Vec<Vec<f64>>)]) -> BTreeMap<String, Vec<Vec<f64>>> {
        data.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn distance_trivial_cases() {
        let same = groups(&[("a", vec![vec![1.0, 0.0]; 2]), ("b", vec![vec![1.0, 0.0]; 3])]);
        let r = distance_report(&same).unwrap();
        assert_eq!((r.intra, r.inter), (0.0, 0.0));
        let anti = groups(&[("a", vec![vec![1.0, 0.0]; 2]), ("b", vec![vec![-1.0, 0.0]; 2])]);
        let r = distance_report(&anti).unwrap();
        assert_eq!((r.intra, r.inter), (0.0, 2.0));
        assert_eq!(r.speakers[0].separation, 1.0);
        assert!(matches!(
            distance_report(&groups(&[("a", vec![vec![0.0]; 2])])),
            Err(Error::DegenerateGrouping(_))
        ));
    }

    #[test]
    fn distance_report_ignores_utterance_order() {
        let mut rng = crate::seed::rng(3, &[]);
        use rand::Rng;
        let mut g: BTreeMap<String, Vec<Vec<f64>>> = (0..3)
            .map(|s| (format!("s{s}"), (0..4).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect()))
            .collect();
        let r1 = distance_report(&g).unwrap();
        for v in g.values_mut() {
            v.reverse();
        }
        let r2 = distance_report(&g).unwrap();
        assert_abs_diff_eq!(r1.intra, r2.intra, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.inter, r2.inter, epsilon = 1e-12);
    }

    fn pairwise(p: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                out.push(euclid(&p[i], &p[j]));
            }
        }
        out
    }

    #[test]
    fn planar_data_projects_isometrically() {
        // points in the plane spanned by two orthonormal vectors of R^5, offset
        let u = [0.6, 0.0, 0.8, 0.0, 0.0];
        let v = [0.0, 0.0, 0.0, 1.0, 0.0];
        let plane: Vec<[f64; 2]> = vec![[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5], [2.0, -1.0], [0.3, 0.7]];
        let emb: Vec<Vec<f64>> = plane
            .iter()
            .map(|p| (0..5).map(|j| 1.0 + p[0] * u[j] + p[1] * v[j]).collect())
            .collect();
        let coords = project_2d(&emb).unwrap();
        let as_vecs: Vec<Vec<f64>> = coords.iter().map(|c| c.to_vec()).collect();
        let orig: Vec<Vec<f64>> = plane.iter().map(|c| c.to_vec()).collect();
        for (a, b) in pairwise(&as_vecs).iter().zip(pairwise(&orig)) {
            assert!((a - b).abs() < 1e-9);
        }
        // same result twice, with the sign convention applied
        assert_eq!(project_2d(&emb).unwrap(), coords);
        for axis in 0..2 {
            let pivot = coords.iter().map(|c| c[axis]).fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn identical_points_map_to_origin() {
        let coords = project_2d(&vec![vec![0.3, -0.2, 0.9]; 4]).unwrap();
        assert!(coords.iter().all(|c| c[0].abs() < 1e-12 && c[1].abs() < 1e-12));
    }

    #[test]
    fn heatmap_dimensions() {
        let w = tone(300.0, 0.3);
        let s = spectrogram(&w).unwrap();
        let (wd, ht, px) = render_heatmap(&s, Some(&estimate_f0(&w)));
        assert_eq!((wd as usize, ht as usize), (s.frames, N_BINS));
        assert_eq!(px.len(), s.frames * N_BINS * 3);
        assert!(px.chunks(3).any(|p| p == [0, 255, 255]));
    }
}
