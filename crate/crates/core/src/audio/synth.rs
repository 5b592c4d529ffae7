//! Source-filter speaker synthesizer: a band-limited harmonic source following
//! a programmed F0 contour, three cascaded formant resonators, and a noise
//! floor.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MIN_F0: f64 = 50.0;
pub const MAX_F0: f64 = 400.0;
const PEAK: f64 = 0.9;
// harmonics fade out between these frequencies
const TAPER_START: f64 = 3400.0;
const TAPER_END: f64 = 3900.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchContour {
    /// Hz per second.
    pub declination_slope: f64,
    pub vibrato_rate: f64,
    /// Peak deviation in Hz.
    pub vibrato_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub center: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeakerSpec {
    pub speaker_id: String,
    pub base_f0: f64,
    pub contour: PitchContour,
    pub formants: [Formant; 3],
    /// Per-period relative F0 perturbation, in [0, 0.05].
    pub jitter: f64,
    /// Standard deviation of the additive white noise before peak normalization.
    pub noise_floor: f64,
}

impl SyntheticSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSpeaker {
            speaker: self.speaker_id.clone(),
            reason,
        };
        if !(80.0..=300.0).contains(&self.base_f0) {
            return Err(bad(format!("base_f0 {} Hz outside [80, 300]", self.base_f0)));
        }
        for (i, f) in self.formants.iter().enumerate() {
            if !(f.center > 0.0 && f.center < SAMPLE_RATE as f64 / 2.0) {
                return Err(bad(format!("formant {} center {} Hz not below Nyquist", i + 1, f.center)));
            }
            if !(f.bandwidth > 0.0) {
                return Err(bad(format!("formant {} bandwidth must be positive", i + 1)));
            }
        }
        if !(0.0..=0.05).contains(&self.jitter) {
            return Err(bad(format!("jitter {} outside [0, 0.05]", self.jitter)));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(bad("noise_floor must be non-negative".into()));
        }
        Ok(())
    }

    /// Programmed F0 at time `t` seconds, before jitter.
    pub fn f0_at(&self, t: f64) -> f64 {
        let c = &self.contour;
        self.base_f0 + c.declination_slope * t + c.vibrato_depth * (2.0 * PI * c.vibrato_rate * t).sin()
    }

    /// Draws a speaker from the corpus ranges. The ranges keep every
    /// session variant inside [50, 400] Hz for recordings up to 10 s.
    pub fn draw<R: Rng + ?Sized>(speaker_id: impl Into<String>, rng: &mut R) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            base_f0: rng.random_range(110.0..250.0),
            contour: PitchContour {
                declination_slope: rng.random_range(-2.5..0.5),
                vibrato_rate: rng.random_range(3.0..7.0),
                vibrato_depth: rng.random_range(1.0..8.0),
            },
            formants: [
                Formant {
                    center: rng.random_range(300.0..800.0),
                    bandwidth: rng.random_range(60.0..120.0),
                },
                Formant {
                    center: rng.random_range(900.0..2200.0),
                    bandwidth: rng.random_range(80.0..160.0),
                },
                Formant {
                    center: rng.random_range(2300.0..3400.0),
                    bandwidth: rng.random_range(100.0..220.0),
                },
            ],
            jitter: rng.random_range(0.0..0.02),
            noise_floor: rng.random_range(0.002..0.01),
        }
    }

    /// Per-recording variation of the same speaker: small shifts of pitch
    /// level, contour and formant placement.
    pub fn session_variant<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut v = self.clone();
        v.base_f0 = (self.base_f0 * rng.random_range(0.94..1.06)).clamp(80.0, 300.0);
        v.contour.declination_slope += rng.random_range(-0.5..0.5);
        v.contour.vibrato_rate *= rng.random_range(0.85..1.15);
        v.contour.vibrato_depth *= rng.random_range(0.7..1.3);
        for f in v.formants.iter_mut() {
            f.center *= rng.random_range(0.95..1.05);
            f.bandwidth *= rng.random_range(0.9..1.1);
        }
        v
    }
}

/// Two-pole resonator with unity DC gain.
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(f: Formant) -> Self {
        let t = 1.0 / SAMPLE_RATE as f64;
        let c = -(-2.0 * PI * f.bandwidth * t).exp();
        let b = 2.0 * (-PI * f.bandwidth * t).exp() * (2.0 * PI * f.center * t).cos();
        Self {
            a: 1.0 - b - c,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn harmonic_weight(freq: f64) -> f64 {
    if freq <= TAPER_START {
        1.0
    } else if freq >= TAPER_END {
        0.0
    } else {
        let x = (freq - TAPER_START) / (TAPER_END - TAPER_START);
        (0.5 * PI * x).cos().powi(2)
    }
}

/// Band-limited sawtooth-like sum of sin(k·phase)/k, evaluated with the
/// Chebyshev recurrence.
fn harmonic_sample(phase: f64, f0: f64) -> f64 {
    let (s1, c1) = phase.sin_cos();
    let two_c = 2.0 * c1;
    let (mut prev, mut cur) = (0.0, s1);
    let mut acc = 0.0;
    let mut k = 1usize;
    loop {
        let freq = k as f64 * f0;
        let w = harmonic_weight(freq);
        if w == 0.0 {
            break;
        }
        acc += w * cur / k as f64;
        let next = two_c * cur - prev;
        prev = cur;
        cur = next;
        k += 1;
    }
    acc
}

/// Synthesizes `duration` seconds (1 to 10) of the speaker. Deterministic in
/// `(spec, duration, seed)`; peak normalized to 0.9.
pub fn synth_utterance(spec: &SyntheticSpeakerSpec, duration: f64, seed: u64) -> Result<Waveform> {
    spec.validate()?;
    if !(1.0..=10.0).contains(&duration) {
        return Err(Error::InvalidWaveform(format!("duration {duration} s outside [1, 10]")));
    }
    let fs = SAMPLE_RATE as f64;
    let n = (duration * fs).round() as usize;
    for i in 0..n {
        let t = i as f64 / fs;
        let f0 = spec.f0_at(t);
        if !(MIN_F0..=MAX_F0).contains(&f0) {
            return Err(Error::F0OutOfRange { f0, time: t });
        }
    }

    let mut rng = crate::seed::rng(seed, &[crate::seed::tag("synth"), crate::seed::tag(&spec.speaker_id)]);
    let mut resonators: Vec<Resonator> = spec.formants.iter().map(|&f| Resonator::new(f)).collect();
    let mut phase = 0.0f64;
    let mut jitter_factor = 1.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let f = spec.f0_at(t) * jitter_factor;
        let mut x = harmonic_sample(phase, f);
        for r in resonators.iter_mut() {
            x = r.step(x);
        }
        out.push(x);
        phase += 2.0 * PI * f / fs;
        if phase >= 2.0 * PI {
            phase -= 2.0 * PI;
            if spec.jitter > 0.0 {
                jitter_factor = 1.0 + spec.jitter * rng.random_range(-1.0..=1.0);
            }
        }
    }
    if spec.noise_floor > 0.0 {
        for x in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += spec.noise_floor * z;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::DegeneratePower("synthesized utterance"));
    }
    let scale = PEAK / peak;
    out.iter_mut().for_each(|x| *x *= scale);
    Waveform::new(out, spec.speaker_id.clone())
}
