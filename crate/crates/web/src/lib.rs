//! Browser bindings: synthesize a speaker and inspect its spectrogram and
//! pitch track, and explore verification metrics and score fusion on
//! simulated score distributions.

use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

use vocal_style::analysis::{estimate_f0, f0_similarity, programmed_contour, render_heatmap, spectrogram};
use vocal_style::audio::{synth_utterance, Formant, PitchContour, SyntheticSpeakerSpec};
use vocal_style::verification::{compute_eer, evaluate, fuse_normalized, sweep_det, DcfConfig, ScoreSet};

fn js_err(e: vocal_style::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthesized utterance with its spectrogram image and pitch tracks.
#[wasm_bindgen]
pub struct VoiceAnalysis {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    samples: Vec<f32>,
    estimated: Vec<f64>,
    programmed: Vec<f64>,
    pearson_r: f64,
}

#[wasm_bindgen]
impl VoiceAnalysis {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// RGBA pixels, row-major, low frequencies at the bottom.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Waveform at 8 kHz, for playback.
    pub fn samples(&self) -> Vec<f32> {
        self.samples.clone()
    }

    /// Estimated F0 per frame in Hz; 0 marks unvoiced frames.
    pub fn estimated_f0(&self) -> Vec<f64> {
        self.estimated.clone()
    }

    pub fn programmed_f0(&self) -> Vec<f64> {
        self.programmed.clone()
    }

    /// Correlation of the estimated and programmed tracks; NaN when too few
    /// frames are voiced.
    #[wasm_bindgen(getter)]
    pub fn pearson_r(&self) -> f64 {
        self.pearson_r
    }
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn analyze_voice(
    base_f0: f64,
    slope: f64,
    vibrato_rate: f64,
    vibrato_depth: f64,
    f1: f64,
    f2: f64,
    f3: f64,
    jitter: f64,
    seconds: f64,
    seed: u64,
) -> Result<VoiceAnalysis, JsError> {
    let spec = SyntheticSpeakerSpec {
        speaker_id: "demo".into(),
        base_f0,
        contour: PitchContour {
            declination_slope: slope,
            vibrato_rate,
            vibrato_depth,
        },
        formants: [
            Formant { center: f1, bandwidth: 80.0 },
            Formant { center: f2, bandwidth: 120.0 },
            Formant { center: f3, bandwidth: 170.0 },
        ],
        jitter,
        noise_floor: 0.003,
    };
    let w = synth_utterance(&spec, seconds, seed).map_err(js_err)?;
    let spec_img = spectrogram(&w).map_err(js_err)?;
    let f0 = estimate_f0(&w);
    let prog = programmed_contour(&spec, f0.len());
    let (width, height, rgb) = render_heatmap(&spec_img, Some(&f0));
    let rgba = rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    Ok(VoiceAnalysis {
        width,
        height,
        rgba,
        samples: w.samples().iter().map(|&x| x as f32).collect(),
        estimated: f0.frames.iter().map(|f| f.f0.unwrap_or(0.0)).collect(),
        programmed: prog.frames.iter().map(|f| f.f0.unwrap_or(0.0)).collect(),
        pearson_r: f0_similarity(&prog, &f0).map_or(f64::NAN, |s| s.pearson_r),
    })
}

/// Metrics of two simulated systems and their fusion.
#[wasm_bindgen]
pub struct MetricsDemo {
    fmr: Vec<f64>,
    fnmr: Vec<f64>,
    fused_fmr: Vec<f64>,
    fused_fnmr: Vec<f64>,
    summary: Vec<f64>,
}

#[wasm_bindgen]
impl MetricsDemo {
    /// DET points of system A, in increasing threshold order.
    pub fn fmr(&self) -> Vec<f64> {
        self.fmr.clone()
    }

    pub fn fnmr(&self) -> Vec<f64> {
        self.fnmr.clone()
    }

    pub fn fused_fmr(&self) -> Vec<f64> {
        self.fused_fmr.clone()
    }

    pub fn fused_fnmr(&self) -> Vec<f64> {
        self.fused_fnmr.clone()
    }

    /// `[eer, tmr@1%, minDCF]` for A, then B, then the fusion.
    pub fn summary(&self) -> Vec<f64> {
        self.summary.clone()
    }
}

/// Gaussian genuine/impostor scores for two systems whose noise is
/// correlated by `rho`, fused with weights `w1:w2`.
#[wasm_bindgen]
pub fn metrics_demo(d_a: f64, d_b: f64, rho: f64, w1: f64, w2: f64, trials: usize, seed: u64) -> Result<MetricsDemo, JsError> {
    let n = trials.clamp(10, 20_000);
    let mut rng = vocal_style::seed::rng(seed, &[]);
    let z = Normal::new(0.0, 1.0).map_err(|e| JsError::new(&e.to_string()))?;
    let rho = rho.clamp(-0.99, 0.99);
    let mut draw = |shift_a: f64, shift_b: f64| {
        let (u, v): (f64, f64) = (z.sample(&mut rng), z.sample(&mut rng));
        (shift_a + u, shift_b + rho * u + (1.0 - rho * rho).sqrt() * v)
    };
    let (mut ga, mut gb, mut ia, mut ib) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let (a, b) = draw(d_a, d_b);
        ga.push(a);
        gb.push(b);
        let (a, b) = draw(0.0, 0.0);
        ia.push(a);
        ib.push(b);
    }
    let sa = ScoreSet::from_labeled("A", &ga, &ia);
    let sb = ScoreSet::from_labeled("B", &gb, &ib);
    let fused = fuse_normalized(&sa, &sb, w1, w2).map_err(js_err)?;
    let cfg = DcfConfig::default();
    let mut summary = Vec::new();
    for s in [&sa, &sb, &fused] {
        let r = evaluate(s, &cfg).map_err(js_err)?;
        summary.extend([r.eer, r.tmr_at_fmr1, r.min_dcf_normalized]);
    }
    let det_a = sweep_det(&sa).map_err(js_err)?;
    let det_f = sweep_det(&fused).map_err(js_err)?;
    debug_assert!((compute_eer(&det_a) - summary[0]).abs() < 1e-12);
    Ok(MetricsDemo {
        fmr: det_a.iter().map(|p| p.fmr).collect(),
        fnmr: det_a.iter().map(|p| p.fnmr).collect(),
        fused_fmr: det_f.iter().map(|p| p.fmr).collect(),
        fused_fnmr: det_f.iter().map(|p| p.fnmr).collect(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voice_analysis_shapes() {
        let a = analyze_voice(150.0, -2.0, 5.0, 6.0, 600.0, 1500.0, 2600.0, 0.0, 1.0, 3).ok().unwrap();
        assert_eq!(a.rgba().len() as u32, a.width() * a.height() * 4);
        assert_eq!(a.estimated_f0().len(), a.width() as usize);
        assert!(a.pearson_r() > 0.5);
    }

    #[test]
    fn metrics_demo_fusion_of_identical_systems() {
        let d = metrics_demo(2.0, 2.0, 0.99, 1.0, 3.0, 500, 1).ok().unwrap();
        let s = d.summary();
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s[0] < 0.5);
    }
}
