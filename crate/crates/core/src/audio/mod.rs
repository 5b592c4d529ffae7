//! Waveforms at the fixed 8 kHz rate: WAV I/O, chunking and noise mixing.
//! The synthetic speaker generator and corpus builder live in submodules.

pub mod corpus;
pub mod synth;

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub use corpus::{build_corpus, Condition, CorpusConfig, CorpusManifest, ManifestEntry, Split};
pub use synth::{synth_utterance, Formant, PitchContour, SyntheticSpeakerSpec};

pub const SAMPLE_RATE: u32 = 8000;

/// Mono PCM samples in [-1, 1] at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Mean-square power.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Reads a 16-bit PCM mono 8 kHz WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        let format = match spec.sample_format {
            hound::SampleFormat::Int => "PCM",
            hound::SampleFormat::Float => "float",
        };
        return Err(Error::UnsupportedBitDepth {
            bits: spec.bits_per_sample,
            format,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Waveform::new(samples, id)
}

/// Writes a waveform as 16-bit PCM mono at 8 kHz. Samples are scaled by
/// 32768, rounded and clipped to the i16 range.
pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in w.samples() {
        writer.write_sample(quantize_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Splits into consecutive non-overlapping chunks of `chunk_seconds`. A
/// trailing remainder shorter than one chunk is dropped.
pub fn split_into_chunks(w: &Waveform, chunk_seconds: f64) -> Vec<Waveform> {
    assert!(chunk_seconds > 0.0, "chunk_seconds must be positive");
    let chunk = (chunk_seconds * SAMPLE_RATE as f64).round() as usize;
    if chunk == 0 {
        return Vec::new();
    }
    w.samples()
        .chunks_exact(chunk)
        .enumerate()
        .map(|(i, c)| Waveform {
            samples: c.to_vec(),
            source_id: format!("{}#{}", w.source_id(), i),
        })
        .collect()
}

/// Gain that brings noise of power `noise_power` to `signal_power / 10^(snr_db/10)`.
pub fn noise_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds a noise segment cropped at a random offset, scaled so the
/// whole-chunk power ratio equals `snr_db`. The output is not renormalized.
pub fn mix_noise_at_snr<R: Rng + ?Sized>(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Waveform> {
    if noise.len() < signal.len() {
        return Err(Error::InvalidWaveform(format!(
            "noise ({} samples) shorter than signal ({} samples)",
            noise.len(),
            signal.len()
        )));
    }
    let offset = rng.random_range(0..=noise.len() - signal.len());
    let segment = &noise.samples()[offset..offset + signal.len()];
    let ps = signal.power();
    let pn = mean_square(segment);
    if ps == 0.0 {
        return Err(Error::DegeneratePower("signal"));
    }
    if pn == 0.0 {
        return Err(Error::DegeneratePower("noise"));
    }
    let g = noise_gain(ps, pn, snr_db);
    let mixed = signal
        .samples()
        .iter()
        .zip(segment)
        .map(|(s, n)| s + g * n)
        .collect();
    Waveform::new(mixed, signal.source_id())
}

/// Gaussian white noise with unit variance.
pub fn white_noise(n: usize, seed: u64) -> Waveform {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::seed::rng(seed, &[crate::seed::tag("white-noise")]);
    let samples = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Waveform::new(samples, "white").expect("finite noise")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| ((i % 97) as f64 / 97.0) - 0.5).collect(), "ramp").unwrap()
    }

    #[test]
    fn waveform_rejects_empty_and_nan() {
        assert!(Waveform::new(vec![], "x").is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], "x").is_err());
    }

    #[test]
    fn chunking_examples() {
        let twelve = split_into_chunks(&ramp(12 * 8000), 5.0);
        assert_eq!(twelve.len(), 2);
        assert!(twelve.iter().all(|c| c.len() == 40_000));
        assert_eq!(split_into_chunks(&ramp(40_000), 5.0).len(), 1);
        assert!(split_into_chunks(&ramp(3 * 8000), 5.0).is_empty());
    }

    #[test]
    fn snr_definition() {
        assert!((noise_gain(1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        // scaled noise power = g^2 * pn
        let g = noise_gain(1.0, 3.0, 10.0);
        assert!((1.0 / (g * g * 3.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mixing_rejects_degenerate_power() {
        let mut rng = crate::seed::rng(0, &[]);
        let zero = Waveform::new(vec![0.0; 100], "z").unwrap();
        let noise = white_noise(200, 1);
        let err = mix_noise_at_snr(&zero, &noise, 5.0, &mut rng).unwrap_err();
        assert!(err.to_string().contains("degenerate power"));
        let err = mix_noise_at_snr(&ramp(100), &zero, 5.0, &mut rng).unwrap_err();
        assert!(err.to_string().contains("degenerate power"));
    }

    #[test]
    fn quantization_clips() {
        assert_eq!(quantize_i16(1.0), i16::MAX);
        assert_eq!(quantize_i16(-1.0), i16::MIN);
        assert_eq!(quantize_i16(0.5), 16384);
    }
}
