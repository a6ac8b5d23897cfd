//! Waveforms, power measurement, SNR-exact mixing and WAV I/O.
//!
//! Two mixing conventions are provided. [`mix_at_snr_unitnoise`] normalizes the
//! second source to unit power and scales the first relative to it; this is the
//! convention used to build training mixtures. [`mix_at_snr_scalenoise`] keeps the
//! clean signal untouched and scales the noise relative to the clean power; this is
//! the convention used to build evaluation corpora.

mod synth;
mod wav;

pub use synth::{synthesize, NoiseKind, SynthKind, SynthParams, SynthSpec};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Sample rate every waveform is normalized to on ingestion.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("waveform has no samples")]
    EmptyWaveform,
    #[error("component has zero mean power; an SNR constraint cannot be satisfied")]
    ZeroPowerComponent,
    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("I/O failure: {0}")]
    IoFailure(String),
}

/// Mono PCM signal with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads or truncates to exactly `n` samples.
    pub fn fit_length(&self, n: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(n, 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Result of an SNR-controlled mix: `mixture = a1 * x1 + a2 * x2`.
#[derive(Debug, Clone)]
pub struct MixResult {
    pub mixture: Waveform,
    pub a1: f64,
    pub a2: f64,
    pub achieved_snr_db: f64,
}

/// Mean of squared samples.
pub fn mean_power(w: &Waveform) -> Result<f64, AudioError> {
    if w.samples.is_empty() {
        return Err(AudioError::EmptyWaveform);
    }
    let sum: f64 = w.samples.iter().map(|s| s * s).sum();
    Ok(sum / w.samples.len() as f64)
}

/// Max-minus-min of per-second power in dB over whole seconds of audio.
pub fn per_second_spread_db(w: &Waveform) -> Result<f64, AudioError> {
    let sr = w.sample_rate as usize;
    let powers: Vec<f64> = w
        .samples
        .chunks_exact(sr)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / sr as f64)
        .collect();
    if powers.is_empty() {
        return Err(AudioError::EmptyWaveform);
    }
    let max = powers.iter().cloned().fold(f64::MIN, f64::max);
    let min = powers.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        return Err(AudioError::ZeroPowerComponent);
    }
    Ok(10.0 * (max / min).log10())
}

pub fn db_to_ratio(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// SNR in dB of two already-scaled component powers.
pub fn snr_db_from_powers(signal_power: f64, noise_power: f64) -> f64 {
    10.0 * (signal_power / noise_power).log10()
}

fn checked_powers(x1: &Waveform, x2: &Waveform) -> Result<(f64, f64), AudioError> {
    if x1.sample_rate != x2.sample_rate {
        return Err(AudioError::RateMismatch(x1.sample_rate, x2.sample_rate));
    }
    if x1.len() != x2.len() {
        return Err(AudioError::LengthMismatch(x1.len(), x2.len()));
    }
    let p1 = mean_power(x1)?;
    let p2 = mean_power(x2)?;
    if p1 <= 0.0 || p2 <= 0.0 {
        return Err(AudioError::ZeroPowerComponent);
    }
    Ok((p1, p2))
}

fn combine(x1: &Waveform, a1: f64, x2: &Waveform, a2: f64) -> Waveform {
    Waveform {
        samples: x1
            .samples
            .iter()
            .zip(&x2.samples)
            .map(|(s1, s2)| a1 * s1 + a2 * s2)
            .collect(),
        sample_rate: x1.sample_rate,
    }
}

/// Unit-power-noise convention: `a2^2 * P2 = 1`, `a1 = sqrt(R / P1)`.
pub fn mix_at_snr_unitnoise(
    x1: &Waveform,
    x2: &Waveform,
    snr_db: f64,
) -> Result<MixResult, AudioError> {
    let (p1, p2) = checked_powers(x1, x2)?;
    let ratio = db_to_ratio(snr_db);
    let a1 = (ratio / p1).sqrt();
    let a2 = (1.0 / p2).sqrt();
    Ok(MixResult {
        mixture: combine(x1, a1, x2, a2),
        a1,
        a2,
        achieved_snr_db: snr_db_from_powers(a1 * a1 * p1, a2 * a2 * p2),
    })
}

/// Clean-referenced convention: the clean signal keeps unit gain and the noise is
/// scaled to `a2 = sqrt(P1 / (R * P2))`.
pub fn mix_at_snr_scalenoise(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
) -> Result<MixResult, AudioError> {
    let (p1, p2) = checked_powers(clean, noise)?;
    let ratio = db_to_ratio(snr_db);
    let a2 = (p1 / (ratio * p2)).sqrt();
    Ok(MixResult {
        mixture: combine(clean, 1.0, noise, a2),
        a1: 1.0,
        a2,
        achieved_snr_db: snr_db_from_powers(p1, a2 * a2 * p2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), SAMPLE_RATE)
    }

    /// Constant-magnitude alternating signal with mean power `p`.
    fn with_power(p: f64, n: usize) -> Waveform {
        let a = p.sqrt();
        wf(&(0..n)
            .map(|i| if i % 2 == 0 { a } else { -a })
            .collect::<Vec<_>>())
    }

    #[test]
    fn mean_power_examples() {
        assert_eq!(mean_power(&wf(&[1.0, -1.0, 1.0, -1.0])).unwrap(), 1.0);
        assert_eq!(mean_power(&wf(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(mean_power(&wf(&[0.5, 0.5])).unwrap(), 0.25);
        assert!(matches!(
            mean_power(&wf(&[])),
            Err(AudioError::EmptyWaveform)
        ));
    }

    #[test]
    fn unitnoise_coefficients() {
        let r = mix_at_snr_unitnoise(&with_power(4.0, 8), &with_power(1.0, 8), 0.0).unwrap();
        assert!((r.a1 - 0.5).abs() < 1e-15);
        assert!((r.a2 - 1.0).abs() < 1e-15);

        let x1 = wf(&[0.3, -0.2, 0.9, 0.1]);
        let x2 = wf(&[0.7, 0.4, -0.6, 0.2]);
        let p1 = mean_power(&x1).unwrap();
        let p2 = mean_power(&x2).unwrap();
        let r = mix_at_snr_unitnoise(&x1.scaled(1.0 / p1.sqrt()), &x2.scaled(1.0 / p2.sqrt()), 0.0)
            .unwrap();
        assert!((r.a1 - 1.0).abs() < 1e-12 && (r.a2 - 1.0).abs() < 1e-12);

        let r = mix_at_snr_unitnoise(&with_power(2.0, 8), &with_power(0.5, 8), 10.0).unwrap();
        assert!((r.a1 - 5f64.sqrt()).abs() < 1e-12);
        assert!((r.a2 - 2f64.sqrt()).abs() < 1e-12);
        let measured = 10.0 * ((r.a1 * r.a1 * 2.0) / (r.a2 * r.a2 * 0.5)).log10();
        assert!((measured - 10.0).abs() < 1e-12);
    }

    #[test]
    fn scalenoise_coefficients() {
        let one = with_power(1.0, 6);
        let r = mix_at_snr_scalenoise(&one, &one, 0.0).unwrap();
        assert!((r.a2 - 1.0).abs() < 1e-15 && r.a1 == 1.0);
        let r = mix_at_snr_scalenoise(&with_power(4.0, 6), &one, 0.0).unwrap();
        assert!((r.a2 - 2.0).abs() < 1e-15);
        let r = mix_at_snr_scalenoise(&one, &one, 20.0).unwrap();
        assert!((r.a2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mixing_errors() {
        let a = wf(&[1.0, 1.0]);
        assert!(matches!(
            mix_at_snr_unitnoise(&a, &wf(&[0.0, 0.0]), 0.0),
            Err(AudioError::ZeroPowerComponent)
        ));
        assert!(matches!(
            mix_at_snr_scalenoise(&a, &wf(&[1.0]), 0.0),
            Err(AudioError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            mix_at_snr_unitnoise(&a, &Waveform::new(vec![1.0, 1.0], 8000), 0.0),
            Err(AudioError::RateMismatch(..))
        ));
    }

    #[test]
    fn mixture_is_exact_linear_combination() {
        let x1 = wf(&[0.1, -0.5, 0.25]);
        let x2 = wf(&[0.2, 0.3, -0.7]);
        let r = mix_at_snr_unitnoise(&x1, &x2, 3.0).unwrap();
        for i in 0..3 {
            assert_eq!(r.mixture.samples[i], r.a1 * x1.samples[i] + r.a2 * x2.samples[i]);
        }
    }
}
