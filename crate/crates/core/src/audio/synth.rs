//! Deterministic machine and noise generators used in place of recorded corpora.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AudioError, Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Machine,
    NoiseStationary,
    NoiseNonstationary,
}

/// Noise stationarity, as used by benchmark subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Stationary,
    Nonstationary,
}

impl NoiseKind {
    pub fn synth_kind(self) -> SynthKind {
        match self {
            NoiseKind::Stationary => SynthKind::NoiseStationary,
            NoiseKind::Nonstationary => SynthKind::NoiseNonstationary,
        }
    }
}

/// Generator parameters. Fields irrelevant to a kind are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Machine fundamental frequency in Hz.
    pub fundamental_hz: f64,
    pub harmonics: u32,
    /// Amplitude ratio between successive harmonics, in (0, 1].
    pub harmonic_rolloff: f64,
    /// Relative per-clip jitter of the fundamental.
    pub jitter: f64,
    /// Machine amplitude-envelope rate; segment rate for non-stationary noise.
    pub modulation_hz: f64,
    pub modulation_depth: f64,
    /// One-pole coefficient in (-1, 1); positive tilts energy toward low frequencies.
    pub spectral_tilt: f64,
    /// Non-stationary bursts per second.
    pub burst_density: f64,
    /// Relative frequency shift applied to `detuned_harmonic` (anomaly).
    pub detune: f64,
    pub detuned_harmonic: u32,
    /// Transient clicks per second (anomaly).
    pub click_rate: f64,
    pub click_gain: f64,
    /// Broadband floor added under machine tones, relative amplitude.
    pub floor_level: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            fundamental_hz: 120.0,
            harmonics: 8,
            harmonic_rolloff: 0.75,
            jitter: 0.003,
            modulation_hz: 1.0,
            modulation_depth: 0.3,
            spectral_tilt: 0.5,
            burst_density: 1.5,
            detune: 0.0,
            detuned_harmonic: 1,
            click_rate: 0.0,
            click_gain: 0.0,
            floor_level: 0.004,
        }
    }
}

/// Full description of one synthetic clip; identical specs give bit-identical audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_id: String,
    pub kind: SynthKind,
    pub seed: u64,
    pub duration_s: f64,
    pub params: SynthParams,
}

impl SynthSpec {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }

    fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::InvalidParams(format!("{}: {m}", self.class_id)));
        let p = &self.params;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) || self.n_samples() == 0 {
            return bad("duration must be positive");
        }
        match self.kind {
            SynthKind::Machine => {
                if !(p.fundamental_hz > 0.0) || p.harmonics == 0 {
                    return bad("fundamental and harmonic count must be positive");
                }
                let top = p.fundamental_hz * p.harmonics as f64 * (1.0 + p.detune.abs() + p.jitter);
                if top >= SAMPLE_RATE as f64 / 2.0 {
                    return bad("harmonic stack exceeds Nyquist");
                }
                if !(p.harmonic_rolloff > 0.0 && p.harmonic_rolloff <= 1.0) {
                    return bad("harmonic_rolloff must lie in (0, 1]");
                }
                if !(0.0..1.0).contains(&p.modulation_depth) || p.modulation_hz < 0.0 {
                    return bad("modulation depth must lie in [0, 1) and rate be non-negative");
                }
                if p.detune != 0.0 && !(1..=p.harmonics).contains(&p.detuned_harmonic) {
                    return bad("detuned_harmonic out of range");
                }
                if p.click_rate < 0.0 || p.click_gain < 0.0 || p.floor_level < 0.0 || p.jitter < 0.0 {
                    return bad("rates and gains must be non-negative");
                }
            }
            SynthKind::NoiseStationary | SynthKind::NoiseNonstationary => {
                if !(p.spectral_tilt.abs() < 1.0) {
                    return bad("spectral_tilt must lie in (-1, 1)");
                }
                if self.kind == SynthKind::NoiseNonstationary
                    && (!(p.modulation_hz > 0.0) || p.burst_density < 0.0)
                {
                    return bad("non-stationary noise needs a positive segment rate");
                }
            }
        }
        Ok(())
    }
}

/// Renders a clip from its spec.
pub fn synthesize(spec: &SynthSpec) -> Result<Waveform, AudioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples();
    let samples = match spec.kind {
        SynthKind::Machine => machine(&spec.params, n, &mut rng),
        SynthKind::NoiseStationary => colored_noise(spec.params.spectral_tilt, n, &mut rng),
        SynthKind::NoiseNonstationary => {
            let mut s = colored_noise(spec.params.spectral_tilt, n, &mut rng);
            let env = burst_envelope(&spec.params, n, &mut rng);
            s.iter_mut().zip(&env).for_each(|(x, g)| *x *= g);
            s
        }
    };
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

fn machine(p: &SynthParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = p.fundamental_hz * (1.0 + p.jitter * (2.0 * rng.random::<f64>() - 1.0));
    let env_phase = 2.0 * PI * rng.random::<f64>();
    let mut partials = Vec::with_capacity(p.harmonics as usize);
    let mut norm = 0.0;
    for h in 1..=p.harmonics {
        let mut freq = f0 * h as f64;
        if p.detune != 0.0 && h == p.detuned_harmonic {
            freq *= 1.0 + p.detune;
        }
        let amp = p.harmonic_rolloff.powi(h as i32 - 1) * (0.85 + 0.3 * rng.random::<f64>());
        norm += amp;
        partials.push((2.0 * PI * freq / sr, amp, 2.0 * PI * rng.random::<f64>()));
    }
    let scale = 0.5 / norm;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 1.0 + p.modulation_depth * (2.0 * PI * p.modulation_hz * t + env_phase).sin();
            let tone: f64 = partials
                .iter()
                .map(|(w, a, ph)| a * (w * i as f64 + ph).sin())
                .sum();
            env * tone * scale
        })
        .collect();

    if p.floor_level > 0.0 {
        for x in out.iter_mut() {
            *x += p.floor_level * rng.sample::<f64, _>(StandardNormal);
        }
    }

    if p.click_rate > 0.0 && p.click_gain > 0.0 {
        let click_len = (0.010 * sr) as usize;
        let tau = 0.002 * sr;
        let mut t = next_arrival(p.click_rate, rng);
        while t < n as f64 / sr {
            let start = (t * sr) as usize;
            for k in 0..click_len.min(n - start) {
                let g: f64 = rng.sample(StandardNormal);
                out[start + k] += p.click_gain * (-(k as f64) / tau).exp() * g.clamp(-3.0, 3.0) / 3.0;
            }
            t += next_arrival(p.click_rate, rng);
        }
    }
    out
}

fn next_arrival(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// White Gaussian noise through a one-pole filter, normalized to RMS 0.1.
fn colored_noise(tilt: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            y = x + tilt * y;
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    }
    out
}

/// Gain envelope alternating between quiet and loud segments, with short bursts
/// riding on top of the segment gain.
fn burst_envelope(p: &SynthParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const QUIET_DB: f64 = -16.0;
    let sr = SAMPLE_RATE as f64;
    let mean_segment = 1.0 / p.modulation_hz;
    let mut env = vec![0.0; n];
    let mut loud = rng.random::<bool>();
    let mut pos = 0usize;
    while pos < n {
        let len = ((1.5 + 1.5 * rng.random::<f64>()) * mean_segment * sr).max(1.0) as usize;
        let level_db = if loud {
            -3.0 * rng.random::<f64>()
        } else {
            QUIET_DB - 4.0 * rng.random::<f64>()
        };
        let g = 10f64.powf(level_db / 20.0);
        env[pos..(pos + len).min(n)].fill(g);
        pos += len;
        loud = !loud;
    }
    if p.burst_density > 0.0 {
        let segments = env.clone();
        let mut t = next_arrival(p.burst_density, rng);
        while t < n as f64 / sr {
            let dur = 0.03 + 0.22 * rng.random::<f64>();
            let len = (dur * sr) as usize;
            let start = (t * sr) as usize;
            let peak = 1.0 + rng.random::<f64>();
            for k in 0..len.min(n - start) {
                let shape = (PI * k as f64 / len as f64).sin();
                env[start + k] += segments[start + k] * peak * shape * shape;
            }
            t += next_arrival(p.burst_density, rng);
        }
    }
    env
}
