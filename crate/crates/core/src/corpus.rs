//! Synthetic sound taxonomy shared by pre-training and the benchmark.
//!
//! Pre-training machine types and evaluation machine types are disjoint, as are
//! the pre-training noise classes and the two factory noises.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{NoiseKind, SynthKind, SynthParams, SynthSpec};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineType {
    pub name: &'static str,
    pub fundamental_hz: f64,
    pub harmonics: u32,
    pub harmonic_rolloff: f64,
    pub modulation_hz: f64,
    pub modulation_depth: f64,
}

const fn machine(
    name: &'static str,
    fundamental_hz: f64,
    harmonics: u32,
    harmonic_rolloff: f64,
    modulation_hz: f64,
    modulation_depth: f64,
) -> MachineType {
    MachineType {
        name,
        fundamental_hz,
        harmonics,
        harmonic_rolloff,
        modulation_hz,
        modulation_depth,
    }
}

pub const PRETRAIN_MACHINE_TYPES: [MachineType; 6] = [
    machine("pump", 90.0, 10, 0.80, 0.5, 0.20),
    machine("compressor", 150.0, 8, 0.70, 2.0, 0.30),
    machine("blower", 210.0, 6, 0.60, 4.0, 0.15),
    machine("conveyor", 60.0, 12, 0.85, 1.5, 0.40),
    machine("drill", 330.0, 5, 0.65, 8.0, 0.25),
    machine("press", 45.0, 14, 0.90, 0.8, 0.50),
];

pub const EVAL_MACHINE_TYPES: [MachineType; 3] = [
    machine("fan", 110.0, 9, 0.75, 1.2, 0.25),
    machine("valve", 260.0, 6, 0.70, 3.0, 0.35),
    machine("slider", 75.0, 11, 0.82, 0.6, 0.45),
];

/// Relative spread of the fundamental between normal clips of one attribute.
const CLIP_F0_SPREAD: f64 = 0.015;

/// How anomalous clips deviate from normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalySpec {
    /// Scales both perturbations; 1 is the default severity.
    pub severity: f64,
    pub detune: f64,
    pub click_rate: f64,
    pub click_gain: f64,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            severity: 1.0,
            detune: 0.06,
            click_rate: 3.0,
            click_gain: 0.6,
        }
    }
}

impl MachineType {
    pub fn find(name: &str) -> Option<&'static MachineType> {
        PRETRAIN_MACHINE_TYPES
            .iter()
            .chain(EVAL_MACHINE_TYPES.iter())
            .find(|m| m.name == name)
    }

    /// Operating condition `attribute` shifts pitch and envelope rate.
    pub fn params(&self, attribute: usize) -> SynthParams {
        let a = attribute as f64;
        SynthParams {
            fundamental_hz: self.fundamental_hz * (1.0 + 0.06 * a),
            harmonics: self.harmonics,
            harmonic_rolloff: self.harmonic_rolloff,
            modulation_hz: self.modulation_hz * (1.0 + 0.25 * a),
            modulation_depth: self.modulation_depth,
            ..SynthParams::default()
        }
    }

    /// A normal clip, or an anomalous one when `anomaly` is given. Each
    /// anomalous clip carries either a detuned harmonic or transient clicks.
    pub fn clip(
        &self,
        attribute: usize,
        anomaly: Option<&AnomalySpec>,
        seed: u64,
        duration_s: f64,
    ) -> SynthSpec {
        let mut rng = rng_for(seed, &[0x6d61_6368]);
        let mut params = self.params(attribute);
        params.fundamental_hz *= 1.0 + CLIP_F0_SPREAD * (2.0 * rng.random::<f64>() - 1.0);
        if let Some(an) = anomaly {
            if rng.random::<bool>() {
                params.detune = an.detune * an.severity * if rng.random::<bool>() { 1.0 } else { -1.0 };
                params.detuned_harmonic = rng.random_range(1..=params.harmonics.min(4));
            } else {
                params.click_rate = an.click_rate * an.severity;
                params.click_gain = an.click_gain * an.severity;
            }
        }
        SynthSpec {
            class_id: format!("{}/attr{}", self.name, attribute),
            kind: SynthKind::Machine,
            seed,
            duration_s,
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseClass {
    pub name: &'static str,
    pub kind: NoiseKind,
    pub spectral_tilt: f64,
    pub modulation_hz: f64,
    pub burst_density: f64,
}

const fn noise(
    name: &'static str,
    kind: NoiseKind,
    spectral_tilt: f64,
    modulation_hz: f64,
    burst_density: f64,
) -> NoiseClass {
    NoiseClass {
        name,
        kind,
        spectral_tilt,
        modulation_hz,
        burst_density,
    }
}

pub const PRETRAIN_NOISE_CLASSES: [NoiseClass; 4] = [
    noise("hvac", NoiseKind::Stationary, 0.85, 1.0, 0.0),
    noise("hiss", NoiseKind::Stationary, -0.2, 1.0, 0.0),
    noise("traffic", NoiseKind::Nonstationary, 0.7, 1.0, 1.0),
    noise("crowd", NoiseKind::Nonstationary, 0.3, 1.5, 2.0),
];

/// Stationary factory noise.
pub const FACTORY_A: NoiseClass = noise("factory_a", NoiseKind::Stationary, 0.6, 1.0, 0.0);
/// Non-stationary factory noise.
pub const FACTORY_B: NoiseClass = noise("factory_b", NoiseKind::Nonstationary, 0.5, 1.0, 1.5);

impl NoiseClass {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            spectral_tilt: self.spectral_tilt,
            modulation_hz: self.modulation_hz,
            burst_density: self.burst_density,
            ..SynthParams::default()
        }
    }

    pub fn clip(&self, seed: u64, duration_s: f64) -> SynthSpec {
        SynthSpec {
            class_id: self.name.to_string(),
            kind: self.kind.synth_kind(),
            seed,
            duration_s,
            params: self.params(),
        }
    }
}
