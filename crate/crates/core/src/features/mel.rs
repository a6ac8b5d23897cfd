use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureError, MelFeatures};
use crate::audio::{Waveform, SAMPLE_RATE};

pub const N_MELS: usize = 128;
/// Natural-log floor applied to filterbank energies.
pub const LOG_FLOOR: f64 = -23.025850929940457; // ln(1e-10)
const ENERGY_FLOOR: f64 = 1e-10;
const WINDOW_SAMPLES: usize = 400;
const SHIFT_SAMPLES: usize = 160;
const FFT_SIZE: usize = 512;
const POVEY_EXPONENT: f64 = 0.85;
const LOW_HZ: f64 = 20.0;
const HIGH_HZ: f64 = 8000.0;

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// `(left, center, right)` edges in Hz of every triangular mel filter.
pub fn mel_bin_edges_hz() -> Vec<(f64, f64, f64)> {
    let lo = hz_to_mel(LOW_HZ);
    let delta = (hz_to_mel(HIGH_HZ) - lo) / (N_MELS + 1) as f64;
    (0..N_MELS)
        .map(|m| {
            (
                mel_to_hz(lo + m as f64 * delta),
                mel_to_hz(lo + (m + 1) as f64 * delta),
                mel_to_hz(lo + (m + 2) as f64 * delta),
            )
        })
        .collect()
}

struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Precomputed window, filterbank and FFT plan.
pub struct LogMelExtractor {
    window: Vec<f64>,
    filters: Vec<Filter>,
    fft: Arc<dyn Fft<f64>>,
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMelExtractor {
    pub fn new() -> Self {
        let window = (0..WINDOW_SAMPLES)
            .map(|n| {
                let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / (WINDOW_SAMPLES - 1) as f64).cos();
                hann.powf(POVEY_EXPONENT)
            })
            .collect();

        // Triangles are evaluated on the mel axis, Kaldi style, over bins below Nyquist.
        let n_bins = FFT_SIZE / 2;
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let lo = hz_to_mel(LOW_HZ);
        let delta = (hz_to_mel(HIGH_HZ) - lo) / (N_MELS + 1) as f64;
        let filters = (0..N_MELS)
            .map(|m| {
                let left = lo + m as f64 * delta;
                let center = left + delta;
                let right = center + delta;
                let dense: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let mel = hz_to_mel(bin_hz * k as f64);
                        if mel > left && mel < right {
                            if mel <= center {
                                (mel - left) / (center - left)
                            } else {
                                (right - mel) / (right - center)
                            }
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let first = dense.iter().position(|w| *w > 0.0).unwrap_or(0);
                let last = dense.iter().rposition(|w| *w > 0.0).map_or(0, |p| p + 1);
                Filter {
                    first_bin: first,
                    weights: if last > first { dense[first..last].to_vec() } else { Vec::new() },
                }
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self { window, filters, fft }
    }

    pub fn extract(&self, w: &Waveform) -> Result<MelFeatures, FeatureError> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(FeatureError::UnsupportedRate(w.sample_rate));
        }
        let n = w.samples.len();
        if n < WINDOW_SAMPLES {
            return Err(FeatureError::TooShort(n, WINDOW_SAMPLES));
        }
        let t_frames = 1 + (n - WINDOW_SAMPLES) / SHIFT_SAMPLES;
        let mut values = Vec::with_capacity(t_frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; FFT_SIZE / 2];
        for t in 0..t_frames {
            let frame = &w.samples[t * SHIFT_SAMPLES..t * SHIFT_SAMPLES + WINDOW_SAMPLES];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < WINDOW_SAMPLES {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for f in &self.filters {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                values.push(e.max(ENERGY_FLOOR).ln());
            }
        }
        Ok(MelFeatures {
            values,
            t_frames,
            n_mels: N_MELS,
        })
    }
}

/// Extracts 128-bin log-mel features with a shared extractor.
pub fn extract_logmel(w: &Waveform) -> Result<MelFeatures, FeatureError> {
    static EXTRACTOR: OnceLock<LogMelExtractor> = OnceLock::new();
    EXTRACTOR.get_or_init(LogMelExtractor::new).extract(w)
}
