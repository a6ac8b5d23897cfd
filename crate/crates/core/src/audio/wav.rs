use std::path::Path;

use super::{AudioError, Waveform, SAMPLE_RATE};

const SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono 16 kHz RIFF/WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let mut reader = hound::WavReader::open(path.as_ref()).map_err(map_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} {}-bit (expected 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (expected mono)",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} Hz (expected {SAMPLE_RATE} Hz)",
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(map_err)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM mono, clamping samples to [-1, 1].
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_err)?;
    for s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(map_err)?;
    }
    writer.finalize().map_err(map_err)
}

fn map_err(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::IoFailure(io.to_string()),
        other => AudioError::UnsupportedFormat(other.to_string()),
    }
}
