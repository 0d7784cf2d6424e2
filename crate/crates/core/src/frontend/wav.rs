//! 16-bit signed PCM mono WAV I/O.

use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::scalar::Real;

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav<T: Real>(path: &Path) -> Result<AudioBuffer<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s), {} bits, {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::lit(f64::from(v) / FULL_SCALE)))
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| wav_error(path, e))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes with clipping to the 16-bit range.
pub fn write_wav<T: Real>(path: &Path, audio: &AudioBuffer<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in audio.samples() {
        let v = (s.to_f64_lossy() * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_16_bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-50..50).map(|i| f64::from(i * 300) / FULL_SCALE).collect();
        let a = AudioBuffer::new(samples, 8000).unwrap();
        write_wav(&path, &a).unwrap();
        let b: AudioBuffer<f64> = read_wav(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(Error::Format(_))));
    }
}
