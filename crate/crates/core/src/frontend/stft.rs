use nalgebra::DMatrix;
use num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioBuffer, FrontendConfig, WindowKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Complex short-time spectrum, frames × (fft_size/2 + 1) bins.
#[derive(Debug, Clone, PartialEq)]
pub struct StftMatrix<T: Real> {
    pub data: DMatrix<Complex<T>>,
    /// Samples.
    pub frame_shift: usize,
    /// Samples.
    pub frame_length: usize,
    pub fft_size: usize,
}

impl<T: Real> StftMatrix<T> {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn scaled(&self, c: Complex<T>) -> Self {
        Self {
            data: self.data.map(|v| v * c),
            ..self.clone()
        }
    }
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Number of complete frames of `frame_len` samples at hop `shift`.
pub fn frame_count(len: usize, frame_len: usize, shift: usize) -> usize {
    if len < frame_len || frame_len == 0 {
        0
    } else {
        1 + (len - frame_len) / shift
    }
}

pub fn window<T: Real>(kind: WindowKind, n: usize) -> Vec<T> {
    let denom = match kind {
        WindowKind::Hamming => n.saturating_sub(1).max(1),
        WindowKind::PeriodicHamming => n.max(1),
    } as f64;
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
            T::lit(0.54 - 0.46 * phase.cos())
        })
        .collect()
}

/// Windowed DFT of every complete frame of `samples`. Row t is the spectrum of
/// samples `[t·shift, t·shift + frame_len)`.
pub(crate) fn analyze<T: Real>(
    samples: &[T],
    frame_len: usize,
    shift: usize,
    win: &[T],
    fft_size: usize,
) -> DMatrix<Complex<T>> {
    let frames = frame_count(samples.len(), frame_len, shift);
    let bins = fft_size / 2 + 1;
    let mut out = DMatrix::zeros(frames, bins);
    if frames == 0 {
        return out;
    }
    let fft = FftPlanner::<T>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); fft_size];
    for t in 0..frames {
        let start = t * shift;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < frame_len {
                Complex::new(samples[start + i] * win[i], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            };
        }
        fft.process(&mut buf);
        for (f, v) in buf.iter().take(bins).enumerate() {
            out[(t, f)] = *v;
        }
    }
    out
}

/// Short-time Fourier transform with the front-end framing. Audio shorter
/// than one frame yields an empty matrix.
pub fn stft<T: Real>(
    audio: &AudioBuffer<T>,
    config: &FrontendConfig,
    fft_size: usize,
) -> Result<StftMatrix<T>> {
    let rate = audio.sample_rate();
    config.validate(rate)?;
    let frame_len = config.frame_samples(rate);
    let shift = config.shift_samples(rate);
    if !fft_size.is_power_of_two() || fft_size < frame_len {
        return Err(Error::Config(format!(
            "fft size {fft_size} must be a power of two >= frame length {frame_len}"
        )));
    }
    let win = window::<T>(config.window, frame_len);
    Ok(StftMatrix {
        data: analyze(audio.samples(), frame_len, shift, &win, fft_size),
        frame_shift: shift,
        frame_length: frame_len,
        fft_size,
    })
}
