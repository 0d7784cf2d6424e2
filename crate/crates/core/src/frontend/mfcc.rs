use nalgebra::DMatrix;

use super::stft::{analyze, next_pow2, window};
use super::{AudioBuffer, FeatureMatrix, FrontendConfig, NARROWBAND_RATE, WIDEBAND_RATE};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between `low` and
/// `high` Hz, evaluated at the centre frequency of each FFT bin.
/// Shape: `num_filters × (fft_size/2 + 1)`.
pub fn mel_filterbank<T: Real>(
    num_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    low: f64,
    high: f64,
) -> DMatrix<T> {
    let bins = fft_size / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(low), hz_to_mel(high));
    let step = (mel_hi - mel_lo) / (num_filters + 1) as f64;
    let mut fb = DMatrix::zeros(num_filters, bins);
    for m in 0..num_filters {
        let left = mel_lo + step * m as f64;
        let centre = left + step;
        let right = centre + step;
        for k in 0..bins {
            let mel = hz_to_mel(k as f64 * f64::from(sample_rate) / fft_size as f64);
            let w = if mel > left && mel <= centre {
                (mel - left) / (centre - left)
            } else if mel > centre && mel < right {
                (right - mel) / (right - centre)
            } else {
                0.0
            };
            fb[(m, k)] = T::lit(w);
        }
    }
    fb
}

/// Orthonormal DCT-II basis, `num_ceps × num_filters`.
fn dct_matrix<T: Real>(num_ceps: usize, num_filters: usize) -> DMatrix<T> {
    let n = num_filters as f64;
    DMatrix::from_fn(num_ceps, num_filters, |k, m| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        T::lit(scale * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n).cos())
    })
}

/// Log-compress filterbank energies (rows = frames) and take the leading
/// `num_ceps` DCT-II coefficients.
pub fn power_to_cepstra<T: Real>(energies: &DMatrix<T>, num_ceps: usize, log_floor: f64) -> DMatrix<T> {
    let floor = T::lit(log_floor);
    let logs = energies.map(|e| e.max(floor).ln());
    let dct = dct_matrix::<T>(num_ceps, energies.ncols());
    logs * dct.transpose()
}

/// MFCCs: pre-emphasis → framing → window → power spectrum → mel filterbank →
/// log → orthonormal DCT-II. Coefficient 0 is the DCT c0 (energy-like) term.
pub fn mfcc<T: Real>(audio: &AudioBuffer<T>, config: &FrontendConfig) -> Result<FeatureMatrix<T>> {
    let rate = audio.sample_rate();
    if rate != NARROWBAND_RATE && rate != WIDEBAND_RATE {
        return Err(Error::Config(format!(
            "mfcc expects 8000 or 16000 Hz audio, got {rate}"
        )));
    }
    config.validate(rate)?;
    let frame_len = config.frame_samples(rate);
    let shift = config.shift_samples(rate);
    if audio.len() < frame_len {
        return Ok(FeatureMatrix::empty(
            config.num_ceps,
            config.frame_shift,
            config.frame_length,
        ));
    }

    let x = audio.samples();
    let coeff = T::lit(config.preemphasis);
    let mut emphasized = Vec::with_capacity(x.len());
    emphasized.push(x[0]);
    emphasized.extend(x.windows(2).map(|w| w[1] - coeff * w[0]));

    let fft_size = next_pow2(frame_len);
    let win = window::<T>(config.window, frame_len);
    let spectrum = analyze(&emphasized, frame_len, shift, &win, fft_size);
    let power = spectrum.map(|c| c.norm_sqr());
    let fb = mel_filterbank::<T>(
        config.num_mel_bins,
        fft_size,
        rate,
        config.mel_low,
        config.mel_high,
    );
    let energies = power * fb.transpose();
    let ceps = power_to_cepstra(&energies, config.num_ceps, config.log_floor);
    FeatureMatrix::new(ceps, config.frame_shift, config.frame_length)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_1000_hz_is_about_1000() {
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.05);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn zero_signal_gives_identical_rows() {
        let a = AudioBuffer::<f64>::zeros(8000, 8000).unwrap();
        let f = mfcc(&a, &FrontendConfig::for_rate(8000)).unwrap();
        assert_eq!(f.dim(), 23);
        assert_eq!(f.num_frames(), 98);
        for t in 1..f.num_frames() {
            assert_eq!(f.frames().row(t), f.frames().row(0));
        }
        // c0 of digital silence is sqrt(23) * ln(1e-10).
        let expected = 23f64.sqrt() * 1e-10f64.ln();
        assert!((f.frames()[(0, 0)] - expected).abs() < 1e-9);
    }

    #[test]
    fn unsupported_rate_and_short_audio() {
        let a = AudioBuffer::<f64>::zeros(100, 22050).unwrap();
        assert!(matches!(mfcc(&a, &FrontendConfig::for_rate(16000)), Err(Error::Config(_))));
        let a = AudioBuffer::<f64>::zeros(10, 16000).unwrap();
        let f = mfcc(&a, &FrontendConfig::for_rate(16000)).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.dim(), 23);
    }

    #[test]
    fn filterbank_rows_are_nonnegative_and_nonempty() {
        let fb = mel_filterbank::<f64>(23, 256, 8000, 20.0, 3700.0);
        for m in 0..23 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert!(row.sum() > 0.0, "filter {m} is empty");
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix::<f64>(23, 23);
        let eye = &d * d.transpose();
        assert!((eye - DMatrix::identity(23, 23)).amax() < 1e-12);
    }
}
