//! Single-channel weighted prediction error (WPE) dereverberation.
//!
//! Each frequency bin is treated independently: the late reverberation in
//! frame t is predicted from the observed frames t-Δ, …, t-Δ-K+1 with a
//! filter estimated by variance-weighted least squares, and subtracted.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{analyze, next_pow2, window, AudioBuffer, FrontendConfig, StftMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    /// Prediction filter order K.
    pub taps: usize,
    /// Prediction delay Δ in frames.
    pub delay: usize,
    pub iterations: usize,
    /// Diagonal loading δ, relative to trace(R)/K.
    pub regularization: f64,
    /// Floor ε on the per-frame variance estimate.
    pub variance_floor: f64,
    /// Half-width (frames) of the moving average applied to |X|² before it is
    /// used as the variance estimate. 0 uses the per-frame power directly.
    #[serde(default)]
    pub psd_context: usize,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
            regularization: 1e-6,
            variance_floor: 1e-10,
            psd_context: 0,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::Config("taps, delay and iterations must all be >= 1".into()));
        }
        if !(self.regularization > 0.0 && self.variance_floor > 0.0) {
            return Err(Error::Config("regularization and variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-bin solver statistics from a WPE run.
#[derive(Debug, Clone, Default)]
pub struct WpeDiagnostics {
    /// `‖(R + δ·tr(R)/K·I)g − r‖ / ‖r‖`, indexed `[bin][iteration]`.
    pub residuals: Vec<Vec<f64>>,
    /// ‖g‖ after the final iteration, per bin.
    pub filter_norms: Vec<f64>,
}

struct BinOutput<T: Real> {
    x: Vec<Complex<T>>,
    residuals: Vec<f64>,
    filter_norm: f64,
}

fn variance<T: Real>(x: &[Complex<T>], context: usize, floor: T) -> Vec<T> {
    let power: Vec<T> = x.iter().map(|v| v.norm_sqr()).collect();
    if context == 0 {
        return power.into_iter().map(|p| p.max(floor)).collect();
    }
    let n = power.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    for &p in &power {
        let last = *prefix.last().unwrap();
        prefix.push(last + p);
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(context);
            let hi = (t + context + 1).min(n);
            ((prefix[hi] - prefix[lo]) / T::from_count(hi - lo)).max(floor)
        })
        .collect()
}

fn dereverberate_bin<T: Real>(y: &[Complex<T>], cfg: &WpeConfig, bin: usize) -> Result<BinOutput<T>> {
    let frames = y.len();
    let k_taps = cfg.taps;
    let delay = cfg.delay;
    let zero = Complex::new(T::zero(), T::zero());
    let floor = T::lit(cfg.variance_floor);
    let delta = T::lit(cfg.regularization);

    let mut x = y.to_vec();
    let mut residuals = Vec::with_capacity(cfg.iterations);
    let mut filter_norm = 0.0;

    for _ in 0..cfg.iterations {
        let lambda = variance(&x, cfg.psd_context, floor);

        let mut corr = DMatrix::from_element(k_taps, k_taps, zero);
        let mut cross = DVector::from_element(k_taps, zero);
        for t in delay..frames {
            let inv = T::one() / lambda[t];
            let avail = (t + 1 - delay).min(k_taps);
            let target = y[t].conj() * inv;
            for j in 0..avail {
                let yj = y[t - delay - j];
                cross[j] += yj * target;
                let yj_w = yj * inv;
                for k in j..avail {
                    corr[(j, k)] += yj_w * y[t - delay - k].conj();
                }
            }
        }
        for j in 0..k_taps {
            for k in 0..j {
                corr[(j, k)] = corr[(k, j)].conj();
            }
        }

        let trace = (0..k_taps).fold(T::zero(), |acc, j| acc + corr[(j, j)].re);
        if trace <= T::zero() {
            // No delayed history carries energy: nothing to predict.
            residuals.push(0.0);
            filter_norm = 0.0;
            x.copy_from_slice(y);
            continue;
        }
        let load = Complex::new(delta * trace / T::from_count(k_taps), T::zero());
        let mut system = corr;
        for j in 0..k_taps {
            system[(j, j)] += load;
        }
        let chol = system.clone().cholesky().ok_or_else(|| {
            Error::Numerical(format!("WPE normal equations singular in frequency bin {bin}"))
        })?;
        let g = chol.solve(&cross);

        let r_norm = cross.norm().to_f64_lossy();
        let res = (&system * &g - &cross).norm().to_f64_lossy();
        residuals.push(if r_norm > 0.0 { res / r_norm } else { res });
        filter_norm = g.norm().to_f64_lossy();

        for t in 0..frames {
            let mut pred = zero;
            for k in 0..k_taps {
                if t >= delay + k {
                    pred += g[k].conj() * y[t - delay - k];
                }
            }
            x[t] = y[t] - pred;
        }
    }

    Ok(BinOutput {
        x,
        residuals,
        filter_norm,
    })
}

/// Dereverberates an STFT, returning the enhanced STFT and per-bin solver
/// statistics. Bins are processed in parallel; the result does not depend on
/// scheduling.
pub fn wpe_dereverberate_with_diagnostics<T: Real>(
    y: &StftMatrix<T>,
    cfg: &WpeConfig,
) -> Result<(StftMatrix<T>, WpeDiagnostics)> {
    cfg.validate()?;
    if y.num_frames() == 0 {
        return Err(Error::Contract("WPE needs at least one frame".into()));
    }
    if y.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Contract("STFT has non-finite entries".into()));
    }
    let outputs: Vec<Result<BinOutput<T>>> = (0..y.num_bins())
        .into_par_iter()
        .map(|f| {
            let column: Vec<Complex<T>> = y.data.column(f).iter().copied().collect();
            dereverberate_bin(&column, cfg, f)
        })
        .collect();

    let mut data = DMatrix::from_element(
        y.num_frames(),
        y.num_bins(),
        Complex::new(T::zero(), T::zero()),
    );
    let mut diag = WpeDiagnostics::default();
    for (f, out) in outputs.into_iter().enumerate() {
        let out = out?;
        data.set_column(f, &DVector::from_vec(out.x));
        diag.residuals.push(out.residuals);
        diag.filter_norms.push(out.filter_norm);
    }
    Ok((
        StftMatrix {
            data,
            ..y.clone()
        },
        diag,
    ))
}

pub fn wpe_dereverberate<T: Real>(y: &StftMatrix<T>, cfg: &WpeConfig) -> Result<StftMatrix<T>> {
    wpe_dereverberate_with_diagnostics(y, cfg).map(|(x, _)| x)
}

/// Constant value of Σ_k w²(n + k·shift), or a configuration error if the
/// squared window does not overlap-add to a constant at this hop.
pub fn squared_overlap_constant<T: Real>(win: &[T], shift: usize) -> Result<T> {
    let len = win.len();
    if shift == 0 || shift > len {
        return Err(Error::Config(format!("hop {shift} invalid for window of {len}")));
    }
    let sums: Vec<T> = (0..shift)
        .map(|n| {
            (n..len)
                .step_by(shift)
                .fold(T::zero(), |acc, i| acc + win[i] * win[i])
        })
        .collect();
    let max = sums.iter().copied().fold(T::zero(), T::max);
    let min = sums.iter().copied().fold(T::INFINITY, T::min);
    if max <= T::zero() || (max - min) > max * T::lit(1e-9) {
        return Err(Error::Config(format!(
            "window of {len} samples at hop {shift} does not satisfy the constant-overlap-add condition"
        )));
    }
    Ok(max)
}

/// Weighted overlap-add inverse of [`analyze`] for a frame count `frames`.
pub(crate) fn synthesize<T: Real>(
    spec: &DMatrix<Complex<T>>,
    frame_len: usize,
    shift: usize,
    win: &[T],
    fft_size: usize,
    out_len: usize,
) -> Vec<T> {
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(fft_size);
    let mut out = vec![T::zero(); out_len];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); fft_size];
    let bins = fft_size / 2 + 1;
    let scale = T::one() / T::from_count(fft_size);
    for t in 0..spec.nrows() {
        for f in 0..bins {
            buf[f] = spec[(t, f)];
        }
        for f in bins..fft_size {
            buf[f] = spec[(t, fft_size - f)].conj();
        }
        ifft.process(&mut buf);
        let start = t * shift;
        for i in 0..frame_len {
            if start + i < out_len {
                out[start + i] += buf[i].re * scale * win[i];
            }
        }
    }
    out
}

/// STFT → WPE → weighted overlap-add. The framing comes from `frontend`,
/// whose window must overlap-add (squared) to a constant at its hop.
pub fn enhance_waveform<T: Real>(
    audio: &AudioBuffer<T>,
    frontend: &FrontendConfig,
    cfg: &WpeConfig,
) -> Result<AudioBuffer<T>> {
    cfg.validate()?;
    let rate = audio.sample_rate();
    let frame_len = frontend.frame_samples(rate);
    let shift = frontend.shift_samples(rate);
    let win = window::<T>(frontend.window, frame_len);
    let norm = squared_overlap_constant(&win, shift)?;
    if audio.is_empty() {
        return Ok(audio.clone());
    }

    // Pad so every original sample is covered by a full set of frames.
    let lead = frame_len - shift;
    let needed = lead + audio.len() + lead;
    let frames = frame_len.max(needed).saturating_sub(frame_len).div_ceil(shift) + 1;
    let padded_len = (frames - 1) * shift + frame_len;
    let mut padded = vec![T::zero(); padded_len];
    padded[lead..lead + audio.len()].copy_from_slice(audio.samples());

    let fft_size = next_pow2(frame_len);
    let spec = StftMatrix {
        data: analyze(&padded, frame_len, shift, &win, fft_size),
        frame_shift: shift,
        frame_length: frame_len,
        fft_size,
    };
    let enhanced = wpe_dereverberate(&spec, cfg)?;
    let mut out = synthesize(&enhanced.data, frame_len, shift, &win, fft_size, padded_len);
    for v in &mut out {
        *v /= norm;
    }
    AudioBuffer::new(out[lead..lead + audio.len()].to_vec(), rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::WindowKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stft(frames: usize, bins: usize, seed: u64) -> StftMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StftMatrix {
            data: DMatrix::from_fn(frames, bins, |_, _| {
                Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            }),
            frame_shift: 64,
            frame_length: 256,
            fft_size: 2 * (bins - 1),
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let y = StftMatrix {
            data: DMatrix::from_element(40, 9, Complex::new(0.0f64, 0.0)),
            frame_shift: 4,
            frame_length: 16,
            fft_size: 16,
        };
        let x = wpe_dereverberate(&y, &WpeConfig::default()).unwrap();
        assert!(x.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn output_shape_matches_and_is_deterministic() {
        let y = random_stft(120, 17, 3);
        let a = wpe_dereverberate(&y, &WpeConfig::default()).unwrap();
        let b = wpe_dereverberate(&y, &WpeConfig::default()).unwrap();
        assert_eq!(a.data.shape(), y.data.shape());
        assert_eq!(a, b);
    }

    #[test]
    fn scaling_input_scales_output() {
        let y = random_stft(200, 9, 5);
        let c = Complex::new(-3.0, 1.75);
        // The variance floor is the only scale-dependent quantity; keep it out
        // of reach so the check isolates the algebra.
        let cfg = WpeConfig {
            variance_floor: 1e-300,
            ..WpeConfig::default()
        };
        let x = wpe_dereverberate(&y, &cfg).unwrap();
        let xs = wpe_dereverberate(&y.scaled(c), &cfg).unwrap();
        let expected = x.data.map(|v| v * c);
        let rel = (&xs.data - &expected).norm() / expected.norm();
        assert!(rel < 1e-10, "relative deviation {rel}");
    }

    #[test]
    fn normal_equations_are_solved_accurately() {
        let y = random_stft(300, 17, 11);
        let (_, diag) = wpe_dereverberate_with_diagnostics(&y, &WpeConfig::default()).unwrap();
        for per_bin in &diag.residuals {
            assert_eq!(per_bin.len(), 3);
            assert!(per_bin.iter().all(|&r| r < 1e-8));
        }
    }

    #[test]
    fn rejects_bad_config_and_empty_input() {
        let y = random_stft(10, 5, 1);
        let cfg = WpeConfig {
            taps: 0,
            ..WpeConfig::default()
        };
        assert!(matches!(wpe_dereverberate(&y, &cfg), Err(Error::Config(_))));
        let empty = StftMatrix {
            data: DMatrix::<Complex<f64>>::zeros(0, 5),
            ..y
        };
        assert!(matches!(wpe_dereverberate(&empty, &WpeConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn non_cola_framing_is_rejected() {
        let audio = AudioBuffer::<f64>::zeros(1000, 16000).unwrap();
        let err = enhance_waveform(&audio, &FrontendConfig::for_rate(16000), &WpeConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zero_signal_enhances_to_zero() {
        let audio = AudioBuffer::<f64>::zeros(3000, 8000).unwrap();
        let out = enhance_waveform(&audio, &FrontendConfig::for_enhancement(8000), &WpeConfig::default()).unwrap();
        assert_eq!(out.len(), 3000);
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disabled_prediction_reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..4001).map(|_| rng.random::<f64>() - 0.5).collect();
        let audio = AudioBuffer::new(samples.clone(), 8000).unwrap();
        let cfg = WpeConfig {
            delay: 10_000,
            ..WpeConfig::default()
        };
        let out = enhance_waveform(&audio, &FrontendConfig::for_enhancement(8000), &cfg).unwrap();
        assert_eq!(out.len(), samples.len());
        let err = out
            .samples()
            .iter()
            .zip(&samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max reconstruction error {err}");
    }

    #[test]
    fn cola_constant_for_periodic_hamming_quarter_hop() {
        let w = window::<f64>(WindowKind::PeriodicHamming, 256);
        let c = squared_overlap_constant(&w, 64).unwrap();
        assert!((c - 4.0 * (0.54f64.powi(2) + 0.5 * 0.46f64.powi(2))).abs() < 1e-12);
        assert!(squared_overlap_constant(&window::<f64>(WindowKind::Hamming, 400), 160).is_err());
    }
}
