//! Audio front-end: resampling, framing/STFT, MFCC extraction, sliding
//! cepstral mean normalization and energy-based voice activity detection.
//!
//! Narrowband (8 kHz) and wideband (16 kHz) chains share this code; only the
//! sample rate and the mel range differ (see [`FrontendConfig::for_rate`]).

mod cmn;
mod mfcc;
mod resample;
mod stft;
mod vad;
pub mod wav;

pub use cmn::{cmn_window_bounds, sliding_cmn};
pub use mfcc::{hz_to_mel, mel_filterbank, mel_to_hz, mfcc, power_to_cepstra};
pub use resample::{resample, Resampler};
pub use stft::{frame_count, next_pow2, stft, window, StftMatrix};
pub(crate) use stft::analyze;
pub use vad::{apply_vad, energy_vad, pcm_energy_vad, PCM_FULL_SCALE};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const NARROWBAND_RATE: u32 = 8000;
pub const WIDEBAND_RATE: u32 = 16000;

/// Mono time-domain audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> AudioBuffer<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![T::zero(); len], sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Symmetric Hamming, `0.54 - 0.46 cos(2πn/(N-1))`.
    #[default]
    Hamming,
    /// Periodic Hamming, `0.54 - 0.46 cos(2πn/N)`; overlap-adds to a constant
    /// (squared) at hops of N/2 and N/4.
    PeriodicHamming,
}

/// Energy VAD thresholding rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub mean_scale: f64,
    /// In units of coefficient 0.
    pub offset: f64,
    /// Half-width of the voting window, in frames.
    pub context: usize,
    /// Fraction of frames in the voting window that must exceed the threshold.
    pub proportion: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            mean_scale: 0.5,
            offset: 5.0,
            context: 2,
            proportion: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    /// Seconds.
    pub frame_length: f64,
    /// Seconds.
    pub frame_shift: f64,
    pub preemphasis: f64,
    pub num_mel_bins: usize,
    pub num_ceps: usize,
    /// Hz.
    pub mel_low: f64,
    /// Hz.
    pub mel_high: f64,
    /// Seconds.
    pub cmn_window: f64,
    pub window: WindowKind,
    /// Floor applied to filterbank energies before the log.
    pub log_floor: f64,
    pub vad: VadConfig,
}

impl FrontendConfig {
    /// Default MFCC configuration for a narrowband or wideband chain.
    pub fn for_rate(sample_rate: u32) -> Self {
        let mel_high = if sample_rate <= NARROWBAND_RATE {
            3700.0
        } else {
            7700.0
        };
        Self {
            frame_length: 0.025,
            frame_shift: 0.010,
            preemphasis: 0.97,
            num_mel_bins: 23,
            num_ceps: 23,
            mel_low: 20.0,
            mel_high,
            cmn_window: 3.0,
            window: WindowKind::Hamming,
            log_floor: 1e-10,
            vad: VadConfig::default(),
        }
    }

    /// Framing used by the dereverberation chain: 32 ms periodic-Hamming
    /// frames at a quarter-frame hop, which overlap-add exactly.
    pub fn for_enhancement(sample_rate: u32) -> Self {
        Self {
            frame_length: 0.032,
            frame_shift: 0.008,
            window: WindowKind::PeriodicHamming,
            ..Self::for_rate(sample_rate)
        }
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length * f64::from(sample_rate)).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * f64::from(sample_rate)).round() as usize
    }

    /// Number of frames spanned by the CMN window.
    pub fn cmn_frames(&self) -> usize {
        (self.cmn_window / self.frame_shift).round().max(1.0) as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.frame_shift > 0.0 && self.frame_shift <= self.frame_length) {
            return fail(format!(
                "frame shift {} must be in (0, frame length {}]",
                self.frame_shift, self.frame_length
            ));
        }
        if self.shift_samples(sample_rate) == 0 {
            return fail("frame shift rounds to zero samples".into());
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel_bins {
            return fail(format!(
                "num_ceps {} must be in [1, num_mel_bins {}]",
                self.num_ceps, self.num_mel_bins
            ));
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(self.mel_low >= 0.0 && self.mel_low < self.mel_high && self.mel_high <= nyquist) {
            return fail(format!(
                "mel range [{}, {}] invalid for sample rate {sample_rate}",
                self.mel_low, self.mel_high
            ));
        }
        if !(self.cmn_window > 0.0) {
            return fail("cmn_window must be positive".into());
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        if !(self.vad.proportion >= 0.0 && self.vad.proportion <= 1.0) {
            return fail("vad proportion must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-frame feature vectors (rows are frames).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T: Real> {
    frames: DMatrix<T>,
    /// Seconds.
    pub frame_shift: f64,
    /// Seconds.
    pub frame_length: f64,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(frames: DMatrix<T>, frame_shift: f64, frame_length: f64) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature matrix has non-finite values".into()));
        }
        Ok(Self {
            frames,
            frame_shift,
            frame_length,
        })
    }

    pub fn empty(dim: usize, frame_shift: f64, frame_length: f64) -> Self {
        Self {
            frames: DMatrix::zeros(0, dim),
            frame_shift,
            frame_length,
        }
    }

    pub fn frames(&self) -> &DMatrix<T> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub(crate) fn with_frames(&self, frames: DMatrix<T>) -> Self {
        Self {
            frames,
            frame_shift: self.frame_shift,
            frame_length: self.frame_length,
        }
    }
}

/// Speech/non-speech decision per frame (`true` = speech).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadMask(pub Vec<bool>);

impl VadMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn speech_frames(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}
