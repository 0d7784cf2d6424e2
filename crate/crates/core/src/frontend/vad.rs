use super::{FeatureMatrix, FrontendConfig, VadConfig, VadMask};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Energy VAD on coefficient 0. A frame is speech when, among the frames
/// within `±context`, at least `proportion` of them have
/// `c0 > mean_scale · mean(c0) + offset`.
pub fn energy_vad<T: Real>(features: &FeatureMatrix<T>, params: &VadConfig) -> VadMask {
    let n = features.num_frames();
    if n == 0 || features.dim() == 0 {
        return VadMask(vec![false; n]);
    }
    let c0: Vec<T> = features.frames().column(0).iter().copied().collect();
    let mean = c0.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(n);
    let threshold = T::lit(params.mean_scale) * mean + T::lit(params.offset);
    let loud: Vec<bool> = c0.iter().map(|&c| c > threshold).collect();

    let ctx = params.context;
    let flags = (0..n)
        .map(|t| {
            let lo = t.saturating_sub(ctx);
            let hi = (t + ctx + 1).min(n);
            let votes = loud[lo..hi].iter().filter(|&&b| b).count();
            votes as f64 >= params.proportion * (hi - lo) as f64
        })
        .collect();
    VadMask(flags)
}

/// 16-bit PCM full scale.
pub const PCM_FULL_SCALE: f64 = 32768.0;

/// [`energy_vad`] with c0 referred to 16-bit PCM sample units, the level at
/// which the default thresholds are set. Scaling the samples by `g` adds
/// `2 ln g` to every log filterbank energy, hence `2 ln g · sqrt(M)` to the
/// orthonormal c0 of `M` mel bins.
pub fn pcm_energy_vad<T: Real>(features: &FeatureMatrix<T>, config: &FrontendConfig) -> VadMask {
    if features.dim() == 0 {
        return VadMask(vec![false; features.num_frames()]);
    }
    let shift = T::lit(2.0 * PCM_FULL_SCALE.ln() * (config.num_mel_bins as f64).sqrt());
    let mut m = features.frames().clone();
    m.column_mut(0).add_scalar_mut(shift);
    energy_vad(&features.with_frames(m), &config.vad)
}

/// Keeps the rows flagged as speech, in order.
pub fn apply_vad<T: Real>(features: &FeatureMatrix<T>, mask: &VadMask) -> Result<FeatureMatrix<T>> {
    if mask.len() != features.num_frames() {
        return Err(Error::Contract(format!(
            "vad mask has {} entries for {} frames",
            mask.len(),
            features.num_frames()
        )));
    }
    let keep: Vec<usize> = (0..mask.len()).filter(|&t| mask.0[t]).collect();
    Ok(features.with_frames(features.frames().select_rows(keep.iter())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn c0_features(c0: &[f64]) -> FeatureMatrix<f64> {
        FeatureMatrix::new(DMatrix::from_fn(c0.len(), 2, |i, j| if j == 0 { c0[i] } else { 1.0 }), 0.01, 0.025)
            .unwrap()
    }

    #[test]
    fn digital_silence_is_all_nonspeech() {
        let f = c0_features(&[-110.0; 40]);
        let m = energy_vad(&f, &VadConfig::default());
        assert_eq!(m.speech_frames(), 0);
    }

    #[test]
    fn zero_context_full_proportion_is_pointwise() {
        let c0: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 40.0 } else { 0.0 }).collect();
        let params = VadConfig {
            context: 0,
            proportion: 1.0,
            ..VadConfig::default()
        };
        let m = energy_vad(&c0_features(&c0), &params);
        // mean 20 -> threshold 0.5*20 + 5 = 15
        let expected: Vec<bool> = c0.iter().map(|&c| c > 15.0).collect();
        assert_eq!(m.0, expected);
    }

    #[test]
    fn pcm_level_vad_keeps_a_tone_between_silences() {
        let rate = 8000;
        let cfg = FrontendConfig::for_rate(rate);
        let x: Vec<f64> = (0..3 * rate as usize)
            .map(|i| {
                let on = (rate as usize..2 * rate as usize).contains(&i);
                let tone = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / f64::from(rate)).sin();
                if on { 0.3 * tone } else { 0.0 }
            })
            .collect();
        let f = crate::frontend::mfcc(&crate::frontend::AudioBuffer::new(x, rate).unwrap(), &cfg).unwrap();
        let m = pcm_energy_vad(&f, &cfg);
        for (t, &speech) in m.0.iter().enumerate() {
            let centre = t * 80 + 100;
            if (8200..15800).contains(&centre) {
                assert!(speech, "frame {t}");
            } else if !(7600..16400).contains(&centre) {
                assert!(!speech, "frame {t}");
            }
        }
    }

    #[test]
    fn pcm_level_vad_keeps_continuous_moderate_audio() {
        let rate = 8000;
        let cfg = FrontendConfig::for_rate(rate);
        let mut state = 1u64;
        let x: Vec<f64> = (0..rate as usize)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                0.05 * ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            })
            .collect();
        let f = crate::frontend::mfcc(&crate::frontend::AudioBuffer::new(x, rate).unwrap(), &cfg).unwrap();
        let m = pcm_energy_vad(&f, &cfg);
        assert!(m.speech_frames() * 10 >= m.len() * 9, "{} of {}", m.speech_frames(), m.len());
        assert_eq!(energy_vad(&f, &cfg.vad).speech_frames(), 0);
    }

    #[test]
    fn deterministic() {
        let c0: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let f = c0_features(&c0);
        assert_eq!(energy_vad(&f, &VadConfig::default()), energy_vad(&f, &VadConfig::default()));
    }

    #[test]
    fn apply_vad_selects_rows() {
        let f = c0_features(&[1.0, 2.0, 3.0]);
        let out = apply_vad(&f, &VadMask(vec![true, false, true])).unwrap();
        assert_eq!(out.num_frames(), 2);
        assert_eq!(out.frames()[(0, 0)], 1.0);
        assert_eq!(out.frames()[(1, 0)], 3.0);
        assert_eq!(apply_vad(&f, &VadMask(vec![true; 3])).unwrap(), f);
        assert!(apply_vad(&f, &VadMask(vec![false; 3])).unwrap().is_empty());
        assert!(matches!(apply_vad(&f, &VadMask(vec![true; 2])), Err(Error::Contract(_))));
    }
}
