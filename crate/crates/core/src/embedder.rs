//! Deterministic stand-in for a neural utterance embedder, plus the audio
//! chain that feeds it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::length_normalize;
use crate::error::{Error, Result};
use crate::frontend::{
    apply_vad, mfcc, pcm_energy_vad, resample, sliding_cmn, AudioBuffer, FeatureMatrix, FrontendConfig, VadMask,
};
use crate::scalar::Real;
use crate::wpe::{enhance_waveform, WpeConfig};

pub const EMBEDDING_DIM: usize = 512;

/// Optional resampling and dereverberation in front of feature extraction.
#[derive(Debug, Clone, Default)]
pub struct AudioChain {
    pub target_rate: Option<u32>,
    pub wpe: Option<WpeConfig>,
}

/// Resample → (WPE) → MFCC → sliding CMN → energy VAD. The VAD decision is
/// taken on the un-normalized c0 at PCM level and applied to the normalized features.
pub fn speech_features<T: Real>(
    audio: &AudioBuffer<T>,
    chain: &AudioChain,
) -> Result<(FeatureMatrix<T>, VadMask)> {
    let audio = match chain.target_rate {
        Some(rate) if rate != audio.sample_rate() => resample(audio, rate)?,
        _ => audio.clone(),
    };
    let audio = match &chain.wpe {
        Some(cfg) => enhance_waveform(&audio, &FrontendConfig::for_enhancement(audio.sample_rate()), cfg)?,
        None => audio,
    };
    let config = FrontendConfig::for_rate(audio.sample_rate());
    let raw = mfcc(&audio, &config)?;
    let mask = pcm_energy_vad(&raw, &config);
    let normalized = sliding_cmn(&raw, config.cmn_frames());
    Ok((apply_vad(&normalized, &mask)?, mask))
}

/// Fixed Gaussian projection `EMBEDDING_DIM × input_dim` drawn from a
/// ChaCha8 stream seeded with `seed`, scaled by 1/sqrt(input_dim).
pub fn projection_matrix<T: Real>(input_dim: usize, seed: u64) -> DMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (input_dim.max(1) as f64).sqrt();
    // Filled row by row so the stream order is fixed.
    let values: Vec<T> = (0..EMBEDDING_DIM * input_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * scale)
        })
        .collect();
    DMatrix::from_row_slice(EMBEDDING_DIM, input_dim, &values)
}

/// Per-coefficient mean and (population) standard deviation. Each column is
/// summed in sorted order, so the result is bitwise independent of frame order.
pub fn pooled_statistics<T: Real>(features: &FeatureMatrix<T>) -> Result<DVector<T>> {
    let (n, d) = features.frames().shape();
    if n == 0 {
        return Err(Error::Contract("toy embedder needs at least one frame".into()));
    }
    let x = features.frames();
    let count = T::from_count(n);
    let mut stats = DVector::zeros(2 * d);
    for j in 0..d {
        let mut col: Vec<T> = x.column(j).iter().copied().collect();
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        let mean = col.iter().fold(T::zero(), |acc, &v| acc + v) / count;
        let var = col.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / count;
        stats[j] = mean;
        stats[d + j] = var.sqrt();
    }
    Ok(stats)
}

/// Mean/std pooling → seeded random projection to 512 dims → unit norm.
pub fn toy_embedder<T: Real>(features: &FeatureMatrix<T>, seed: u64) -> Result<DVector<T>> {
    let stats = pooled_statistics(features)?;
    let projected = projection_matrix::<T>(stats.len(), seed) * stats;
    let (v, zero) = length_normalize(&projected);
    if zero {
        return Err(Error::Numerical("toy embedding is the zero vector".into()));
    }
    Ok(v)
}

/// Embedder with a cached projection matrix, for many utterances.
pub struct ToyEmbedder<T: Real> {
    projection: DMatrix<T>,
}

impl<T: Real> ToyEmbedder<T> {
    pub fn new(feature_dim: usize, seed: u64) -> Self {
        Self {
            projection: projection_matrix(2 * feature_dim, seed),
        }
    }

    pub fn embed(&self, features: &FeatureMatrix<T>) -> Result<DVector<T>> {
        let stats = pooled_statistics(features)?;
        if stats.len() != self.projection.ncols() {
            return Err(Error::Contract(format!(
                "features have dimension {}, embedder expects {}",
                stats.len() / 2,
                self.projection.ncols() / 2
            )));
        }
        let (v, zero) = length_normalize(&(&self.projection * stats));
        if zero {
            return Err(Error::Numerical("toy embedding is the zero vector".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: usize, seed: u64) -> FeatureMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, 23, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + j as f64 * 0.1
        });
        FeatureMatrix::new(m, 0.01, 0.025).unwrap()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let f = features(50, 1);
        let a = toy_embedder(&f, 9).unwrap();
        assert_eq!(a.len(), EMBEDDING_DIM);
        assert_eq!(a, toy_embedder(&f, 9).unwrap());
        assert_eq!(a, ToyEmbedder::new(23, 9).embed(&f).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_ne!(a, toy_embedder(&f, 10).unwrap());
    }

    #[test]
    fn frame_order_does_not_matter() {
        let f = features(40, 2);
        let reversed = DMatrix::from_fn(40, 23, |i, j| f.frames()[(39 - i, j)]);
        let r = FeatureMatrix::new(reversed, 0.01, 0.025).unwrap();
        assert_eq!(toy_embedder(&f, 3).unwrap(), toy_embedder(&r, 3).unwrap());
    }

    #[test]
    fn empty_features_are_rejected() {
        let f = FeatureMatrix::<f64>::empty(23, 0.01, 0.025);
        assert!(toy_embedder(&f, 0).is_err());
    }
}
