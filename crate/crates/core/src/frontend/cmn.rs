use nalgebra::{DMatrix, RowDVector};

use super::FeatureMatrix;
use crate::scalar::Real;

/// Subtracts from each frame the per-coefficient mean of a centred window of
/// `window_frames` frames (`[t - W/2, t - W/2 + W)`), truncated at the
/// utterance edges.
pub fn sliding_cmn<T: Real>(features: &FeatureMatrix<T>, window_frames: usize) -> FeatureMatrix<T> {
    let (n, dim) = features.frames().shape();
    let w = window_frames.max(1);
    let x = features.frames();

    // prefix[t] = sum of rows [0, t)
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(RowDVector::<T>::zeros(dim));
    for t in 0..n {
        let next = &prefix[t] + x.row(t);
        prefix.push(next);
    }

    let mut out = DMatrix::zeros(n, dim);
    for t in 0..n {
        let start = t.saturating_sub(w / 2);
        let end = (t + w - w / 2).min(n);
        let count = T::from_count(end - start);
        let mean = (&prefix[end] - &prefix[start]) / count;
        out.set_row(t, &(x.row(t) - mean));
    }
    features.with_frames(out)
}

/// Window bounds used by [`sliding_cmn`] for frame `t`.
pub fn cmn_window_bounds(t: usize, n: usize, window_frames: usize) -> (usize, usize) {
    let w = window_frames.max(1);
    (t.saturating_sub(w / 2), (t + w - w / 2).min(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix<f64> {
        let d = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        FeatureMatrix::new(m, 0.01, 0.025).unwrap()
    }

    #[test]
    fn constant_input_becomes_zero() {
        let f = fm(&[&[2.0, -1.0][..]; 50]);
        let out = sliding_cmn(&f, 300);
        assert!(out.frames().amax() < 1e-12);
    }

    #[test]
    fn single_frame_is_zeroed() {
        let out = sliding_cmn(&fm(&[&[4.0, 7.0, -3.0]]), 300);
        assert_eq!(out.frames().amax(), 0.0);
    }

    #[test]
    fn two_frames_are_centred() {
        let out = sliding_cmn(&fm(&[&[1.0, 5.0], &[3.0, 5.0]]), 300);
        assert_eq!(out.frames().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0]);
        assert_eq!(out.frames().row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn interior_windows_match_brute_force_mean() {
        let n = 700;
        let m = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 13) % 17) as f64 + (i as f64 * 0.01).sin());
        let f = FeatureMatrix::new(m.clone(), 0.01, 0.025).unwrap();
        let out = sliding_cmn(&f, 300);
        for t in 150..(n - 150) {
            let (s, e) = cmn_window_bounds(t, n, 300);
            assert_eq!(e - s, 300);
            for j in 0..3 {
                let subtracted = m[(t, j)] - out.frames()[(t, j)];
                let window_mean: f64 = (s..e).map(|i| m[(i, j)]).sum::<f64>() / 300.0;
                assert!((window_mean - subtracted).abs() < 1e-9);
            }
        }
    }
}
