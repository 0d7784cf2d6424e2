//! Reference computations written from the definitions, independent of the
//! library code they check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

/// Log-density of `z` under N(0, cov) via an explicit determinant and solve.
fn log_gauss(z: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = z.len() as f64;
    let det = cov.determinant();
    let sol = cov.clone().lu().solve(z).unwrap();
    -0.5 * (n * (2.0 * PI).ln() + det.ln() + z.dot(&sol))
}

/// Same-speaker versus different-speaker log-likelihood ratio from the
/// stacked 2d-dimensional covariances.
pub fn plda_llr(mu: &DVector<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
    let d = mu.len();
    let tot = b + w;
    let mut same = DMatrix::zeros(2 * d, 2 * d);
    let mut diff = DMatrix::zeros(2 * d, 2 * d);
    for (blk, m) in [((0, 0), &tot), ((d, d), &tot)] {
        same.view_mut(blk, (d, d)).copy_from(m);
        diff.view_mut(blk, (d, d)).copy_from(m);
    }
    same.view_mut((0, d), (d, d)).copy_from(b);
    same.view_mut((d, 0), (d, d)).copy_from(b);
    let mut z = DVector::zeros(2 * d);
    z.rows_mut(0, d).copy_from(&(e - mu));
    z.rows_mut(d, d).copy_from(&(t - mu));
    log_gauss(&z, &same) - log_gauss(&z, &diff)
}

/// (P_miss, P_fa) at every distinct score threshold, counting `score >= θ`
/// as accept, followed by the reject-all point.
pub fn sweep(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<f64> = tar.iter().chain(non).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all.push(f64::INFINITY);
    all.iter()
        .map(|&th| {
            let miss = tar.iter().filter(|&&s| s < th).count() as f64 / tar.len() as f64;
            let fa = non.iter().filter(|&&s| s >= th).count() as f64 / non.len() as f64;
            (miss, fa)
        })
        .collect()
}

/// EER in percent: linear interpolation of P_miss between the last sweep
/// point with P_miss < P_fa and the first with P_miss >= P_fa.
pub fn eer(points: &[(f64, f64)]) -> f64 {
    let i = points.iter().position(|(m, f)| m >= f).unwrap();
    let (m1, f1) = points[i];
    if m1 == f1 || i == 0 {
        return 100.0 * m1;
    }
    let (m0, f0) = points[i - 1];
    let (d0, d1) = (m0 - f0, m1 - f1);
    100.0 * (m0 + (-d0 / (d1 - d0)) * (m1 - m0))
}

pub fn min_dcf(points: &[(f64, f64)], p: f64) -> f64 {
    points
        .iter()
        .map(|(m, f)| (p * m + (1.0 - p) * f) / p.min(1.0 - p))
        .fold(f64::INFINITY, f64::min)
}

pub fn act_dcf(tar: &[f64], non: &[f64], p: f64) -> f64 {
    let th = -(p / (1.0 - p)).ln();
    let miss = tar.iter().filter(|&&s| s < th).count() as f64 / tar.len() as f64;
    let fa = non.iter().filter(|&&s| s >= th).count() as f64 / non.len() as f64;
    (p * miss + (1.0 - p) * fa) / p.min(1.0 - p)
}

/// MFCC by the textbook recipe: pre-emphasis, symmetric Hamming, naive DFT
/// power spectrum, triangular mel filters, natural log, orthonormal DCT-II.
pub fn mfcc(x: &[f64], rate: u32) -> Vec<Vec<f64>> {
    let fs = f64::from(rate);
    let frame = (0.025 * fs).round() as usize;
    let hop = (0.010 * fs).round() as usize;
    let nfft = frame.next_power_of_two();
    let (lo, hi) = (20.0, if rate == 8000 { 3700.0 } else { 7700.0 });
    let nfilt = 23;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let edges: Vec<f64> = (0..nfilt + 2)
        .map(|i| mel(lo) + (mel(hi) - mel(lo)) * i as f64 / (nfilt + 1) as f64)
        .collect();
    let y: Vec<f64> = (0..x.len()).map(|n| if n == 0 { x[0] } else { x[n] - 0.97 * x[n - 1] }).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + frame <= y.len() {
        let seg: Vec<f64> = (0..frame)
            .map(|n| y[start + n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (re, im) = seg.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
                    let ph = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    (re + v * ph.cos(), im + v * ph.sin())
                });
                re * re + im * im
            })
            .collect();
        let logs: Vec<f64> = (0..nfilt)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let b = mel(k as f64 * fs / nfft as f64);
                        let w = if b > l && b <= c {
                            (b - l) / (c - l)
                        } else if b > c && b < r {
                            (r - b) / (r - c)
                        } else {
                            0.0
                        };
                        w * p
                    })
                    .sum();
                e.max(1e-10).ln()
            })
            .collect();
        out.push(
            (0..nfilt)
                .map(|q| {
                    let s = if q == 0 { 1.0 / nfilt as f64 } else { 2.0 / nfilt as f64 }.sqrt();
                    s * logs
                        .iter()
                        .enumerate()
                        .map(|(m, v)| v * (PI * q as f64 * (m as f64 + 0.5) / nfilt as f64).cos())
                        .sum::<f64>()
                })
                .collect(),
        );
        start += hop;
    }
    out
}

/// Exponentially decaying noise tail after a 30 ms gap, scaled to the energy
/// of the unit direct path.
pub fn room_response(rate: u32, rt60: f64, noise: &[f64]) -> Vec<f64> {
    let fs = f64::from(rate);
    let len = (1.2 * rt60 * fs) as usize;
    let gap = (0.030 * fs) as usize;
    let mut h: Vec<f64> = (0..len)
        .map(|n| if n < gap { 0.0 } else { noise[n] * (-6.9 * n as f64 / (rt60 * fs)).exp() })
        .collect();
    let energy = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= energy);
    h[0] = 1.0;
    h
}

/// Causal convolution truncated to the input length.
pub fn convolve(s: &[f64], h: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|n| h.iter().take(n + 1).enumerate().map(|(k, hk)| hk * s[n - k]).sum())
        .collect()
}
