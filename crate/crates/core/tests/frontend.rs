use std::f64::consts::PI;

use avkit_core::frontend::{hz_to_mel, mfcc, AudioBuffer, FrontendConfig};

/// Straight-line MFCC from the textbook definitions: naive DFT, triangular
/// filters built from the mel formula, natural log, orthonormal DCT-II.
fn reference_mfcc(x: &[f64], rate: u32) -> Vec<Vec<f64>> {
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

    let mut y = vec![x[0]];
    for n in 1..x.len() {
        y.push(x[n] - 0.97 * x[n - 1]);
    }

    let mut out = Vec::new();
    let mut start = 0;
    while start + frame <= y.len() {
        let seg: Vec<f64> = (0..frame)
            .map(|n| y[start + n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in seg.iter().enumerate() {
                    let ph = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
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
        let ceps = (0..23)
            .map(|q| {
                let s = if q == 0 { (1.0 / nfilt as f64).sqrt() } else { (2.0 / nfilt as f64).sqrt() };
                s * logs
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * q as f64 * (m as f64 + 0.5) / nfilt as f64).cos())
                    .sum::<f64>()
            })
            .collect();
        out.push(ceps);
        start += hop;
    }
    out
}

fn tones(rate: u32, freqs: &[f64], seconds: f64) -> Vec<f64> {
    let n = (seconds * f64::from(rate)) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            freqs.iter().enumerate().map(|(j, f)| 0.3 / (j + 1) as f64 * (2.0 * PI * f * t).sin()).sum()
        })
        .collect()
}

#[test]
fn mfcc_matches_reference_on_tones() {
    for (rate, freqs) in [(8000u32, vec![440.0, 1250.0]), (16000, vec![300.0, 2100.0, 5400.0])] {
        let x = tones(rate, &freqs, 0.5);
        let ours = mfcc(&AudioBuffer::new(x.clone(), rate).unwrap(), &FrontendConfig::for_rate(rate)).unwrap();
        let reference = reference_mfcc(&x, rate);
        assert_eq!(ours.num_frames(), reference.len());
        let mut worst: f64 = 0.0;
        for (t, row) in reference.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((ours.frames()[(t, j)] - v).abs());
            }
        }
        assert!(worst < 1e-6, "{rate} Hz: max abs diff {worst}");
    }
}

#[test]
fn mel_scale_anchor() {
    assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.05);
}

#[test]
fn mfcc_is_shift_equivariant() {
    let rate = 8000;
    let x = tones(rate, &[700.0, 1900.0], 0.6);
    let k = 3;
    let mut delayed = vec![0.0; k * 80];
    delayed.extend_from_slice(&x);
    let cfg = FrontendConfig::for_rate(rate);
    let a = mfcc(&AudioBuffer::new(x, rate).unwrap(), &cfg).unwrap();
    let b = mfcc(&AudioBuffer::new(delayed, rate).unwrap(), &cfg).unwrap();
    // Skip the first frame, whose pre-emphasis sees a different predecessor.
    for t in 1..a.num_frames() {
        let diff = (a.frames().row(t) - b.frames().row(t + k)).amax();
        assert!(diff < 1e-9, "frame {t}: {diff}");
    }
}
