use avkit_core::frontend::{stft, AudioBuffer, FrontendConfig, StftMatrix, WindowKind};
use avkit_core::wpe::{wpe_dereverberate, WpeConfig};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATE: u32 = 8000;

fn white(seconds: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..(seconds * f64::from(RATE)) as usize).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct path at unit gain plus an exponentially decaying tail that starts
/// after a 30 ms gap and carries the same energy as the direct path.
fn room_response(rt60: f64, seed: u64) -> Vec<f64> {
    let fs = f64::from(RATE);
    let len = (1.2 * rt60 * fs) as usize;
    let gap = (0.030 * fs) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let g: f64 = rng.random_range(-1.0..1.0);
            if n < gap {
                0.0
            } else {
                g * (-6.9 * n as f64 / (rt60 * fs)).exp()
            }
        })
        .collect();
    let energy = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= energy);
    h[0] = 1.0;
    h
}

fn convolve(s: &[f64], h: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|n| h.iter().take(n + 1).enumerate().map(|(k, hk)| hk * s[n - k]).sum())
        .collect()
}

fn spectrum(x: &[f64]) -> StftMatrix<f64> {
    let cfg = FrontendConfig {
        frame_length: 0.032,
        frame_shift: 0.008,
        window: WindowKind::Hamming,
        ..FrontendConfig::for_rate(RATE)
    };
    stft(&AudioBuffer::new(x.to_vec(), RATE).unwrap(), &cfg, 256).unwrap()
}

fn dist2(a: &StftMatrix<f64>, b: &StftMatrix<f64>) -> f64 {
    a.data.iter().zip(b.data.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

#[test]
fn dereverberation_reduces_late_reverb() {
    let s = white(20.0, 1);
    let y = convolve(&s, &room_response(0.5, 2));
    let (ys, ds) = (spectrum(&y), spectrum(&s));
    let cfg = WpeConfig { taps: 20, delay: 4, iterations: 3, psd_context: 5, ..WpeConfig::default() };
    let x = wpe_dereverberate(&ys, &cfg).unwrap();
    let gain = 10.0 * (dist2(&ys, &ds) / dist2(&x, &ds)).log10();
    assert!(gain >= 3.0, "residual-to-direct improvement {gain:.2} dB");
}

#[test]
fn anechoic_input_is_nearly_unchanged() {
    let d = spectrum(&white(120.0, 3));
    let x = wpe_dereverberate(&d, &WpeConfig { psd_context: 5, ..WpeConfig::default() }).unwrap();
    let norm: f64 = d.data.iter().map(|v| v.norm_sqr()).sum();
    let change = (dist2(&x, &d) / norm).sqrt();
    assert!(change < 0.05, "relative change {change:.4}");
}

#[test]
fn output_scales_with_input() {
    let y = spectrum(&convolve(&white(4.0, 4), &room_response(0.4, 5)));
    let cfg = WpeConfig { psd_context: 2, variance_floor: 1e-300, ..WpeConfig::default() };
    let x = wpe_dereverberate(&y, &cfg).unwrap();
    for c in [Complex::new(1e-3, 0.0), Complex::new(0.0, 7.5), Complex::new(-250.0, 40.0)] {
        let xc = wpe_dereverberate(&y.scaled(c), &cfg).unwrap();
        let expect = x.scaled(c);
        let norm: f64 = expect.data.iter().map(|v| v.norm_sqr()).sum();
        let err = (dist2(&xc, &expect) / norm).sqrt();
        assert!(err < 1e-10, "scale {c}: relative error {err:e}");
    }
}
