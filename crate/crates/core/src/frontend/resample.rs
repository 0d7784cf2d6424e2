//! Rational-factor polyphase resampler with a Kaiser-windowed sinc kernel.

use super::{AudioBuffer, NARROWBAND_RATE, WIDEBAND_RATE};
use crate::error::{Error, Result};
use crate::scalar::Real;

const KAISER_BETA: f64 = 8.6;
/// Kernel length measured in samples of the lower of the two rates.
const TAPS_PER_PHASE: usize = 48;
const MAX_FACTOR: u64 = 1024;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    /// Per output phase: weights for input offsets `centre - j`, j in
    /// `-reach..=reach`.
    phases: Vec<Vec<f64>>,
    reach: usize,
    source_rate: u32,
    target_rate: u32,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(Error::Config("sample rates must be positive".into()));
        }
        let g = gcd(u64::from(source_rate), u64::from(target_rate));
        let up = u64::from(target_rate) / g;
        let down = u64::from(source_rate) / g;
        if up.max(down) > MAX_FACTOR {
            return Err(Error::Config(format!(
                "unsupported rate pair {source_rate} -> {target_rate} (factor {up}/{down})"
            )));
        }
        let (up, down) = (up as usize, down as usize);
        let factor = up.max(down);
        // Work on the virtual grid at up·source_rate.
        let cutoff = 0.5 / factor as f64;
        let half = (TAPS_PER_PHASE / 2 * factor) as f64;
        let reach = TAPS_PER_PHASE / 2 * factor / up + 1;
        let phases = (0..up)
            .map(|p| {
                (0..=2 * reach)
                    .map(|idx| {
                        let j = idx as i64 - reach as i64;
                        let k = p as f64 + (j * up as i64) as f64;
                        if k.abs() >= half {
                            0.0
                        } else {
                            let r = k / half;
                            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA);
                            up as f64 * 2.0 * cutoff * sinc(2.0 * cutoff * k) * win
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            up,
            down,
            phases,
            reach,
            source_rate,
            target_rate,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process<T: Real>(&self, input: &[T]) -> Vec<T> {
        let n_out = self.output_len(input.len());
        let n_in = input.len() as i64;
        let reach = self.reach as i64;
        (0..n_out)
            .map(|m| {
                let t = m * self.down;
                let centre = (t / self.up) as i64;
                let weights = &self.phases[t % self.up];
                let mut acc = 0.0f64;
                for (idx, &w) in weights.iter().enumerate() {
                    let n = centre - (idx as i64 - reach);
                    if (0..n_in).contains(&n) && w != 0.0 {
                        acc += w * input[n as usize].to_f64_lossy();
                    }
                }
                T::lit(acc)
            })
            .collect()
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn target_rate(&self) -> u32 {
        self.target_rate
    }
}

/// Resamples to one of the two supported operating points (8 or 16 kHz).
/// Same-rate input is returned unchanged.
pub fn resample<T: Real>(audio: &AudioBuffer<T>, target_rate: u32) -> Result<AudioBuffer<T>> {
    if target_rate != NARROWBAND_RATE && target_rate != WIDEBAND_RATE {
        return Err(Error::Config(format!(
            "target rate must be 8000 or 16000, got {target_rate}"
        )));
    }
    if audio.sample_rate() == target_rate {
        return Ok(audio.clone());
    }
    let r = Resampler::new(audio.sample_rate(), target_rate)?;
    AudioBuffer::new(r.process(audio.samples()), target_rate)
}
