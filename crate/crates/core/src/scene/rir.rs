use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::SAMPLE_RATE;

/// Longest impulse response accepted anywhere in a scene (500 ms).
pub const MAX_RIR_LEN: usize = 8000;

/// Offset of the first reflection after the direct path (1 ms).
const FIRST_REFLECTION: usize = 16;
const TAIL_GAIN: f64 = 0.25;

/// Exponentially decaying noise tail after a unit direct path at tap 0.
/// The envelope reaches -60 dB at `rt60_ms`.
pub fn synthetic_rir(rt60_ms: f64, seed: u64) -> Vec<f64> {
    let rt60 = rt60_ms * 1e-3 * SAMPLE_RATE as f64;
    let len = (rt60.round() as usize).clamp(1, MAX_RIR_LEN);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (n, tap) in h.iter_mut().enumerate().skip(FIRST_REFLECTION) {
        let decay = (-6.9078 * n as f64 / rt60).exp();
        *tap = TAIL_GAIN * decay * normal.sample(&mut rng);
    }
    h
}

/// The strongest tap of `h` as `(index, amplitude)`.
pub fn direct_path(h: &[f64]) -> (usize, f64) {
    h.iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best })
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for (k, &hk) in h[..kmax].iter().enumerate() {
            acc += hk * x[n - k];
        }
        *out = acc;
    }
    y
}
