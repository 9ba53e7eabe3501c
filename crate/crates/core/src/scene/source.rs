//! Synthetic stand-ins for speech and noise recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::{Waveform, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Voiced "syllables": harmonic stacks with a gliding pitch, two formant
/// bumps and a raised-cosine envelope, separated by short pauses.
pub fn speech_like(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut cursor = (rng.random_range(0.0..0.1) * FS) as usize;
    while cursor < len {
        let dur = (rng.random_range(0.08..0.30) * FS) as usize;
        let f0_start: f64 = rng.random_range(90.0..250.0);
        let f0_end = f0_start * rng.random_range(0.85..1.15);
        let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2500.0)];
        let level = rng.random_range(0.04..0.12);
        let mut phase = 0.0;
        for n in 0..dur.min(len - cursor) {
            let frac = n as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2.0 * PI * f0 / FS;
            let env = 0.5 - 0.5 * (2.0 * PI * frac).cos();
            let mut v = 0.0;
            let mut k = 1;
            while (k as f64) * f0 < 7000.0 {
                let fk = k as f64 * f0;
                let shape: f64 = formants
                    .iter()
                    .map(|fm| (-((fk - fm) / 250.0).powi(2)).exp())
                    .sum::<f64>()
                    + 0.1;
                v += shape / k as f64 * (k as f64 * phase).sin();
                k += 1;
            }
            out[cursor + n] += level * env * v;
        }
        cursor += dur + (rng.random_range(0.03..0.25) * FS) as usize;
    }
    Waveform::new(out)
}

/// Gaussian noise through a one-pole lowpass, normalized to `rms`.
pub fn colored_noise(len: usize, rms: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pole = rng.random_range(0.0..0.9);
    let mut prev = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            prev = pole * prev + (1.0 - pole) * normal.sample(&mut rng);
            prev
        })
        .collect();
    let power = out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
    if power > 0.0 {
        let g = rms / power.sqrt();
        out.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(out)
}
