//! Analysis/synthesis round trip of the 20 ms / 10 ms STFT.
//!
//! cargo run --release --example stft_roundtrip

use dynspan::dsp::{istft, stft, Waveform, HOP, NUM_BINS, WINDOW_LEN};
use rand::{Rng, SeedableRng};

fn main() -> dynspan::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Waveform::new((0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect());
    let spec = stft(&x)?;
    let y = istft(&spec)?;
    println!("{} samples -> {} frames x {} bins (window {WINDOW_LEN}, hop {HOP})", x.len(), spec.frames(), NUM_BINS);
    let interior = WINDOW_LEN..y.len() - WINDOW_LEN;
    let err = interior
        .clone()
        .map(|i| (x.samples[i] - y.samples[i]).abs())
        .fold(0.0, f64::max);
    println!("reconstructed {} samples, max interior error {err:.3e}", y.len());
    println!(
        "algorithmic latency {} ms",
        dynspan::model::ALGORITHMIC_LATENCY_MS
    );
    Ok(())
}
