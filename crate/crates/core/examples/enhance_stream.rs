//! Frame-by-frame enhancement with bounded state, checked against the
//! offline forward pass.
//!
//! cargo run --release --example enhance_stream -- [checkpoint]

use dynspan::dsp::{istft, stft, ComplexSpectrogram};
use dynspan::metrics::{erle, segmental_snr};
use dynspan::model::{Model, ModelConfig, Variant};
use dynspan::scene::{synth_batch, Scenario};

fn main() -> dynspan::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Model::load(path)?,
        None => Model::build(ModelConfig::new(Variant::AllDas), 0)?,
    };
    let scene = &synth_batch(&Scenario::VariantDelay.spec(3 * 16_000), 7, 2)?[2];
    let s = &scene.signals;
    let (mic, reference) = (stft(&s.mic)?, stft(&s.reference)?);

    let mut state = model.stream_state();
    let mut frames = Vec::with_capacity(mic.frames());
    for t in 0..mic.frames() {
        frames.push(model.stream_step(&mut state, mic.frame(t).view(), reference.frame(t).view())?);
        if t % 100 == 99 {
            println!("frame {:>4}: {} buffered values", t + 1, state.buffered_values(&model));
        }
    }
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let streamed = ComplexSpectrogram::from_frames(&views)?;
    let offline = model.forward(&mic, &reference)?;
    let diff = (&streamed.data - &offline.data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{} frames, max |stream - offline| = {diff:.3e}", mic.frames());

    let est = istft(&streamed)?;
    let n = est.len();
    let cut = |w: &dynspan::dsp::Waveform| dynspan::dsp::Waveform::new(w.samples[..n].to_vec());
    let labels = &s.labels[..n];
    if let Ok(e) = erle(&cut(&s.mic), &est, labels) {
        println!("ERLE {e:.2} dB");
    }
    if let Ok(q) = segmental_snr(&cut(&s.near_target), &est, labels) {
        println!("segmental SNR {q:.2} dB");
    }
    Ok(())
}
