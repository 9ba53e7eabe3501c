//! Spans chosen by each attention module over an utterance whose echo delay
//! jumps halfway through, plus one attention row.
//!
//! cargo run --release --example attention_spans -- [checkpoint]

use dynspan::dsp::stft;
use dynspan::model::{Model, ModelConfig, Variant};
use dynspan::scene::{synth_batch, Scenario};

fn main() -> dynspan::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Model::load(path)?,
        None => Model::build(ModelConfig::new(Variant::AllDas), 0)?,
    };
    let s = &synth_batch(&Scenario::VariantDelay.spec(4 * 16_000), 1, 4)?[0].signals;
    let (mic, reference) = (stft(&s.mic)?, stft(&s.reference)?);
    let probe = 150;
    let (_, trace) = model.forward_traced(&mic, &reference, &[probe])?;

    print!("{:>6}", "frame");
    for m in &trace.modules {
        print!(" {:>8}", m.name);
    }
    println!();
    for t in (0..trace.frames).step_by(40) {
        print!("{t:>6}");
        for m in &trace.modules {
            let mean = m.groups.iter().map(|g| g.spans[t]).sum::<f64>() / m.groups.len() as f64;
            print!(" {mean:>8.2}");
        }
        println!();
    }

    let row = &trace.module("ta").expect("model has a TA merge").groups[0].rows[0];
    let best = row
        .weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| row.lags[i])
        .unwrap_or(0);
    let live = row.weights.iter().filter(|&&a| a > 0.0).count();
    println!("frame {probe}: TA attends to {live} lags, heaviest at lag {best}");
    Ok(())
}
