//! Multiply-accumulate cost of a fixed-window model and a dynamic-span
//! model on the same utterance.
//!
//! cargo run --release --example mac_report

use dynspan::attention::logit;
use dynspan::dsp::stft;
use dynspan::metrics::count_macs;
use dynspan::model::{Model, ModelConfig, Variant};
use dynspan::nn::Params;
use dynspan::scene::{synth_batch, Scenario};

fn main() -> dynspan::Result<()> {
    let s = &synth_batch(&Scenario::TimeInvariant.spec(2 * 16_000), 1, 3)?[0].signals;
    let (mic, reference) = (stft(&s.mic)?, stft(&s.reference)?);

    let fixed = Model::build(ModelConfig::new(Variant::BaselineTa), 0)?;
    let mut das = Model::build(ModelConfig::new(Variant::AllDas), 0)?;
    // Short spans, as a trained model tends to pick for a short echo path.
    das.visit_mut("", &mut |name, p| {
        if name.contains("span") && name.ends_with(".b") {
            p.value[0] = logit(0.3);
        }
    });

    for model in [&fixed, &das] {
        let (_, trace) = model.forward_traced(&mic, &reference, &[])?;
        let report = count_macs(model, trace.frames, &trace);
        print!("{}", report.to_table());
        for a in &report.attention {
            println!("  {:<8} {:>12} MACs (window {:>12})", a.module, a.total(), a.full_window);
        }
    }
    Ok(())
}
