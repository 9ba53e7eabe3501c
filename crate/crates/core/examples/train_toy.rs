//! Trains a small model on synthetic scenes and prints the loss curve.
//!
//! cargo run --release --example train_toy -- [variant] [epochs]

use std::time::Instant;

use dynspan::model::{Model, ModelConfig, Variant};
use dynspan::scene::{synth_batch, SceneSpec};
use dynspan::train::{train, Dataset, TrainConfig};

fn main() -> dynspan::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("all_das").parse()?;
    let epochs = args.next().map_or(Ok(30), |e| e.parse()).expect("epochs must be a number");

    let scenes = synth_batch(&SceneSpec::default(), 10, 7)?;
    let data = Dataset::from_generated(&scenes)?;
    let mut model = Model::build(ModelConfig::new(variant), 7)?;
    println!("{variant}: {} parameters, {} scenes", model.num_params(), data.len());

    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &data, &cfg)?;
    println!("initial loss {:.4}", report.initial_loss);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.4}", e + 1);
    }
    println!(
        "final loss {:.4} ({:.1}% of initial) in {:.1}s",
        report.final_loss,
        100.0 * report.final_loss / report.initial_loss,
        start.elapsed().as_secs_f64()
    );
    for s in report.spans.iter().filter(|s| s.dynamic) {
        println!("  {} group {}: mean span {:.2}", s.module, s.group, s.mean);
    }
    Ok(())
}
