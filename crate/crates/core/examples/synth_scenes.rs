//! Writes one batch of scenes per time-variance condition and summarizes
//! their labels.
//!
//! cargo run --release --example synth_scenes -- [out_dir]

use dynspan::scene::{synth_batch, write_scene_dir, Label, Scenario};

fn main() -> dynspan::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scenes".into());
    for (k, scenario) in Scenario::ALL.into_iter().enumerate() {
        let scenes = synth_batch(&scenario.spec(4 * 16_000), 7, k as u64)?;
        for (i, scene) in scenes.iter().enumerate() {
            let dir = std::path::Path::new(&out).join(format!("{scenario}_{i:03}"));
            write_scene_dir(&dir, scene)?;
            let count = |l: Label| scene.signals.labels.iter().filter(|&&x| x == l).count();
            println!(
                "{:<40} {:<3} far-end only {:>5.2}s  near-end only {:>5.2}s  double talk {:>5.2}s",
                dir.display(),
                scene.kind.name(),
                count(Label::Fst) as f64 / 16e3,
                count(Label::Nst) as f64 / 16e3,
                count(Label::Dt) as f64 / 16e3,
            );
        }
    }
    Ok(())
}
