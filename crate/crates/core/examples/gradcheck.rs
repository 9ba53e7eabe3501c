//! Analytic gradients against central differences on a tiny model.
//!
//! cargo run --release --example gradcheck -- [variant] [seed]

use dynspan::model::Variant;
use dynspan::train::gradcheck;

fn main() -> dynspan::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("all_das").parse()?;
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be a number");
    let report = gradcheck(variant, seed)?;
    print!("{}", report.to_text());
    println!("{}", if report.passed() { "pass" } else { "FAIL" });
    Ok(())
}
