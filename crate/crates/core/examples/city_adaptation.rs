// Adapt the global model to data-starved cities using similar donor cities.

use cityadapt::adapt::{adapt_all, AdaptConfig};
use cityadapt::experiment::{city_index, evaluate_city_specific, evaluate_global, synthetic_split, train_global, ModelConfig};
use cityadapt::fusion::InputMode;
use cityadapt::ingest::SynthConfig;

pub fn run() -> cityadapt::Result<()> {
    let split = synthetic_split(&SynthConfig::low_resource_preset(3), 150)?;
    let global = train_global(&split.corpus.tweets, InputMode::Fusion, &ModelConfig::default())?;
    let cities: Vec<_> = split.corpus.cities.values().cloned().collect();
    let (index, _) = city_index(&cities, &Default::default())?;
    let outcome = adapt_all(&global.params, &split.corpus.tweets, &split.low_resource, &index, &AdaptConfig::default())?;

    for (city, adapted) in &outcome.models {
        println!("{city}:");
        for s in &adapted.sources {
            println!("  {:<9} alpha {:.3}  records {}", s.city_id, s.alpha, s.records_used);
        }
    }
    let held: Vec<_> = split.holdout.iter().filter(|r| split.low_resource.contains(&r.city_id)).cloned().collect();
    let g = evaluate_global(&global.params, &held)?;
    let c = evaluate_city_specific(&global.params, &outcome, &held)?;
    println!("starved cities, macro-F1: global {:.3}, city-specific {:.3}", g.macro_f1, c.macro_f1);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
