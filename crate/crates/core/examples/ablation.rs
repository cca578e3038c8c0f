// Compare input modes and training strategies on one synthetic split.

use cityadapt::experiment::{run_variants, synthetic_split, ExperimentConfig, Variant};
use cityadapt::ingest::SynthConfig;

pub fn run() -> cityadapt::Result<()> {
    let cfg = ExperimentConfig { synth: SynthConfig::low_resource_preset(2), ..Default::default() };
    let split = synthetic_split(&cfg.synth, 60)?;
    let rows = run_variants(&split.corpus, &split.holdout, &[], &Variant::ALL, &cfg)?;
    println!("{:<24} {:>8} {:>8} {:>8}", "variant", "acc", "recall", "F1");
    for r in rows {
        println!("{:<24} {:>8.4} {:>8.4} {:>8.4}", r.variant, r.metrics.accuracy, r.metrics.macro_recall, r.metrics.macro_f1);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
