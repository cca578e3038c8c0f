// Two-stage training of the global classifier, with and without mobility.

use cityadapt::experiment::{evaluate_global, synthetic_split, train_global, ModelConfig};
use cityadapt::fusion::InputMode;
use cityadapt::ingest::SynthConfig;

pub fn run() -> cityadapt::Result<()> {
    let split = synthetic_split(&SynthConfig::default(), 40)?;
    println!("{} training tweets, {} held out", split.corpus.tweets.len(), split.holdout.len());
    for mode in [InputMode::Fusion, InputMode::PureText] {
        let model = train_global(&split.corpus.tweets, mode, &ModelConfig::default())?;
        let m = evaluate_global(&model.params, &split.holdout)?;
        println!(
            "{mode:?}: weak-label loss {:.3} -> {:.3}, gold loss {:.3} -> {:.3}, acc {:.3}, macro-F1 {:.3}",
            model.stage1.initial_loss,
            model.stage1.final_loss(),
            model.stage2.initial_loss,
            model.stage2.final_loss(),
            m.accuracy,
            m.macro_f1
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
