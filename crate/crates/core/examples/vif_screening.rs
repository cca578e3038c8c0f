// Drop collinear city features while keeping the risk score.

use cityadapt::ingest::vif_screen;
use cityadapt::nn::seeded_rng;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn run() -> cityadapt::Result<()> {
    let names = ["wildfire_risk", "income", "poverty_rate", "median_age", "pct_renters", "pct_owners"];
    let mut rng = seeded_rng(5);
    let mut x = DMatrix::from_fn(200, names.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    for i in 0..200 {
        // Poverty tracks income, owners mirror renters.
        x[(i, 2)] = -0.9 * x[(i, 1)] + 0.2 * x[(i, 2)];
        x[(i, 5)] = -x[(i, 4)] + 0.05 * x[(i, 5)];
    }
    let core: Vec<bool> = names.iter().map(|n| *n == "wildfire_risk").collect();
    let screen = vif_screen(&x, &core, 5.0)?;
    for e in &screen.log {
        println!("round {}  {:<14} VIF {:>10.2}  {:?}", e.round, names[e.column], e.vif, e.action);
    }
    let kept: Vec<&str> = screen.selected.iter().map(|&j| names[j]).collect();
    println!("kept: {}", kept.join(", "));
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
