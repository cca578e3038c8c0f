// Accumulative sentiment per city and its relation to daily mobility.

use cityadapt::data::LabelSource;
use cityadapt::experiment::synthetic_split;
use cityadapt::ingest::SynthConfig;
use cityadapt::metrics::accumulative_curve;
use cityadapt::pipeline::{correlate_cities, sentiment_series};

pub fn run() -> cityadapt::Result<()> {
    let split = synthetic_split(&SynthConfig { n_cities: 6, n_urban: 2, ..Default::default() }, 10)?;
    let tweets = &split.corpus.tweets;
    let labeled = tweets.iter().filter_map(|t| t.label(LabelSource::GoldThenWeak).map(|l| (t, l)));
    let series = sentiment_series(labeled, (0, 30))?;
    for s in &series {
        let curve: Vec<String> =
            accumulative_curve(s).iter().step_by(5).map(|v| v.map_or("   -  ".into(), |x| format!("{x:+.3}"))).collect();
        println!("{}  {}", s.city_id, curve.join(" "));
    }
    let (rows, skipped) = correlate_cities(&series, tweets);
    for (city, c) in rows {
        println!("{city}: slope {:+.3}  r {:+.3}  R2 {:.3}  n {}", c.slope, c.pearson_r, c.r2, c.n);
    }
    for (city, why) in skipped {
        println!("{city}: skipped ({why})");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
