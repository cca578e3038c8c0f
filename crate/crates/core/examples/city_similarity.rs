// Learn risk-aware city embeddings and look up the nearest cities.

use cityadapt::adapt::similarity_weights;
use cityadapt::city::{train_city_encoder, CityEncoderConfig};
use cityadapt::experiment::standardized_cities;
use cityadapt::index::EmbeddingIndex;
use cityadapt::ingest::generate_city_set;
use cityadapt::nn::seeded_rng;

pub fn run() -> cityadapt::Result<()> {
    let (cities, _, bands) = generate_city_set(29, 3, 12, &mut seeded_rng(11));
    let (scaled, _) = standardized_cities(&cities)?;
    let trained = train_city_encoder(&scaled, &CityEncoderConfig::default())?;
    println!(
        "triplet loss {:.3} -> {:.3}, tau = ({:.2}, {:.2})",
        trained.loss_curve[0],
        trained.loss_curve.last().unwrap(),
        trained.tau.0,
        trained.tau.1
    );

    let index = EmbeddingIndex::new(trained.embeddings)?;
    let target = &cities[0];
    let neighbors = index.top_k(&target.city_id, 5)?;
    let alphas = similarity_weights(&neighbors, 5.0)?;
    println!("{} (band {}, risk {:.2})", target.city_id, bands[0], target.risk);
    for (id, sim) in &neighbors.neighbors {
        let k = cities.iter().position(|c| &c.city_id == id).unwrap();
        println!("  {id}  band {}  risk {:.2}  sim {sim:.3}  alpha {:.3}", bands[k], cities[k].risk, alphas[id]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
