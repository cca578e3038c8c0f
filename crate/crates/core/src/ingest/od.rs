use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::data::{OdRecord, TweetRecord};
use crate::error::{data, Result};

/// Number of mobility aggregates emitted per (city, day).
pub const MOBILITY_DIM: usize = 4;
pub const MOBILITY_FEATURE_NAMES: [&str; MOBILITY_DIM] =
    ["total_outflow", "total_inflow", "intra_city_trips", "log1p_total_flow"];

/// Tract → (city, tract population) lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Crosswalk {
    entries: BTreeMap<String, (String, u64)>,
}

#[derive(Deserialize)]
struct CrosswalkRow {
    tract_id: String,
    city_id: String,
    population: u64,
}

impl Crosswalk {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a mapping; a tract may belong to only one city.
    pub fn insert(&mut self, tract: impl Into<String>, city: impl Into<String>, population: u64) -> Result<()> {
        let tract = tract.into();
        let city = city.into();
        if let Some((existing, _)) = self.entries.get(&tract) {
            if *existing != city {
                return Err(data(format!("tract {tract} mapped to both {existing} and {city}")));
            }
        }
        self.entries.insert(tract, (city, population));
        Ok(())
    }

    pub fn city_of(&self, tract: &str) -> Result<&str> {
        self.entries
            .get(tract)
            .map(|(c, _)| c.as_str())
            .ok_or_else(|| data(format!("tract {tract} not in crosswalk")))
    }

    pub fn get(&self, tract: &str) -> Option<(&str, u64)> {
        self.entries.get(tract).map(|(c, p)| (c.as_str(), *p))
    }

    /// Reads a CSV with header `tract_id,city_id,population`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut cw = Self::new();
        for row in rdr.deserialize::<CrosswalkRow>() {
            let row = row?;
            cw.insert(row.tract_id, row.city_id, row.population)?;
        }
        Ok(cw)
    }
}

/// Keeps records with at least `min_trips` trips, preserving order.
pub fn filter_od(records: &[OdRecord], min_trips: u64) -> Vec<OdRecord> {
    records.iter().filter(|r| r.trips >= min_trips).cloned().collect()
}

/// Aggregates tract-level OD flows into per-(city, day) vectors
/// `[total_outflow, total_inflow, intra_city_trips, ln(1 + total_flow)]`.
pub fn od_to_city_mobility(
    records: &[OdRecord],
    crosswalk: &Crosswalk,
) -> Result<BTreeMap<(String, u32), Vec<f64>>> {
    let mut acc: BTreeMap<(String, u32), [f64; 3]> = BTreeMap::new();
    for r in records {
        let from = crosswalk.city_of(&r.origin_tract)?;
        let to = crosswalk.city_of(&r.dest_tract)?;
        let trips = r.trips as f64;
        if from == to {
            acc.entry((from.to_string(), r.day)).or_default()[2] += trips;
        } else {
            acc.entry((from.to_string(), r.day)).or_default()[0] += trips;
            acc.entry((to.to_string(), r.day)).or_default()[1] += trips;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, [out, inflow, intra])| {
            let total = out + inflow + intra;
            (k, vec![out, inflow, intra, total.ln_1p()])
        })
        .collect())
}

/// Fills each tweet's mobility vector from the (city, day) table. Tweets
/// without a matching entry get a zero vector; their ids are returned.
pub fn attach_mobility(
    tweets: &mut [TweetRecord],
    mobility: &BTreeMap<(String, u32), Vec<f64>>,
) -> Vec<String> {
    let mut missing = Vec::new();
    for t in tweets.iter_mut() {
        match mobility.get(&(t.city_id.clone(), t.day)) {
            Some(v) => t.mobility_features = v.clone(),
            None => {
                t.mobility_features = vec![0.0; MOBILITY_DIM];
                missing.push(t.tweet_id.clone());
            }
        }
    }
    missing
}

/// Result of population-weighted tract → city aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CityAggregate {
    pub values: BTreeMap<String, Vec<f64>>,
    pub population: BTreeMap<String, u64>,
    /// Cities whose tracts all had population 0 (unweighted mean used).
    pub unweighted: Vec<String>,
}

/// Population-weighted mean of tract vectors per city.
pub fn aggregate_tracts_to_city(
    tract_features: &BTreeMap<String, Vec<f64>>,
    crosswalk: &Crosswalk,
) -> Result<CityAggregate> {
    let dim = tract_features.values().next().map_or(0, Vec::len);
    // (weighted sum, unweighted sum, population, tract count)
    let mut acc: BTreeMap<String, (Vec<f64>, Vec<f64>, u64, usize)> = BTreeMap::new();
    for (tract, v) in tract_features {
        if v.len() != dim {
            return Err(data(format!("tract {tract} has {} features, expected {dim}", v.len())));
        }
        let (city, pop) = crosswalk
            .get(tract)
            .ok_or_else(|| data(format!("tract {tract} not in crosswalk")))?;
        let e = acc
            .entry(city.to_string())
            .or_insert_with(|| (vec![0.0; dim], vec![0.0; dim], 0, 0));
        for i in 0..dim {
            e.0[i] += pop as f64 * v[i];
            e.1[i] += v[i];
        }
        e.2 += pop;
        e.3 += 1;
    }
    let mut out = CityAggregate { values: BTreeMap::new(), population: BTreeMap::new(), unweighted: Vec::new() };
    for (city, (weighted, plain, pop, count)) in acc {
        let v = if pop > 0 {
            weighted.into_iter().map(|x| x / pop as f64).collect()
        } else {
            out.unweighted.push(city.clone());
            plain.into_iter().map(|x| x / count as f64).collect()
        };
        out.values.insert(city.clone(), v);
        out.population.insert(city, pop);
    }
    Ok(out)
}
