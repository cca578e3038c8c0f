// Turn tract-level origin-destination trips into per-city daily mobility.

use std::collections::BTreeMap;

use cityadapt::data::{OdRecord, TweetRecord};
use cityadapt::ingest::{aggregate_tracts_to_city, attach_mobility, filter_od, od_to_city_mobility, Crosswalk};

fn trip(o: &str, d: &str, day: u32, trips: u64) -> OdRecord {
    OdRecord { origin_tract: o.into(), dest_tract: d.into(), day, trips }
}

pub fn run() -> cityadapt::Result<()> {
    let mut cw = Crosswalk::new();
    cw.insert("06037001", "altadena", 4200)?;
    cw.insert("06037002", "altadena", 3100)?;
    cw.insert("06037101", "pasadena", 9800)?;
    let od = vec![
        trip("06037001", "06037002", 0, 40),
        trip("06037001", "06037101", 0, 25),
        trip("06037101", "06037002", 0, 12),
        trip("06037101", "06037001", 1, 3),
        trip("06037002", "06037101", 1, 18),
    ];
    let kept = filter_od(&od, 5);
    println!("{} of {} OD rows meet the trip floor", kept.len(), od.len());
    let table = od_to_city_mobility(&kept, &cw)?;
    for ((city, day), v) in &table {
        println!("{city} day {day}: out {:.0} in {:.0} intra {:.0} log-total {:.2}", v[0], v[1], v[2], v[3]);
    }

    let mut tweets = vec![TweetRecord {
        tweet_id: "t1".into(),
        city_id: "pasadena".into(),
        day: 1,
        text_embedding: vec![0.0; 4],
        mobility_features: vec![],
        weak_label: None,
        gold_label: None,
        weight: 1.0,
    }];
    let missing = attach_mobility(&mut tweets, &table);
    println!("t1 mobility {:?}, missing {missing:?}", tweets[0].mobility_features);

    let income: BTreeMap<String, Vec<f64>> =
        [("06037001", 61.0), ("06037002", 88.0), ("06037101", 95.0)].iter().map(|(t, v)| (t.to_string(), vec![*v])).collect();
    let agg = aggregate_tracts_to_city(&income, &cw)?;
    for (city, v) in &agg.values {
        println!("{city}: population-weighted income {:.1}k", v[0]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
