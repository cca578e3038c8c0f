//! Deterministic synthetic corpora with a known label-generating process.
//!
//! Cities fall into risk bands. Band membership drives the city's static
//! features and shifts its sentiment baseline, so structurally similar cities
//! share a label process that inputs alone do not reveal. A tweet's latent
//! score combines its text tone (visible through the text embedding), the
//! city-day disruption level (visible only through mobility features) and
//! the band offset; the gold label thresholds that score.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{CityStatic, Corpus, SentimentLabel, TweetRecord};
use crate::error::{config, Result};
use crate::nn::{seeded_rng, SeededRng};

const LABEL_THRESHOLD: f64 = 0.5;
const SCORE_NOISE: f64 = 0.3;
const MOBILITY_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cities: usize,
    pub n_urban: usize,
    /// Inclusive range of tweets generated per city.
    pub tweets_per_city_range: (usize, usize),
    pub text_dim: usize,
    pub mobility_dim: usize,
    pub city_dim: usize,
    pub risk_band_count: usize,
    /// Probability that a weak label differs from the gold label.
    pub label_noise_rate: f64,
    /// Weight of the city-day disruption in the latent sentiment score.
    pub mobility_signal_strength: f64,
    /// Spread of per-band sentiment offsets.
    pub city_context_strength: f64,
    /// Share of tweets (outside low-resource cities) carrying a gold label.
    pub gold_fraction: f64,
    pub text_noise: f64,
    pub n_days: u32,
    /// Cities forced down to `low_resource_tweets` tweets, all gold-labeled.
    pub low_resource_cities: usize,
    pub low_resource_tweets: usize,
    /// Band hosting the low-resource cities; urban cities avoid it.
    pub low_resource_band: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cities: 29,
            n_urban: 13,
            tweets_per_city_range: (8, 160),
            text_dim: 16,
            mobility_dim: 4,
            city_dim: 12,
            risk_band_count: 3,
            label_noise_rate: 0.25,
            mobility_signal_strength: 1.0,
            city_context_strength: 0.8,
            gold_fraction: 0.3,
            text_noise: 0.5,
            n_days: 31,
            low_resource_cities: 0,
            low_resource_tweets: 8,
            low_resource_band: 0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Three sparse cities sharing a band with a handful of donor cities.
    pub fn low_resource_preset(seed: u64) -> Self {
        Self { low_resource_cities: 3, low_resource_tweets: 8, gold_fraction: 0.1, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tweets_per_city_range;
        let checks: [(bool, &str); 12] = [
            (self.n_cities >= 1, "n_cities must be >= 1"),
            (self.n_urban <= self.n_cities, "n_urban must not exceed n_cities"),
            (lo >= 1 && lo <= hi, "tweets_per_city_range must satisfy 1 <= lo <= hi"),
            (self.text_dim >= 1, "text_dim must be >= 1"),
            (self.mobility_dim >= 1, "mobility_dim must be >= 1"),
            (self.city_dim >= 2, "city_dim must be >= 2"),
            (self.risk_band_count >= 1, "risk_band_count must be >= 1"),
            ((0.0..=1.0).contains(&self.label_noise_rate), "label_noise_rate must lie in [0, 1]"),
            ((0.0..=1.0).contains(&self.gold_fraction), "gold_fraction must lie in [0, 1]"),
            (self.n_days >= 1, "n_days must be >= 1"),
            (
                self.low_resource_cities == 0
                    || (lo..=hi).contains(&self.low_resource_tweets),
                "low_resource_tweets must fall in tweets_per_city_range",
            ),
            (
                self.low_resource_cities + self.n_urban <= self.n_cities
                    && self.low_resource_band < self.risk_band_count,
                "low-resource cities must fit beside the urban cities in a valid band",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(config(format!("synth: {msg}")));
            }
        }
        if !(self.mobility_signal_strength >= 0.0 && self.text_noise >= 0.0 && self.city_context_strength >= 0.0) {
            return Err(config("synth: strengths and noise levels must be >= 0"));
        }
        Ok(())
    }
}

/// Generative parameters needed to draw more data from the same process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub city_band: BTreeMap<String, usize>,
    pub band_offset: Vec<f64>,
    pub band_risk: Vec<f64>,
    pub text_direction: Vec<f64>,
    pub mobility_loadings: Vec<f64>,
    /// Latent disruption per city, indexed by day.
    pub disruption: BTreeMap<String, Vec<f64>>,
    pub low_resource: Vec<String>,
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Band risk centers spread evenly over [0.5, 4.5].
pub fn band_centers(bands: usize) -> Vec<f64> {
    if bands == 1 {
        return vec![2.5];
    }
    (0..bands).map(|b| 0.5 + 4.0 * b as f64 / (bands - 1) as f64).collect()
}

/// A city table with band-dependent features. Column 0 is the risk score.
pub fn generate_city_set(
    n_cities: usize,
    bands: usize,
    city_dim: usize,
    rng: &mut SeededRng,
) -> (Vec<CityStatic>, Vec<String>, Vec<usize>) {
    let centers = band_centers(bands);
    let band_means: Vec<Vec<f64>> =
        (0..bands).map(|_| (1..city_dim).map(|_| 1.5 * normal(rng)).collect()).collect();
    let mut order: Vec<usize> = (0..n_cities).map(|k| k % bands).collect();
    order.shuffle(rng);
    let mut cities = Vec::with_capacity(n_cities);
    for (k, &band) in order.iter().enumerate() {
        let risk = (centers[band] + rng.random_range(-0.3..0.3)).clamp(0.0, 5.0);
        let mut features = vec![risk];
        features.extend(band_means[band].iter().map(|m| m + 0.6 * normal(rng)));
        cities.push(CityStatic {
            city_id: format!("city_{k:03}"),
            features,
            risk,
            population: 0,
            urban: false,
        });
    }
    let mut names = vec!["wildfire_risk".to_string()];
    names.extend((1..city_dim).map(|j| format!("socio_{j:02}")));
    (cities, names, order)
}

fn label_from_score(score: f64) -> SentimentLabel {
    if score < -LABEL_THRESHOLD {
        SentimentLabel::NEGATIVE
    } else if score > LABEL_THRESHOLD {
        SentimentLabel::POSITIVE
    } else {
        SentimentLabel::NEUTRAL
    }
}

fn flip(label: SentimentLabel, rng: &mut SeededRng) -> SentimentLabel {
    let others: Vec<_> = SentimentLabel::ALL.into_iter().filter(|l| *l != label).collect();
    others[rng.random_range(0..others.len())]
}

impl SynthTruth {
    fn mobility_for(&self, city: &str, day: u32, rng: &mut SeededRng) -> Vec<f64> {
        let d = self.disruption[city][day as usize];
        self.mobility_loadings.iter().map(|a| a * d + MOBILITY_NOISE * normal(rng)).collect()
    }

    /// Draws one tweet for `city`. Returns the record with its gold label set.
    fn draw_tweet(&self, city: &str, id: String, day: u32, mobility: &[f64], rng: &mut SeededRng) -> TweetRecord {
        let cfg = &self.config;
        let tone = normal(rng);
        let text_embedding: Vec<f64> =
            self.text_direction.iter().map(|u| tone * u + cfg.text_noise * normal(rng)).collect();
        let d = self.disruption[city][day as usize];
        let score = tone
            + cfg.mobility_signal_strength * d
            + self.band_offset[self.city_band[city]]
            + SCORE_NOISE * normal(rng);
        let gold = label_from_score(score);
        let weak = if rng.random::<f64>() < cfg.label_noise_rate { flip(gold, rng) } else { gold };
        TweetRecord {
            tweet_id: id,
            city_id: city.to_string(),
            day,
            text_embedding,
            mobility_features: mobility.to_vec(),
            weak_label: Some(weak),
            gold_label: Some(gold),
            weight: 1.0,
        }
    }
}

/// Generates a corpus and the parameters that produced it.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Corpus, SynthTruth)> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let (mut cities, names, bands) = generate_city_set(cfg.n_cities, cfg.risk_band_count, cfg.city_dim, &mut rng);

    // Low-resource cities first (in their band), then urban cities outside it.
    let mut low_resource = Vec::new();
    for (c, &b) in cities.iter().zip(&bands) {
        if low_resource.len() < cfg.low_resource_cities && b == cfg.low_resource_band {
            low_resource.push(c.city_id.clone());
        }
    }
    if low_resource.len() < cfg.low_resource_cities {
        return Err(config("synth: not enough cities in low_resource_band"));
    }
    let mut urban_candidates: Vec<usize> = (0..cities.len())
        .filter(|&k| !low_resource.contains(&cities[k].city_id))
        .collect();
    if cfg.low_resource_cities > 0 {
        // stable partition: other bands first
        urban_candidates.sort_by_key(|&k| bands[k] == cfg.low_resource_band);
    }
    for &k in urban_candidates.iter().take(cfg.n_urban) {
        cities[k].urban = true;
    }

    let (lo, hi) = cfg.tweets_per_city_range;
    let mid = ((lo as f64) * (hi as f64)).sqrt();
    for c in &mut cities {
        c.population = if c.urban {
            (50_000.0 * 40f64.powf(rng.random::<f64>())) as u64
        } else {
            (1_000.0 * 50f64.powf(rng.random::<f64>())) as u64
        };
    }

    let centers = band_centers(cfg.risk_band_count);
    let mid_band = (cfg.risk_band_count as f64 - 1.0) / 2.0;
    let band_offset: Vec<f64> = (0..cfg.risk_band_count)
        .map(|b| cfg.city_context_strength * (b as f64 - mid_band))
        .collect();
    let norm_dir: Vec<f64> = (0..cfg.text_dim).map(|_| normal(&mut rng)).collect();
    let len = norm_dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let text_direction: Vec<f64> = norm_dir.iter().map(|x| x / len).collect();
    let base_loadings = [1.0, 0.8, -0.5, 0.6];
    let mobility_loadings: Vec<f64> =
        (0..cfg.mobility_dim).map(|k| base_loadings[k % base_loadings.len()]).collect();
    let disruption: BTreeMap<String, Vec<f64>> = cities
        .iter()
        .map(|c| (c.city_id.clone(), (0..cfg.n_days).map(|_| normal(&mut rng)).collect()))
        .collect();
    let city_band: BTreeMap<String, usize> =
        cities.iter().zip(&bands).map(|(c, &b)| (c.city_id.clone(), b)).collect();

    let truth = SynthTruth {
        config: cfg.clone(),
        city_band,
        band_offset,
        band_risk: centers,
        text_direction,
        mobility_loadings,
        disruption,
        low_resource: low_resource.clone(),
    };

    let mut tweets = Vec::new();
    for c in &cities {
        let is_low = low_resource.contains(&c.city_id);
        let n = if is_low {
            cfg.low_resource_tweets
        } else {
            let u: f64 = rng.random();
            let (a, b) = if c.urban { (mid, hi as f64) } else { (lo as f64, mid) };
            // non-urban counts skew low
            let u = if c.urban { u } else { u * u };
            ((a * (b / a).powf(u)).round() as usize).clamp(lo, hi)
        };
        let mut mobility_cache: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for i in 0..n {
            let day = rng.random_range(0..cfg.n_days);
            let mobility = match mobility_cache.get(&day) {
                Some(m) => m.clone(),
                None => {
                    let m = truth.mobility_for(&c.city_id, day, &mut rng);
                    mobility_cache.insert(day, m.clone());
                    m
                }
            };
            let mut t = truth.draw_tweet(&c.city_id, format!("{}_t{i:04}", c.city_id), day, &mobility, &mut rng);
            if !is_low && rng.random::<f64>() >= cfg.gold_fraction {
                t.gold_label = None;
            }
            tweets.push(t);
        }
    }
    let mut corpus = Corpus::new(tweets, cities, names);
    corpus.day_range = (0, cfg.n_days - 1);
    Ok((corpus, truth))
}

/// Fresh gold-labeled tweets from the same process, `n_per_city` for each
/// listed city. Mobility for a (city, day) is drawn once per call.
pub fn generate_holdout(truth: &SynthTruth, cities: &[String], n_per_city: usize, seed: u64) -> Vec<TweetRecord> {
    let mut rng = seeded_rng(seed ^ 0x5eed_0f_401d);
    let mut out = Vec::new();
    for city in cities {
        let mut cache: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for i in 0..n_per_city {
            let day = rng.random_range(0..truth.config.n_days);
            let mobility = match cache.get(&day) {
                Some(m) => m.clone(),
                None => {
                    let m = truth.mobility_for(city, day, &mut rng);
                    cache.insert(day, m.clone());
                    m
                }
            };
            out.push(truth.draw_tweet(city, format!("{city}_h{i:04}"), day, &mobility, &mut rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_corpus;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let (a, _) = generate_synthetic(&cfg).unwrap();
        let (b, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let (c, _) = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn valid_and_within_ranges() {
        let cfg = SynthConfig::low_resource_preset(3);
        let (corpus, truth) = generate_synthetic(&cfg).unwrap();
        assert!(validate_corpus(&corpus).is_empty());
        assert_eq!(corpus.cities.len(), cfg.n_cities);
        assert_eq!(corpus.cities.values().filter(|c| c.urban).count(), cfg.n_urban);
        for city in corpus.cities.keys() {
            let n = corpus.tweets_of(city).count();
            assert!((cfg.tweets_per_city_range.0..=cfg.tweets_per_city_range.1).contains(&n), "{city}: {n}");
        }
        assert_eq!(truth.low_resource.len(), 3);
        for city in &truth.low_resource {
            let gold = corpus.tweets_of(city).filter(|t| t.gold_label.is_some()).count();
            assert!(gold <= 10);
            assert_eq!(truth.city_band[city], cfg.low_resource_band);
            assert!(!corpus.cities[city].urban);
        }
        assert!(corpus.cities.values().all(|c| (0.0..=5.0).contains(&c.risk)));
    }

    #[test]
    fn clean_labels_without_noise() {
        let cfg = SynthConfig { label_noise_rate: 0.0, gold_fraction: 1.0, ..Default::default() };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        assert!(corpus.tweets.iter().all(|t| t.weak_label == t.gold_label));
    }

    #[test]
    fn invalid_config_names_field() {
        let err = generate_synthetic(&SynthConfig { label_noise_rate: 1.5, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("label_noise_rate"));
    }

    /// Plug-in mutual information (nats) between gold label and the sign
    /// of the first mobility feature.
    fn mobility_label_mi(corpus: &Corpus) -> f64 {
        let mut joint = [[0.0f64; 2]; 3];
        let mut n = 0.0;
        for t in corpus.tweets.iter().filter(|t| t.gold_label.is_some()) {
            let l = t.gold_label.unwrap().class_index();
            let m = usize::from(t.mobility_features[0] > 0.0);
            joint[l][m] += 1.0;
            n += 1.0;
        }
        let pl: Vec<f64> = joint.iter().map(|r| (r[0] + r[1]) / n).collect();
        let pm = [(0..3).map(|l| joint[l][0]).sum::<f64>() / n, (0..3).map(|l| joint[l][1]).sum::<f64>() / n];
        let mut mi = 0.0;
        for l in 0..3 {
            for m in 0..2 {
                let p = joint[l][m] / n;
                if p > 0.0 {
                    mi += p * (p / (pl[l] * pm[m])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn zero_strength_mobility_is_uninformative() {
        let base = SynthConfig { gold_fraction: 1.0, n_cities: 40, tweets_per_city_range: (100, 150), ..Default::default() };
        let (silent, _) = generate_synthetic(&SynthConfig { mobility_signal_strength: 0.0, ..base.clone() }).unwrap();
        let (loud, _) = generate_synthetic(&base).unwrap();
        let mi0 = mobility_label_mi(&silent);
        let mi1 = mobility_label_mi(&loud);
        assert!(mi0 < 0.01, "mi0 = {mi0}");
        assert!(mi1 > 0.05, "mi1 = {mi1}");
    }

    #[test]
    fn holdout_is_gold_and_deterministic() {
        let (_, truth) = generate_synthetic(&SynthConfig::default()).unwrap();
        let cities = vec!["city_000".to_string(), "city_001".to_string()];
        let a = generate_holdout(&truth, &cities, 20, 1);
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|t| t.gold_label.is_some()));
        assert_eq!(a, generate_holdout(&truth, &cities, 20, 1));
    }
}
