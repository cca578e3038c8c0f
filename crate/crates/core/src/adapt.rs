//! City-specific adaptation: similarity-weighted augmentation of a target
//! city's data with its nearest neighbor cities, then fine-tuning of the
//! fusion network and classifier under the weighted empirical risk
//!
//! ```text
//! (1/Z) [ Σ_{D_i} CE + Σ_j α_ij Σ_{D_j} CE ],   Z = Σ weights
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSource, TweetRecord};
use crate::error::{config, data, Result};
use crate::fusion::{train_weighted, weighted_loss, FusionParams, Group, Normalizer, Stage, StageConfig, TrainReport};
use crate::index::{EmbeddingIndex, NeighborSet, DEFAULT_TOP_K};

pub const DEFAULT_GAMMA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Number of neighbor cities.
    pub k: usize,
    /// Softmax sharpness over neighbor similarities.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Restrict all adaptation records to gold labels.
    pub gold_only: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            gamma: DEFAULT_GAMMA,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 303,
            gold_only: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(config("adapt: gamma must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(config("adapt: batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config("adapt: learning_rate must be > 0"));
        }
        Ok(())
    }

    pub fn label_source(&self) -> LabelSource {
        if self.gold_only {
            LabelSource::Gold
        } else {
            LabelSource::GoldThenWeak
        }
    }

    fn stage(&self) -> StageConfig {
        StageConfig {
            stage: Stage::CityAdapt,
            label_source: self.label_source(),
            freeze: vec![Group::Pooler, Group::Mobility],
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            class_balanced: false,
        }
    }
}

/// `α_ij = exp(γ s_ij) / Σ_k exp(γ s_ik)` over the neighbor set.
pub fn similarity_weights(neighbors: &NeighborSet, gamma: f64) -> Result<BTreeMap<String, f64>> {
    if neighbors.neighbors.is_empty() {
        return Err(data(format!("city {} has no neighbors to weight", neighbors.target)));
    }
    if !(gamma > 0.0) {
        return Err(config("gamma must be > 0"));
    }
    let sims: Vec<f64> = neighbors.neighbors.iter().map(|(_, s)| *s).collect();
    let alphas = softmax_scaled(&sims, gamma);
    Ok(neighbors.neighbors.iter().map(|(c, _)| c.clone()).zip(alphas).collect())
}

fn softmax_scaled(sims: &[f64], gamma: f64) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = sims.iter().map(|s| (gamma * (s - max)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per-source bookkeeping for the augmentation audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceShare {
    pub city_id: String,
    pub alpha: f64,
    pub records_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub target_city: String,
    /// Target records first, then neighbors by rank.
    pub records: Vec<TweetRecord>,
    pub label_source: LabelSource,
    /// Sum of all record weights.
    pub z: f64,
    /// Target first (α = 1), then neighbors by rank.
    pub sources: Vec<SourceShare>,
}

fn labeled<'a>(records: &'a [TweetRecord], city: &'a str, source: LabelSource) -> impl Iterator<Item = &'a TweetRecord> {
    records.iter().filter(move |r| r.city_id == city && r.label(source).is_some())
}

/// Target records get weight 1, records of neighbor `j` get `α_ij`.
/// Records without a label under `label_source` are left out.
pub fn build_augmented_dataset(
    target: &str,
    records: &[TweetRecord],
    neighbors: &NeighborSet,
    alphas: &BTreeMap<String, f64>,
    label_source: LabelSource,
) -> Result<AugmentedDataset> {
    if !records.iter().any(|r| r.city_id == target) {
        return Err(data(format!("target city {target} has no records")));
    }
    let mut out: Vec<TweetRecord> = labeled(records, target, label_source).map(|r| TweetRecord { weight: 1.0, ..r.clone() }).collect();
    let mut sources = vec![SourceShare { city_id: target.to_string(), alpha: 1.0, records_used: out.len() }];
    for (city, _) in &neighbors.neighbors {
        let alpha = *alphas.get(city).ok_or_else(|| data(format!("no weight for neighbor {city}")))?;
        let before = out.len();
        if alpha > 0.0 {
            out.extend(labeled(records, city, label_source).map(|r| TweetRecord { weight: alpha, ..r.clone() }));
        }
        sources.push(SourceShare { city_id: city.clone(), alpha, records_used: out.len() - before });
    }
    let z = out.iter().map(|r| r.weight).sum();
    Ok(AugmentedDataset { target_city: target.to_string(), records: out, label_source, z, sources })
}

/// The weighted empirical risk of `params` on `ds`.
pub fn adaptation_objective(params: &FusionParams, ds: &AugmentedDataset) -> Result<f64> {
    Ok(weighted_loss(params, &ds.records, ds.label_source, Normalizer::TotalWeight)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedCity {
    pub params: FusionParams,
    pub report: TrainReport,
    pub sources: Vec<SourceShare>,
}

/// Fine-tunes a copy of the global model on `ds`; the pooler and mobility
/// encoder stay bit-identical.
pub fn adapt_city(global: &FusionParams, ds: &AugmentedDataset, cfg: &AdaptConfig) -> Result<AdaptedCity> {
    cfg.validate()?;
    if ds.records.is_empty() {
        return Err(data(format!("augmented set for {} is empty", ds.target_city)));
    }
    let mut params = global.clone();
    let mut stage = cfg.stage();
    stage.label_source = ds.label_source;
    let report = train_weighted(&mut params, &ds.records, &stage, Normalizer::TotalWeight)?;
    Ok(AdaptedCity { params, report, sources: ds.sources.clone() })
}

/// Augments and adapts one city; `K = 0` or an empty candidate set means the
/// city trains on its own records only.
pub fn augment_for_city(
    target: &str,
    records: &[TweetRecord],
    index: &EmbeddingIndex,
    cfg: &AdaptConfig,
) -> Result<AugmentedDataset> {
    let neighbors = if cfg.k == 0 {
        NeighborSet { target: target.to_string(), neighbors: vec![] }
    } else {
        index.top_k(target, cfg.k)?
    };
    let alphas = if neighbors.neighbors.is_empty() { BTreeMap::new() } else { similarity_weights(&neighbors, cfg.gamma)? };
    build_augmented_dataset(target, records, &neighbors, &alphas, cfg.label_source())
}

#[derive(Debug, Clone, Default)]
pub struct AdaptOutcome {
    pub models: BTreeMap<String, AdaptedCity>,
    /// City → reason it was not adapted.
    pub skipped: BTreeMap<String, String>,
}

impl AdaptOutcome {
    /// The adapted model for `city`, or `fallback` when it was skipped.
    pub fn model_for<'a>(&'a self, city: &str, fallback: &'a FusionParams) -> &'a FusionParams {
        self.models.get(city).map_or(fallback, |m| &m.params)
    }
}

/// Adapts every city in `cities` independently and in parallel. Cities
/// without labeled records or embeddings are reported in `skipped`.
pub fn adapt_all(
    global: &FusionParams,
    records: &[TweetRecord],
    cities: &[String],
    index: &EmbeddingIndex,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let source = cfg.label_source();
    let results: Vec<(String, Result<AdaptedCity>)> = cities
        .par_iter()
        .map(|city| {
            let run = || {
                if !records.iter().any(|r| &r.city_id == city && r.label(source).is_some()) {
                    return Err(data("no labeled records"));
                }
                if index.get(city).is_none() {
                    return Err(data("no city embedding"));
                }
                let ds = augment_for_city(city, records, index, cfg)?;
                adapt_city(global, &ds, cfg)
            };
            (city.clone(), run())
        })
        .collect();
    let mut out = AdaptOutcome::default();
    for (city, r) in results {
        match r {
            Ok(m) => {
                out.models.insert(city, m);
            }
            Err(e) => {
                out.skipped.insert(city, e.to_string());
            }
        }
    }
    Ok(out)
}

/// Writes `target_city,source_city,alpha,records_used`.
pub fn write_augmentation_audit(path: impl AsRef<Path>, outcome: &AdaptOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target_city", "source_city", "alpha", "records_used"])?;
    for (city, m) in &outcome.models {
        for s in &m.sources {
            w.write_record([city.as_str(), &s.city_id, &s.alpha.to_string(), &s.records_used.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SentimentLabel;
    use crate::fusion::{fusion_loss_batch, FusionArch};
    use crate::nn::{cross_entropy, mlp_bytes, seeded_rng, SeededRng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn nset(sims: &[f64]) -> NeighborSet {
        NeighborSet {
            target: "t".into(),
            neighbors: sims.iter().enumerate().map(|(i, s)| (format!("n{i}"), *s)).collect(),
        }
    }

    fn alphas(sims: &[f64], gamma: f64) -> Vec<f64> {
        let w = similarity_weights(&nset(sims), gamma).unwrap();
        (0..sims.len()).map(|i| w[&format!("n{i}")]).collect()
    }

    #[test]
    fn single_and_equal_neighbors() {
        assert_eq!(alphas(&[0.3], 5.0), vec![1.0]);
        for a in alphas(&[0.4; 4], 5.0) {
            assert_abs_diff_eq!(a, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_neighbor_case() {
        let a = alphas(&[1.0, 0.5], 2.0);
        assert_abs_diff_eq!(a[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(a[1], 0.2689, epsilon = 1e-4);
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(a[0], e2 / (e2 + 1f64.exp()), epsilon = 1e-15);
    }

    #[test]
    fn empty_neighbors_rejected() {
        assert!(similarity_weights(&nset(&[]), 1.0).is_err());
        assert!(similarity_weights(&nset(&[0.2]), 0.0).is_err());
    }

    #[test]
    fn gamma_limits() {
        let sims = [0.9, 0.7, 0.3, 0.1];
        let sharp = alphas(&sims, 1e3);
        assert!(sharp[0] > 0.999);
        for a in alphas(&sims, 1e-6) {
            assert!((a - 0.25).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn alpha_is_a_distribution(sims in prop::collection::vec(-1.0f64..1.0, 1..10), gamma in 0.01f64..50.0) {
            let a = alphas(&sims, gamma);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }

        #[test]
        fn alpha_shift_invariant(sims in prop::collection::vec(-1.0f64..1.0, 1..10), gamma in 0.01f64..20.0, c in -5.0f64..5.0) {
            let shifted: Vec<f64> = sims.iter().map(|s| s + c).collect();
            for (a, b) in alphas(&sims, gamma).iter().zip(alphas(&shifted, gamma)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn rec(rng: &mut SeededRng, city: &str, i: usize, gold: bool) -> TweetRecord {
        let label = SentimentLabel::from_class_index(rng.random_range(0..3));
        TweetRecord {
            tweet_id: format!("{city}_{i}"),
            city_id: city.into(),
            day: 0,
            text_embedding: (0..4).map(|_| rng.sample(StandardNormal)).collect(),
            mobility_features: (0..2).map(|_| rng.sample(StandardNormal)).collect(),
            weak_label: Some(label),
            gold_label: gold.then_some(label),
            weight: 0.5,
        }
    }

    fn corpus(rng: &mut SeededRng) -> Vec<TweetRecord> {
        let mut v = Vec::new();
        for (c, n) in [("t", 4), ("a", 10), ("b", 6), ("c", 3)] {
            for i in 0..n {
                v.push(rec(rng, c, i, i % 2 == 0));
            }
        }
        v
    }

    fn small_params(rng: &mut SeededRng) -> FusionParams {
        let arch = FusionArch { text_hidden: 5, mobility_layers: vec![], mobility_hidden: 3, fusion_hidden: 6 };
        FusionParams::new(4, 2, &arch, rng)
    }

    #[test]
    fn augmented_weights_and_order() {
        let mut rng = seeded_rng(1);
        let records = corpus(&mut rng);
        let ns = NeighborSet { target: "t".into(), neighbors: vec![("a".into(), 1.0), ("b".into(), 0.5)] };
        let al = similarity_weights(&ns, 2.0).unwrap();
        let ds = build_augmented_dataset("t", &records, &ns, &al, LabelSource::GoldThenWeak).unwrap();
        assert_eq!(ds.records.len(), 20);
        assert!(ds.records[..4].iter().all(|r| r.city_id == "t" && r.weight == 1.0));
        assert!(ds.records[4..14].iter().all(|r| r.city_id == "a" && r.weight == al["a"]));
        assert!(ds.records[14..].iter().all(|r| r.city_id == "b" && r.weight == al["b"]));
        assert_abs_diff_eq!(al["a"], 0.7311, epsilon = 1e-4);
        let oracle: f64 = ds.records.iter().map(|r| r.weight).sum();
        assert_abs_diff_eq!(ds.z, oracle, epsilon = 1e-12);
        assert!(ds.records.iter().all(|r| r.weight > 0.0 && r.weight <= 1.0));

        let gold = build_augmented_dataset("t", &records, &ns, &al, LabelSource::Gold).unwrap();
        assert_eq!(gold.records.len(), 2 + 5 + 3);
        assert_eq!(gold.sources[1].records_used, 5);
    }

    #[test]
    fn missing_target_is_error() {
        let mut rng = seeded_rng(2);
        let records = corpus(&mut rng);
        let ns = NeighborSet { target: "zz".into(), neighbors: vec![] };
        assert!(build_augmented_dataset("zz", &records, &ns, &BTreeMap::new(), LabelSource::Gold).is_err());
    }

    #[test]
    fn objective_matches_recomputation() {
        let mut rng = seeded_rng(3);
        let records = corpus(&mut rng);
        let params = small_params(&mut rng);
        let ns = NeighborSet { target: "t".into(), neighbors: vec![("a".into(), 0.9), ("c".into(), 0.2)] };
        let al = similarity_weights(&ns, 5.0).unwrap();
        let ds = build_augmented_dataset("t", &records, &ns, &al, LabelSource::GoldThenWeak).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for r in &ds.records {
            let p = params.probabilities(r).unwrap();
            let y = r.label(LabelSource::GoldThenWeak).unwrap();
            num += r.weight * cross_entropy(&p, y, 1.0).unwrap().loss;
            den += r.weight;
        }
        assert_abs_diff_eq!(adaptation_objective(&params, &ds).unwrap(), num / den, epsilon = 1e-10);
    }

    #[test]
    fn k_zero_is_plain_mean_ce() {
        let mut rng = seeded_rng(4);
        let records = corpus(&mut rng);
        let params = small_params(&mut rng);
        let ns = NeighborSet { target: "t".into(), neighbors: vec![] };
        let ds = build_augmented_dataset("t", &records, &ns, &BTreeMap::new(), LabelSource::GoldThenWeak).unwrap();
        assert_eq!(ds.z, ds.records.len() as f64);
        let (plain, _) = fusion_loss_batch(&params, &ds.records, LabelSource::GoldThenWeak).unwrap();
        assert_eq!(adaptation_objective(&params, &ds).unwrap(), plain);
    }

    #[test]
    fn adaptation_freezes_encoders() {
        let mut rng = seeded_rng(5);
        let records = corpus(&mut rng);
        let global = small_params(&mut rng);
        let ns = NeighborSet { target: "t".into(), neighbors: vec![("a".into(), 0.9)] };
        let al = similarity_weights(&ns, 5.0).unwrap();
        let ds = build_augmented_dataset("t", &records, &ns, &al, LabelSource::GoldThenWeak).unwrap();
        let cfg = AdaptConfig { epochs: 3, ..Default::default() };
        let adapted = adapt_city(&global, &ds, &cfg).unwrap();
        assert_eq!(mlp_bytes(&adapted.params.pooler), mlp_bytes(&global.pooler));
        assert_eq!(mlp_bytes(&adapted.params.mobility), mlp_bytes(&global.mobility));
        assert_ne!(mlp_bytes(&adapted.params.classifier), mlp_bytes(&global.classifier));
        for r in &records {
            let (a, g) = (adapted.params.forward(r).unwrap(), global.forward(r).unwrap());
            assert_eq!(a.h_t, g.h_t);
            assert_eq!(a.h_m, g.h_m);
        }
        let again = adapt_city(&global, &ds, &cfg).unwrap();
        assert_eq!(again.params, adapted.params);
    }

    #[test]
    fn adapt_all_covers_every_city() {
        let mut rng = seeded_rng(6);
        let mut records = corpus(&mut rng);
        records.push(TweetRecord { gold_label: None, weak_label: None, ..rec(&mut rng, "d", 0, false) });
        let global = small_params(&mut rng);
        let emb: BTreeMap<String, Vec<f64>> = [("t", [1.0, 0.1]), ("a", [0.9, 0.3]), ("b", [0.2, 1.0]), ("c", [-1.0, 0.1]), ("d", [0.5, 0.5])]
            .into_iter()
            .map(|(c, z)| (c.to_string(), z.to_vec()))
            .collect();
        let index = EmbeddingIndex::new(emb).unwrap();
        let cities: Vec<String> = ["a", "b", "c", "d", "t", "x"].map(String::from).to_vec();
        let cfg = AdaptConfig { k: 2, epochs: 2, ..Default::default() };
        let out = adapt_all(&global, &records, &cities, &index, &cfg).unwrap();
        assert_eq!(out.models.len() + out.skipped.len(), cities.len());
        assert!(out.skipped.contains_key("d") && out.skipped.contains_key("x"));
        let again = adapt_all(&global, &records, &cities, &index, &cfg).unwrap();
        for (c, m) in &out.models {
            assert_eq!(m.params, again.models[c].params);
        }
        // neighbors are drawn from the candidate set only
        let c_sources = &out.models["c"].sources;
        assert!(c_sources.iter().skip(1).all(|s| index.candidate_set("c").unwrap().iter().any(|(id, _)| *id == s.city_id)));
    }
}
