use std::collections::BTreeMap;

use cityadapt::adapt::{adapt_all, augment_for_city, AdaptConfig};
use cityadapt::data::{LabelSource, SentimentLabel};
use cityadapt::experiment::{city_index, evaluate_global, median, synthetic_split, ModelConfig};
use cityadapt::fusion::{fusion_loss_batch, train_stage1, train_stage2, FusionParams, InputMode};
use cityadapt::ingest::SynthConfig;
use cityadapt::metrics::{label_distribution_report, LabelShares};
use cityadapt::nn::{mlp_bytes, seeded_rng};

fn fresh(records: &[cityadapt::data::TweetRecord], cfg: &ModelConfig) -> FusionParams {
    let r = &records[0];
    let mut p =
        FusionParams::new(r.text_embedding.len(), r.mobility_features.len(), &cfg.arch, &mut seeded_rng(cfg.init_seed));
    p.mode = InputMode::Fusion;
    p
}

#[test]
fn stage1_descends_on_synthetic_corpus() {
    let split = synthetic_split(&SynthConfig::default(), 10).unwrap();
    let cfg = ModelConfig::default();
    let mut p = fresh(&split.corpus.tweets, &cfg);
    let mut s1 = cfg.stage1.clone();
    s1.epochs = 30;
    let report = train_stage1(&mut p, &split.corpus.tweets, &s1).unwrap();
    assert!(report.final_loss() < report.initial_loss, "{report:?}");
}

#[test]
fn clean_weak_labels_reach_lower_loss() {
    for seed in [1, 2] {
        let mut finals = Vec::new();
        for noise in [0.0, 0.3] {
            let synth = SynthConfig { seed, label_noise_rate: noise, ..Default::default() };
            let split = synthetic_split(&synth, 10).unwrap();
            let cfg = ModelConfig::default().reseeded(seed);
            let mut p = fresh(&split.corpus.tweets, &cfg);
            finals.push(train_stage1(&mut p, &split.corpus.tweets, &cfg.stage1).unwrap().final_loss());
        }
        assert!(finals[0] < finals[1], "seed {seed}: clean {} vs noisy {}", finals[0], finals[1]);
    }
}

#[test]
fn stage2_continues_from_stage1_on_noise_free_labels() {
    let synth = SynthConfig { label_noise_rate: 0.0, gold_fraction: 1.0, ..Default::default() };
    let split = synthetic_split(&synth, 10).unwrap();
    let cfg = ModelConfig::default();
    let mut p = fresh(&split.corpus.tweets, &cfg);
    let s1 = train_stage1(&mut p, &split.corpus.tweets, &cfg.stage1).unwrap();
    let mobility_before = mlp_bytes(&p.mobility);
    let s2 = train_stage2(&mut p, &split.corpus.tweets, &cfg.stage2).unwrap();
    let rel = (s2.initial_loss - s1.final_loss()).abs() / s1.final_loss();
    assert!(rel < 0.1, "stage-1 final {} vs stage-2 start {}", s1.final_loss(), s2.initial_loss);
    assert_eq!(mlp_bytes(&p.mobility), mobility_before);
}

#[test]
fn stage2_does_not_hurt_heldout_f1() {
    for seed in 1..=3u64 {
        let split = synthetic_split(&SynthConfig { seed, ..Default::default() }, 60).unwrap();
        let cfg = ModelConfig::default().reseeded(seed);
        let mut p = fresh(&split.corpus.tweets, &cfg);
        train_stage1(&mut p, &split.corpus.tweets, &cfg.stage1).unwrap();
        let f1_stage1 = evaluate_global(&p, &split.holdout).unwrap().macro_f1;
        train_stage2(&mut p, &split.corpus.tweets, &cfg.stage2).unwrap();
        let f1_stage2 = evaluate_global(&p, &split.holdout).unwrap().macro_f1;
        assert!(f1_stage2 >= f1_stage1, "seed {seed}: stage 2 {f1_stage2} < stage 1 {f1_stage1}");
    }
}

#[test]
fn stage_losses_match_batch_loss() {
    let split = synthetic_split(&SynthConfig { n_cities: 6, n_urban: 2, ..Default::default() }, 5).unwrap();
    let cfg = ModelConfig::default();
    let mut p = fresh(&split.corpus.tweets, &cfg);
    let mut s1 = cfg.stage1.clone();
    s1.epochs = 1;
    let report = train_stage1(&mut p, &split.corpus.tweets, &s1).unwrap();
    let fresh_p = fresh(&split.corpus.tweets, &cfg);
    let (loss, _) = fusion_loss_batch(&fresh_p, &split.corpus.tweets, LabelSource::Weak).unwrap();
    assert!((report.initial_loss - loss).abs() < 1e-12);
}

fn gap(s: &LabelShares) -> f64 {
    (s.pos - s.neg).abs()
}

#[test]
fn augmentation_balances_starved_cities() {
    let mut reduced = 0;
    let mut total = 0;
    for seed in 1..=5u64 {
        let synth = SynthConfig::low_resource_preset(seed);
        let split = synthetic_split(&synth, 10).unwrap();
        let cities: Vec<_> = split.corpus.cities.values().cloned().collect();
        let (index, _) = city_index(&cities, &Default::default()).unwrap();
        let cfg = AdaptConfig::default();
        let source = cfg.label_source();
        let mut before = BTreeMap::new();
        let mut after = BTreeMap::new();
        for city in &split.low_resource {
            before.insert(city.clone(), split.corpus.tweets_of(city).filter_map(|t| t.label(source)).collect::<Vec<_>>());
            let ds = augment_for_city(city, &split.corpus.tweets, &index, &cfg).unwrap();
            after.insert(city.clone(), ds.records.iter().map(|t| (t.label(source).unwrap(), t.weight)).collect::<Vec<_>>());
        }
        let report = label_distribution_report(&before, &after);
        for (b, a) in report.rows.values() {
            total += 1;
            if gap(a) < gap(b) {
                reduced += 1;
            }
        }
    }
    assert!(reduced * 3 >= total * 2, "gap reduced in {reduced}/{total} starved cities");
}

#[test]
fn zero_k_augmentation_is_a_no_op_for_shares() {
    let split = synthetic_split(&SynthConfig { n_cities: 8, n_urban: 3, ..Default::default() }, 5).unwrap();
    let cities: Vec<_> = split.corpus.cities.values().cloned().collect();
    let (index, _) = city_index(&cities, &Default::default()).unwrap();
    let cfg = AdaptConfig { k: 0, ..Default::default() };
    let source = cfg.label_source();
    let mut before = BTreeMap::new();
    let mut after = BTreeMap::new();
    for city in split.corpus.cities.keys() {
        let labels: Vec<SentimentLabel> = split.corpus.tweets_of(city).filter_map(|t| t.label(source)).collect();
        before.insert(city.clone(), labels);
        let ds = augment_for_city(city, &split.corpus.tweets, &index, &cfg).unwrap();
        after.insert(city.clone(), ds.records.iter().map(|t| (t.label(source).unwrap(), t.weight)).collect());
    }
    for (city, (b, a)) in label_distribution_report(&before, &after).rows {
        assert_eq!(b, a, "{city}");
    }
}

#[test]
fn adapt_all_covers_every_city_deterministically() {
    let split = synthetic_split(&SynthConfig::default(), 5).unwrap();
    let cfg = ModelConfig::default();
    let mut p = fresh(&split.corpus.tweets, &cfg);
    let mut s1 = cfg.stage1.clone();
    s1.epochs = 2;
    train_stage1(&mut p, &split.corpus.tweets, &s1).unwrap();
    let cities: Vec<_> = split.corpus.cities.values().cloned().collect();
    let (index, _) = city_index(&cities, &Default::default()).unwrap();
    let ids: Vec<String> = split.corpus.cities.keys().cloned().collect();
    let acfg = AdaptConfig { epochs: 2, ..Default::default() };
    let a = adapt_all(&p, &split.corpus.tweets, &ids, &index, &acfg).unwrap();
    assert_eq!(a.models.len() + a.skipped.len(), 29);
    let b = adapt_all(&p, &split.corpus.tweets, &ids, &index, &acfg).unwrap();
    for (city, m) in &a.models {
        assert_eq!(m.params, b.models[city].params, "{city}");
    }
    let losses: Vec<f64> = a.models.values().map(|m| m.report.final_loss()).collect();
    assert!(median(&losses).is_finite());
}
