//! End-to-end building blocks shared by the command line, the examples and
//! the comparison runs: city embeddings, global training, city adaptation
//! and held-out evaluation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_all, AdaptConfig, AdaptOutcome};
use crate::city::{train_city_encoder, CityEncoderConfig, TrainedCityEncoder};
use crate::data::{CityStatic, Corpus, LabelSource, SentimentLabel, TweetRecord};
use crate::error::{data, Result};
use crate::fusion::{predict, train_stage1, train_stage2, FusionArch, FusionParams, InputMode, StageConfig, TrainReport};
use crate::index::EmbeddingIndex;
use crate::ingest::{generate_holdout, generate_synthetic, Standardizer, SynthConfig};
use crate::metrics::{evaluate_labels, ClassificationMetrics};
use crate::nn::seeded_rng;

/// Architecture plus both training stages of the global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: FusionArch,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: FusionArch::default(),
            stage1: StageConfig::weak_pretrain(),
            stage2: StageConfig::gold_refine(),
            init_seed: 17,
        }
    }
}

impl ModelConfig {
    /// Offsets every seed by `seed`, so one number selects a whole run.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.init_seed = c.init_seed.wrapping_add(seed);
        c.stage1.seed = c.stage1.seed.wrapping_add(seed);
        c.stage2.seed = c.stage2.seed.wrapping_add(seed);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: FusionParams,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
}

/// Stage 1 on weak labels, then stage 2 on gold labels.
pub fn train_global(records: &[TweetRecord], mode: InputMode, cfg: &ModelConfig) -> Result<GlobalModel> {
    let first = records.first().ok_or_else(|| data("no training records"))?;
    let mut rng = seeded_rng(cfg.init_seed);
    let mut params = FusionParams::new(first.text_embedding.len(), first.mobility_features.len(), &cfg.arch, &mut rng);
    params.mode = mode;
    let stage1 = train_stage1(&mut params, records, &cfg.stage1)?;
    let stage2 = train_stage2(&mut params, records, &cfg.stage2)?;
    params.set_frozen(&[]);
    Ok(GlobalModel { params, stage1, stage2 })
}

/// Standardizes static city features column-wise.
pub fn standardized_cities(cities: &[CityStatic]) -> Result<(Vec<CityStatic>, Standardizer)> {
    let first = cities.first().ok_or_else(|| data("no cities"))?;
    let p = first.features.len();
    let x = DMatrix::from_fn(cities.len(), p, |i, j| cities[i].features[j]);
    let st = Standardizer::fit(&x);
    let out = cities
        .iter()
        .map(|c| Ok(CityStatic { features: st.transform_row(&c.features)?, ..c.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, st))
}

pub fn city_index(cities: &[CityStatic], cfg: &CityEncoderConfig) -> Result<(EmbeddingIndex, TrainedCityEncoder)> {
    let (std_cities, _) = standardized_cities(cities)?;
    let trained = train_city_encoder(&std_cities, cfg)?;
    Ok((EmbeddingIndex::new(trained.embeddings.clone())?, trained))
}

fn gold(records: &[TweetRecord]) -> Result<Vec<SentimentLabel>> {
    records
        .iter()
        .map(|r| r.label(LabelSource::Gold).ok_or_else(|| data(format!("evaluation record {} lacks a gold label", r.tweet_id))))
        .collect()
}

pub fn evaluate_global(params: &FusionParams, records: &[TweetRecord]) -> Result<ClassificationMetrics> {
    let truth = gold(records)?;
    let pred: Vec<_> = predict(params, records)?.into_iter().map(|p| p.label).collect();
    evaluate_labels(&truth, &pred)
}

/// Each record is scored by its city's adapted model, falling back to the
/// global model for skipped cities.
pub fn evaluate_city_specific(
    global: &FusionParams,
    outcome: &AdaptOutcome,
    records: &[TweetRecord],
) -> Result<ClassificationMetrics> {
    let truth = gold(records)?;
    let mut pred = Vec::with_capacity(records.len());
    for r in records {
        let p = outcome.model_for(&r.city_id, global).probabilities(r)?;
        pred.push(crate::fusion::argmax_label(&p));
    }
    evaluate_labels(&truth, &pred)
}

/// Everything a synthetic comparison run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub city: CityEncoderConfig,
    pub adapt: AdaptConfig,
    pub holdout_per_city: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            city: CityEncoderConfig::default(),
            adapt: AdaptConfig::default(),
            holdout_per_city: 150,
        }
    }
}

/// A generated corpus with a held-out set drawn from the same process.
#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub corpus: Corpus,
    pub holdout: Vec<TweetRecord>,
    pub low_resource: Vec<String>,
}

pub fn synthetic_split(cfg: &SynthConfig, holdout_per_city: usize) -> Result<SyntheticSplit> {
    let (corpus, truth) = generate_synthetic(cfg)?;
    let ids: Vec<String> = corpus.cities.keys().cloned().collect();
    let holdout = generate_holdout(&truth, &ids, holdout_per_city, cfg.seed);
    Ok(SyntheticSplit { corpus, holdout, low_resource: truth.low_resource })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    GlobalFusion,
    GlobalPureText,
    CitySpecificFusion,
    CitySpecificPureText,
    FreezeEncoders,
    UnfreezeAll,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::GlobalFusion,
        Variant::GlobalPureText,
        Variant::CitySpecificFusion,
        Variant::CitySpecificPureText,
        Variant::FreezeEncoders,
        Variant::UnfreezeAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::GlobalFusion => "Global-Fusion",
            Variant::GlobalPureText => "Global-Pure-Text",
            Variant::CitySpecificFusion => "City-Specific-Fusion",
            Variant::CitySpecificPureText => "City-Specific-Pure-Text",
            Variant::FreezeEncoders => "Freeze-Encoders",
            Variant::UnfreezeAll => "Unfreeze-All",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: ClassificationMetrics,
}

/// Trains and scores the requested variants. `eval_cities` restricts the
/// held-out set (all cities when empty).
pub fn run_variants(
    corpus: &Corpus,
    holdout: &[TweetRecord],
    eval_cities: &[String],
    variants: &[Variant],
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationRow>> {
    let eval: Vec<TweetRecord> = if eval_cities.is_empty() {
        holdout.to_vec()
    } else {
        holdout.iter().filter(|r| eval_cities.contains(&r.city_id)).cloned().collect()
    };
    let cities: Vec<CityStatic> = corpus.cities.values().cloned().collect();
    let city_ids: Vec<String> = corpus.cities.keys().cloned().collect();
    let needs_index = variants.iter().any(|v| matches!(v, Variant::CitySpecificFusion | Variant::CitySpecificPureText));
    let index = if needs_index { Some(city_index(&cities, &cfg.city)?.0) } else { None };

    let mut globals: BTreeMap<InputMode, FusionParams> = BTreeMap::new();
    let mut global_for = |mode: InputMode| -> Result<FusionParams> {
        if let Some(p) = globals.get(&mode) {
            return Ok(p.clone());
        }
        let p = train_global(&corpus.tweets, mode, &cfg.model)?.params;
        globals.insert(mode, p.clone());
        Ok(p)
    };

    let mut rows = Vec::new();
    for &v in variants {
        let metrics = match v {
            Variant::GlobalFusion | Variant::FreezeEncoders => evaluate_global(&global_for(InputMode::Fusion)?, &eval)?,
            Variant::GlobalPureText => evaluate_global(&global_for(InputMode::PureText)?, &eval)?,
            Variant::CitySpecificFusion | Variant::CitySpecificPureText => {
                let mode = if v == Variant::CitySpecificFusion { InputMode::Fusion } else { InputMode::PureText };
                let g = global_for(mode)?;
                let targets: Vec<String> = if eval_cities.is_empty() { city_ids.clone() } else { eval_cities.to_vec() };
                let outcome = adapt_all(&g, &corpus.tweets, &targets, index.as_ref().expect("built above"), &cfg.adapt)?;
                evaluate_city_specific(&g, &outcome, &eval)?
            }
            Variant::UnfreezeAll => {
                let mut m = cfg.model.clone();
                m.stage2.freeze.clear();
                evaluate_global(&train_global(&corpus.tweets, InputMode::Fusion, &m)?.params, &eval)?
            }
        };
        rows.push(AblationRow { variant: v.name().to_string(), metrics });
    }
    Ok(rows)
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
