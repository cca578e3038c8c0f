//! Run configuration and the file-level commands behind the `cityadapt`
//! binary. Every command reads and writes plain CSV / JSON / JSON Lines so
//! runs can be inspected and replayed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{adapt_all, augment_for_city, write_augmentation_audit, AdaptConfig, AdaptOutcome};
use crate::city::{write_embeddings_csv, CityEncoderConfig};
use crate::data::{
    load_corpus, read_annotations_csv, read_cities_csv, read_od_csv, read_tweets_jsonl, save_corpus,
    validate_corpus, write_cities_csv, write_tweets_jsonl, CityStatic, Corpus, LabelSource, SentimentLabel,
    TweetRecord,
};
use crate::error::{config, data, Error, Result};
use crate::experiment::{
    city_index, evaluate_city_specific, evaluate_global, run_variants, synthetic_split, train_global,
    AblationRow, ExperimentConfig, GlobalModel, ModelConfig, Variant,
};
use crate::fusion::{argmax_label, predict, write_predictions_csv, FusionParams, InputMode, Prediction};
use crate::index::{write_neighbor_report, EmbeddingIndex};
use crate::ingest::{
    attach_mobility, filter_od, od_to_city_mobility, vif_screen, Crosswalk, Standardizer, SynthConfig, VifScreen,
    DEFAULT_MIN_TRIPS, DEFAULT_VIF_THRESHOLD,
};
use crate::metrics::{
    accumulative_curve, krippendorff_alpha, label_distribution_report, mobility_proxy,
    sentiment_mobility_correlation, write_acc_sentiment_csv, write_correlation_csv, write_label_distribution_csv,
    ClassificationMetrics, Correlation, SentimentSeries,
};
use crate::nn::{seeded_rng, Checkpoint};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "CITYADAPT_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub tweets: Option<PathBuf>,
    pub cities: Option<PathBuf>,
    pub od: Option<PathBuf>,
    pub crosswalk: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_trips: u64,
    pub vif_threshold: f64,
    /// City feature columns exempt from VIF removal.
    pub core_columns: Vec<String>,
    /// Append the urban flag as a city feature after screening.
    pub join_urban: bool,
    /// Share of each city's gold records held out for evaluation when the
    /// corpus comes from files.
    pub test_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_trips: DEFAULT_MIN_TRIPS,
            vif_threshold: DEFAULT_VIF_THRESHOLD,
            core_columns: vec!["wildfire_risk".into()],
            join_urban: true,
            test_fraction: 0.3,
        }
    }
}

/// Everything one run needs. Loaded from TOML; every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; offsets every component seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Zero the mobility input (text-only ablation).
    pub pure_text: bool,
    /// Skip city adaptation.
    pub global_only: bool,
    /// Synthetic held-out tweets per city.
    pub holdout_per_city: usize,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub synth: SynthConfig,
    pub city: CityEncoderConfig,
    pub model: ModelConfig,
    pub adapt: AdaptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            pure_text: false,
            global_only: false,
            holdout_per_city: ExperimentConfig::default().holdout_per_city,
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            synth: SynthConfig::default(),
            city: CityEncoderConfig::default(),
            model: ModelConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.city.validate()?;
        self.adapt.validate()?;
        self.model.stage1.validate()?;
        self.model.stage2.validate()?;
        if !(0.0..1.0).contains(&self.ingest.test_fraction) {
            return Err(config("ingest: test_fraction must lie in [0, 1)"));
        }
        if !(self.ingest.vif_threshold >= 1.0) {
            return Err(config("ingest: vif_threshold must be >= 1"));
        }
        if self.holdout_per_city == 0 {
            return Err(config("holdout_per_city must be >= 1"));
        }
        Ok(())
    }

    /// Component configurations with the global seed applied.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.synth.seed = self.seed;
        c.city.seed = self.city.seed.wrapping_add(self.seed);
        c.model = self.model.reseeded(self.seed);
        c.adapt.seed = self.adapt.seed.wrapping_add(self.seed);
        c
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn mode(&self) -> InputMode {
        if self.pure_text {
            InputMode::PureText
        } else {
            InputMode::Fusion
        }
    }

    fn experiment(&self) -> ExperimentConfig {
        let r = self.resolved();
        ExperimentConfig { synth: r.synth, model: r.model, city: r.city, adapt: r.adapt, holdout_per_city: self.holdout_per_city }
    }
}

/// Output directory precedence: explicit argument, then the environment
/// variable, then the configuration.
pub fn output_dir(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| config(format!("output dir {} not writable: {e}", dir.display())))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(name))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Inputs

/// Training corpus plus an evaluation set.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub corpus: Corpus,
    pub holdout: Vec<TweetRecord>,
    pub synthetic: bool,
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| config(format!("paths.{what} is required for this command")))
}

/// Splits each city's gold records into train and test; test records leave
/// the training corpus entirely.
pub fn split_gold(tweets: &[TweetRecord], test_fraction: f64, seed: u64) -> (Vec<TweetRecord>, Vec<TweetRecord>) {
    let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tweets.iter().enumerate() {
        if t.gold_label.is_some() {
            by_city.entry(&t.city_id).or_default().push(i);
        }
    }
    let mut rng = seeded_rng(seed);
    let mut test = vec![false; tweets.len()];
    for idx in by_city.values_mut() {
        idx.shuffle(&mut rng);
        let n = (idx.len() as f64 * test_fraction).floor() as usize;
        for &i in &idx[..n] {
            test[i] = true;
        }
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (t, is_test) in tweets.iter().zip(test) {
        if is_test {
            held.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    (train, held)
}

/// Fills mobility vectors from OD files, then z-scores them across tweets.
pub fn ingest_mobility(tweets: &mut [TweetRecord], od: &Path, crosswalk: &Path, min_trips: u64) -> Result<Vec<String>> {
    let records = filter_od(&read_od_csv(od)?, min_trips);
    let cw = Crosswalk::read_csv(crosswalk)?;
    let table = od_to_city_mobility(&records, &cw)?;
    let missing = attach_mobility(tweets, &table);
    standardize_mobility(tweets)?;
    Ok(missing)
}

pub fn standardize_mobility(tweets: &mut [TweetRecord]) -> Result<Standardizer> {
    let d = tweets.first().map_or(0, |t| t.mobility_features.len());
    let x = nalgebra::DMatrix::from_fn(tweets.len(), d, |i, j| tweets[i].mobility_features[j]);
    let st = Standardizer::fit(&x);
    for t in tweets.iter_mut() {
        t.mobility_features = st.transform_row(&t.mobility_features)?;
    }
    Ok(st)
}

/// Loads the corpus named in `paths`, or generates a synthetic one.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let r = cfg.resolved();
    match (&cfg.paths.tweets, &cfg.paths.cities) {
        (Some(tweets), Some(cities)) => {
            let mut corpus = load_corpus(tweets, cities)?;
            if let (Some(od), Some(cw)) = (&cfg.paths.od, &cfg.paths.crosswalk) {
                ingest_mobility(&mut corpus.tweets, od, cw, cfg.ingest.min_trips)?;
                corpus.dims.mobility = corpus.tweets.first().map_or(0, |t| t.mobility_features.len());
            }
            corpus.ensure_valid()?;
            let (train, test) = split_gold(&corpus.tweets, cfg.ingest.test_fraction, r.synth.seed);
            if test.is_empty() {
                return Err(data("no gold records left for evaluation; raise test_fraction or add gold labels"));
            }
            let corpus = Corpus { tweets: train, ..corpus };
            Ok(Inputs { corpus, holdout: test, synthetic: false })
        }
        (None, None) => {
            let split = synthetic_split(&r.synth, cfg.holdout_per_city)?;
            Ok(Inputs { corpus: split.corpus, holdout: split.holdout, synthetic: true })
        }
        _ => Err(config("paths.tweets and paths.cities must be given together")),
    }
}

// ---------------------------------------------------------------------------
// City features

/// Screens city features for collinearity, then optionally appends the urban
/// flag. Returns the screened cities, the kept column names and the screen.
pub fn screen_city_features(
    cities: &[CityStatic],
    names: &[String],
    ingest: &IngestConfig,
) -> Result<(Vec<CityStatic>, Vec<String>, VifScreen)> {
    let p = names.len();
    if cities.iter().any(|c| c.features.len() != p) {
        return Err(data("city feature rows do not match the header"));
    }
    for core in &ingest.core_columns {
        if !names.contains(core) {
            return Err(config(format!("ingest: core column {core:?} not among city features")));
        }
    }
    let x = nalgebra::DMatrix::from_fn(cities.len(), p, |i, j| cities[i].features[j]);
    let mask: Vec<bool> = names.iter().map(|n| ingest.core_columns.contains(n)).collect();
    let screen = vif_screen(&x, &mask, ingest.vif_threshold)?;
    let mut kept: Vec<String> = screen.selected.iter().map(|&j| names[j].clone()).collect();
    let mut out: Vec<CityStatic> = cities
        .iter()
        .map(|c| CityStatic { features: screen.selected.iter().map(|&j| c.features[j]).collect(), ..c.clone() })
        .collect();
    if ingest.join_urban {
        kept.push("urban".into());
        for c in &mut out {
            c.features.push(if c.urban { 1.0 } else { 0.0 });
        }
    }
    Ok((out, kept, screen))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_negative: f64,
    pub f1_neutral: f64,
    pub f1_positive: f64,
    pub n: u64,
}

impl MetricsRow {
    pub fn new(model: &str, m: &ClassificationMetrics) -> Self {
        Self {
            model: model.to_string(),
            accuracy: m.accuracy,
            recall: m.macro_recall,
            f1: m.macro_f1,
            f1_negative: m.per_class_f1[0],
            f1_neutral: m.per_class_f1[1],
            f1_positive: m.per_class_f1[2],
            n: m.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub krippendorff_alpha: Option<f64>,
    pub adapted_cities: usize,
    pub skipped_cities: BTreeMap<String, String>,
}

fn model_names(mode: InputMode) -> (&'static str, &'static str) {
    match mode {
        InputMode::Fusion => (Variant::GlobalFusion.name(), Variant::CitySpecificFusion.name()),
        InputMode::PureText => (Variant::GlobalPureText.name(), Variant::CitySpecificPureText.name()),
    }
}

fn final_predictions(global: &FusionParams, outcome: Option<&AdaptOutcome>, records: &[TweetRecord]) -> Result<Vec<Prediction>> {
    match outcome {
        None => predict(global, records),
        Some(o) => records
            .iter()
            .map(|r| {
                let p = o.model_for(&r.city_id, global).probabilities(r)?;
                Ok(Prediction { label: argmax_label(&p), probs: [p[0], p[1], p[2]] })
            })
            .collect(),
    }
}

/// Daily positive/negative counts per city from `(record, label)` pairs.
pub fn sentiment_series<'a>(
    items: impl IntoIterator<Item = (&'a TweetRecord, SentimentLabel)>,
    days: (u32, u32),
) -> Result<Vec<SentimentSeries>> {
    let mut by_city: BTreeMap<String, Vec<(u32, SentimentLabel)>> = BTreeMap::new();
    for (r, l) in items {
        by_city.entry(r.city_id.clone()).or_default().push((r.day, l));
    }
    by_city.into_iter().map(|(c, v)| SentimentSeries::from_labels(c, days, v)).collect()
}

/// Per-city regression of the daily mobility proxy on accumulative
/// sentiment. Cities with too few usable days are listed separately.
pub fn correlate_cities(
    series: &[SentimentSeries],
    tweets: &[TweetRecord],
) -> (Vec<(String, Correlation)>, BTreeMap<String, String>) {
    let mut flow: BTreeMap<(&str, u32), f64> = BTreeMap::new();
    for t in tweets {
        flow.entry((t.city_id.as_str(), t.day))
            .or_insert_with(|| t.mobility_features.iter().take(3).sum());
    }
    let mut rows = Vec::new();
    let mut skipped = BTreeMap::new();
    for s in series {
        let curve = accumulative_curve(s);
        let mut x = Vec::new();
        let mut totals = Vec::new();
        for (i, v) in curve.iter().enumerate() {
            if let Some(f) = flow.get(&(s.city_id.as_str(), s.start_day + i as u32)) {
                x.push(*v);
                totals.push(*f);
            }
        }
        if totals.is_empty() {
            skipped.insert(s.city_id.clone(), "no mobility days".into());
            continue;
        }
        match sentiment_mobility_correlation(&x, &mobility_proxy(&totals)) {
            Ok(c) => rows.push((s.city_id.clone(), c)),
            Err(e) => {
                skipped.insert(s.city_id.clone(), e.to_string());
            }
        }
    }
    (rows, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Relative path → SHA-256 of every artifact written.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| config(format!("cannot read manifest {}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| config(format!("bad manifest: {e}")))
    }
}

fn write_manifest(dir: &Path, cfg: &RunConfig, files: &[PathBuf]) -> Result<Manifest> {
    let mut artifacts = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
        artifacts.insert(rel, sha256_file(f)?);
    }
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.clone(),
        artifacts,
    };
    write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

/// Collects written paths for the manifest.
#[derive(Default)]
struct Artifacts(Vec<PathBuf>);

impl Artifacts {
    fn add(&mut self, p: PathBuf) -> PathBuf {
        self.0.push(p.clone());
        p
    }
}

// ---------------------------------------------------------------------------
// Commands

/// Writes a synthetic corpus (`tweets.jsonl`, `cities.csv`, `holdout.jsonl`).
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let r = cfg.resolved();
    let split = stage("synth", synthetic_split(&r.synth, cfg.holdout_per_city))?;
    let files = vec![out.join("tweets.jsonl"), out.join("cities.csv"), out.join("holdout.jsonl")];
    save_corpus(&split.corpus, &files[0], &files[1])?;
    write_tweets_jsonl(&files[2], &split.holdout)?;
    Ok(files)
}

/// Validates a corpus, attaches OD mobility when given, and writes the
/// result plus a violations report.
pub fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut corpus = load_corpus(require(&cfg.paths.tweets, "tweets")?, require(&cfg.paths.cities, "cities")?)?;
    let mut missing = Vec::new();
    if let (Some(od), Some(cw)) = (&cfg.paths.od, &cfg.paths.crosswalk) {
        missing = stage("ingest", ingest_mobility(&mut corpus.tweets, od, cw, cfg.ingest.min_trips))?;
        corpus.dims.mobility = corpus.tweets.first().map_or(0, |t| t.mobility_features.len());
    }
    let violations: Vec<String> = validate_corpus(&corpus).iter().map(|v| v.to_string()).collect();
    let tweets = out.join("tweets.jsonl");
    write_tweets_jsonl(&tweets, &corpus.tweets)?;
    let report = out.join("ingest_report.json");
    write_json(&report, &serde_json::json!({ "violations": violations, "missing_mobility": missing }))?;
    if !violations.is_empty() {
        return Err(data(format!("{} corpus violation(s); see {}", violations.len(), report.display())));
    }
    Ok(vec![tweets, report])
}

/// VIF-screens the city feature table.
pub fn cmd_vif(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let (cities, names) = read_cities_csv(require(&cfg.paths.cities, "cities")?)?;
    let ingest = IngestConfig { join_urban: false, ..cfg.ingest.clone() };
    let (screened, kept, screen) = stage("vif", screen_city_features(&cities, &names, &ingest))?;
    let log = out.join("vif_log.csv");
    screen.write_log(&log, &names)?;
    let csv = out.join("cities_screened.csv");
    write_cities_csv(&csv, &screened, &kept)?;
    Ok(vec![log, csv])
}

/// Trains the city encoder and writes embeddings and encoder weights.
pub fn cmd_train_cities(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let (cities, _) = read_cities_csv(require(&cfg.paths.cities, "cities")?)?;
    let (_, trained) = stage("train-cities", city_index(&cities, &cfg.resolved().city))?;
    let emb = out.join("city_embeddings.csv");
    write_embeddings_csv(&emb, &trained.embeddings)?;
    let mut ck = Checkpoint::default();
    ck.push("phi", &trained.encoder.net);
    let enc = out.join("city_encoder.json");
    ck.save(&enc)?;
    Ok(vec![emb, enc])
}

/// Writes the top-K neighbor report for every embedded city.
pub fn cmd_index(embeddings: &Path, k: usize, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let index = EmbeddingIndex::new(crate::city::read_embeddings_csv(embeddings)?)?;
    let sets = stage("index", index.top_k_all(k))?;
    let path = out.join("neighbors.csv");
    write_neighbor_report(&path, &sets)?;
    Ok(vec![path])
}

fn save_global(g: &GlobalModel, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("checkpoints");
    ensure_dir(&dir)?;
    let ck = dir.join("global.json");
    g.params.to_checkpoint().save(&ck)?;
    let curves = out.join("training.json");
    write_json(&curves, &serde_json::json!({ "stage1": g.stage1, "stage2": g.stage2 }))?;
    Ok(vec![ck, curves])
}

/// Two-stage training of the global model.
pub fn cmd_train_global(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let tweets = read_tweets_jsonl(require(&cfg.paths.tweets, "tweets")?)?;
    let g = stage("train-global", train_global(&tweets, cfg.mode(), &cfg.resolved().model))?;
    save_global(&g, out)
}

fn save_adapted(outcome: &AdaptOutcome, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("checkpoints").join("cities");
    ensure_dir(&dir)?;
    let mut files = Vec::new();
    for (city, m) in &outcome.models {
        let p = dir.join(format!("{city}.json"));
        m.params.to_checkpoint().save(&p)?;
        files.push(p);
    }
    let audit = out.join("augmentation_audit.csv");
    write_augmentation_audit(&audit, outcome)?;
    files.push(audit);
    let skipped = out.join("adapt_skipped.json");
    write_json(&skipped, &outcome.skipped)?;
    files.push(skipped);
    Ok(files)
}

/// Adapts the global checkpoint to every city with labeled records.
pub fn cmd_adapt(cfg: &RunConfig, global: &Path, embeddings: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let tweets = read_tweets_jsonl(require(&cfg.paths.tweets, "tweets")?)?;
    let params = FusionParams::from_checkpoint(&Checkpoint::load(global)?)?;
    let index = EmbeddingIndex::new(crate::city::read_embeddings_csv(embeddings)?)?;
    let cities: Vec<String> = index.ids().cloned().collect();
    let outcome = stage("adapt", adapt_all(&params, &tweets, &cities, &index, &cfg.resolved().adapt))?;
    save_adapted(&outcome, out)
}

fn load_city_models(dir: &Path) -> Result<AdaptOutcome> {
    let mut outcome = AdaptOutcome::default();
    if !dir.exists() {
        return Ok(outcome);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.extension().is_some_and(|e| e == "json") {
            let city = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let params = FusionParams::from_checkpoint(&Checkpoint::load(&p)?)?;
            let report = crate::fusion::TrainReport { initial_loss: 0.0, epoch_losses: vec![] };
            outcome.models.insert(city, crate::adapt::AdaptedCity { params, report, sources: vec![] });
        }
    }
    Ok(outcome)
}

/// Scores a gold-labeled file with the global model and, when a directory
/// of city checkpoints is given, with the city-specific models.
pub fn cmd_evaluate(cfg: &RunConfig, global: &Path, city_dir: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let records = read_tweets_jsonl(require(&cfg.paths.tweets, "tweets")?)?;
    let params = FusionParams::from_checkpoint(&Checkpoint::load(global)?)?;
    let (g_name, c_name) = model_names(params.mode);
    let mut rows = vec![MetricsRow::new(g_name, &stage("evaluate", evaluate_global(&params, &records))?)];
    let outcome = match city_dir {
        Some(d) => Some(load_city_models(d)?),
        None => None,
    };
    if let Some(o) = &outcome {
        rows.push(MetricsRow::new(c_name, &stage("evaluate", evaluate_city_specific(&params, o, &records))?));
    }
    let alpha = match &cfg.paths.annotations {
        Some(p) => Some(krippendorff_alpha(&read_annotations_csv(p)?)?),
        None => None,
    };
    let report = MetricsReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
        krippendorff_alpha: alpha,
        adapted_cities: outcome.as_ref().map_or(0, |o| o.models.len()),
        skipped_cities: BTreeMap::new(),
    };
    let metrics = out.join(METRICS_FILE);
    write_json(&metrics, &report)?;
    let preds = out.join("predictions.csv");
    write_predictions_csv(&preds, &records, &final_predictions(&params, outcome.as_ref(), &records)?)?;
    Ok(vec![metrics, preds])
}

/// Reads `tweet_id,pred_label` pairs from a predictions CSV.
pub fn read_prediction_labels(path: &Path) -> Result<BTreeMap<String, SentimentLabel>> {
    #[derive(Deserialize)]
    struct Row {
        tweet_id: String,
        pred_label: i64,
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        out.insert(row.tweet_id, SentimentLabel::new(row.pred_label)?);
    }
    Ok(out)
}

fn labeled_items<'a>(
    tweets: &'a [TweetRecord],
    predictions: Option<&BTreeMap<String, SentimentLabel>>,
) -> Vec<(&'a TweetRecord, SentimentLabel)> {
    tweets
        .iter()
        .filter_map(|t| {
            let l = match predictions {
                Some(p) => p.get(&t.tweet_id).copied(),
                None => t.label(LabelSource::GoldThenWeak),
            };
            l.map(|l| (t, l))
        })
        .collect()
}

fn day_range(tweets: &[TweetRecord]) -> (u32, u32) {
    let lo = tweets.iter().map(|t| t.day).min().unwrap_or(0);
    let hi = tweets.iter().map(|t| t.day).max().unwrap_or(0);
    (lo, hi)
}

/// Accumulative sentiment per city and day, from predictions when given
/// and otherwise from the records' own labels.
pub fn cmd_acc_sentiment(cfg: &RunConfig, predictions: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let tweets = read_tweets_jsonl(require(&cfg.paths.tweets, "tweets")?)?;
    let preds = predictions.map(read_prediction_labels).transpose()?;
    let series = stage("acc-sentiment", sentiment_series(labeled_items(&tweets, preds.as_ref()), day_range(&tweets)))?;
    let path = out.join("acc_sentiment.csv");
    write_acc_sentiment_csv(&path, &series)?;
    Ok(vec![path])
}

/// Sentiment–mobility regression per city.
pub fn cmd_correlate(cfg: &RunConfig, predictions: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let tweets = read_tweets_jsonl(require(&cfg.paths.tweets, "tweets")?)?;
    let preds = predictions.map(read_prediction_labels).transpose()?;
    let series = stage("correlate", sentiment_series(labeled_items(&tweets, preds.as_ref()), day_range(&tweets)))?;
    let (rows, _) = correlate_cities(&series, &tweets);
    let path = out.join("correlation.csv");
    write_correlation_csv(&path, &rows)?;
    Ok(vec![path])
}

/// Writes `variant,accuracy,recall,f1,f1_negative,f1_neutral,f1_positive,n`.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "accuracy", "recall", "f1", "f1_negative", "f1_neutral", "f1_positive", "n"])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.variant.clone(),
            m.accuracy.to_string(),
            m.macro_recall.to_string(),
            m.macro_f1.to_string(),
            m.per_class_f1[0].to_string(),
            m.per_class_f1[1].to_string(),
            m.per_class_f1[2].to_string(),
            m.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the requested comparison variants (all when empty).
pub fn cmd_ablation(cfg: &RunConfig, variants: &[Variant], out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let inputs = stage("ablation", load_inputs(cfg))?;
    let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants.to_vec() };
    let rows = stage("ablation", run_variants(&inputs.corpus, &inputs.holdout, &[], &variants, &cfg.experiment()))?;
    let csv = out.join("ablation.csv");
    write_ablation_csv(&csv, &rows)?;
    let json = out.join("ablation.json");
    write_json(&json, &serde_json::json!({ "config_hash": cfg.hash(), "rows": rows }))?;
    Ok(vec![csv, json])
}

/// Full run: inputs → VIF → standardize → city encoder → index → stage 1
/// → stage 2 → adaptation → evaluation → reports → manifest.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    stage("config", cfg.validate())?;
    ensure_dir(out)?;
    let r = cfg.resolved();
    let mut art = Artifacts::default();
    let inputs = stage("ingest", load_inputs(cfg))?;
    let corpus = &inputs.corpus;
    if inputs.synthetic {
        let dir = out.join("corpus");
        ensure_dir(&dir)?;
        save_corpus(corpus, art.add(dir.join("tweets.jsonl")), art.add(dir.join("cities.csv")))?;
        write_tweets_jsonl(art.add(dir.join("holdout.jsonl")), &inputs.holdout)?;
    }

    let cities: Vec<CityStatic> = corpus.cities.values().cloned().collect();
    let (screened, kept, screen) = stage("vif", screen_city_features(&cities, &corpus.city_feature_names, &cfg.ingest))?;
    screen.write_log(art.add(out.join("vif_log.csv")), &corpus.city_feature_names)?;
    write_cities_csv(art.add(out.join("cities_screened.csv")), &screened, &kept)?;

    let (index, trained) = stage("train-cities", city_index(&screened, &r.city))?;
    write_embeddings_csv(art.add(out.join("city_embeddings.csv")), &trained.embeddings)?;
    let neighbor_k = if cfg.adapt.k == 0 { crate::index::DEFAULT_TOP_K } else { cfg.adapt.k };
    write_neighbor_report(art.add(out.join("neighbors.csv")), &stage("index", index.top_k_all(neighbor_k))?)?;

    let global = stage("train-global", train_global(&corpus.tweets, cfg.mode(), &r.model))?;
    for p in save_global(&global, out)? {
        art.add(p);
    }

    let city_ids: Vec<String> = corpus.cities.keys().cloned().collect();
    let outcome = if cfg.global_only {
        None
    } else {
        let o = stage("adapt", adapt_all(&global.params, &corpus.tweets, &city_ids, &index, &r.adapt))?;
        for p in save_adapted(&o, out)? {
            art.add(p);
        }
        Some(o)
    };

    let (g_name, c_name) = model_names(cfg.mode());
    let mut rows = vec![MetricsRow::new(g_name, &stage("evaluate", evaluate_global(&global.params, &inputs.holdout))?)];
    if let Some(o) = &outcome {
        rows.push(MetricsRow::new(c_name, &stage("evaluate", evaluate_city_specific(&global.params, o, &inputs.holdout))?));
    }
    let alpha = match &cfg.paths.annotations {
        Some(p) => Some(stage("agreement", read_annotations_csv(p).and_then(|t| krippendorff_alpha(&t)))?),
        None => None,
    };
    let held_preds = final_predictions(&global.params, outcome.as_ref(), &inputs.holdout)?;
    write_predictions_csv(art.add(out.join("predictions.csv")), &inputs.holdout, &held_preds)?;

    // Accumulative sentiment and mobility correlation over the collection,
    // as labeled by the final model.
    let corpus_preds = final_predictions(&global.params, outcome.as_ref(), &corpus.tweets)?;
    let items: Vec<(&TweetRecord, SentimentLabel)> = corpus.tweets.iter().zip(corpus_preds.iter().map(|p| p.label)).collect();
    let series = stage("acc-sentiment", sentiment_series(items, day_range(&corpus.tweets)))?;
    write_acc_sentiment_csv(art.add(out.join("acc_sentiment.csv")), &series)?;
    let (corr, _) = correlate_cities(&series, &corpus.tweets);
    write_correlation_csv(art.add(out.join("correlation.csv")), &corr)?;

    let source = r.adapt.label_source();
    let mut before: BTreeMap<String, Vec<SentimentLabel>> = BTreeMap::new();
    let mut after: BTreeMap<String, Vec<(SentimentLabel, f64)>> = BTreeMap::new();
    for city in &city_ids {
        before.insert(city.clone(), corpus.tweets_of(city).filter_map(|t| t.label(source)).collect());
        if let Ok(ds) = augment_for_city(city, &corpus.tweets, &index, &r.adapt) {
            after.insert(city.clone(), ds.records.iter().filter_map(|t| t.label(source).map(|l| (l, t.weight))).collect());
        }
    }
    write_label_distribution_csv(art.add(out.join("label_distribution.csv")), &label_distribution_report(&before, &after))?;

    let report = MetricsReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
        krippendorff_alpha: alpha,
        adapted_cities: outcome.as_ref().map_or(0, |o| o.models.len()),
        skipped_cities: outcome.map(|o| o.skipped).unwrap_or_default(),
    };
    write_json(&art.add(out.join(METRICS_FILE)), &report)?;
    write_manifest(out, cfg, &art.0)
}

/// Reruns the pipeline recorded in a manifest into `out`.
pub fn rerun_from_manifest(manifest: &Path, out: &Path) -> Result<Manifest> {
    let m = Manifest::load(manifest)?;
    cmd_pipeline(&m.config, out)
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        config(e.to_string())
    }
}
