//! Domain types shared across the crate, corpus validation and the on-disk
//! formats (tweets as JSON Lines, cities / OD records / annotations as CSV).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};

/// Three-way sentiment polarity: -1 negative, 0 neutral, 1 positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct SentimentLabel(i8);

impl SentimentLabel {
    pub const NEGATIVE: Self = Self(-1);
    pub const NEUTRAL: Self = Self(0);
    pub const POSITIVE: Self = Self(1);
    pub const ALL: [Self; 3] = [Self::NEGATIVE, Self::NEUTRAL, Self::POSITIVE];

    pub fn new(value: i64) -> Result<Self> {
        Self::try_from(value)
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Class index in (neg, neu, pos) order.
    pub fn class_index(self) -> usize {
        (self.0 + 1) as usize
    }

    pub fn from_class_index(idx: usize) -> Self {
        match idx {
            0 => Self::NEGATIVE,
            1 => Self::NEUTRAL,
            2 => Self::POSITIVE,
            _ => panic!("class index {idx} out of range"),
        }
    }
}

impl TryFrom<i64> for SentimentLabel {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            -1..=1 => Ok(Self(value as i8)),
            other => Err(data(format!("sentiment label must be -1, 0 or 1, got {other}"))),
        }
    }
}

impl From<SentimentLabel> for i64 {
    fn from(l: SentimentLabel) -> i64 {
        l.0 as i64
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn default_weight() -> f64 {
    1.0
}

/// One tweet: precomputed text embedding, mobility context and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub city_id: String,
    pub day: u32,
    pub text_embedding: Vec<f64>,
    pub mobility_features: Vec<f64>,
    pub weak_label: Option<SentimentLabel>,
    pub gold_label: Option<SentimentLabel>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Which label column a training or evaluation step reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Weak,
    Gold,
    /// Gold when present, otherwise weak.
    GoldThenWeak,
}

impl TweetRecord {
    pub fn label(&self, source: LabelSource) -> Option<SentimentLabel> {
        match source {
            LabelSource::Weak => self.weak_label,
            LabelSource::Gold => self.gold_label,
            LabelSource::GoldThenWeak => self.gold_label.or(self.weak_label),
        }
    }
}

/// Static per-city attributes: socioeconomic features and wildfire risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityStatic {
    pub city_id: String,
    pub features: Vec<f64>,
    pub risk: f64,
    pub population: u64,
    pub urban: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub text: usize,
    pub mobility: usize,
    pub city: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub tweets: Vec<TweetRecord>,
    pub cities: BTreeMap<String, CityStatic>,
    pub city_feature_names: Vec<String>,
    pub dims: Dims,
    pub day_range: (u32, u32),
}

impl Corpus {
    /// Builds a corpus, inferring dims from the first tweet and first city.
    /// No validation is done here; see [`validate_corpus`].
    pub fn new(
        tweets: Vec<TweetRecord>,
        cities: impl IntoIterator<Item = CityStatic>,
        city_feature_names: Vec<String>,
    ) -> Self {
        let cities: BTreeMap<_, _> = cities.into_iter().map(|c| (c.city_id.clone(), c)).collect();
        let dims = Dims {
            text: tweets.first().map_or(0, |t| t.text_embedding.len()),
            mobility: tweets.first().map_or(0, |t| t.mobility_features.len()),
            city: cities.values().next().map_or(0, |c| c.features.len()),
        };
        let day_range = tweets
            .iter()
            .fold(None, |acc: Option<(u32, u32)>, t| match acc {
                None => Some((t.day, t.day)),
                Some((lo, hi)) => Some((lo.min(t.day), hi.max(t.day))),
            })
            .unwrap_or((0, 0));
        Self { tweets, cities, city_feature_names, dims, day_range }
    }

    pub fn tweets_of<'a>(&'a self, city_id: &'a str) -> impl Iterator<Item = &'a TweetRecord> + 'a {
        self.tweets.iter().filter(move |t| t.city_id == city_id)
    }

    /// Returns `Err` listing violations if the corpus does not validate.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_corpus(self);
        if report.is_empty() {
            Ok(())
        } else {
            let shown: Vec<String> = report.iter().take(5).map(|v| v.to_string()).collect();
            Err(data(format!(
                "{} corpus violation(s): {}",
                report.len(),
                shown.join("; ")
            )))
        }
    }
}

/// Daily origin-destination trip count between two census tracts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdRecord {
    pub origin_tract: String,
    pub dest_tract: String,
    pub day: u32,
    pub trips: u64,
}

/// Paired sentiment annotations from two coders.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTable {
    item_ids: Vec<String>,
    labels: Vec<[SentimentLabel; 2]>,
}

impl AnnotationTable {
    pub fn new(item_ids: Vec<String>, labels: Vec<[SentimentLabel; 2]>) -> Result<Self> {
        if item_ids.len() != labels.len() {
            return Err(data("annotation item ids and label rows differ in length"));
        }
        if labels.len() < 2 {
            return Err(data("annotation table needs at least 2 items"));
        }
        Ok(Self { item_ids, labels })
    }

    pub fn from_pairs(labels: Vec<[SentimentLabel; 2]>) -> Result<Self> {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::new(ids, labels)
    }

    pub fn labels(&self) -> &[[SentimentLabel; 2]] {
        &self.labels
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    UnknownCity(String),
    TextDim { expected: usize, found: usize },
    MobilityDim { expected: usize, found: usize },
    CityFeatureDim { expected: usize, found: usize },
    NonFinite(&'static str),
    NegativeWeight,
    RiskOutOfRange(f64),
    DayOutOfRange,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::UnknownCity(c) => write!(f, "city_id {c:?} not in cities table"),
            Rule::TextDim { expected, found } => {
                write!(f, "text_embedding length {found}, expected {expected}")
            }
            Rule::MobilityDim { expected, found } => {
                write!(f, "mobility_features length {found}, expected {expected}")
            }
            Rule::CityFeatureDim { expected, found } => {
                write!(f, "city feature length {found}, expected {expected}")
            }
            Rule::NonFinite(field) => write!(f, "non-finite value in {field}"),
            Rule::NegativeWeight => write!(f, "weight must be >= 0"),
            Rule::RiskOutOfRange(r) => write!(f, "risk {r} outside [0, 5]"),
            Rule::DayOutOfRange => write!(f, "day outside corpus day_range"),
        }
    }
}

/// A single broken invariant, naming the offending record.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.rule)
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks every corpus invariant and returns the violations found (empty
/// when the corpus is well formed).
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let dims = corpus.dims;
    let mut push = |record: &str, rule: Rule| {
        out.push(Violation { record: record.to_string(), rule })
    };

    for t in &corpus.tweets {
        let id = t.tweet_id.as_str();
        if !corpus.cities.contains_key(&t.city_id) {
            push(id, Rule::UnknownCity(t.city_id.clone()));
        }
        if t.text_embedding.len() != dims.text {
            push(id, Rule::TextDim { expected: dims.text, found: t.text_embedding.len() });
        }
        if t.mobility_features.len() != dims.mobility {
            push(
                id,
                Rule::MobilityDim { expected: dims.mobility, found: t.mobility_features.len() },
            );
        }
        if !all_finite(&t.text_embedding) {
            push(id, Rule::NonFinite("text_embedding"));
        }
        if !all_finite(&t.mobility_features) {
            push(id, Rule::NonFinite("mobility_features"));
        }
        if !t.weight.is_finite() {
            push(id, Rule::NonFinite("weight"));
        } else if t.weight < 0.0 {
            push(id, Rule::NegativeWeight);
        }
        if t.day < corpus.day_range.0 || t.day > corpus.day_range.1 {
            push(id, Rule::DayOutOfRange);
        }
    }

    for c in corpus.cities.values() {
        let id = c.city_id.as_str();
        if c.features.len() != dims.city {
            push(id, Rule::CityFeatureDim { expected: dims.city, found: c.features.len() });
        }
        if !all_finite(&c.features) {
            push(id, Rule::NonFinite("features"));
        }
        if !c.risk.is_finite() {
            push(id, Rule::NonFinite("risk"));
        } else if !(0.0..=5.0).contains(&c.risk) {
            push(id, Rule::RiskOutOfRange(c.risk));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File formats

pub fn read_tweets_jsonl(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TweetRecord = serde_json::from_str(&line)
            .map_err(|e| data(format!("{}:{}: {e}", path.as_ref().display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_tweets_jsonl(path: impl AsRef<Path>, tweets: &[TweetRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in tweets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const CITY_FIXED_COLUMNS: [&str; 4] = ["city_id", "risk", "population", "urban"];

/// Reads the cities CSV. Returns the cities and the feature column names.
pub fn read_cities_csv(path: impl AsRef<Path>) -> Result<(Vec<CityStatic>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || headers.iter().take(4).ne(CITY_FIXED_COLUMNS.iter().copied()) {
        return Err(data("cities CSV header must start with city_id,risk,population,urban"));
    }
    let names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
    let mut cities = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let ctx = |what: &str| data(format!("cities row {}: bad {what}", i + 1));
        let city_id = row.get(0).ok_or_else(|| ctx("city_id"))?.to_string();
        let risk: f64 = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| ctx("risk"))?;
        let population: u64 =
            row.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| ctx("population"))?;
        let urban = match row.get(3).map(|s| s.trim().to_ascii_lowercase()) {
            Some(s) if s == "true" || s == "1" => true,
            Some(s) if s == "false" || s == "0" => false,
            _ => return Err(ctx("urban")),
        };
        let features = row
            .iter()
            .skip(4)
            .map(|s| s.parse::<f64>().map_err(|_| ctx("feature value")))
            .collect::<Result<Vec<_>>>()?;
        cities.push(CityStatic { city_id, features, risk, population, urban });
    }
    Ok((cities, names))
}

pub fn write_cities_csv<'a>(
    path: impl AsRef<Path>,
    cities: impl IntoIterator<Item = &'a CityStatic>,
    feature_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = CITY_FIXED_COLUMNS.to_vec();
    header.extend(feature_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for c in cities {
        let mut row = vec![
            c.city_id.clone(),
            c.risk.to_string(),
            c.population.to_string(),
            c.urban.to_string(),
        ];
        row.extend(c.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_od_csv(path: impl AsRef<Path>) -> Result<Vec<OdRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_od_csv(path: impl AsRef<Path>, records: &[OdRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct AnnotationRow {
    item_id: String,
    annotator_a: i64,
    annotator_b: i64,
}

pub fn read_annotations_csv(path: impl AsRef<Path>) -> Result<AnnotationTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for row in rdr.deserialize::<AnnotationRow>() {
        let row = row?;
        labels.push([SentimentLabel::new(row.annotator_a)?, SentimentLabel::new(row.annotator_b)?]);
        ids.push(row.item_id);
    }
    AnnotationTable::new(ids, labels)
}

/// Loads a corpus from a tweets JSON Lines file and a cities CSV.
pub fn load_corpus(tweets: impl AsRef<Path>, cities: impl AsRef<Path>) -> Result<Corpus> {
    let tweets = read_tweets_jsonl(tweets)?;
    let (cities, names) = read_cities_csv(cities)?;
    Ok(Corpus::new(tweets, cities, names))
}

pub fn save_corpus(corpus: &Corpus, tweets: impl AsRef<Path>, cities: impl AsRef<Path>) -> Result<()> {
    write_tweets_jsonl(tweets, &corpus.tweets)?;
    write_cities_csv(cities, corpus.cities.values(), &corpus.city_feature_names)
}
