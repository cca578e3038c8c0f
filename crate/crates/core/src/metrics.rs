//! Evaluation and analysis: confusion-matrix metrics, accumulative
//! sentiment, sentiment–mobility regression, inter-annotator agreement and
//! label-distribution reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AnnotationTable, SentimentLabel};
use crate::error::{data, numerical, Result};

/// Rows are true classes, columns predicted, in (neg, neu, pos) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn from_labels(truth: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(data(format!("{} true labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::default();
        for (t, p) in truth.iter().zip(pred) {
            cm.add(*t, *p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: SentimentLabel, pred: SentimentLabel) {
        self.counts[truth.class_index()][pred.class_index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// (neg, neu, pos)
    pub per_class_f1: [f64; 3],
    pub per_class_recall: [f64; 3],
    pub per_class_precision: [f64; 3],
    pub n: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let n = cm.total();
    if n == 0 {
        return Err(data("confusion matrix is empty"));
    }
    let c = cm.counts.map(|row| row.map(|v| v as f64));
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for k in 0..3 {
        let tp = c[k][k];
        let row: f64 = c[k].iter().sum();
        let col: f64 = (0..3).map(|r| c[r][k]).sum();
        precision[k] = ratio(tp, col);
        recall[k] = ratio(tp, row);
        f1[k] = ratio(2.0 * precision[k] * recall[k], precision[k] + recall[k]);
    }
    let mean = |v: [f64; 3]| v.iter().sum::<f64>() / 3.0;
    Ok(ClassificationMetrics {
        accuracy: (0..3).map(|k| c[k][k]).sum::<f64>() / n as f64,
        macro_recall: mean(recall),
        macro_precision: mean(precision),
        macro_f1: mean(f1),
        per_class_f1: f1,
        per_class_recall: recall,
        per_class_precision: precision,
        n,
    })
}

pub fn evaluate_labels(truth: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<ClassificationMetrics> {
    classification_metrics(&ConfusionMatrix::from_labels(truth, pred)?)
}

/// Daily positive / negative counts for one city, starting at `start_day`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentSeries {
    pub city_id: String,
    pub start_day: u32,
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
}

impl SentimentSeries {
    pub fn new(city_id: impl Into<String>, start_day: u32, pos: Vec<u64>, neg: Vec<u64>) -> Result<Self> {
        if pos.len() != neg.len() {
            return Err(data("pos and neg series differ in length"));
        }
        Ok(Self { city_id: city_id.into(), start_day, pos, neg })
    }

    /// Counts labels per day over the contiguous range `days`.
    pub fn from_labels(
        city_id: impl Into<String>,
        days: (u32, u32),
        labels: impl IntoIterator<Item = (u32, SentimentLabel)>,
    ) -> Result<Self> {
        let (lo, hi) = days;
        if hi < lo {
            return Err(data("day range is reversed"));
        }
        let len = (hi - lo + 1) as usize;
        let (mut pos, mut neg) = (vec![0; len], vec![0; len]);
        for (day, label) in labels {
            if day < lo || day > hi {
                return Err(data(format!("day {day} outside [{lo}, {hi}]")));
            }
            let i = (day - lo) as usize;
            match label {
                SentimentLabel::POSITIVE => pos[i] += 1,
                SentimentLabel::NEGATIVE => neg[i] += 1,
                _ => {}
            }
        }
        Self::new(city_id, lo, pos, neg)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// `(Σ_{i≤t} pos_i − neg_i) / (Σ_{i≤t} pos_i + neg_i)`; `None` when no
/// positive or negative record has been seen by day `t`.
pub fn accumulative_sentiment(series: &SentimentSeries, t: u32) -> Result<Option<f64>> {
    if t < series.start_day || (t - series.start_day) as usize >= series.len() {
        return Err(data(format!("day {t} outside the series of {}", series.city_id)));
    }
    let end = (t - series.start_day) as usize + 1;
    let p: u64 = series.pos[..end].iter().sum();
    let n: u64 = series.neg[..end].iter().sum();
    Ok(if p + n == 0 { None } else { Some((p as f64 - n as f64) / (p + n) as f64) })
}

/// Accumulative sentiment for every day of the series.
pub fn accumulative_curve(series: &SentimentSeries) -> Vec<Option<f64>> {
    let (mut p, mut n) = (0u64, 0u64);
    series
        .pos
        .iter()
        .zip(&series.neg)
        .map(|(a, b)| {
            p += a;
            n += b;
            (p + n > 0).then(|| (p as f64 - n as f64) / (p + n) as f64)
        })
        .collect()
}

/// Writes `city_id,day,acc_sentiment` with an empty cell for undefined days.
pub fn write_acc_sentiment_csv(path: impl AsRef<Path>, series: &[SentimentSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["city_id", "day", "acc_sentiment"])?;
    for s in series {
        for (i, v) in accumulative_curve(s).into_iter().enumerate() {
            let cell = v.map_or(String::new(), |x| x.to_string());
            w.write_record([s.city_id.as_str(), &(s.start_day + i as u32).to_string(), &cell])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub pearson_r: f64,
    pub n: usize,
}

/// OLS of mobility (`y`) on sentiment (`x`). Days where `x` is undefined
/// are dropped.
pub fn sentiment_mobility_correlation(x: &[Option<f64>], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(data(format!("{} sentiment values vs {} mobility values", x.len(), y.len())));
    }
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter_map(|(a, b)| a.map(|a| (a, *b))).collect();
    let n = pairs.len();
    if n < 3 {
        return Err(data(format!("correlation needs at least 3 defined days, got {n}")));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(numerical("sentiment has zero variance; slope undefined"));
    }
    if syy == 0.0 {
        return Err(numerical("mobility has zero variance; R² undefined"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs.iter().map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(Correlation {
        slope,
        intercept,
        r2: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        pearson_r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        n,
    })
}

/// Daily total flow divided by the series mean. Series whose mean is not
/// positive (already centered features) are z-scored instead.
pub fn mobility_proxy(daily_total: &[f64]) -> Vec<f64> {
    let n = daily_total.len() as f64;
    let mean = daily_total.iter().sum::<f64>() / n;
    if mean > 0.0 {
        return daily_total.iter().map(|v| v / mean).collect();
    }
    let sd = (daily_total.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    daily_total.iter().map(|v| (v - mean) / sd).collect()
}

/// Writes `city_id,slope,intercept,r2,pearson_r,n`.
pub fn write_correlation_csv(path: impl AsRef<Path>, rows: &[(String, Correlation)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["city_id", "slope", "intercept", "r2", "pearson_r", "n"])?;
    for (city, c) in rows {
        w.write_record([
            city.clone(),
            c.slope.to_string(),
            c.intercept.to_string(),
            c.r2.to_string(),
            c.pearson_r.to_string(),
            c.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Nominal two-coder agreement `1 − D_o / D_e`, with `D_o` the fraction of
/// disagreeing items and `D_e = Σ_{c1≠c2} p(c1) p(c2)` over pooled
/// annotation proportions.
pub fn krippendorff_alpha(table: &AnnotationTable) -> Result<f64> {
    let labels = table.labels();
    let n = labels.len() as f64;
    let d_o = labels.iter().filter(|[a, b]| a != b).count() as f64 / n;
    let mut counts = [0u64; 3];
    for pair in labels {
        for l in pair {
            counts[l.class_index()] += 1;
        }
    }
    let p = counts.map(|c| c as f64 / (2.0 * n));
    // Σ_{c1≠c2} p1 p2 = 1 − Σ p²
    let d_e = 1.0 - p.iter().map(|v| v * v).sum::<f64>();
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(data("all annotations use one category; alpha is undefined"));
    }
    Ok(1.0 - d_o / d_e)
}

/// Label shares in percent over (possibly weighted) records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelShares {
    pub pos: f64,
    pub neg: f64,
    pub neu: f64,
}

pub fn label_shares(labels: impl IntoIterator<Item = (SentimentLabel, f64)>) -> Option<LabelShares> {
    let mut mass = [0.0; 3];
    for (l, w) in labels {
        mass[l.class_index()] += w;
    }
    let total: f64 = mass.iter().sum();
    (total > 0.0).then(|| LabelShares {
        neg: 100.0 * mass[0] / total,
        neu: 100.0 * mass[1] / total,
        pos: 100.0 * mass[2] / total,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelDistributionReport {
    /// city → (before, after)
    pub rows: BTreeMap<String, (LabelShares, LabelShares)>,
    /// Cities left out and why.
    pub notes: Vec<String>,
}

/// Compares per-city label shares before and after augmentation; the
/// augmented side weights each record by its weight.
pub fn label_distribution_report(
    before: &BTreeMap<String, Vec<SentimentLabel>>,
    after: &BTreeMap<String, Vec<(SentimentLabel, f64)>>,
) -> LabelDistributionReport {
    let mut report = LabelDistributionReport::default();
    for (city, labels) in before {
        let b = label_shares(labels.iter().map(|l| (*l, 1.0)));
        let a = after.get(city).and_then(|v| label_shares(v.iter().copied()));
        match (b, a) {
            (Some(b), Some(a)) => {
                report.rows.insert(city.clone(), (b, a));
            }
            _ => report.notes.push(format!("{city}: no labeled records")),
        }
    }
    report
}

/// Writes `city_id,before_pos,before_neg,before_neu,after_pos,after_neg,after_neu`.
pub fn write_label_distribution_csv(path: impl AsRef<Path>, report: &LabelDistributionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["city_id", "before_pos", "before_neg", "before_neu", "after_pos", "after_neg", "after_neu"])?;
    for (city, (b, a)) in &report.rows {
        let cells = [b.pos, b.neg, b.neu, a.pos, a.neg, a.neu].map(|v| v.to_string());
        w.write_record(std::iter::once(city.clone()).chain(cells))?;
    }
    w.flush()?;
    Ok(())
}
