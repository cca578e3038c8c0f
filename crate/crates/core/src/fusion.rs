//! Individual-level learning: text pooler, mobility encoder, fusion network
//! and classifier, with the two-stage (weak → gold) training protocol.
//!
//! ```text
//! h_t = tanh(W_p · text_embedding + b_p)
//! h_m = E_m(mobility_features)
//! h_f = F([h_t; h_m])
//! ŷ   = softmax(C(h_f))
//! ```

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSource, SentimentLabel, TweetRecord};
use crate::error::{config, data, Result};
use crate::nn::{
    cross_entropy, seeded_rng, softmax, Activation, Adam, AdamConfig, Checkpoint, Mlp, MlpCache, MlpGrads,
    SeededRng,
};

/// The four parameter groups of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "theta_t_pooler")]
    Pooler,
    #[serde(rename = "theta_m")]
    Mobility,
    #[serde(rename = "theta_f")]
    Fusion,
    #[serde(rename = "theta_c")]
    Classifier,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Pooler, Group::Mobility, Group::Fusion, Group::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            Group::Pooler => "theta_t_pooler",
            Group::Mobility => "theta_m",
            Group::Fusion => "theta_f",
            Group::Classifier => "theta_c",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the mobility branch sees the record's features or a zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Fusion,
    PureText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionArch {
    /// |h_t|
    pub text_hidden: usize,
    /// Hidden sizes of the mobility encoder before its output layer.
    pub mobility_layers: Vec<usize>,
    /// |h_m|
    pub mobility_hidden: usize,
    /// |h_f|
    pub fusion_hidden: usize,
}

impl Default for FusionArch {
    fn default() -> Self {
        Self { text_hidden: 64, mobility_layers: vec![32], mobility_hidden: 64, fusion_hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub pooler: Mlp,
    pub mobility: Mlp,
    pub fusion: Mlp,
    pub classifier: Mlp,
    pub mode: InputMode,
}

/// Intermediate representations and caches from one forward pass.
#[derive(Debug, Clone)]
pub struct FusionForward {
    pub h_t: Vec<f64>,
    pub h_m: Vec<f64>,
    pub h_f: Vec<f64>,
    pub probs: Vec<f64>,
    caches: [MlpCache; 4],
}

/// Parameter gradients for every trainable group (`None` when frozen).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub pooler: Option<MlpGrads>,
    pub mobility: Option<MlpGrads>,
    pub fusion: Option<MlpGrads>,
    pub classifier: Option<MlpGrads>,
}

impl FusionGrads {
    fn zeros_for(p: &FusionParams) -> Self {
        let g = |m: &Mlp| (!m.frozen).then(|| MlpGrads::zeros_like(m));
        Self { pooler: g(&p.pooler), mobility: g(&p.mobility), fusion: g(&p.fusion), classifier: g(&p.classifier) }
    }

    pub fn get(&self, group: Group) -> Option<&MlpGrads> {
        match group {
            Group::Pooler => self.pooler.as_ref(),
            Group::Mobility => self.mobility.as_ref(),
            Group::Fusion => self.fusion.as_ref(),
            Group::Classifier => self.classifier.as_ref(),
        }
    }

    fn scale(&mut self, s: f64) {
        for g in [&mut self.pooler, &mut self.mobility, &mut self.fusion, &mut self.classifier].into_iter().flatten() {
            g.scale(s);
        }
    }
}

impl FusionParams {
    pub fn new(text_dim: usize, mobility_dim: usize, arch: &FusionArch, rng: &mut SeededRng) -> Self {
        let pooler = Mlp::new(&[text_dim, arch.text_hidden], Activation::Tanh, Activation::Tanh, rng);
        let mut m_sizes = vec![mobility_dim];
        m_sizes.extend(&arch.mobility_layers);
        m_sizes.push(arch.mobility_hidden);
        let mobility = Mlp::new(&m_sizes, Activation::Tanh, Activation::Tanh, rng);
        let fusion = Mlp::new(
            &[arch.text_hidden + arch.mobility_hidden, arch.fusion_hidden],
            Activation::Relu,
            Activation::Relu,
            rng,
        );
        let classifier = Mlp::new(&[arch.fusion_hidden, 3], Activation::Identity, Activation::Identity, rng);
        Self { pooler, mobility, fusion, classifier, mode: InputMode::Fusion }
    }

    pub fn group(&self, g: Group) -> &Mlp {
        match g {
            Group::Pooler => &self.pooler,
            Group::Mobility => &self.mobility,
            Group::Fusion => &self.fusion,
            Group::Classifier => &self.classifier,
        }
    }

    pub fn group_mut(&mut self, g: Group) -> &mut Mlp {
        match g {
            Group::Pooler => &mut self.pooler,
            Group::Mobility => &mut self.mobility,
            Group::Fusion => &mut self.fusion,
            Group::Classifier => &mut self.classifier,
        }
    }

    /// Sets each group's freeze flag from `frozen`.
    pub fn set_frozen(&mut self, frozen: &[Group]) {
        for g in Group::ALL {
            self.group_mut(g).frozen = frozen.contains(&g);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fusion.input_dim() != self.pooler.output_dim() + self.mobility.output_dim() {
            return Err(data("fusion input must equal |h_t| + |h_m|"));
        }
        if self.classifier.input_dim() != self.fusion.output_dim() || self.classifier.output_dim() != 3 {
            return Err(data("classifier must map |h_f| to 3 classes"));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for g in Group::ALL {
            ck.push(g.name(), self.group(g));
        }
        let mode = match self.mode {
            InputMode::Fusion => "fusion",
            InputMode::PureText => "pure_text",
        };
        ck.meta.insert("input_mode".into(), mode.into());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mode = match ck.meta.get("input_mode").map(String::as_str) {
            None | Some("fusion") => InputMode::Fusion,
            Some("pure_text") => InputMode::PureText,
            Some(other) => return Err(data(format!("unknown input_mode {other:?}"))),
        };
        let p = Self {
            pooler: ck.group(Group::Pooler.name())?,
            mobility: ck.group(Group::Mobility.name())?,
            fusion: ck.group(Group::Fusion.name())?,
            classifier: ck.group(Group::Classifier.name())?,
            mode,
        };
        p.validate()?;
        Ok(p)
    }

    /// Full forward pass for one record.
    pub fn forward(&self, record: &TweetRecord) -> Result<FusionForward> {
        let (h_t, c_t) = self.pooler.forward(&record.text_embedding)?;
        let zeros;
        let mobility_input: &[f64] = match self.mode {
            InputMode::Fusion => &record.mobility_features,
            InputMode::PureText => {
                zeros = vec![0.0; self.mobility.input_dim()];
                &zeros
            }
        };
        let (h_m, c_m) = self.mobility.forward(mobility_input)?;
        let mut joint = h_t.clone();
        joint.extend_from_slice(&h_m);
        let (h_f, c_f) = self.fusion.forward(&joint)?;
        let (logits, c_c) = self.classifier.forward(&h_f)?;
        let probs = softmax(&logits);
        Ok(FusionForward { h_t, h_m, h_f, probs, caches: [c_t, c_m, c_f, c_c] })
    }

    pub fn probabilities(&self, record: &TweetRecord) -> Result<Vec<f64>> {
        Ok(self.forward(record)?.probs)
    }

    /// Backpropagates a logit gradient, accumulating into unfrozen groups.
    fn backward(&self, fwd: &FusionForward, grad_logits: &[f64], grads: &mut FusionGrads) -> Result<()> {
        let [c_t, c_m, c_f, c_c] = &fwd.caches;
        let g_hf = self.classifier.backward_into(c_c, grad_logits, grads.classifier.as_mut())?;
        let encoders_frozen = self.pooler.frozen && self.mobility.frozen;
        if self.fusion.frozen && encoders_frozen {
            return Ok(());
        }
        let g_joint = self.fusion.backward_into(c_f, &g_hf, grads.fusion.as_mut())?;
        if encoders_frozen {
            return Ok(());
        }
        let (g_ht, g_hm) = g_joint.split_at(self.pooler.output_dim());
        if !self.pooler.frozen {
            self.pooler.backward_into(c_t, g_ht, grads.pooler.as_mut())?;
        }
        if !self.mobility.frozen {
            self.mobility.backward_into(c_m, g_hm, grads.mobility.as_mut())?;
        }
        Ok(())
    }
}

/// How a summed weighted loss is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Divide by the number of records.
    Count,
    /// Divide by the sum of record weights.
    TotalWeight,
}

fn required_label(r: &TweetRecord, source: LabelSource) -> Result<SentimentLabel> {
    r.label(source).ok_or_else(|| data(format!("record {} has no {source:?} label", r.tweet_id)))
}

/// Per-record multipliers that equalize class mass (`N / (3 n_k)`).
pub fn inverse_frequency_weights(records: &[TweetRecord], source: LabelSource) -> Result<[f64; 3]> {
    let mut counts = [0usize; 3];
    for r in records {
        counts[required_label(r, source)?.class_index()] += 1;
    }
    let n = records.len() as f64;
    Ok(counts.map(|c| if c == 0 { 0.0 } else { n / (3.0 * c as f64) }))
}

/// Summed weighted cross-entropy over `records` plus gradients (unnormalized).
fn batch_sum(
    params: &FusionParams,
    records: &[&TweetRecord],
    source: LabelSource,
    class_weights: Option<&[f64; 3]>,
    want_grads: bool,
) -> Result<(f64, f64, Option<FusionGrads>)> {
    let mut grads = want_grads.then(|| FusionGrads::zeros_for(params));
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for r in records {
        let label = required_label(r, source)?;
        let w = r.weight * class_weights.map_or(1.0, |cw| cw[label.class_index()]);
        total_weight += w;
        let fwd = params.forward(r)?;
        let ce = cross_entropy(&fwd.probs, label, w)?;
        loss += ce.loss;
        if let Some(g) = grads.as_mut() {
            if w != 0.0 {
                params.backward(&fwd, &ce.grad_logits, g)?;
            }
        }
    }
    Ok((loss, total_weight, grads))
}

/// Weighted cross-entropy over a batch, normalized as requested, with
/// gradients for the unfrozen groups.
pub fn weighted_loss(
    params: &FusionParams,
    records: &[TweetRecord],
    source: LabelSource,
    normalizer: Normalizer,
) -> Result<(f64, FusionGrads)> {
    if records.is_empty() {
        return Err(data("empty batch"));
    }
    let refs: Vec<&TweetRecord> = records.iter().collect();
    let (sum, total_weight, grads) = batch_sum(params, &refs, source, None, true)?;
    let mut grads = grads.expect("requested");
    let denom = match normalizer {
        Normalizer::Count => records.len() as f64,
        Normalizer::TotalWeight => total_weight,
    };
    if denom == 0.0 {
        grads.scale(0.0);
        return Ok((0.0, grads));
    }
    grads.scale(1.0 / denom);
    Ok((sum / denom, grads))
}

/// Mean (over records) of weight-scaled cross-entropy.
pub fn fusion_loss_batch(params: &FusionParams, records: &[TweetRecord], source: LabelSource) -> Result<(f64, FusionGrads)> {
    weighted_loss(params, records, source, Normalizer::Count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WeakPretrain,
    GoldRefine,
    CityAdapt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    pub label_source: LabelSource,
    pub freeze: Vec<Group>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Multiply record weights by inverse class frequency.
    pub class_balanced: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::weak_pretrain()
    }
}

impl StageConfig {
    /// Stage 1: every group of this model trains on weak labels (the external
    /// text encoder is already fixed because text arrives as vectors).
    pub fn weak_pretrain() -> Self {
        Self {
            stage: Stage::WeakPretrain,
            label_source: LabelSource::Weak,
            freeze: vec![],
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 101,
            class_balanced: false,
        }
    }

    /// Stage 2: encoders frozen, fusion and classifier refined on gold labels.
    pub fn gold_refine() -> Self {
        Self {
            stage: Stage::GoldRefine,
            label_source: LabelSource::Gold,
            freeze: vec![Group::Pooler, Group::Mobility],
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 202,
            class_balanced: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("stage: batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config("stage: learning_rate must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective before the first update.
    pub initial_loss: f64,
    /// Mean minibatch objective per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Generic minibatch loop minimizing `Σ w·CE / normalizer` over `records`.
/// Groups listed in `cfg.freeze` are marked frozen and never updated.
pub fn train_weighted(
    params: &mut FusionParams,
    records: &[TweetRecord],
    cfg: &StageConfig,
    normalizer: Normalizer,
) -> Result<TrainReport> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(data("training set is empty"));
    }
    let source = cfg.label_source;
    let class_weights = if cfg.class_balanced { Some(inverse_frequency_weights(records, source)?) } else { None };
    params.set_frozen(&cfg.freeze);

    let all: Vec<&TweetRecord> = records.iter().collect();
    let (sum, total_weight, _) = batch_sum(params, &all, source, class_weights.as_ref(), false)?;
    let denom = match normalizer {
        Normalizer::Count => records.len() as f64,
        Normalizer::TotalWeight => total_weight,
    };
    if denom <= 0.0 {
        return Err(data("training set carries zero total weight"));
    }
    let initial_loss = sum / denom;

    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() };
    let mut optimizers: Vec<Adam> = Group::ALL.iter().map(|g| Adam::for_mlp(adam_cfg, params.group(*g))).collect();
    let all_frozen = Group::ALL.iter().all(|g| params.group(*g).frozen);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TweetRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let (sum, _, grads) = batch_sum(params, &batch, source, class_weights.as_ref(), !all_frozen)?;
            // Unbiased minibatch estimate of the full objective.
            let scale = 1.0 / denom;
            epoch_loss += sum * scale;
            if let Some(mut grads) = grads {
                grads.scale(scale * records.len() as f64 / batch.len() as f64);
                for (k, g) in Group::ALL.iter().enumerate() {
                    if let Some(gr) = grads.get(*g) {
                        optimizers[k].step_mlp(params.group_mut(*g), gr)?;
                    }
                }
            }
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainReport { initial_loss, epoch_losses })
}

/// Stage 1: weakly supervised pretraining.
pub fn train_stage1(params: &mut FusionParams, records: &[TweetRecord], cfg: &StageConfig) -> Result<TrainReport> {
    let train: Vec<TweetRecord> = records.iter().filter(|r| r.label(cfg.label_source).is_some()).cloned().collect();
    train_weighted(params, &train, cfg, Normalizer::Count)
}

/// Stage 2: supervised refinement of the global model on gold labels.
pub fn train_stage2(params: &mut FusionParams, records: &[TweetRecord], cfg: &StageConfig) -> Result<TrainReport> {
    let train: Vec<TweetRecord> = records.iter().filter(|r| r.label(cfg.label_source).is_some()).cloned().collect();
    train_weighted(params, &train, cfg, Normalizer::Count)
}

/// Argmax class with ties resolved toward neutral, then negative.
pub fn argmax_label(probs: &[f64]) -> SentimentLabel {
    let mut best = 1;
    for k in [0, 2] {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    SentimentLabel::from_class_index(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: SentimentLabel,
    pub probs: [f64; 3],
}

pub fn predict(params: &FusionParams, records: &[TweetRecord]) -> Result<Vec<Prediction>> {
    records
        .par_iter()
        .map(|r| {
            let p = params.probabilities(r)?;
            Ok(Prediction { label: argmax_label(&p), probs: [p[0], p[1], p[2]] })
        })
        .collect()
}

/// Writes `tweet_id,city_id,pred_label,p_neg,p_neu,p_pos`.
pub fn write_predictions_csv(path: impl AsRef<std::path::Path>, records: &[TweetRecord], preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tweet_id", "city_id", "pred_label", "p_neg", "p_neu", "p_pos"])?;
    for (r, p) in records.iter().zip(preds) {
        w.write_record([
            r.tweet_id.clone(),
            r.city_id.clone(),
            p.label.to_string(),
            p.probs[0].to_string(),
            p.probs[1].to_string(),
            p.probs[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
