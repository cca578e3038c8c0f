//! City-wide learning: an encoder from static city features to embeddings,
//! trained with a risk-aware triplet objective over positive / semi-positive
//! / negative pools built from wildfire-risk differences.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CityStatic;
use crate::error::{config, data, shape, Result};
use crate::nn::{seeded_rng, sigmoid, softplus, Activation, Adam, AdamConfig, Mlp, MlpCache, MlpGrads, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityEncoderConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Balance between the (P, S) and (S, N) constraints.
    pub lambda: f64,
    /// Risk-difference thresholds; `None` picks the 33rd / 66th percentile
    /// of observed pairwise differences.
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub epochs: usize,
    pub anchors_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub normalize_embeddings: bool,
}

impl Default for CityEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden: vec![64],
            lambda: 0.5,
            tau1: None,
            tau2: None,
            epochs: 200,
            anchors_per_step: 32,
            learning_rate: 5e-3,
            seed: 11,
            normalize_embeddings: true,
        }
    }
}

impl CityEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(config("city encoder: embed_dim must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config("city encoder: lambda must lie in [0, 1]"));
        }
        if let (Some(t1), Some(t2)) = (self.tau1, self.tau2) {
            if !(0.0 <= t1 && t1 < t2) {
                return Err(config("city encoder: thresholds must satisfy 0 <= tau1 < tau2"));
            }
        }
        if self.anchors_per_step == 0 {
            return Err(config("city encoder: anchors_per_step must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config("city encoder: learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// The encoder network plus the normalization switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityEncoder {
    pub net: Mlp,
    pub normalize: bool,
}

impl CityEncoder {
    pub fn new(input_dim: usize, cfg: &CityEncoderConfig, rng: &mut SeededRng) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.embed_dim);
        Self { net: Mlp::new(&sizes, Activation::Tanh, Activation::Identity, rng), normalize: cfg.normalize_embeddings }
    }

    /// Maps standardized static features to an embedding.
    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>> {
        let z = self.net.apply(features)?;
        if !self.normalize {
            return Ok(z);
        }
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(data("city embedding has zero norm; direction undefined"));
        }
        Ok(z.into_iter().map(|x| x / norm).collect())
    }

    pub fn encode_all<'a>(&self, cities: impl IntoIterator<Item = &'a CityStatic>) -> Result<BTreeMap<String, Vec<f64>>> {
        cities.into_iter().map(|c| Ok((c.city_id.clone(), self.encode(&c.features)?))).collect()
    }
}

/// Cities grouped by absolute risk difference to one anchor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pools {
    pub positive: Vec<String>,
    pub semi: Vec<String>,
    pub negative: Vec<String>,
}

/// `|Δ| <= tau1` → positive, `tau1 < |Δ| <= tau2` → semi, else negative.
/// The anchor itself is excluded.
pub fn build_pools(anchor: &str, cities: &[CityStatic], tau1: f64, tau2: f64) -> Result<Pools> {
    let a = cities
        .iter()
        .find(|c| c.city_id == anchor)
        .ok_or_else(|| data(format!("anchor {anchor} not among cities")))?;
    let mut pools = Pools::default();
    for c in cities.iter().filter(|c| c.city_id != anchor) {
        let delta = (c.risk - a.risk).abs();
        let pool = if delta <= tau1 {
            &mut pools.positive
        } else if delta <= tau2 {
            &mut pools.semi
        } else {
            &mut pools.negative
        };
        pool.push(c.city_id.clone());
    }
    Ok(pools)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub positive: String,
    pub semi: String,
    pub negative: String,
}

/// Draws one city per pool; an empty pool's slot falls back to a uniform
/// draw over every non-anchor city.
pub fn sample_triplet(anchor: &str, pools: &Pools, cities: &[CityStatic], rng: &mut SeededRng) -> Result<Triplet> {
    let others: Vec<&String> = cities.iter().map(|c| &c.city_id).filter(|c| *c != anchor).collect();
    if others.len() < 3 {
        return Err(data("triplet sampling needs at least 3 non-anchor cities"));
    }
    let mut pick = |pool: &[String]| -> String {
        if pool.is_empty() {
            others[rng.random_range(0..others.len())].clone()
        } else {
            pool[rng.random_range(0..pool.len())].clone()
        }
    };
    Ok(Triplet { positive: pick(&pools.positive), semi: pick(&pools.semi), negative: pick(&pools.negative) })
}

/// Cosine similarity with gradients with respect to both arguments.
fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(shape("triplet embeddings differ in length"));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(data("zero-norm embedding; cosine similarity undefined"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = dot / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - s * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - s * y / (nb * nb)).collect();
    Ok((s, ga, gb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_semi: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `-ln σ(λ[s_AP - s_AS] + (1-λ)[s_AS - s_AN])` with cosine similarities.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], semi: &[f64], negative: &[f64], lambda: f64) -> Result<TripletLoss> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(config("lambda must lie in [0, 1]"));
    }
    let (s_ap, ga_p, gp) = cosine_with_grad(anchor, positive)?;
    let (s_as, ga_s, gs) = cosine_with_grad(anchor, semi)?;
    let (s_an, ga_n, gn) = cosine_with_grad(anchor, negative)?;
    let u = lambda * (s_ap - s_as) + (1.0 - lambda) * (s_as - s_an);
    let loss = softplus(-u);
    // dL/du = σ(u) - 1
    let dl_du = sigmoid(u) - 1.0;
    let c_ap = dl_du * lambda;
    let c_as = dl_du * (1.0 - 2.0 * lambda);
    let c_an = -dl_du * (1.0 - lambda);
    let grad_anchor = (0..anchor.len()).map(|i| c_ap * ga_p[i] + c_as * ga_s[i] + c_an * ga_n[i]).collect();
    Ok(TripletLoss {
        loss,
        grad_anchor,
        grad_positive: gp.into_iter().map(|g| c_ap * g).collect(),
        grad_semi: gs.into_iter().map(|g| c_as * g).collect(),
        grad_negative: gn.into_iter().map(|g| c_an * g).collect(),
    })
}

/// Linear-interpolated percentile (`q` in [0, 1]) of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Default thresholds: 33rd and 66th percentiles of pairwise |Δrisk|.
pub fn default_thresholds(cities: &[CityStatic]) -> (f64, f64) {
    let mut deltas = Vec::new();
    for (i, a) in cities.iter().enumerate() {
        for b in &cities[i + 1..] {
            deltas.push((a.risk - b.risk).abs());
        }
    }
    deltas.sort_by(f64::total_cmp);
    let t1 = percentile(&deltas, 1.0 / 3.0);
    let mut t2 = percentile(&deltas, 2.0 / 3.0);
    if t2 <= t1 {
        t2 = t1 + 1e-9;
    }
    (t1, t2)
}

#[derive(Debug, Clone)]
pub struct TrainedCityEncoder {
    pub encoder: CityEncoder,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    /// Mean triplet loss per epoch.
    pub loss_curve: Vec<f64>,
    pub tau: (f64, f64),
}

/// Trains the encoder on `cities` (standardized features). Each step draws
/// `anchors_per_step` anchors uniformly, one triplet each, and applies one
/// Adam update on the mean loss.
pub fn train_city_encoder(cities: &[CityStatic], cfg: &CityEncoderConfig) -> Result<TrainedCityEncoder> {
    cfg.validate()?;
    if cities.len() < 4 {
        return Err(data("city encoder training needs at least 4 cities"));
    }
    let dim = cities[0].features.len();
    if cities.iter().any(|c| c.features.len() != dim) {
        return Err(shape("cities disagree on feature length"));
    }
    let (t1, t2) = match (cfg.tau1, cfg.tau2) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let (d1, d2) = default_thresholds(cities);
            let t1 = a.unwrap_or(d1);
            (t1, b.unwrap_or(d2).max(t1 + 1e-9))
        }
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut encoder = CityEncoder::new(dim, cfg, &mut rng);
    let pools: Vec<Pools> =
        cities.iter().map(|c| build_pools(&c.city_id, cities, t1, t2)).collect::<Result<_>>()?;
    let index: BTreeMap<&str, usize> = cities.iter().enumerate().map(|(i, c)| (c.city_id.as_str(), i)).collect();
    let steps_per_epoch = cities.len().div_ceil(cfg.anchors_per_step);
    let mut adam = Adam::for_mlp(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() }, &encoder.net);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            // Raw (unnormalized) outputs: cosine is scale invariant.
            let forwards: Vec<(Vec<f64>, MlpCache)> =
                cities.iter().map(|c| encoder.net.forward(&c.features)).collect::<Result<_>>()?;
            let mut upstream = vec![vec![0.0; cfg.embed_dim]; cities.len()];
            let mut step_loss = 0.0;
            let scale = 1.0 / cfg.anchors_per_step as f64;
            for _ in 0..cfg.anchors_per_step {
                let a = rng.random_range(0..cities.len());
                let t = sample_triplet(&cities[a].city_id, &pools[a], cities, &mut rng)?;
                let (p, s, n) = (index[t.positive.as_str()], index[t.semi.as_str()], index[t.negative.as_str()]);
                let tl = triplet_loss(&forwards[a].0, &forwards[p].0, &forwards[s].0, &forwards[n].0, cfg.lambda)?;
                step_loss += tl.loss * scale;
                for (idx, g) in [(a, &tl.grad_anchor), (p, &tl.grad_positive), (s, &tl.grad_semi), (n, &tl.grad_negative)] {
                    upstream[idx].iter_mut().zip(g).for_each(|(u, gi)| *u += gi * scale);
                }
            }
            let mut grads = MlpGrads::zeros_like(&encoder.net);
            for (k, (_, cache)) in forwards.iter().enumerate() {
                if upstream[k].iter().any(|g| *g != 0.0) {
                    encoder.net.backward_into(cache, &upstream[k], Some(&mut grads))?;
                }
            }
            adam.step_mlp(&mut encoder.net, &grads)?;
            epoch_loss += step_loss / steps_per_epoch as f64;
        }
        loss_curve.push(epoch_loss);
    }
    let embeddings = encoder.encode_all(cities)?;
    Ok(TrainedCityEncoder { encoder, embeddings, loss_curve, tau: (t1, t2) })
}

/// Writes `city_id,z_0,...,z_{d-1}`.
pub fn write_embeddings_csv(path: impl AsRef<Path>, embeddings: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = embeddings.values().next().map_or(0, Vec::len);
    let mut header = vec!["city_id".to_string()];
    header.extend((0..d).map(|i| format!("z_{i}")));
    w.write_record(&header)?;
    for (id, z) in embeddings {
        let mut row = vec![id.clone()];
        row.extend(z.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let id = row.get(0).ok_or_else(|| data("embedding row without city_id"))?.to_string();
        let z = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| data(format!("bad embedding value for {id}"))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(id, z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::nn::{grad_check, Dense};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn city(id: &str, risk: f64) -> CityStatic {
        CityStatic { city_id: id.into(), features: vec![risk, 1.0], risk, population: 1, urban: false }
    }

    fn unit(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    #[test]
    fn pools_from_thresholds() {
        let cities = vec![city("A", 2.0), city("B", 2.3), city("C", 3.2), city("D", 4.0)];
        let p = build_pools("A", &cities, 0.5, 1.5).unwrap();
        assert_eq!(p.positive, vec!["B"]);
        assert_eq!(p.semi, vec!["C"]);
        assert_eq!(p.negative, vec!["D"]);
    }

    #[test]
    fn pools_boundaries_and_uniform_risk() {
        let cities = vec![city("A", 1.0), city("B", 1.5), city("C", 2.5), city("D", 2.5001)];
        let p = build_pools("A", &cities, 0.5, 1.5).unwrap();
        assert_eq!((p.positive, p.semi, p.negative), (vec!["B".to_string()], vec!["C".to_string()], vec!["D".to_string()]));
        let same = vec![city("A", 3.0), city("B", 3.0), city("C", 3.0)];
        let p = build_pools("A", &same, 0.1, 0.2).unwrap();
        assert_eq!(p.positive.len(), 2);
        assert!(p.semi.is_empty() && p.negative.is_empty());
    }

    #[test]
    fn triplet_sampling_respects_pools_and_fallback() {
        let cities = vec![city("A", 0.0), city("B", 0.1), city("C", 1.0), city("D", 3.0), city("E", 0.2)];
        let pools = build_pools("A", &cities, 0.5, 1.5).unwrap();
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            let t = sample_triplet("A", &pools, &cities, &mut rng).unwrap();
            assert!(pools.positive.contains(&t.positive));
            assert!(pools.semi.contains(&t.semi));
            assert!(pools.negative.contains(&t.negative));
        }
        let no_neg = Pools { negative: vec![], ..pools.clone() };
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..400 {
            let t = sample_triplet("A", &no_neg, &cities, &mut rng).unwrap();
            assert_ne!(t.negative, "A");
            seen.insert(t.negative);
        }
        assert_eq!(seen.len(), 4);
        let seq = |seed| {
            let mut r = seeded_rng(seed);
            (0..20).map(|_| sample_triplet("A", &pools, &cities, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        assert!(sample_triplet("A", &pools, &cities[..3], &mut rng).is_err());
    }

    #[test]
    fn equal_similarities_give_ln2() {
        let v = unit(0.3);
        let tl = triplet_loss(&v, &v, &v, &v, 0.5).unwrap();
        assert_abs_diff_eq!(tl.loss, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn worked_example() {
        // cos(θ) = 0.9, 0.5, 0.1 against the anchor at angle 0
        let a = unit(0.0);
        let tl = triplet_loss(&a, &unit(0.9f64.acos()), &unit(0.5f64.acos()), &unit(0.1f64.acos()), 0.5).unwrap();
        assert_abs_diff_eq!(tl.loss, (1.0 + (-0.4f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(tl.loss, 0.5130, epsilon = 1e-4);
    }

    #[test]
    fn saturates_towards_zero() {
        let a = unit(0.0);
        let tl = triplet_loss(&a, &a, &a, &unit(std::f64::consts::PI), 1.0).unwrap();
        // λ = 1 ignores N: argument is s_AP - s_AS = 0
        assert_abs_diff_eq!(tl.loss, 2f64.ln(), epsilon = 1e-12);
        let tl = triplet_loss(&a, &a, &unit(std::f64::consts::PI), &unit(std::f64::consts::PI), 1.0).unwrap();
        assert!(tl.loss > 0.0 && tl.loss < 0.13);
        let big: Vec<f64> = vec![1e3, 0.0];
        assert!(triplet_loss(&big, &[0.0, 0.0], &big, &big, 0.5).is_err());
    }

    #[test]
    fn zero_final_layer_cannot_normalize() {
        let net = Mlp::from_layers(vec![Dense::zeros(2, 3, Activation::Identity)]).unwrap();
        let enc = CityEncoder { net, normalize: true };
        assert!(enc.encode(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn encoder_is_deterministic_and_normalized() {
        let mut rng = seeded_rng(2);
        let enc = CityEncoder::new(3, &CityEncoderConfig::default(), &mut rng);
        for _ in 0..20 {
            let f: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let z = enc.encode(&f).unwrap();
            assert_abs_diff_eq!(z.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0, epsilon = 1e-9);
            assert_eq!(z, enc.encode(&f).unwrap());
        }
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(3);
        for _ in 0..10 {
            let params: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let lambda = rng.random_range(0.0..1.0);
            let f = |p: &[f64]| {
                let tl = triplet_loss(&p[0..4], &p[4..8], &p[8..12], &p[12..16], lambda).unwrap();
                let mut g = tl.grad_anchor.clone();
                g.extend(&tl.grad_positive);
                g.extend(&tl.grad_semi);
                g.extend(&tl.grad_negative);
                (tl.loss, g)
            };
            assert!(grad_check(f, &params, 1e-5) < 1e-4);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_embeddings() {
        let cities: Vec<_> = (0..5).map(|i| city(&format!("c{i}"), i as f64)).collect();
        let cfg = CityEncoderConfig { epochs: 0, ..Default::default() };
        let out = train_city_encoder(&cities, &cfg).unwrap();
        assert!(out.loss_curve.is_empty());
        let mut rng = seeded_rng(cfg.seed);
        let fresh = CityEncoder::new(2, &cfg, &mut rng);
        assert_eq!(out.embeddings["c3"], fresh.encode(&cities[3].features).unwrap());
        assert!(train_city_encoder(&cities[..3], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn pools_partition(risks in proptest::collection::vec(0.0f64..5.0, 2..30), t1 in 0.0f64..2.0, gap in 0.01f64..2.0) {
            let cities: Vec<_> = risks.iter().enumerate().map(|(i, r)| city(&format!("c{i:02}"), *r)).collect();
            let p = build_pools("c00", &cities, t1, t1 + gap).unwrap();
            let mut all: Vec<String> = p.positive.iter().chain(&p.semi).chain(&p.negative).cloned().collect();
            all.sort();
            let expected: Vec<String> = cities[1..].iter().map(|c| c.city_id.clone()).collect();
            prop_assert_eq!(all, expected);
        }

        #[test]
        fn loss_nonnegative_and_rotation_invariant(
            v in proptest::collection::vec(-1.0f64..1.0, 8), theta in 0.0f64..6.28, lambda in 0.0f64..1.0,
        ) {
            prop_assume!(v.chunks(2).all(|c| c[0].abs() + c[1].abs() > 1e-3));
            let base = triplet_loss(&v[0..2], &v[2..4], &v[4..6], &v[6..8], lambda).unwrap();
            prop_assert!(base.loss >= 0.0);
            let rot = |c: &[f64]| vec![theta.cos() * c[0] - theta.sin() * c[1], theta.sin() * c[0] + theta.cos() * c[1]];
            let r = triplet_loss(&rot(&v[0..2]), &rot(&v[2..4]), &rot(&v[4..6]), &rot(&v[6..8]), lambda).unwrap();
            prop_assert!((r.loss - base.loss).abs() < 1e-9);
        }

        #[test]
        fn closer_positive_never_hurts(a in 0.0f64..3.0, p1 in 0.0f64..3.0, shrink in 0.0f64..1.0, s in 0.0f64..3.0, n in 0.0f64..3.0, lambda in 0.0f64..1.0) {
            // moving P's angle towards the anchor raises s_AP
            let p2 = a + (p1 - a) * shrink;
            let l1 = triplet_loss(&unit(a), &unit(p1), &unit(s), &unit(n), lambda).unwrap().loss;
            let l2 = triplet_loss(&unit(a), &unit(p2), &unit(s), &unit(n), lambda).unwrap().loss;
            prop_assert!(l2 <= l1 + 1e-12);
        }
    }
}
