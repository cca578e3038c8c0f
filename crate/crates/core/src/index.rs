//! Exact cosine-similarity retrieval over city embeddings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{data, shape, Result};

pub const DEFAULT_TOP_K: usize = 5;

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("cosine of vectors with lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(data("cosine similarity of a zero vector is undefined"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Ranked neighbors of one target city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub target: String,
    /// (city_id, similarity), similarity non-increasing.
    pub neighbors: Vec<(String, f64)>,
}

impl NeighborSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.neighbors.iter().map(|(c, _)| c.as_str())
    }
}

/// Descending similarity, then ascending city id.
fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// Immutable brute-force index.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn new(embeddings: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = embeddings.values().next().map_or(0, Vec::len);
        for (id, z) in &embeddings {
            if z.len() != dim {
                return Err(shape(format!("embedding {id} has length {}, expected {dim}", z.len())));
            }
            if z.iter().all(|x| *x == 0.0) || z.iter().any(|x| !x.is_finite()) {
                return Err(data(format!("embedding {id} is zero or non-finite")));
            }
        }
        Ok(Self { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.embeddings.keys()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.embeddings.get(id).map(Vec::as_slice)
    }

    fn query(&self, target: &str) -> Result<&[f64]> {
        self.get(target).ok_or_else(|| data(format!("city {target} not in embedding index")))
    }

    /// Every other city with non-negative similarity to `target`, ranked.
    pub fn candidate_set(&self, target: &str) -> Result<Vec<(String, f64)>> {
        let zi = self.query(target)?;
        let mut out = Vec::new();
        for (id, zj) in &self.embeddings {
            if id == target {
                continue;
            }
            let s = cosine_sim(zi, zj)?;
            if s >= 0.0 {
                out.push((id.clone(), s));
            }
        }
        out.sort_by(rank_order);
        Ok(out)
    }

    /// The `k` most similar candidates of `target`.
    pub fn top_k(&self, target: &str, k: usize) -> Result<NeighborSet> {
        let mut neighbors = self.candidate_set(target)?;
        neighbors.truncate(k);
        Ok(NeighborSet { target: target.to_string(), neighbors })
    }

    pub fn top_k_all(&self, k: usize) -> Result<Vec<NeighborSet>> {
        let ids: Vec<&String> = self.embeddings.keys().collect();
        ids.par_iter().map(|id| self.top_k(id, k)).collect()
    }
}

/// Writes `target_city,rank,neighbor_city,similarity` (rank starts at 1).
pub fn write_neighbor_report(path: impl AsRef<Path>, sets: &[NeighborSet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target_city", "rank", "neighbor_city", "similarity"])?;
    for s in sets {
        for (rank, (city, sim)) in s.neighbors.iter().enumerate() {
            w.write_record([s.target.as_str(), &(rank + 1).to_string(), city, &sim.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn index(items: &[(&str, Vec<f64>)]) -> EmbeddingIndex {
        EmbeddingIndex::new(items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_abs_diff_eq!(cosine_sim(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_sim(&[3.0, 4.0], &[4.0, 3.0]).unwrap(), 0.96, epsilon = 1e-12);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn equal_embeddings_all_candidates() {
        let idx = index(&[("a", vec![1.0, 1.0]), ("b", vec![1.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let m = idx.candidate_set("a").unwrap();
        assert_eq!(m.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>(), vec!["b", "c"]);
    }

    #[test]
    fn antipodal_excluded_orthogonal_included() {
        let idx = index(&[("a", vec![1.0, 0.0]), ("b", vec![-1.0, 0.0]), ("c", vec![0.0, 2.0])]);
        let m = idx.candidate_set("a").unwrap();
        assert_eq!(m, vec![("c".to_string(), 0.0)]);
    }

    #[test]
    fn k_zero_and_k_large() {
        let idx = index(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.5]), ("c", vec![1.0, 1.0]), ("d", vec![-1.0, 0.1])]);
        assert!(idx.top_k("a", 0).unwrap().neighbors.is_empty());
        let all = idx.top_k("a", 10).unwrap();
        assert_eq!(all.ids().collect::<Vec<_>>(), vec!["b", "c"]);
        assert!(idx.top_k("zz", 1).is_err());
    }

    #[test]
    fn ties_break_by_city_id() {
        let idx = index(&[("t", vec![1.0, 0.0]), ("z", vec![1.0, 1.0]), ("m", vec![1.0, -1.0]), ("b", vec![2.0, 2.0])]);
        let n = idx.top_k("t", 2).unwrap();
        assert_eq!(n.ids().collect::<Vec<_>>(), vec!["b", "m"]);
    }
}
