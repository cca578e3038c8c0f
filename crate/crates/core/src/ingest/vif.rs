use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::standardize::standardize;
use crate::error::{data, shape, Result};

/// Reported VIF for perfectly collinear (or constant) columns.
pub const VIF_CAP: f64 = 1e12;
pub const DEFAULT_VIF_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VifAction {
    Retain,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifLogEntry {
    pub round: usize,
    pub column: usize,
    pub vif: f64,
    pub action: VifAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VifScreen {
    /// Surviving column indices in original order (core and non-core).
    pub selected: Vec<usize>,
    pub removed: Vec<usize>,
    pub log: Vec<VifLogEntry>,
}

impl VifScreen {
    /// VIFs from the last (non-removing) round, keyed by column.
    pub fn final_vifs(&self) -> Vec<(usize, f64)> {
        let last = self.log.last().map_or(0, |e| e.round);
        self.log.iter().filter(|e| e.round == last).map(|e| (e.column, e.vif)).collect()
    }

    /// Writes `round,column_name,vif,action`.
    pub fn write_log(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["round", "column_name", "vif", "action"])?;
        for e in &self.log {
            let name = names.get(e.column).cloned().unwrap_or_else(|| format!("col_{}", e.column));
            let action = match e.action {
                VifAction::Retain => "retain",
                VifAction::Remove => "remove",
            };
            w.write_record([e.round.to_string(), name, e.vif.to_string(), action.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pseudo_inverse(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = max * 1e-10;
    let inv = eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// VIF of column `target` regressed (with intercept) on `others`, given
/// standardized data `z` and its Gram matrix.
fn vif_one(z: &DMatrix<f64>, gram: &DMatrix<f64>, target: usize, others: &[usize]) -> f64 {
    let ss_tot = gram[(target, target)];
    if ss_tot <= 0.0 {
        return VIF_CAP;
    }
    let k = others.len();
    let g_oo = DMatrix::from_fn(k, k, |a, b| gram[(others[a], others[b])]);
    let g_oj = DVector::from_fn(k, |a, _| gram[(others[a], target)]);
    let beta = pseudo_inverse(&g_oo) * g_oj;
    let mut ss_res = 0.0;
    for i in 0..z.nrows() {
        let fitted: f64 = others.iter().zip(beta.iter()).map(|(&c, b)| z[(i, c)] * b).sum();
        let r = z[(i, target)] - fitted;
        ss_res += r * r;
    }
    if ss_res * VIF_CAP <= ss_tot {
        VIF_CAP
    } else {
        (ss_tot / ss_res).max(1.0)
    }
}

/// VIF of every column in `retained` against the remaining retained columns.
pub fn variance_inflation(x: &DMatrix<f64>, retained: &[usize]) -> Result<Vec<f64>> {
    if retained.len() < 2 {
        return Err(shape("VIF needs at least 2 retained columns"));
    }
    let (z, _) = standardize(x);
    let gram = z.transpose() * &z;
    Ok(retained
        .par_iter()
        .map(|&j| {
            let others: Vec<usize> = retained.iter().copied().filter(|&c| c != j).collect();
            vif_one(&z, &gram, j, &others)
        })
        .collect())
}

/// Iteratively drops the non-core column with the highest VIF until every
/// non-core VIF is at or below `threshold`. Ties go to the lowest index.
pub fn vif_screen(x: &DMatrix<f64>, core_mask: &[bool], threshold: f64) -> Result<VifScreen> {
    let p = x.ncols();
    if core_mask.len() != p {
        return Err(shape(format!("core mask has {} entries for {p} columns", core_mask.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(data("VIF input contains non-finite values"));
    }
    if p < 2 {
        return Err(shape("VIF screening needs at least 2 columns"));
    }
    let (z, _) = standardize(x);
    let gram = z.transpose() * &z;

    let mut retained: Vec<usize> = (0..p).collect();
    let mut removed = Vec::new();
    let mut log = Vec::new();
    for round in 1.. {
        if retained.len() < 2 {
            return Err(shape("fewer than 2 retained columns"));
        }
        let candidates: Vec<usize> = retained.iter().copied().filter(|&c| !core_mask[c]).collect();
        let vifs: Vec<f64> = candidates
            .par_iter()
            .map(|&j| {
                let others: Vec<usize> = retained.iter().copied().filter(|&c| c != j).collect();
                vif_one(&z, &gram, j, &others)
            })
            .collect();
        // Highest VIF, lowest column index on ties.
        let worst = candidates
            .iter()
            .zip(&vifs)
            .fold(None::<(usize, f64)>, |best, (&c, &v)| match best {
                Some((_, bv)) if v <= bv => best,
                _ => Some((c, v)),
            });
        let remove = worst.filter(|&(_, v)| v > threshold).map(|(c, _)| c);
        for (&c, &v) in candidates.iter().zip(&vifs) {
            let action = if Some(c) == remove { VifAction::Remove } else { VifAction::Retain };
            log.push(VifLogEntry { round, column: c, vif: v, action });
        }
        match remove {
            Some(c) => {
                retained.retain(|&r| r != c);
                removed.push(c);
            }
            None => break,
        }
    }
    Ok(VifScreen { selected: retained, removed, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Independent oracle: R² from an SVD least-squares fit with an explicit
    /// intercept column on the raw data.
    fn oracle_vif(x: &DMatrix<f64>, target: usize, others: &[usize]) -> f64 {
        let n = x.nrows();
        let design = DMatrix::from_fn(n, others.len() + 1, |i, k| if k == 0 { 1.0 } else { x[(i, others[k - 1])] });
        let y = x.column(target).into_owned();
        let beta = design.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let resid = &y - design * beta;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        1.0 / (resid.norm_squared() / ss_tot)
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let v = variance_inflation(&x, &[0, 1]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        let s = vif_screen(&x, &[false, false], 5.0).unwrap();
        assert_eq!(s.selected, vec![0, 1]);
    }

    #[test]
    fn duplicate_column_is_capped_and_lowest_index_removed() {
        let mut rng = seeded_rng(4);
        let n = 50;
        let mut x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = x.column(0).into_owned();
        x.set_column(2, &c);
        let s = vif_screen(&x, &[false; 3], 5.0).unwrap();
        let round1: Vec<_> = s.log.iter().filter(|e| e.round == 1).collect();
        let removed: Vec<_> = round1.iter().filter(|e| e.action == VifAction::Remove).collect();
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].column, 0);
        assert_eq!(removed[0].vif, VIF_CAP);
        assert_eq!(s.selected, vec![1, 2]);
    }

    #[test]
    fn core_columns_survive() {
        let mut rng = seeded_rng(5);
        let n = 60;
        let mut x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = x.column(0).into_owned();
        x.set_column(1, &c);
        let s = vif_screen(&x, &[true, false, false], 5.0).unwrap();
        assert_eq!(s.selected, vec![0, 2]);
        assert_eq!(s.removed, vec![1]);
    }

    #[test]
    fn matches_svd_oracle() {
        let mut rng = seeded_rng(6);
        let n = 80;
        let mut x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..n {
            x[(i, 3)] = 0.7 * x[(i, 0)] - 0.4 * x[(i, 1)] + 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let v = variance_inflation(&x, &[0, 1, 2, 3]).unwrap();
        for j in 0..4 {
            let others: Vec<_> = (0..4).filter(|&c| c != j).collect();
            let o = oracle_vif(&x, j, &others);
            assert!((v[j] - o).abs() / o < 1e-8, "col {j}: {} vs {o}", v[j]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 2.0, 3.0]);
        assert!(vif_screen(&x, &[false, false], 5.0).is_err());
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(vif_screen(&x, &[false], 5.0).is_err());
    }
}
