use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

/// Per-column z-score statistics, fitted once and reused for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero spread; they map to all zeros.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Fits column means and population standard deviations.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            constant.push(s <= 1e-12 * m.abs().max(1.0));
            std.push(s);
        }
        Self { mean, std, constant }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(shape(format!("{} columns, standardizer fitted on {}", x.ncols(), self.mean.len())));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.constant[j] {
                0.0
            } else {
                (x[(i, j)] - self.mean[j]) / self.std[j]
            }
        }))
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(shape(format!("row of length {}, standardizer fitted on {}", row.len(), self.mean.len())));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| if self.constant[j] { 0.0 } else { (v - self.mean[j]) / self.std[j] })
            .collect())
    }
}

/// Z-scores every column (population std). Constant columns become zeros and
/// are flagged in the returned statistics.
pub fn standardize(x: &DMatrix<f64>) -> (DMatrix<f64>, Standardizer) {
    let st = Standardizer::fit(x);
    let z = st.transform(x).expect("fitted on the same matrix");
    (z, st)
}
