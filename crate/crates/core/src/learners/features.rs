use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    None,
    /// Squares and pairwise products of the standardized features.
    QuadraticWithInteractions,
}

impl Expansion {
    pub(crate) fn from_quadratic(quadratic: bool) -> Self {
        if quadratic {
            Expansion::QuadraticWithInteractions
        } else {
            Expansion::None
        }
    }
}

/// Standardizes columns (dropping constant ones), optionally expands to
/// second order, and prepends an intercept column.
#[derive(Debug, Clone)]
pub(crate) struct FeatureMap {
    keep: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    expansion: Expansion,
}

impl FeatureMap {
    pub fn fit(x: &DMatrix<f64>, expansion: Expansion) -> Self {
        let n = x.nrows() as f64;
        let mut keep = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for (j, col) in x.column_iter().enumerate() {
            let first = col[0];
            let m = first + col.iter().map(|v| v - first).sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * m.abs().max(1.0) {
                keep.push(j);
                means.push(m);
                scales.push(sd);
            }
        }
        Self {
            keep,
            means,
            scales,
            expansion,
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn width(&self) -> usize {
        let p = self.keep.len();
        match self.expansion {
            Expansion::None => 1 + p,
            Expansion::QuadraticWithInteractions => 1 + p + p * (p + 1) / 2,
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let p = self.keep.len();
        let mut out = DMatrix::zeros(n, self.width());
        let mut z = vec![0.0; p];
        for i in 0..n {
            out[(i, 0)] = 1.0;
            for (k, &j) in self.keep.iter().enumerate() {
                z[k] = (x[(i, j)] - self.means[k]) / self.scales[k];
                out[(i, 1 + k)] = z[k];
            }
            if self.expansion == Expansion::QuadraticWithInteractions {
                let mut c = 1 + p;
                for a in 0..p {
                    for b in a..p {
                        out[(i, c)] = z[a] * z[b];
                        c += 1;
                    }
                }
            }
        }
        out
    }
}
