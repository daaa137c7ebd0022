use nalgebra::{DMatrix, DVector};

use super::crossfit::{CrossFit, FoldAssignment};
use super::{Fitted, Learner, Task};
use crate::error::{Error, Result};

/// Convex combination of member models refitted on the full data.
pub struct StackModel {
    names: Vec<String>,
    members: Vec<Box<dyn Fitted>>,
    weights: Vec<f64>,
    cv_risk: Vec<f64>,
}

impl StackModel {
    pub fn member_names(&self) -> &[String] {
        &self.names
    }

    /// Out-of-fold mean squared error of each member.
    pub fn cv_risk(&self) -> &[f64] {
        &self.cv_risk
    }
}

impl Fitted for StackModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(m.predict(x)) {
                *o += w * p;
            }
        }
        out
    }

    fn weights(&self) -> Option<Vec<f64>> {
        Some(self.weights.clone())
    }
}

/// Minimizes `||y - Z w||^2` over the probability simplex.
///
/// Starts at the best single column and moves mass between pairs of
/// coordinates with exact line searches, so the returned risk never exceeds
/// the best vertex.
pub fn simplex_least_squares(z: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let l = z.ncols();
    if l == 1 {
        return vec![1.0];
    }
    let yv = DVector::from_column_slice(y);
    let g = z.tr_mul(z);
    let c = z.tr_mul(&yv);
    let yy = yv.dot(&yv);
    let risk_vertex = |j: usize| g[(j, j)] - 2.0 * c[j] + yy;
    let start = (0..l)
        .min_by(|&a, &b| risk_vertex(a).total_cmp(&risk_vertex(b)))
        .unwrap_or(0);
    let mut w = vec![0.0; l];
    w[start] = 1.0;
    // r = G w - c, half the gradient
    let mut r: Vec<f64> = (0..l).map(|i| g[(i, start)] - c[i]).collect();
    let scale = g.diagonal().amax().max(1e-300);

    for _sweep in 0..10_000 {
        let mut moved = 0.0f64;
        for i in 0..l {
            for j in 0..l {
                if i == j || w[j] <= 0.0 {
                    continue;
                }
                // direction e_i - e_j
                let curv = g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)];
                let slope = r[i] - r[j];
                if slope >= 0.0 {
                    continue;
                }
                let delta = if curv > 1e-14 * scale {
                    (-slope / curv).min(w[j])
                } else {
                    w[j]
                };
                if delta <= 0.0 {
                    continue;
                }
                w[i] += delta;
                w[j] -= delta;
                if w[j] < 1e-15 {
                    w[j] = 0.0;
                }
                for k in 0..l {
                    r[k] += delta * (g[(k, i)] - g[(k, j)]);
                }
                moved = moved.max(delta);
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) || w.iter().any(|v| !v.is_finite()) {
        log::warn!("stacking weights degenerate; using uniform weights");
        return vec![1.0 / l as f64; l];
    }
    w.iter().map(|v| v / total).collect()
}

/// Fits a stacked ensemble: out-of-fold predictions from `folds` internal
/// folds determine simplex weights, then every member is refitted on all
/// rows. A single member is fitted directly with weight 1.
pub fn fit_stack(
    members: &[Box<dyn Learner>],
    x: &DMatrix<f64>,
    y: &[f64],
    task: Task,
    folds: usize,
    seed: u64,
) -> Result<StackModel> {
    if members.is_empty() {
        return Err(Error::Config("stack needs at least one member".into()));
    }
    for m in members {
        if !m.supports(task) {
            return Err(Error::Config(format!(
                "learner {} does not support {task:?}",
                m.name()
            )));
        }
    }
    let names: Vec<String> = members.iter().map(|m| m.name()).collect();
    if members.len() == 1 {
        return Ok(StackModel {
            names,
            members: vec![members[0].fit(x, y, task)?],
            weights: vec![1.0],
            cv_risk: vec![f64::NAN],
        });
    }

    let n = x.nrows();
    let v = folds.min(n / 2).max(2);
    let assignment = FoldAssignment::new(n, v, seed)?;
    let mut z = DMatrix::zeros(n, members.len());
    for (j, m) in members.iter().enumerate() {
        let cf = CrossFit::fit(m.as_ref(), x, y, task, assignment.folds(), v)?;
        let p = cf.predict_oof(x, assignment.folds());
        z.set_column(j, &DVector::from_vec(p));
    }
    let cv_risk: Vec<f64> = (0..members.len())
        .map(|j| {
            z.column(j)
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let weights = simplex_least_squares(&z, y);

    let mut fitted = Vec::with_capacity(members.len());
    for (m, &w) in members.iter().zip(&weights) {
        if w > 0.0 {
            fitted.push(m.fit(x, y, task)?);
        } else {
            fitted.push(Box::new(Zero) as Box<dyn Fitted>);
        }
    }
    Ok(StackModel {
        names,
        members: fitted,
        weights,
        cv_risk,
    })
}

/// Placeholder for members that received zero weight.
struct Zero;

impl Fitted for Zero {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        vec![0.0; x.nrows()]
    }
}
