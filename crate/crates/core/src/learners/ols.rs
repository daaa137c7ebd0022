use nalgebra::{DMatrix, DVector};

use super::features::{Expansion, FeatureMap};
use super::{Fitted, Learner, Task};
use crate::error::{Error, Result};

pub(crate) struct OlsLearner {
    pub expansion: Expansion,
}

impl Learner for OlsLearner {
    fn name(&self) -> String {
        match self.expansion {
            Expansion::None => "ols".into(),
            Expansion::QuadraticWithInteractions => "ols_quadratic".into(),
        }
    }

    fn supports(&self, task: Task) -> bool {
        task == Task::Regression
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], task: Task) -> Result<Box<dyn Fitted>> {
        if task != Task::Regression {
            return Err(Error::Config("OLS only supports regression".into()));
        }
        Ok(Box::new(fit_ols(x, y, self.expansion)?))
    }
}

/// Least-squares fit on standardized (and optionally second-order expanded)
/// features with an intercept.
#[derive(Debug, Clone)]
pub struct OlsModel {
    map: FeatureMap,
    beta: DVector<f64>,
    ridge: f64,
}

impl OlsModel {
    /// Ridge penalty that was needed, 0 for a plain least-squares solve.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Intercept and per-column slopes on the original feature scale.
    /// `None` for expanded fits. Dropped constant columns get slope 0.
    pub fn coefficients(&self, ncols: usize) -> Option<(f64, Vec<f64>)> {
        if self.map.width() != 1 + self.map.kept().len() {
            return None;
        }
        let mut slopes = vec![0.0; ncols];
        let mut intercept = self.beta[0];
        for (k, &j) in self.map.kept().iter().enumerate() {
            let b = self.beta[1 + k] / self.map.scales()[k];
            slopes[j] = b;
            intercept -= b * self.map.means()[k];
        }
        Some((intercept, slopes))
    }
}

impl Fitted for OlsModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (self.map.transform(x) * &self.beta).iter().copied().collect()
    }
}

pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], expansion: Expansion) -> Result<OlsModel> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Validation(format!(
            "OLS design has {} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let map = FeatureMap::fit(x, expansion);
    let z = map.transform(x);
    let yv = DVector::from_column_slice(y);
    let gram = z.tr_mul(&z);
    let rhs = z.tr_mul(&yv);
    let p = gram.nrows();

    if z.nrows() > p {
        if let Some(chol) = gram.clone().cholesky() {
            let beta = chol.solve(&rhs);
            if beta.iter().all(|b| b.is_finite()) {
                return Ok(OlsModel {
                    map,
                    beta,
                    ridge: 0.0,
                });
            }
        }
    }
    let trace: f64 = (1..p).map(|i| gram[(i, i)]).sum();
    let lambda = 1e-6 * (trace / (p.max(2) - 1) as f64).max(1e-12);
    let mut penalized = gram;
    for i in 1..p {
        penalized[(i, i)] += lambda;
    }
    let chol = penalized
        .cholesky()
        .ok_or_else(|| Error::Numerical("OLS normal equations singular after ridge".into()))?;
    let beta = chol.solve(&rhs);
    log::debug!(
        "OLS used ridge fallback lambda = {lambda:.3e} (n = {}, p = {p})",
        z.nrows()
    );
    Ok(OlsModel {
        map,
        beta,
        ridge: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_fit() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let m = fit_ols(&x, &[1.0, 2.0, 3.0], Expansion::None).unwrap();
        for v in m.predict(&x) {
            assert!((v - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_linear_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 3, |_, _| rng.random::<f64>() * 10.0);
        let y: Vec<f64> = (0..40)
            .map(|i| 1.5 - 2.0 * x[(i, 0)] + 0.25 * x[(i, 1)] + 7.0 * x[(i, 2)])
            .collect();
        for exp in [Expansion::None, Expansion::QuadraticWithInteractions] {
            let m = fit_ols(&x, &y, exp).unwrap();
            let pred = m.predict(&x);
            let err = pred
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-10, "{exp:?}: {err}");
        }
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() + rng.random::<f64>()).collect();
        let m = fit_ols(&x, &y, Expansion::None).unwrap();
        let (b0, b) = m.coefficients(4).unwrap();

        // oracle: solve [1 X]'[1 X] beta = [1 X]' y directly
        let mut xd = DMatrix::from_element(n, 5, 1.0);
        xd.view_mut((0, 1), (n, 4)).copy_from(&x);
        let yv = DVector::from_column_slice(&y);
        let beta = (xd.transpose() * &xd).try_inverse().unwrap() * (xd.transpose() * yv);
        assert!((beta[0] - b0).abs() < 1e-8);
        for j in 0..4 {
            assert!((beta[j + 1] - b[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn underdetermined_falls_back_to_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let m = fit_ols(&x, &y, Expansion::QuadraticWithInteractions).unwrap();
        assert!(m.ridge() > 0.0);
        assert!(m.predict(&x).iter().all(|v| v.is_finite()));
    }
}
