use nalgebra::{DMatrix, DVector};

use super::features::{Expansion, FeatureMap};
use super::{Fitted, Learner, Task};
use crate::error::{Error, Result};

pub(crate) struct LogisticLearner {
    pub expansion: Expansion,
    pub ridge: f64,
    pub p_min: f64,
}

impl Learner for LogisticLearner {
    fn name(&self) -> String {
        match self.expansion {
            Expansion::None => "logistic".into(),
            Expansion::QuadraticWithInteractions => "logistic_quadratic".into(),
        }
    }

    fn supports(&self, task: Task) -> bool {
        task == Task::Classification
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], task: Task) -> Result<Box<dyn Fitted>> {
        if task != Task::Classification {
            return Err(Error::Config(
                "logistic regression only supports classification".into(),
            ));
        }
        Ok(Box::new(fit_logistic(
            x,
            y,
            self.expansion,
            self.ridge,
            self.p_min,
        )?))
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    map: FeatureMap,
    beta: DVector<f64>,
    p_min: f64,
}

impl Fitted for LogisticModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (self.map.transform(x) * &self.beta)
            .iter()
            .map(|&eta| sigmoid(eta).clamp(self.p_min, 1.0 - self.p_min))
            .collect()
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Penalized negative log-likelihood per observation.
fn objective(z: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = z * beta;
    let mut nll = 0.0;
    for (i, &e) in eta.iter().enumerate() {
        // log(1 + exp(e)) - y e, computed stably
        let softplus = if e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        nll += softplus - y[i] * e;
    }
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    nll / y.len() as f64 + 0.5 * ridge * pen
}

/// Ridge-stabilized logistic regression fitted by damped Newton (IRLS).
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    expansion: Expansion,
    ridge: f64,
    p_min: f64,
) -> Result<LogisticModel> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Validation(
            "logistic design and label lengths differ".into(),
        ));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("logistic labels must be 0 or 1".into()));
    }
    let map = FeatureMap::fit(x, expansion);
    let z = map.transform(x);
    let (n, p) = (z.nrows(), z.ncols());
    let nf = n as f64;

    let ybar = y.iter().sum::<f64>() / nf;
    let mut beta = DVector::zeros(p);
    beta[0] = (ybar.clamp(1e-6, 1.0 - 1e-6) / (1.0 - ybar.clamp(1e-6, 1.0 - 1e-6))).ln();
    let mut obj = objective(&z, y, &beta, ridge);

    for _ in 0..100 {
        let eta = &z * &beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut wz = z.clone();
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let r = y[i] - mu;
            for j in 0..p {
                grad[j] += z[(i, j)] * r;
                wz[(i, j)] *= w;
            }
        }
        hess.gemm_tr(1.0, &z, &wz, 0.0);
        hess /= nf;
        grad /= nf;
        for j in 1..p {
            grad[j] -= ridge * beta[j];
            hess[(j, j)] += ridge;
        }
        hess[(0, 0)] += 1e-12;
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(Error::Numerical("logistic Hessian not positive definite".into())),
        };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            let cobj = objective(&z, y, &cand, ridge);
            if cobj <= obj + 1e-15 {
                beta = cand;
                let improvement = obj - cobj;
                obj = cobj;
                accepted = true;
                if step.amax() * scale < 1e-8 || improvement < 1e-14 {
                    return Ok(LogisticModel { map, beta, p_min });
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LogisticModel { map, beta, p_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_logit_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = sigmoid(0.5 + 1.5 * x[(i, 0)]);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let m = fit_logistic(&x, &y, Expansion::None, 0.0, 1e-6).unwrap();
        let probe = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = m.predict(&probe);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert!((logit(p[0]) - 0.5).abs() < 0.08);
        assert!((logit(p[1]) - logit(p[0]) - 1.5).abs() < 0.1);
    }

    #[test]
    fn separable_data_stays_clipped() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic(&x, &y, Expansion::None, 1e-4, 1e-3).unwrap();
        for p in m.predict(&x) {
            assert!((1e-3..=1.0 - 1e-3).contains(&p));
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(fit_logistic(&x, &[0.0, 2.0], Expansion::None, 0.0, 1e-3).is_err());
    }
}
