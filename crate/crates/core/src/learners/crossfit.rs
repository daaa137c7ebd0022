use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Fitted, Learner, Task};
use crate::error::{Error, Result};

/// Balanced random partition of `n` individuals into `v` folds.
/// `v = 1` means no cross-fitting: the single model is trained and
/// evaluated on everyone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    v: usize,
    fold: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(n: usize, v: usize, seed: u64) -> Result<Self> {
        if v == 0 {
            return Err(Error::Config("number of folds must be at least 1".into()));
        }
        // every fold must be nonempty and every training set must keep at
        // least two individuals
        if v > 1 && (v > n || n - n.div_ceil(v) < 2) {
            return Err(Error::Config(format!(
                "{v} folds cannot be formed from {n} individuals"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut fold = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            fold[i] = rank % v;
        }
        Ok(Self { v, fold })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn n(&self) -> usize {
        self.fold.len()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold[i]
    }

    pub fn folds(&self) -> &[usize] {
        &self.fold
    }

    /// Fold labels for a design whose rows map to individuals through
    /// `individual` (e.g. the 2n rows of a stacked classification problem).
    pub fn expand(&self, individual: impl Fn(usize) -> usize, rows: usize) -> Vec<usize> {
        (0..rows).map(|r| self.fold[individual(r)]).collect()
    }
}

/// One model per fold, each trained without that fold's rows.
pub struct CrossFit {
    models: Vec<Box<dyn Fitted>>,
    v: usize,
}

impl CrossFit {
    /// Fits with per-row fold labels in `0..v`.
    pub fn fit(
        learner: &dyn Learner,
        x: &DMatrix<f64>,
        y: &[f64],
        task: Task,
        row_fold: &[usize],
        v: usize,
    ) -> Result<Self> {
        if row_fold.len() != x.nrows() || y.len() != x.nrows() {
            return Err(Error::Validation(
                "cross-fit fold labels do not match design".into(),
            ));
        }
        if v == 1 {
            return Ok(Self {
                models: vec![learner.fit(x, y, task)?],
                v,
            });
        }
        let mut models = Vec::with_capacity(v);
        for k in 0..v {
            let train: Vec<usize> = (0..x.nrows()).filter(|&r| row_fold[r] != k).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            models.push(learner.fit(&xt, &yt, task)?);
        }
        Ok(Self { models, v })
    }

    pub fn model(&self, k: usize) -> &dyn Fitted {
        if self.v == 1 {
            self.models[0].as_ref()
        } else {
            self.models[k].as_ref()
        }
    }

    pub fn models(&self) -> &[Box<dyn Fitted>] {
        &self.models
    }

    /// Predicts each row of `x` with the model that did not see its fold.
    pub fn predict_oof(&self, x: &DMatrix<f64>, row_fold: &[usize]) -> Vec<f64> {
        if self.v == 1 {
            return self.models[0].predict(x);
        }
        let mut out = vec![0.0; x.nrows()];
        for k in 0..self.v {
            let rows: Vec<usize> = (0..x.nrows()).filter(|&r| row_fold[r] == k).collect();
            if rows.is_empty() {
                continue;
            }
            let pred = self.models[k].predict(&x.select_rows(&rows));
            for (r, p) in rows.into_iter().zip(pred) {
                out[r] = p;
            }
        }
        out
    }
}

/// Cross-fitted out-of-fold predictions with one row per individual.
pub fn crossfit(
    learner: &dyn Learner,
    x: &DMatrix<f64>,
    y: &[f64],
    task: Task,
    folds: &FoldAssignment,
) -> Result<Vec<f64>> {
    let cf = CrossFit::fit(learner, x, y, task, folds.folds(), folds.v())?;
    Ok(cf.predict_oof(x, folds.folds()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerSpec;

    #[test]
    fn folds_balanced_and_reproducible() {
        let a = FoldAssignment::new(103, 5, 42).unwrap();
        let b = FoldAssignment::new(103, 5, 42).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 5];
        for &f in a.folds() {
            counts[f] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20 || c == 21));
        assert_ne!(a, FoldAssignment::new(103, 5, 43).unwrap());
    }

    #[test]
    fn too_few_individuals_rejected() {
        assert!(FoldAssignment::new(4, 5, 1).is_err());
        assert!(FoldAssignment::new(2, 2, 1).is_err());
        assert!(FoldAssignment::new(3, 3, 1).is_ok());
        assert!(FoldAssignment::new(2, 1, 1).is_ok());
    }

    #[test]
    fn out_of_fold_predictions_exclude_own_row() {
        // intercept-only OLS: the out-of-fold prediction is the mean of the
        // other folds' targets
        let n = 20;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let folds = FoldAssignment::new(n, 4, 7).unwrap();
        let learner = LearnerSpec::Ols { quadratic: false }.build();
        let pred = crossfit(learner.as_ref(), &x, &y, Task::Regression, &folds).unwrap();
        for i in 0..n {
            let others: Vec<f64> = (0..n)
                .filter(|&j| folds.fold_of(j) != folds.fold_of(i))
                .map(|j| y[j])
                .collect();
            let m = others.iter().sum::<f64>() / others.len() as f64;
            assert!((pred[i] - m).abs() < 1e-10);
        }
    }

    #[test]
    fn single_fold_is_plain_fit() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 5.0]);
        let y = [1.0, 0.5, 2.0, 2.5, 4.0];
        let learner = LearnerSpec::Ols { quadratic: false }.build();
        let folds = FoldAssignment::new(5, 1, 0).unwrap();
        let cf = crossfit(learner.as_ref(), &x, &y, Task::Regression, &folds).unwrap();
        let plain = learner.fit(&x, &y, Task::Regression).unwrap().predict(&x);
        assert_eq!(cf, plain);
    }

    #[test]
    fn leave_one_out_matches_hat_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 3.0);
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] - 2.0 * x[(i, 1)] + rng.random::<f64>())
            .collect();
        let folds = FoldAssignment::new(n, n, 4).unwrap();
        let learner = LearnerSpec::Ols { quadratic: false }.build();
        let loo = crossfit(learner.as_ref(), &x, &y, Task::Regression, &folds).unwrap();

        // y_i - e_i / (1 - h_ii) with H = X (X'X)^{-1} X'
        let mut xd = DMatrix::from_element(n, 3, 1.0);
        xd.view_mut((0, 1), (n, 2)).copy_from(&x);
        let hat = &xd * (xd.transpose() * &xd).try_inverse().unwrap() * xd.transpose();
        let yv = nalgebra::DVector::from_column_slice(&y);
        let resid = &yv - &hat * &yv;
        for i in 0..n {
            let oracle = y[i] - resid[i] / (1.0 - hat[(i, i)]);
            assert!((loo[i] - oracle).abs() < 1e-8);
        }
    }
}
