use nalgebra::DMatrix;

use super::{slot_a, slot_l, slot_y, DgpParams, StructuralModel};
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::sdr::{NuisanceSource, RegressionFit};

/// `constant + sum_k coefs[k] * x[k]` over the variable slots.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub constant: f64,
    pub coefs: Vec<f64>,
}

impl LinearForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coefs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// True nuisances of the linear-Gaussian process for the policy
/// `a -> a + shift` at every time.
pub struct OracleNuisance {
    shift: f64,
    model: StructuralModel,
    /// Slot values per individual, `n x 3 tau`.
    values: DMatrix<f64>,
    ratios: Vec<Vec<f64>>,
}

impl OracleNuisance {
    pub fn new(data: &LongitudinalDataset, params: &DgpParams, shift: f64) -> Result<Self> {
        let params = params.clone().with_gamma()?;
        let tau = params.tau();
        if data.tau() != tau || data.covariate_counts().iter().any(|&p| p != 1) {
            return Err(Error::Validation(
                "oracle nuisances need data shaped like the simulation (one covariate per time)".into(),
            ));
        }
        let model = StructuralModel::new(&params, params.gamma.as_deref().unwrap_or_default());
        let n = data.n();
        let mut values = DMatrix::zeros(n, 3 * tau);
        for t in 1..=tau {
            values.set_column(slot_l(t), &data.covariates(t).column(0));
            values.set_column(slot_a(t), &data.exposures().column(t - 1));
            values.set_column(slot_y(t), &data.outcomes().column(t - 1));
        }
        // A^d = A + c has density g(a - c | h), so r = exp(c (a - mu) - c^2 / 2)
        let ratios = (1..=tau)
            .map(|s| {
                let eq = &model.equations[slot_a(s)];
                (0..n)
                    .map(|i| {
                        let mut mu = eq.constant;
                        for &(p, c) in &eq.parents {
                            mu += c * values[(i, p)];
                        }
                        let a = values[(i, slot_a(s))];
                        (shift * (a - mu) - 0.5 * shift * shift).exp()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            shift,
            model,
            values,
            ratios,
        })
    }

    /// `m_s` for target `t` as a linear form over slots up to `A_s`:
    /// the mean of `Y_t` when exposures after time `s` follow the policy,
    /// given `A_s` and the history before it.
    pub fn regression_form(&self, t: usize, s: usize) -> LinearForm {
        let width = 3 * self.model.tau;
        let mut coefs = vec![0.0; width];
        coefs[slot_y(t)] = 1.0;
        let mut constant = 0.0;
        for slot in (slot_a(s) + 1..width).rev() {
            let w = coefs[slot];
            if w == 0.0 {
                continue;
            }
            coefs[slot] = 0.0;
            let eq = &self.model.equations[slot];
            constant += w * eq.constant;
            if slot % 3 == 1 {
                constant += w * self.shift;
            }
            for &(p, c) in &eq.parents {
                coefs[p] += w * c;
            }
        }
        LinearForm { constant, coefs }
    }
}

impl NuisanceSource for OracleNuisance {
    fn ratio(&self, s: usize) -> &[f64] {
        &self.ratios[s - 1]
    }

    fn regress(&self, t: usize, s: usize, _pseudo: &[f64]) -> Result<RegressionFit> {
        let form = self.regression_form(t, s);
        let n = self.values.nrows();
        let mut natural = Vec::with_capacity(n);
        let mut intervened = Vec::with_capacity(n);
        let mut row = vec![0.0; self.values.ncols()];
        for i in 0..n {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.values[(i, k)];
            }
            natural.push(form.eval(&row));
            row[slot_a(s)] += self.shift;
            intervened.push(form.eval(&row));
        }
        Ok(RegressionFit {
            natural,
            intervened,
            weights: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdr::trajectory_from_source;
    use crate::simulation::{analytic_truth, generate_seeded, STUDY_SHIFT};

    #[test]
    fn last_step_form_is_the_outcome_equation() {
        let p = DgpParams::calibrated(1.0).unwrap();
        let data = generate_seeded(&p, 10, 1).unwrap();
        let o = OracleNuisance::new(&data, &p, STUDY_SHIFT).unwrap();
        let f = o.regression_form(3, 3);
        let eq = &o.model.equations[slot_y(3)];
        assert_eq!(f.constant, eq.constant);
        for &(slot, c) in &eq.parents {
            assert_eq!(f.coefs[slot], c);
        }
    }

    #[test]
    fn outer_expectation_of_first_form_is_the_truth() {
        // averaging m_1 at intervened exposures over the natural L_1 law
        // gives theta''_t: plug in E[L_1] since the form is linear
        let p = DgpParams::calibrated(0.5).unwrap();
        let data = generate_seeded(&p, 10, 2).unwrap();
        let o = OracleNuisance::new(&data, &p, STUDY_SHIFT).unwrap();
        let truth = analytic_truth(&p).unwrap();
        for t in 1..=4 {
            let f = o.regression_form(t, 1);
            let mut x = vec![0.0; 12];
            x[slot_l(1)] = 1.0;
            x[slot_a(1)] = 8.5 - 1.0 + STUDY_SHIFT;
            assert!((f.eval(&x) - truth.theta_dprime[t - 1]).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_estimates_are_close_to_truth() {
        let p = DgpParams::calibrated(1.0).unwrap();
        let data = generate_seeded(&p, 4000, 3).unwrap();
        let o = OracleNuisance::new(&data, &p, STUDY_SHIFT).unwrap();
        let (est, _) = trajectory_from_source(&data, "shift", &o).unwrap();
        let truth = analytic_truth(&p).unwrap();
        for t in 0..4 {
            let col = est.eif.column(t);
            let sd = (col.iter().map(|v| (v - est.theta_hat[t]).powi(2)).sum::<f64>() / 3999.0).sqrt();
            assert!((est.theta_hat[t] - truth.theta_dprime[t]).abs() < 4.0 * sd / 4000f64.sqrt());
        }
    }
}
