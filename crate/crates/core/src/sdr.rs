//! Sequential doubly robust estimation of counterfactual outcome
//! trajectories under modified treatment policies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, StackedEstimate, TrajectoryEstimate};
use crate::error::{Error, Result};
use crate::learners::{CrossFit, FoldAssignment, Learner, StackSpec, Task};
use crate::policy::Policy;

fn default_folds() -> usize {
    5
}

fn default_ratio_p_min() -> f64 {
    0.01
}

/// Nuisance estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Cross-fitting folds over individuals; 1 disables cross-fitting.
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability clip applied before converting classifier output to odds.
    #[serde(default = "default_ratio_p_min")]
    pub ratio_p_min: f64,
    #[serde(default = "StackSpec::default_regression")]
    pub regression: StackSpec,
    #[serde(default = "StackSpec::default_classification")]
    pub classification: StackSpec,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            seed: 0,
            ratio_p_min: default_ratio_p_min(),
            regression: StackSpec::default_regression(),
            classification: StackSpec::default_classification(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Config("folds must be at least 1".into()));
        }
        if !(self.ratio_p_min > 0.0 && self.ratio_p_min < 0.5) {
            return Err(Error::Config(format!(
                "ratio_p_min must be in (0, 0.5), got {}",
                self.ratio_p_min
            )));
        }
        for (spec, task) in [
            (&self.regression, Task::Regression),
            (&self.classification, Task::Classification),
        ] {
            if spec.members.is_empty() {
                return Err(Error::Config(format!("{task:?} stack has no members")));
            }
            if spec.members.len() > 1 && spec.folds < 2 {
                return Err(Error::Config("stack folds must be at least 2".into()));
            }
            let learner = spec.build(0);
            if !learner.supports(task) {
                return Err(Error::Config(format!(
                    "{} cannot be used for {task:?}",
                    learner.name()
                )));
            }
        }
        Ok(())
    }

    fn regression_learner(&self) -> Box<dyn Learner> {
        Box::new(self.regression.build(self.seed ^ 0x5eed_0001))
    }

    fn classification_learner(&self) -> Box<dyn Learner> {
        Box::new(self.classification.build(self.seed ^ 0x5eed_0002))
    }
}

/// Out-of-fold outcome-regression predictions at the natural and the
/// intervened exposure.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub natural: Vec<f64>,
    pub intervened: Vec<f64>,
    /// Stack weights averaged over the fold models, when available.
    pub weights: Option<Vec<f64>>,
}

/// Source of the nuisance functions for one policy: density ratios at the
/// natural exposures and sequential outcome regressions.
pub trait NuisanceSource {
    /// `r_s(A_s, H_s)` for every individual (`s` is 1-based).
    fn ratio(&self, s: usize) -> &[f64];

    /// `m_s` fitted to `pseudo` (the current pseudo-outcome for target time
    /// `t`), evaluated at `(A_s, H_s)` and `(A^d_s, H_s)`.
    fn regress(&self, t: usize, s: usize, pseudo: &[f64]) -> Result<RegressionFit>;
}

/// Estimated density ratio and clipping bookkeeping for one time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioDiagnostics {
    pub time: usize,
    pub clipped_low: usize,
    pub clipped_high: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub learner_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RatioFit {
    pub values: Vec<f64>,
    pub diagnostics: RatioDiagnostics,
}

fn average_weights(cf: &CrossFit) -> Option<Vec<f64>> {
    let all: Vec<Vec<f64>> = cf.models().iter().filter_map(|m| m.weights()).collect();
    if all.is_empty() {
        return None;
    }
    let mut avg = vec![0.0; all[0].len()];
    for w in &all {
        for (a, b) in avg.iter_mut().zip(w) {
            *a += b / all.len() as f64;
        }
    }
    Some(avg)
}

/// Estimates `r_s = g^d_s / g_s` with the classification trick: natural
/// exposures (label 0) and intervened exposures (label 1) are stacked into a
/// `2n`-row design over `(a, H_s)`, and the cross-fitted odds of label 1 at
/// the natural rows estimate the ratio. Probabilities are clipped to
/// `[p_min, 1 - p_min]` first.
pub fn estimate_ratio(
    data: &LongitudinalDataset,
    policy: &Policy,
    s: usize,
    classifier: &dyn Learner,
    folds: &FoldAssignment,
    p_min: f64,
) -> Result<RatioFit> {
    let natural = data.exposure(s);
    let intervened = policy.intervene(data, s)?;
    let ratio_err = |msg: String| Error::estimation(format!("ratio s={s}, policy {}", policy.label), msg);

    let n = data.n();
    let xn = data.exposure_design(s, &natural);
    let xd = data.exposure_design(s, &intervened);
    let q = xn.ncols();
    let mut x = DMatrix::zeros(2 * n, q);
    x.view_mut((0, 0), (n, q)).copy_from(&xn);
    x.view_mut((n, 0), (n, q)).copy_from(&xd);
    let labels: Vec<f64> = (0..2 * n).map(|r| if r < n { 0.0 } else { 1.0 }).collect();
    let row_fold = folds.expand(|r| r % n, 2 * n);

    let cf = CrossFit::fit(
        classifier,
        &x,
        &labels,
        Task::Classification,
        &row_fold,
        folds.v(),
    )
    .map_err(|e| ratio_err(e.to_string()))?;
    let p = cf.predict_oof(&xn, folds.folds());

    let (mut low, mut high) = (0, 0);
    let mut values = Vec::with_capacity(n);
    for &pi in &p {
        if !pi.is_finite() {
            return Err(ratio_err(format!("classifier returned {pi}")));
        }
        let c = if pi < p_min {
            low += 1;
            p_min
        } else if pi > 1.0 - p_min {
            high += 1;
            1.0 - p_min
        } else {
            pi
        };
        values.push(c / (1.0 - c));
    }
    let diagnostics = RatioDiagnostics {
        time: s,
        clipped_low: low,
        clipped_high: high,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: crate::data::mean(values.iter().copied()),
        learner_weights: average_weights(&cf),
    };
    Ok(RatioFit { values, diagnostics })
}

/// Nuisances fitted from data with cross-fitted learners.
pub struct EstimatedNuisance<'a> {
    data: &'a LongitudinalDataset,
    regression: Box<dyn Learner>,
    folds: &'a FoldAssignment,
    designs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ratios: Vec<Vec<f64>>,
    ratio_diagnostics: Vec<RatioDiagnostics>,
    identity: bool,
}

impl<'a> EstimatedNuisance<'a> {
    pub fn fit(
        data: &'a LongitudinalDataset,
        policy: &Policy,
        config: &EstimatorConfig,
        folds: &'a FoldAssignment,
    ) -> Result<Self> {
        Self::with_learners(
            data,
            policy,
            config.regression_learner(),
            config.classification_learner().as_ref(),
            folds,
            config.ratio_p_min,
        )
    }

    /// Fits all density ratios up front. For the identity policy the ratios
    /// are exactly 1 and no classifier is fitted.
    pub fn with_learners(
        data: &'a LongitudinalDataset,
        policy: &Policy,
        regression: Box<dyn Learner>,
        classifier: &dyn Learner,
        folds: &'a FoldAssignment,
        p_min: f64,
    ) -> Result<Self> {
        if folds.n() != data.n() {
            return Err(Error::Validation(format!(
                "fold assignment covers {} individuals, dataset has {}",
                folds.n(),
                data.n()
            )));
        }
        let identity = policy.is_identity();
        let mut designs = Vec::with_capacity(data.tau());
        let mut ratios = Vec::with_capacity(data.tau());
        let mut ratio_diagnostics = Vec::with_capacity(data.tau());
        for s in 1..=data.tau() {
            let a = data.exposure(s);
            let xn = data.exposure_design(s, &a);
            let xd = if identity {
                xn.clone()
            } else {
                data.exposure_design(s, &policy.intervene(data, s)?)
            };
            designs.push((xn, xd));
            if identity {
                ratios.push(vec![1.0; data.n()]);
                ratio_diagnostics.push(RatioDiagnostics {
                    time: s,
                    clipped_low: 0,
                    clipped_high: 0,
                    min: 1.0,
                    max: 1.0,
                    mean: 1.0,
                    learner_weights: None,
                });
            } else {
                let fit = estimate_ratio(data, policy, s, classifier, folds, p_min)?;
                ratios.push(fit.values);
                ratio_diagnostics.push(fit.diagnostics);
            }
        }
        Ok(Self {
            data,
            regression,
            folds,
            designs,
            ratios,
            ratio_diagnostics,
            identity,
        })
    }

    pub fn ratio_diagnostics(&self) -> &[RatioDiagnostics] {
        &self.ratio_diagnostics
    }
}

impl NuisanceSource for EstimatedNuisance<'_> {
    fn ratio(&self, s: usize) -> &[f64] {
        &self.ratios[s - 1]
    }

    fn regress(&self, t: usize, s: usize, pseudo: &[f64]) -> Result<RegressionFit> {
        let (xn, xd) = &self.designs[s - 1];
        let cf = CrossFit::fit(
            self.regression.as_ref(),
            xn,
            pseudo,
            Task::Regression,
            self.folds.folds(),
            self.folds.v(),
        )
        .map_err(|e| Error::estimation(format!("regression s={s}, t={t}"), e.to_string()))?;
        let natural = cf.predict_oof(xn, self.folds.folds());
        let intervened = if self.identity {
            natural.clone()
        } else {
            cf.predict_oof(xd, self.folds.folds())
        };
        debug_assert_eq!(natural.len(), self.data.n());
        Ok(RegressionFit {
            natural,
            intervened,
            weights: average_weights(&cf),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionDiagnostics {
    pub target_time: usize,
    pub time: usize,
    pub learner_weights: Option<Vec<f64>>,
}

/// `phi_{1,t}` for every individual plus the per-step nuisance values used
/// to build it.
#[derive(Debug, Clone)]
pub struct SequentialFit {
    pub t: usize,
    pub eif: Vec<f64>,
    /// `m_s` at natural exposures, indexed by `s - 1`.
    pub m_natural: Vec<Vec<f64>>,
    /// `m_s` at intervened exposures, indexed by `s - 1`.
    pub m_intervened: Vec<Vec<f64>>,
    pub diagnostics: Vec<RegressionDiagnostics>,
}

/// Runs the backward recursion for target time `t`: starting from
/// `Y_t`, each step regresses the current pseudo-outcome on `(A_s, H_s)`
/// and updates it to `r_s (pseudo - m_s(A_s)) + m_s(A^d_s)`.
///
/// When `r_s = 1` and `m_s(A^d_s) = m_s(A_s)` for an individual the update is
/// the identity, which keeps the no-intervention case exactly equal to `Y_t`.
pub fn sequential_regression(
    data: &LongitudinalDataset,
    nuisance: &dyn NuisanceSource,
    t: usize,
) -> Result<SequentialFit> {
    if t == 0 || t > data.tau() {
        return Err(Error::Validation(format!(
            "target time {t} out of range 1..={}",
            data.tau()
        )));
    }
    let n = data.n();
    let mut pseudo = data.outcome(t);
    let mut m_natural = vec![Vec::new(); t];
    let mut m_intervened = vec![Vec::new(); t];
    let mut diagnostics = Vec::with_capacity(t);
    for s in (1..=t).rev() {
        let fit = nuisance.regress(t, s, &pseudo)?;
        let r = nuisance.ratio(s);
        if fit.natural.len() != n || fit.intervened.len() != n || r.len() != n {
            return Err(Error::estimation(
                format!("s={s}, t={t}"),
                "nuisance length mismatch",
            ));
        }
        for i in 0..n {
            let (mn, md) = (fit.natural[i], fit.intervened[i]);
            if !(mn.is_finite() && md.is_finite() && r[i].is_finite()) {
                return Err(Error::estimation(
                    format!("s={s}, t={t}"),
                    format!("non-finite nuisance value for individual {}", i + 1),
                ));
            }
            if !(r[i] == 1.0 && md == mn) {
                pseudo[i] = r[i] * (pseudo[i] - mn) + md;
            }
            if !pseudo[i].is_finite() {
                return Err(Error::estimation(
                    format!("s={s}, t={t}"),
                    format!("non-finite pseudo-outcome for individual {}", i + 1),
                ));
            }
        }
        diagnostics.push(RegressionDiagnostics {
            target_time: t,
            time: s,
            learner_weights: fit.weights,
        });
        m_natural[s - 1] = fit.natural;
        m_intervened[s - 1] = fit.intervened;
    }
    diagnostics.reverse();
    Ok(SequentialFit {
        t,
        eif: pseudo,
        m_natural,
        m_intervened,
        diagnostics,
    })
}

/// Assembles `phi_{1,t}` from stored nuisances by the explicit sum
/// `sum_p (prod_{k<=p} r_k)(next_p - m_p(A_p)) + m_1(A^d_1)`, where
/// `next_p = m_{p+1}(A^d_{p+1})` for `p < t` and `Y_t` for `p = t`.
/// Agrees with the recursion in [`sequential_regression`] up to rounding.
pub fn assemble_eif(
    data: &LongitudinalDataset,
    nuisance: &dyn NuisanceSource,
    fit: &SequentialFit,
) -> Vec<f64> {
    let t = fit.t;
    let y = data.outcome(t);
    (0..data.n())
        .map(|i| {
            let mut phi = fit.m_intervened[0][i];
            let mut cum = 1.0;
            for p in 1..=t {
                cum *= nuisance.ratio(p)[i];
                let next = if p < t { fit.m_intervened[p][i] } else { y[i] };
                phi += cum * (next - fit.m_natural[p - 1][i]);
            }
            phi
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryDiagnostics {
    pub policy: String,
    pub ratios: Vec<RatioDiagnostics>,
    pub regressions: Vec<RegressionDiagnostics>,
    /// Times whose estimate falls outside the observed outcome range.
    pub out_of_range: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryFit {
    pub estimate: TrajectoryEstimate,
    pub diagnostics: TrajectoryDiagnostics,
}

fn check_range(data: &LongitudinalDataset, est: &TrajectoryEstimate) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 1..=data.tau() {
        let y = data.outcome(t);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let th = est.theta_hat[t - 1];
        if th < lo || th > hi {
            log::info!(
                "estimate {th:.4} at time {t} under {} lies outside the observed outcome range [{lo:.4}, {hi:.4}]",
                est.label
            );
            out.push(t);
        }
    }
    out
}

/// Runs the recursion for every `t = 1..tau` against a given nuisance source.
pub fn trajectory_from_source(
    data: &LongitudinalDataset,
    label: &str,
    nuisance: &dyn NuisanceSource,
) -> Result<(TrajectoryEstimate, Vec<RegressionDiagnostics>)> {
    let mut eif = DMatrix::zeros(data.n(), data.tau());
    let mut diags = Vec::new();
    for t in 1..=data.tau() {
        let fit = sequential_regression(data, nuisance, t)?;
        eif.set_column(t - 1, &nalgebra::DVector::from_vec(fit.eif));
        diags.extend(fit.diagnostics);
    }
    Ok((TrajectoryEstimate::from_eif(label, eif), diags))
}

fn fit_trajectory(
    data: &LongitudinalDataset,
    policy: &Policy,
    config: &EstimatorConfig,
    folds: &FoldAssignment,
) -> Result<TrajectoryFit> {
    if policy.is_identity() {
        let estimate = TrajectoryEstimate::from_eif(policy.label.clone(), data.outcomes().clone());
        let out_of_range = check_range(data, &estimate);
        return Ok(TrajectoryFit {
            estimate,
            diagnostics: TrajectoryDiagnostics {
                policy: policy.label.clone(),
                ratios: Vec::new(),
                regressions: Vec::new(),
                out_of_range,
            },
        });
    }
    let nuisance = EstimatedNuisance::fit(data, policy, config, folds)?;
    let (estimate, regressions) = trajectory_from_source(data, &policy.label, &nuisance)?;
    let out_of_range = check_range(data, &estimate);
    Ok(TrajectoryFit {
        estimate,
        diagnostics: TrajectoryDiagnostics {
            policy: policy.label.clone(),
            ratios: nuisance.ratio_diagnostics().to_vec(),
            regressions,
            out_of_range,
        },
    })
}

/// Estimates `theta_1..theta_tau` under `policy`. The identity policy
/// returns the outcome columns directly.
pub fn estimate_trajectory(
    data: &LongitudinalDataset,
    policy: &Policy,
    config: &EstimatorConfig,
) -> Result<TrajectoryFit> {
    config.validate()?;
    let folds = FoldAssignment::new(data.n(), config.folds, config.seed)?;
    fit_trajectory(data, policy, config, &folds)
}

#[derive(Debug, Clone)]
pub struct PairFit {
    pub stacked: StackedEstimate,
    pub prime: TrajectoryDiagnostics,
    pub dprime: TrajectoryDiagnostics,
}

/// Estimates both trajectories on one shared fold assignment and stacks them
/// as `(theta'_1..theta'_tau, theta''_1..theta''_tau)`.
pub fn estimate_pair(
    data: &LongitudinalDataset,
    policy_prime: &Policy,
    policy_dprime: &Policy,
    config: &EstimatorConfig,
) -> Result<PairFit> {
    config.validate()?;
    let folds = FoldAssignment::new(data.n(), config.folds, config.seed)?;
    let a = fit_trajectory(data, policy_prime, config, &folds)?;
    let b = fit_trajectory(data, policy_dprime, config, &folds)?;
    Ok(PairFit {
        stacked: StackedEstimate::stack(&a.estimate, &b.estimate)?,
        prime: a.diagnostics,
        dprime: b.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Fitted, LearnerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Small linear-Gaussian panel: L_t ~ N, A_t ~ N(mu_t(h), 1), Y_t linear.
    fn gaussian_panel(n: usize, tau: usize, seed: u64) -> (LongitudinalDataset, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Vec::new();
        let mut a = DMatrix::zeros(n, tau);
        let mut y = DMatrix::zeros(n, tau);
        let mut mu = vec![vec![0.0; n]; tau];
        for t in 0..tau {
            let mut lt = DMatrix::zeros(n, 1);
            for i in 0..n {
                let prev_a = if t > 0 { a[(i, t - 1)] } else { 0.0 };
                lt[(i, 0)] = 0.5 * prev_a + normal(&mut rng);
                mu[t][i] = 1.0 - 0.5 * lt[(i, 0)] + 0.2 * prev_a;
                a[(i, t)] = mu[t][i] + normal(&mut rng);
                y[(i, t)] = 2.0 + lt[(i, 0)] + 1.5 * a[(i, t)] + normal(&mut rng);
            }
            l.push(lt);
        }
        let data = LongitudinalDataset::new(l, a, y, None).unwrap();
        (data, mu)
    }

    fn lean_config() -> EstimatorConfig {
        EstimatorConfig {
            regression: StackSpec {
                members: vec![LearnerSpec::Ols { quadratic: false }],
                folds: 5,
            },
            classification: StackSpec {
                members: vec![LearnerSpec::Logistic {
                    quadratic: false,
                    ridge: 1e-4,
                    p_min: 1e-3,
                }],
                folds: 5,
            },
            ..EstimatorConfig::default()
        }
    }

    /// Returns huge pseudo-random predictions whatever it is trained on.
    struct Corrupted;
    struct CorruptedModel;
    impl Fitted for CorruptedModel {
        fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
            (0..x.nrows())
                .map(|i| 1e6 * ((i as f64 * 0.7 + x[(i, 0)]).sin()))
                .collect()
        }
    }
    impl Learner for Corrupted {
        fn name(&self) -> String {
            "corrupted".into()
        }
        fn supports(&self, _task: Task) -> bool {
            true
        }
        fn fit(&self, _x: &DMatrix<f64>, _y: &[f64], _task: Task) -> Result<Box<dyn Fitted>> {
            Ok(Box::new(CorruptedModel))
        }
    }

    #[test]
    fn identity_general_path_is_exact_with_corrupted_learners() {
        let (data, _) = gaussian_panel(200, 3, 1);
        let folds = FoldAssignment::new(200, 5, 2).unwrap();
        let nuis = EstimatedNuisance::with_learners(
            &data,
            &Policy::identity(),
            Box::new(Corrupted),
            &Corrupted,
            &folds,
            0.01,
        )
        .unwrap();
        for t in 1..=3 {
            let fit = sequential_regression(&data, &nuis, t).unwrap();
            assert_eq!(fit.eif, data.outcome(t));
        }
        // and the shortcut agrees with the general path
        let short = estimate_trajectory(&data, &Policy::identity(), &lean_config()).unwrap();
        let (general, _) = trajectory_from_source(&data, "identity", &nuis).unwrap();
        assert_eq!(short.estimate.eif, general.eif);
        for t in 1..=3 {
            let m = crate::data::mean(data.outcome(t));
            assert!((short.estimate.theta_hat[t - 1] - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_time_matches_direct_aipw() {
        let (data, _) = gaussian_panel(300, 1, 3);
        let cfg = lean_config();
        let policy = Policy::shift(1.0);
        let folds = FoldAssignment::new(300, 5, 0).unwrap();
        let nuis = EstimatedNuisance::fit(&data, &policy, &cfg, &folds).unwrap();
        let fit = sequential_regression(&data, &nuis, 1).unwrap();

        // direct one-step form with independently fitted nuisances
        let clf = cfg.classification_learner();
        let ratio = estimate_ratio(&data, &policy, 1, clf.as_ref(), &folds, 0.01)
            .unwrap()
            .values;
        let reg = cfg.regression_learner();
        let a = data.exposure(1);
        let ad = policy.intervene(&data, 1).unwrap();
        let xn = data.exposure_design(1, &a);
        let xd = data.exposure_design(1, &ad);
        let y = data.outcome(1);
        let cf = CrossFit::fit(reg.as_ref(), &xn, &y, Task::Regression, folds.folds(), 5).unwrap();
        let mn = cf.predict_oof(&xn, folds.folds());
        let md = cf.predict_oof(&xd, folds.folds());
        for i in 0..300 {
            let direct = ratio[i] * (y[i] - mn[i]) + md[i];
            assert!((fit.eif[i] - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn recursion_matches_explicit_sum() {
        let (data, _) = gaussian_panel(400, 3, 4);
        let folds = FoldAssignment::new(400, 5, 1).unwrap();
        let nuis = EstimatedNuisance::fit(&data, &Policy::shift(1.0), &lean_config(), &folds).unwrap();
        for t in 1..=3 {
            let fit = sequential_regression(&data, &nuis, t).unwrap();
            let sum = assemble_eif(&data, &nuis, &fit);
            for (a, b) in fit.eif.iter().zip(&sum) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn cumulative_ratio_products_match_recomputation() {
        let (data, _) = gaussian_panel(200, 3, 5);
        let folds = FoldAssignment::new(200, 5, 1).unwrap();
        let nuis = EstimatedNuisance::fit(&data, &Policy::shift(1.0), &lean_config(), &folds).unwrap();
        for i in 0..200 {
            let mut cum = 1.0;
            for p in 1..=3 {
                cum *= nuis.ratio(p)[i];
                let fresh: f64 = (1..=p).map(|k| nuis.ratio(k)[i]).product();
                assert!((cum - fresh).abs() <= 1e-12 * fresh);
            }
        }
    }

    #[test]
    fn identity_ratio_is_near_one() {
        let (data, _) = gaussian_panel(2000, 1, 6);
        let folds = FoldAssignment::new(2000, 5, 1).unwrap();
        let clf = lean_config().classification_learner();
        let fit = estimate_ratio(&data, &Policy::identity(), 1, clf.as_ref(), &folds, 0.01).unwrap();
        let worst = fit.values.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.05, "{worst}");
    }

    #[test]
    fn gaussian_shift_ratio_matches_closed_form() {
        let (data, mu) = gaussian_panel(5000, 1, 7);
        let folds = FoldAssignment::new(5000, 5, 1).unwrap();
        let clf = lean_config().classification_learner();
        let fit = estimate_ratio(&data, &Policy::shift(1.0), 1, clf.as_ref(), &folds, 0.01).unwrap();
        let a = data.exposure(1);
        // intervened exposure a - 1 has density g(a + 1 | h)
        let mut rel: Vec<f64> = (0..5000)
            .map(|i| {
                let z = a[i] - mu[0][i];
                let truth = (-(z + 1.0).powi(2) / 2.0 + z * z / 2.0).exp();
                (fit.values[i] - truth).abs() / truth
            })
            .collect();
        rel.sort_by(f64::total_cmp);
        assert!(rel[2500] <= 0.15, "median relative error {}", rel[2500]);
    }

    #[test]
    fn extreme_separation_is_clipped() {
        let (data, _) = gaussian_panel(500, 1, 8);
        let folds = FoldAssignment::new(500, 5, 1).unwrap();
        let clf = lean_config().classification_learner();
        let fit = estimate_ratio(&data, &Policy::shift(50.0), 1, clf.as_ref(), &folds, 0.01).unwrap();
        let (lo, hi) = (0.01 / 0.99, 0.99 / 0.01);
        assert!(fit.values.iter().all(|&r| r >= lo - 1e-12 && r <= hi + 1e-12));
        assert!(fit.diagnostics.clipped_low + fit.diagnostics.clipped_high > 0);
    }

    #[test]
    fn pair_blocks_and_determinism() {
        let (data, _) = gaussian_panel(300, 2, 9);
        let cfg = lean_config();
        let id = Policy::identity();
        let sh = Policy::shift(1.0);
        let same = estimate_pair(&data, &id, &id, &cfg).unwrap().stacked;
        assert_eq!(same.theta_hat[..2], same.theta_hat[2..]);

        let a = estimate_pair(&data, &id, &sh, &cfg).unwrap().stacked;
        let b = estimate_pair(&data, &id, &sh, &cfg).unwrap().stacked;
        assert_eq!(a, b);
        for t in 1..=2 {
            assert_eq!(a.theta_hat[t - 1], crate::data::mean(data.outcome(t)));
        }
        for (j, col) in a.eif.column_iter().enumerate() {
            let m = crate::data::mean(col.iter().copied());
            assert!((m - a.theta_hat[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn default_stack_runs_end_to_end() {
        let (data, _) = gaussian_panel(150, 2, 10);
        let fit = estimate_trajectory(&data, &Policy::shift(1.0), &EstimatorConfig::default()).unwrap();
        assert_eq!(fit.estimate.theta_hat.len(), 2);
        assert!(fit.estimate.theta_hat.iter().all(|v| v.is_finite()));
        let w = fit.diagnostics.regressions[0].learner_weights.as_ref().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // a unit shift down with slope 1.5 lowers Y_1 by about 1.5
        let obs = crate::data::mean(data.outcome(1));
        assert!((obs - fit.estimate.theta_hat[0] - 1.5).abs() < 0.6);
    }

    #[test]
    fn invalid_config_rejected() {
        let (data, _) = gaussian_panel(50, 1, 11);
        let mut cfg = lean_config();
        cfg.ratio_p_min = 0.7;
        assert!(matches!(
            estimate_trajectory(&data, &Policy::shift(1.0), &cfg),
            Err(Error::Config(_))
        ));
        let mut cfg = lean_config();
        cfg.folds = 51;
        assert!(estimate_trajectory(&data, &Policy::shift(1.0), &cfg).is_err());
    }
}
