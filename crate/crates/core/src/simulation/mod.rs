//! Linear-Gaussian longitudinal data generating process with a calibrated
//! outcome scale, exact mean propagation for the true trajectories, oracle
//! nuisances, and a replication study runner.

mod oracle;
mod study;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};

pub use oracle::{LinearForm, OracleNuisance};
pub use study::{
    replicate_seed, run_study, CellSummary, ReplicateRecord, StudyConfig, StudyGrid, StudyOutput,
};

fn default_alpha() -> f64 {
    -2.0
}

fn default_v() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 6.0]
}

/// Parameters of the data generating process. `v` fixes `tau = v.len()`.
/// `gamma = None` means "calibrate before use".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_v")]
    pub v: Vec<f64>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: 0.0,
            v: default_v(),
            gamma: None,
        }
    }
}

impl DgpParams {
    pub fn tau(&self) -> usize {
        self.v.len()
    }

    /// Default parameters at the given `beta`, with calibrated `gamma`.
    pub fn calibrated(beta: f64) -> Result<Self> {
        let mut p = Self {
            beta,
            ..Self::default()
        };
        p.gamma = Some(calibrate_gamma(&p)?);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.is_empty() {
            return Err(Error::Config("DGP needs at least one assessment time".into()));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("DGP parameters must be finite".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let Some(g) = &self.gamma {
            if g.len() != self.tau() {
                return Err(Error::Config(format!(
                    "gamma has {} entries for {} time points",
                    g.len(),
                    self.tau()
                )));
            }
        }
        Ok(())
    }

    fn gamma_or_err(&self) -> Result<&[f64]> {
        self.gamma
            .as_deref()
            .ok_or_else(|| Error::Config("gamma has not been calibrated".into()))
    }

    /// Ensures `gamma` is present, calibrating if needed.
    pub fn with_gamma(mut self) -> Result<Self> {
        self.validate()?;
        if self.gamma.is_none() {
            self.gamma = Some(calibrate_gamma(&self)?);
        }
        Ok(self)
    }
}

/// Variable layout: `L_t`, `A_t`, `Y_t` occupy slots `3(t-1)`, `3(t-1)+1`,
/// `3(t-1)+2`.
pub(crate) fn slot_l(t: usize) -> usize {
    3 * (t - 1)
}
pub(crate) fn slot_a(t: usize) -> usize {
    3 * (t - 1) + 1
}
pub(crate) fn slot_y(t: usize) -> usize {
    3 * (t - 1) + 2
}

/// Mean of one structural equation given its parents; noise is unit-variance
/// Gaussian and independent of everything earlier.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Equation {
    pub constant: f64,
    pub parents: Vec<(usize, f64)>,
}

/// Structural equations in slot order for a fully specified parameter set.
#[derive(Debug, Clone)]
pub(crate) struct StructuralModel {
    pub tau: usize,
    pub equations: Vec<Equation>,
}

impl StructuralModel {
    pub fn new(params: &DgpParams, gamma: &[f64]) -> Self {
        let tau = params.tau();
        let (alpha, beta) = (params.alpha, params.beta);
        let mut equations = Vec::with_capacity(3 * tau);
        for t in 1..=tau {
            let v = params.v[t - 1];
            let g = gamma[t - 1];
            if t == 1 {
                equations.push(Equation {
                    constant: 1.0,
                    parents: vec![],
                });
                equations.push(Equation {
                    constant: 8.5,
                    parents: vec![(slot_l(1), -1.0)],
                });
                equations.push(Equation {
                    constant: 70.5,
                    parents: vec![(slot_l(1), -g), (slot_a(1), g * alpha)],
                });
            } else {
                equations.push(Equation {
                    constant: 5.0 - 0.3 * v,
                    parents: vec![
                        (slot_l(t - 1), 0.47),
                        (slot_a(t - 1), -0.24),
                        (slot_y(t - 1), -0.05),
                    ],
                });
                equations.push(Equation {
                    constant: 10.0 + 0.5 * v,
                    parents: vec![(slot_l(t), -0.2), (slot_a(t - 1), 0.1), (slot_y(t - 1), -0.05)],
                });
                let interaction = beta * (0.1 * v + 0.04 * v * v + 0.02 * v * v * v);
                equations.push(Equation {
                    constant: 78.0 - 0.3 * v - 0.2 * v * v - 0.1 * v * v * v,
                    parents: vec![
                        (slot_l(t), -0.5 * g),
                        (slot_a(t), g * alpha - interaction),
                        (slot_y(t - 1), -0.15 * g),
                    ],
                });
            }
        }
        Self { tau, equations }
    }

    /// Expected value of every slot when each exposure is replaced by its
    /// natural value plus `shift`.
    pub fn means(&self, shift: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.equations.len()];
        for (slot, eq) in self.equations.iter().enumerate() {
            let mut v = eq.constant;
            for &(p, c) in &eq.parents {
                v += c * m[p];
            }
            if slot % 3 == 1 {
                v += shift;
            }
            m[slot] = v;
        }
        m
    }
}

/// Per-time means of `L`, `A` and `Y` in one system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemMeans {
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

/// Exact means under the policy `a -> a + shift` applied at every time
/// (`shift = 0` is the natural system).
pub fn analytic_means(params: &DgpParams, shift: f64) -> Result<SystemMeans> {
    params.validate()?;
    let model = StructuralModel::new(params, params.gamma_or_err()?);
    let m = model.means(shift);
    let tau = params.tau();
    Ok(SystemMeans {
        l: (1..=tau).map(|t| m[slot_l(t)]).collect(),
        a: (1..=tau).map(|t| m[slot_a(t)]).collect(),
        y: (1..=tau).map(|t| m[slot_y(t)]).collect(),
    })
}

/// Exposure shift of the study policy: every exposure lowered by one unit.
pub const STUDY_SHIFT: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticTruth {
    pub theta_prime: Vec<f64>,
    pub theta_dprime: Vec<f64>,
    /// `theta''_j - theta''_1 - (theta'_j - theta'_1)` for `j = 2..tau`.
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// True natural (identity) and shifted (`a - 1`) trajectories and the
/// baseline-contrast effects.
pub fn analytic_truth(params: &DgpParams) -> Result<AnalyticTruth> {
    let params = params.clone().with_gamma()?;
    let theta_prime = analytic_means(&params, 0.0)?.y;
    let theta_dprime = analytic_means(&params, STUDY_SHIFT)?.y;
    let delta = (1..params.tau())
        .map(|j| theta_dprime[j] - theta_dprime[0] - (theta_prime[j] - theta_prime[0]))
        .collect();
    Ok(AnalyticTruth {
        theta_prime,
        theta_dprime,
        delta,
        gamma: params.gamma.unwrap_or_default(),
    })
}

/// Chooses `gamma_t` forward in time so that, with `beta = 0`, the shifted
/// and natural outcome means differ by exactly `-alpha` at every time.
///
/// At step `t`, `gamma_1..gamma_{t-1}` are already fixed and `gamma_t` is
/// provisionally 1; the full mean system is recomputed, and
/// `gamma_t = -alpha / (theta''_t - theta'_t)`.
pub fn calibrate_gamma(params: &DgpParams) -> Result<Vec<f64>> {
    let tau = params.tau();
    let null = DgpParams {
        beta: 0.0,
        gamma: None,
        ..params.clone()
    };
    null.validate()?;
    let mut gamma = vec![1.0; tau];
    for t in 1..=tau {
        gamma[t - 1] = 1.0;
        let model = StructuralModel::new(&null, &gamma);
        let diff = model.means(STUDY_SHIFT)[slot_y(t)] - model.means(0.0)[slot_y(t)];
        if diff.abs() < 1e-12 {
            return Err(Error::Calibration(format!(
                "outcome means do not respond to the shift at time {t}"
            )));
        }
        gamma[t - 1] = -null.alpha / diff;
    }
    Ok(gamma)
}

/// Draws `n` individuals, recording exposures after adding `shift` to every
/// natural exposure (`shift = 0` gives observational data).
pub fn generate_shifted(
    params: &DgpParams,
    n: usize,
    shift: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LongitudinalDataset> {
    params.validate()?;
    let model = StructuralModel::new(params, params.gamma_or_err()?);
    let tau = params.tau();
    let mut l = vec![DMatrix::zeros(n, 1); tau];
    let mut a = DMatrix::zeros(n, tau);
    let mut y = DMatrix::zeros(n, tau);
    let mut x = vec![0.0; 3 * tau];
    for i in 0..n {
        for (slot, eq) in model.equations.iter().enumerate() {
            let mut v = eq.constant;
            for &(p, c) in &eq.parents {
                v += c * x[p];
            }
            let z: f64 = StandardNormal.sample(rng);
            v += z;
            if slot % 3 == 1 {
                v += shift;
            }
            x[slot] = v;
        }
        for t in 1..=tau {
            l[t - 1][(i, 0)] = x[slot_l(t)];
            a[(i, t - 1)] = x[slot_a(t)];
            y[(i, t - 1)] = x[slot_y(t)];
        }
    }
    LongitudinalDataset::new(l, a, y, Some(params.v.clone()))
}

/// Observational data from the natural system.
pub fn generate(params: &DgpParams, n: usize, rng: &mut ChaCha8Rng) -> Result<LongitudinalDataset> {
    generate_shifted(params, n, 0.0, rng)
}

/// Convenience: observational data from a seed.
pub fn generate_seeded(params: &DgpParams, n: usize, seed: u64) -> Result<LongitudinalDataset> {
    generate(params, n, &mut ChaCha8Rng::seed_from_u64(seed))
}
