//! Nuisance learners: least squares, logistic regression, gradient-boosted
//! shallow trees, a non-negative stacking ensemble over any of them, and
//! individual-level cross-fitting.

mod boost;
mod crossfit;
mod features;
mod logistic;
mod ols;
mod stack;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use boost::{fit_boosted, BoostConfig, BoostedTrees};
pub use crossfit::{crossfit, CrossFit, FoldAssignment};
pub use features::Expansion;
pub use logistic::{fit_logistic, LogisticModel};
pub use ols::{fit_ols, OlsModel};
pub use stack::{fit_stack, simplex_least_squares, StackModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    /// Labels in {0, 1}; predictions are probabilities.
    Classification,
}

/// A fitted model. Predictions for [`Task::Classification`] are clipped
/// probabilities.
pub trait Fitted: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;

    /// Ensemble weights, for stacked models.
    fn weights(&self) -> Option<Vec<f64>> {
        None
    }
}

pub trait Learner: Send + Sync {
    fn name(&self) -> String;

    fn supports(&self, task: Task) -> bool;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], task: Task) -> Result<Box<dyn Fitted>>;
}

impl fmt::Debug for dyn Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn default_p_min() -> f64 {
    1e-3
}

fn default_ridge() -> f64 {
    1e-4
}

/// Serializable learner description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Ols {
        #[serde(default)]
        quadratic: bool,
    },
    Logistic {
        #[serde(default)]
        quadratic: bool,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_p_min")]
        p_min: f64,
    },
    Boosted(BoostConfig),
}

impl LearnerSpec {
    pub fn build(&self) -> Box<dyn Learner> {
        match self {
            LearnerSpec::Ols { quadratic } => Box::new(ols::OlsLearner {
                expansion: Expansion::from_quadratic(*quadratic),
            }),
            LearnerSpec::Logistic {
                quadratic,
                ridge,
                p_min,
            } => Box::new(logistic::LogisticLearner {
                expansion: Expansion::from_quadratic(*quadratic),
                ridge: *ridge,
                p_min: *p_min,
            }),
            LearnerSpec::Boosted(cfg) => Box::new(boost::BoostLearner(cfg.clone())),
        }
    }
}

/// Stacked ensemble description: members plus the number of folds used to
/// produce out-of-fold predictions for the meta-weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub members: Vec<LearnerSpec>,
    #[serde(default = "default_stack_folds")]
    pub folds: usize,
}

fn default_stack_folds() -> usize {
    5
}

impl StackSpec {
    /// OLS with quadratic and interaction terms plus 200 rounds of depth-2
    /// boosting.
    pub fn default_regression() -> Self {
        Self {
            members: vec![
                LearnerSpec::Ols { quadratic: true },
                LearnerSpec::Boosted(BoostConfig::default()),
            ],
            folds: 5,
        }
    }

    /// Main-effects logistic regression plus depth-2 boosting on log-loss.
    pub fn default_classification() -> Self {
        Self {
            members: vec![
                LearnerSpec::Logistic {
                    quadratic: false,
                    ridge: default_ridge(),
                    p_min: default_p_min(),
                },
                LearnerSpec::Boosted(BoostConfig::default()),
            ],
            folds: 5,
        }
    }

    pub fn build(&self, seed: u64) -> StackLearner {
        StackLearner {
            members: self.members.iter().map(LearnerSpec::build).collect(),
            folds: self.folds,
            seed,
        }
    }
}

/// A learner that fits a [`StackModel`].
pub struct StackLearner {
    pub members: Vec<Box<dyn Learner>>,
    pub folds: usize,
    pub seed: u64,
}

impl Learner for StackLearner {
    fn name(&self) -> String {
        let names: Vec<String> = self.members.iter().map(|m| m.name()).collect();
        format!("stack[{}]", names.join(", "))
    }

    fn supports(&self, task: Task) -> bool {
        self.members.iter().all(|m| m.supports(task))
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], task: Task) -> Result<Box<dyn Fitted>> {
        Ok(Box::new(fit_stack(
            &self.members,
            x,
            y,
            task,
            self.folds,
            self.seed,
        )?))
    }
}
