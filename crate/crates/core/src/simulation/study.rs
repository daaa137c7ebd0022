use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{analytic_truth, generate_seeded, AnalyticTruth, DgpParams};
use crate::error::{Error, Result};
use crate::inference::{build_contrast, run_inference, CiRule, ContrastKind, InferenceConfig};
use crate::policy::Policy;
use crate::sdr::{estimate_pair, EstimatorConfig};

/// Sample sizes, effect sizes and replicate count of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyGrid {
    pub n: Vec<usize>,
    pub beta: Vec<f64>,
    pub reps: usize,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl StudyGrid {
    /// `n in {250, 1000, 2500}`, `beta in {0, 0.5, 1}`, 300 replicates.
    pub fn desk_scale() -> Self {
        Self {
            n: vec![250, 1000, 2500],
            beta: vec![0.0, 0.5, 1.0],
            reps: 300,
        }
    }

    /// Parses `n=250,1000 beta=0,0.5,1 reps=10`. Keys may come in any order;
    /// missing keys keep the desk-scale defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = Self::desk_scale();
        for part in spec.split_whitespace() {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("grid entry {part:?} is not key=value")))?;
            let bad = |v: &str| Error::Validation(format!("grid {key}: cannot parse {v:?}"));
            match key {
                "n" => {
                    grid.n = value
                        .split(',')
                        .map(|v| v.trim().parse::<usize>().map_err(|_| bad(v)))
                        .collect::<Result<_>>()?
                }
                "beta" => {
                    grid.beta = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>().map_err(|_| bad(v)))
                        .collect::<Result<_>>()?
                }
                "reps" => grid.reps = value.parse().map_err(|_| bad(value))?,
                _ => return Err(Error::Validation(format!("unknown grid key {key:?}"))),
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.beta.is_empty() || self.reps == 0 {
            return Err(Error::Validation(
                "study grid must have n, beta and reps >= 1".into(),
            ));
        }
        if self.beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Validation(
                "grid beta values must be finite and >= 0".into(),
            ));
        }
        if self.n.iter().any(|&n| n < 2) {
            return Err(Error::Validation("grid sample sizes must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: StudyGrid,
    #[serde(default)]
    pub dgp: DgpParams,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub threads: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `r` in cell `(n, beta)`.
pub fn replicate_seed(seed: u64, n: usize, beta: f64, r: usize) -> u64 {
    let mut h = splitmix64(seed);
    for part in [n as u64, beta.to_bits(), r as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

/// One flag per confidence/testing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RuleFlags {
    pub none: bool,
    pub bonferroni: bool,
    pub max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub beta: f64,
    pub rep: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub theta_hat: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub wald_stat: f64,
    pub wald_p: f64,
    pub max_stat: f64,
    pub max_p: f64,
    pub q_max: f64,
    pub wald_reject: bool,
    pub max_reject: bool,
    /// Every local null rejected.
    pub all_rejected: RuleFlags,
    /// Every interval covers the true effect.
    pub covered: RuleFlags,
}

impl ReplicateRecord {
    fn failed(n: usize, beta: f64, rep: usize, seed: u64, err: &Error) -> Self {
        Self {
            n,
            beta,
            rep,
            seed,
            error: Some(err.to_string()),
            theta_hat: vec![],
            delta_hat: vec![],
            se: vec![],
            wald_stat: f64::NAN,
            wald_p: f64::NAN,
            max_stat: f64::NAN,
            max_p: f64::NAN,
            q_max: f64::NAN,
            wald_reject: false,
            max_reject: false,
            all_rejected: RuleFlags::default(),
            covered: RuleFlags::default(),
        }
    }
}

/// Rates per rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleRates {
    pub none: f64,
    pub bonferroni: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub beta: f64,
    pub reps: usize,
    pub failures: usize,
    pub delta_true: Vec<f64>,
    pub bias: Vec<f64>,
    /// Monte Carlo standard error of each bias entry.
    pub bias_se: Vec<f64>,
    pub empirical_sd: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub wald_power: f64,
    pub max_power: f64,
    pub simultaneous_power: RuleRates,
    pub simultaneous_coverage: RuleRates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyOutput {
    pub cells: Vec<CellSummary>,
    pub records: Vec<ReplicateRecord>,
}

fn run_replicate(
    cfg: &StudyConfig,
    params: &DgpParams,
    truth: &AnalyticTruth,
    n: usize,
    rep: usize,
) -> ReplicateRecord {
    let seed = replicate_seed(cfg.seed, n, params.beta, rep);
    let attempt = || -> Result<ReplicateRecord> {
        let data = generate_seeded(params, n, seed)?;
        let est_cfg = EstimatorConfig {
            seed,
            ..cfg.estimator.clone()
        };
        let pair = estimate_pair(&data, &Policy::identity(), &Policy::shift(1.0), &est_cfg)?;
        let contrast = build_contrast(ContrastKind::Baseline, data.tau())?;
        let report = run_inference(&pair.stacked, &contrast, None, &cfg.inference)?;
        let all = |rule| report.local_rejections(rule).iter().all(|&b| b);
        Ok(ReplicateRecord {
            n,
            beta: params.beta,
            rep,
            seed,
            error: None,
            theta_hat: pair.stacked.theta_hat.clone(),
            delta_hat: report.locals.iter().map(|l| l.estimate).collect(),
            se: report.locals.iter().map(|l| l.se).collect(),
            wald_stat: report.wald.stat,
            wald_p: report.wald.p,
            max_stat: report.max.stat,
            max_p: report.max.p,
            q_max: report.max.q,
            wald_reject: report.wald_rejects(),
            max_reject: report.max_rejects(),
            all_rejected: RuleFlags {
                none: all(CiRule::Pointwise),
                bonferroni: all(CiRule::Bonferroni),
                max: all(CiRule::Max),
            },
            covered: RuleFlags {
                none: report.covers(&truth.delta, CiRule::Pointwise),
                bonferroni: report.covers(&truth.delta, CiRule::Bonferroni),
                max: report.covers(&truth.delta, CiRule::Max),
            },
        })
    };
    attempt().unwrap_or_else(|e| {
        log::warn!("replicate n={n} beta={} rep={rep} failed: {e}", params.beta);
        ReplicateRecord::failed(n, params.beta, rep, seed, &e)
    })
}

fn summarize(n: usize, beta: f64, truth: &AnalyticTruth, records: &[ReplicateRecord]) -> CellSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let m = ok.len() as f64;
    let k = truth.delta.len();
    let rate = |f: &dyn Fn(&ReplicateRecord) -> bool| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().filter(|r| f(r)).count() as f64 / m
        }
    };
    let mut bias = vec![f64::NAN; k];
    let mut bias_se = vec![f64::NAN; k];
    let mut sd = vec![f64::NAN; k];
    let mut mean_se = vec![f64::NAN; k];
    if !ok.is_empty() {
        for j in 0..k {
            let est: Vec<f64> = ok.iter().map(|r| r.delta_hat[j]).collect();
            let mean = est.iter().sum::<f64>() / m;
            bias[j] = mean - truth.delta[j];
            let var = if ok.len() > 1 {
                est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                f64::NAN
            };
            sd[j] = var.sqrt();
            bias_se[j] = (var / m).sqrt();
            mean_se[j] = ok.iter().map(|r| r.se[j]).sum::<f64>() / m;
        }
    }
    CellSummary {
        n,
        beta,
        reps: records.len(),
        failures: records.len() - ok.len(),
        delta_true: truth.delta.clone(),
        bias,
        bias_se,
        empirical_sd: sd,
        mean_se,
        wald_power: rate(&|r| r.wald_reject),
        max_power: rate(&|r| r.max_reject),
        simultaneous_power: RuleRates {
            none: rate(&|r| r.all_rejected.none),
            bonferroni: rate(&|r| r.all_rejected.bonferroni),
            max: rate(&|r| r.all_rejected.max),
        },
        simultaneous_coverage: RuleRates {
            none: rate(&|r| r.covered.none),
            bonferroni: rate(&|r| r.covered.bonferroni),
            max: rate(&|r| r.covered.max),
        },
    }
}

/// Runs every `(n, beta, replicate)` of the grid. Replicates may run on
/// several threads; records and summaries are always in `(n, beta, rep)`
/// order. Failed replicates are kept with their error and counted.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.grid.validate()?;
    cfg.estimator.validate()?;
    cfg.inference.mvn.validate()?;
    let base = DgpParams {
        gamma: None,
        ..cfg.dgp.clone()
    }
    .with_gamma()?;

    let mut cells = Vec::new();
    for &n in &cfg.grid.n {
        for &beta in &cfg.grid.beta {
            let params = DgpParams { beta, ..base.clone() };
            let truth = analytic_truth(&params)?;
            cells.push((n, params, truth));
        }
    }
    let reps = cfg.grid.reps;
    let jobs = cells.len() * reps;
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1)
    } else {
        cfg.threads
    }
    .min(jobs)
    .max(1);

    let slots: Vec<Mutex<Option<ReplicateRecord>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                if job >= jobs {
                    break;
                }
                let (n, params, truth) = &cells[job / reps];
                let record = run_replicate(cfg, params, truth, *n, job % reps);
                *slots[job].lock().unwrap_or_else(|e| e.into_inner()) = Some(record);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if finished.is_multiple_of(50) || finished == jobs {
                    log::info!("study progress: {finished}/{jobs} replicates");
                }
            });
        }
    });
    let records: Vec<ReplicateRecord> = slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every job ran")
        })
        .collect();

    let summaries = cells
        .iter()
        .enumerate()
        .map(|(c, (n, params, truth))| summarize(*n, params.beta, truth, &records[c * reps..(c + 1) * reps]))
        .collect();
    Ok(StudyOutput {
        cells: summaries,
        records,
    })
}

impl StudyOutput {
    fn write_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// One row per `(n, beta, j)`.
    pub fn bias_csv(&self) -> String {
        let mut rows = Vec::new();
        for c in &self.cells {
            for j in 0..c.delta_true.len() {
                rows.push(vec![
                    c.n.to_string(),
                    c.beta.to_string(),
                    (j + 2).to_string(),
                    c.delta_true[j].to_string(),
                    c.bias[j].to_string(),
                    c.bias_se[j].to_string(),
                    c.empirical_sd[j].to_string(),
                    c.mean_se[j].to_string(),
                    (c.reps - c.failures).to_string(),
                ]);
            }
        }
        Self::write_csv(
            &[
                "n",
                "beta",
                "time",
                "delta_true",
                "bias",
                "bias_se",
                "empirical_sd",
                "mean_se",
                "reps_ok",
            ],
            rows,
        )
    }

    /// Global rejection rates per `(n, beta)`.
    pub fn power_csv(&self) -> String {
        let rows = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.n.to_string(),
                    c.beta.to_string(),
                    c.wald_power.to_string(),
                    c.max_power.to_string(),
                    (c.reps - c.failures).to_string(),
                    c.failures.to_string(),
                ]
            })
            .collect();
        Self::write_csv(
            &["n", "beta", "wald_power", "max_power", "reps_ok", "failures"],
            rows,
        )
    }

    /// Simultaneous power and coverage per `(n, beta, rule)`.
    pub fn simultaneous_csv(&self) -> String {
        let mut rows = Vec::new();
        for c in &self.cells {
            for (rule, p, cov) in [
                ("none", c.simultaneous_power.none, c.simultaneous_coverage.none),
                (
                    "bonferroni",
                    c.simultaneous_power.bonferroni,
                    c.simultaneous_coverage.bonferroni,
                ),
                ("max", c.simultaneous_power.max, c.simultaneous_coverage.max),
            ] {
                rows.push(vec![
                    c.n.to_string(),
                    c.beta.to_string(),
                    rule.to_string(),
                    p.to_string(),
                    cov.to_string(),
                ]);
            }
        }
        Self::write_csv(
            &["n", "beta", "rule", "simultaneous_power", "simultaneous_coverage"],
            rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerSpec, StackSpec};

    fn lean() -> EstimatorConfig {
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

    #[test]
    fn grid_parsing() {
        let g = StudyGrid::parse("n=250 beta=0,1 reps=10").unwrap();
        assert_eq!(g.n, vec![250]);
        assert_eq!(g.beta, vec![0.0, 1.0]);
        assert_eq!(g.reps, 10);
        assert!(StudyGrid::parse("n=abc").is_err());
        assert!(StudyGrid::parse("reps=0").is_err());
        assert!(StudyGrid::parse("foo=1").is_err());
    }

    #[test]
    fn replicate_seeds_differ() {
        let a = replicate_seed(1, 250, 0.0, 0);
        assert_ne!(a, replicate_seed(1, 250, 0.0, 1));
        assert_ne!(a, replicate_seed(1, 250, 1.0, 0));
        assert_ne!(a, replicate_seed(1, 500, 0.0, 0));
        assert_eq!(a, replicate_seed(1, 250, 0.0, 0));
    }

    #[test]
    fn small_study_bookkeeping_and_thread_independence() {
        let mut cfg = StudyConfig {
            grid: StudyGrid::parse("n=120 beta=0,1 reps=3").unwrap(),
            dgp: DgpParams::default(),
            estimator: lean(),
            inference: InferenceConfig::default(),
            seed: 5,
            threads: 1,
        };
        let a = run_study(&cfg).unwrap();
        assert_eq!(a.records.len(), 6);
        assert_eq!(a.cells.len(), 2);
        assert!(a.records.iter().all(|r| r.error.is_none()));
        cfg.threads = 3;
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.power_csv().lines().count(), 3);
        assert_eq!(a.bias_csv().lines().count(), 1 + 2 * 3);
        assert_eq!(a.simultaneous_csv().lines().count(), 1 + 2 * 3);
    }
}
