//! Contrasts of stacked trajectories, their covariance, global Wald and
//! maximum tests, multiplicity-adjusted local tests and simultaneous
//! confidence intervals.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{mean, StackedEstimate};
use crate::error::{Error, Result};
use crate::numerics::mvn::rect_quantile_with;
use crate::numerics::{chisq_sf, normal_quantile, two_sided_p, MvnConfig, RectangleIntegrator};

/// `D*_jj` at or below this is treated as zero variance.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Relative eigenvalue cutoff for the Wald pseudo-inverse.
pub const WALD_EIGEN_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    /// Change from time 1 to time j under d'' minus the same change under d'.
    Baseline,
    /// Change from time j to j+1 under d'' minus the same change under d'.
    Adjacent,
    Custom,
}

impl fmt::Display for ContrastKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContrastKind::Baseline => "baseline",
            ContrastKind::Adjacent => "adjacent",
            ContrastKind::Custom => "custom",
        })
    }
}

/// `k x 2 tau` contrast matrix over `(theta'_1..theta'_tau, theta''_1..theta''_tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    pub kind: ContrastKind,
    pub matrix: DMatrix<f64>,
}

impl ContrastMatrix {
    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn tau(&self) -> usize {
        self.matrix.ncols() / 2
    }

    /// Validates a caller-supplied matrix for `tau` time points.
    pub fn custom(matrix: DMatrix<f64>, tau: usize) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::Validation("contrast matrix has no rows".into()));
        }
        if matrix.ncols() != 2 * tau {
            return Err(Error::Validation(format!(
                "contrast matrix has {} columns, expected 2 tau = {}",
                matrix.ncols(),
                2 * tau
            )));
        }
        for (j, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("contrast row {} is not finite", j + 1)));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!("contrast row {} is all zero", j + 1)));
            }
        }
        Ok(Self {
            kind: ContrastKind::Custom,
            matrix,
        })
    }

    /// Reads a headerless CSV with one contrast row per line. Lines starting
    /// with `#` are ignored.
    pub fn from_csv_str(text: &str, tau: usize) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|_| {
                        Error::Validation(format!("contrast file line {}: cannot parse {c:?}", ln + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Validation("contrast file has no rows".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Validation("contrast file rows differ in length".into()));
        }
        let flat: Vec<f64> = rows.concat();
        Self::custom(DMatrix::from_row_slice(rows.len(), width, &flat), tau)
    }
}

/// Baseline or adjacent contrasts for `tau >= 2` time points.
pub fn build_contrast(kind: ContrastKind, tau: usize) -> Result<ContrastMatrix> {
    if tau < 2 {
        return Err(Error::Validation(format!(
            "{kind} contrasts need tau >= 2, got {tau}"
        )));
    }
    let mut k = DMatrix::zeros(tau - 1, 2 * tau);
    for r in 0..tau - 1 {
        let (from, to) = match kind {
            ContrastKind::Baseline => (0, r + 1),
            ContrastKind::Adjacent => (r, r + 1),
            ContrastKind::Custom => {
                return Err(Error::Validation(
                    "custom contrasts must be supplied as a matrix".into(),
                ))
            }
        };
        k[(r, from)] = 1.0;
        k[(r, to)] = -1.0;
        k[(r, tau + from)] = -1.0;
        k[(r, tau + to)] = 1.0;
    }
    Ok(ContrastMatrix { kind, matrix: k })
}

/// `S_n`: sample covariance (divisor `n - 1`) of the EIF columns, divided by `n`.
pub fn empirical_covariance(eif: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = eif.nrows();
    if n < 2 {
        return Err(Error::Validation("covariance needs at least 2 rows".into()));
    }
    let centred = centre_columns(eif);
    let mut s = centred.tr_mul(&centred) / ((n - 1) as f64 * n as f64);
    symmetrize(&mut s);
    Ok(s)
}

fn centre_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mu = mean(col.iter().copied());
        col.iter_mut().for_each(|v| *v -= mu);
    }
    c
}

fn symmetrize(s: &mut DMatrix<f64>) {
    for i in 0..s.nrows() {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
}

/// Per-individual contrast contributions `phi K^T`. Coefficient pairs
/// `(theta'_c, theta''_c)` with opposite signs are applied to the difference
/// of the two columns, so identical trajectories contribute exact zeros.
fn contrasted_eif(stacked: &StackedEstimate, k: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, tau) = (stacked.n(), stacked.tau());
    let phi = &stacked.eif;
    let mut out = DMatrix::zeros(n, k.nrows());
    for j in 0..k.nrows() {
        for c in 0..tau {
            let (a, b) = (k[(j, c)], k[(j, tau + c)]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            for i in 0..n {
                out[(i, j)] += if a == -b {
                    a * (phi[(i, c)] - phi[(i, tau + c)])
                } else {
                    a * phi[(i, c)] + b * phi[(i, tau + c)]
                };
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastResult {
    pub nu_hat: Vec<f64>,
    pub s_star: Vec<Vec<f64>>,
    pub d_star: Vec<f64>,
    pub r_star: Vec<Vec<f64>>,
    pub t_star: Vec<f64>,
    pub h: Vec<f64>,
    /// Rows with zero variance whose estimate equals the hypothesis value;
    /// they get `t* = 0` and an identity row in `R*`.
    pub null_rows: Vec<usize>,
}

impl ContrastResult {
    pub fn k(&self) -> usize {
        self.nu_hat.len()
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.r_star[i][j])
    }

    pub fn se(&self, j: usize) -> f64 {
        self.d_star[j].sqrt()
    }
}

/// `nu_hat = K theta_hat`, `S* = K S_n K^T`, its correlation `R*` and the
/// standardized statistics `t*` against `h` (zero when omitted).
pub fn contrast_estimate(
    stacked: &StackedEstimate,
    contrast: &ContrastMatrix,
    h: Option<&[f64]>,
) -> Result<ContrastResult> {
    let k = contrast.k();
    if contrast.matrix.ncols() != 2 * stacked.tau() {
        return Err(Error::Validation(format!(
            "contrast has {} columns but the stacked estimate has {}",
            contrast.matrix.ncols(),
            2 * stacked.tau()
        )));
    }
    let h: Vec<f64> = match h {
        Some(h) if h.len() != k => {
            return Err(Error::Validation(format!(
                "hypothesis vector has length {}, expected {k}",
                h.len()
            )))
        }
        Some(h) => h.to_vec(),
        None => vec![0.0; k],
    };
    let psi = contrasted_eif(stacked, &contrast.matrix);
    let nu_hat: Vec<f64> = psi.column_iter().map(|c| mean(c.iter().copied())).collect();
    let s = empirical_covariance(&psi)?;
    let d: Vec<f64> = (0..k).map(|j| s[(j, j)].max(0.0)).collect();

    let mut null_rows = Vec::new();
    for j in 0..k {
        if d[j] <= VARIANCE_FLOOR {
            if (nu_hat[j] - h[j]).abs() <= VARIANCE_FLOOR {
                null_rows.push(j);
            } else {
                return Err(Error::DegenerateContrast { row: j + 1 });
            }
        }
    }
    let degenerate = |j: usize| null_rows.contains(&j);
    let r = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if degenerate(i) || degenerate(j) {
            0.0
        } else {
            (s[(i, j)] / (d[i].sqrt() * d[j].sqrt())).clamp(-1.0, 1.0)
        }
    });
    let t_star = (0..k)
        .map(|j| {
            if degenerate(j) {
                0.0
            } else {
                (nu_hat[j] - h[j]) / d[j].sqrt()
            }
        })
        .collect();
    Ok(ContrastResult {
        nu_hat,
        s_star: s.row_iter().map(|r| r.iter().copied().collect()).collect(),
        d_star: d,
        r_star: r.row_iter().map(|r| r.iter().copied().collect()).collect(),
        t_star,
        h,
        null_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub stat: f64,
    pub df: u32,
    pub p: f64,
}

/// `t*^T R*^+ t*` against a chi-square with `k` degrees of freedom.
pub fn wald_test(result: &ContrastResult) -> Result<WaldTest> {
    let k = result.k();
    let r = result.r_matrix();
    let t = DVector::from_column_slice(&result.t_star);
    let eig = SymmetricEigen::new(r);
    let top = eig.eigenvalues.amax();
    let cutoff = WALD_EIGEN_CUTOFF * top;
    let mut stat = 0.0;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            return Err(Error::Singular(format!(
                "contrast correlation matrix is singular (eigenvalue {lambda:.3e} vs largest {top:.3e}); \
                 use a smaller or linearly independent contrast set"
            )));
        }
        let proj = eig.eigenvectors.column(idx).dot(&t);
        stat += proj * proj / lambda;
    }
    if k == 1 {
        // exact t*^2 without eigen round-off
        stat = result.t_star[0] * result.t_star[0];
    }
    let df = k as u32;
    Ok(WaldTest {
        stat,
        df,
        p: chisq_sf(stat, df)?.clamp(0.0, 1.0),
    })
}

/// Results derived from `g(.; R*)` with one integrator and one lattice size
/// (common random numbers).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxTest {
    pub stat: f64,
    pub p: f64,
    /// `q_{m, alpha}` solving `g(q; R*) = 1 - alpha`.
    pub q: f64,
    /// Standard error of `g` at the statistic.
    pub mc_error: f64,
    /// Max-adjusted local p-values `1 - g(|t*_j|; R*)`, floored at the
    /// unadjusted p-value.
    pub p_local: Vec<f64>,
    /// Standard errors of the local evaluations.
    pub se_local: Vec<f64>,
    pub points: usize,
    pub jitter: f64,
    pub warnings: Vec<String>,
}

pub fn max_test(result: &ContrastResult, alpha: f64, mvn: &MvnConfig) -> Result<MaxTest> {
    check_alpha(alpha)?;
    let k = result.k();
    let lo = normal_quantile(1.0 - alpha / 2.0)?;
    let hi = normal_quantile(1.0 - alpha / (2.0 * k as f64))?;
    let integrator = RectangleIntegrator::new(&result.r_matrix(), mvn, 0.5 * (lo + hi))?;
    let quant = rect_quantile_with(&integrator, 1.0 - alpha, lo, hi)?;
    let points = quant.points;

    let mut warnings = Vec::new();
    if integrator.jitter() > 0.0 {
        warnings.push(format!(
            "R* needed diagonal jitter {:.0e} to factorize",
            integrator.jitter()
        ));
    }
    let mut p_local = Vec::with_capacity(k);
    let mut se_local = Vec::with_capacity(k);
    for &t in &result.t_star {
        let g = integrator.evaluate(t.abs(), points);
        let p = (1.0 - g.estimate).clamp(0.0, 1.0).max(two_sided_p(t));
        p_local.push(p.min(1.0));
        se_local.push(g.std_error);
    }
    let (arg, stat) = result
        .t_star
        .iter()
        .map(|t| t.abs())
        .enumerate()
        .fold((0, 0.0), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
    let mc_error = se_local[arg];
    if mc_error > mvn.target_se {
        warnings.push(format!(
            "max-test integration error {mc_error:.2e} exceeds target {:.2e}",
            mvn.target_se
        ));
    }
    // the global p-value is the smallest local one, which makes global and
    // local decisions coherent by construction
    let p = p_local.iter().copied().fold(1.0, f64::min);
    Ok(MaxTest {
        stat,
        p,
        q: quant.quantile,
        mc_error,
        p_local,
        se_local,
        points,
        jitter: integrator.jitter(),
        warnings,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiRule {
    Pointwise,
    Bonferroni,
    Max,
}

/// Critical values `z_{alpha/2}`, `z_{alpha/(2k)}` and `q_{m,alpha}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub pointwise: f64,
    pub bonferroni: f64,
    pub max: f64,
}

impl Thresholds {
    pub fn new(alpha: f64, k: usize, max: &MaxTest) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            pointwise: normal_quantile(1.0 - alpha / 2.0)?,
            bonferroni: normal_quantile(1.0 - alpha / (2.0 * k as f64))?,
            max: max.q,
        })
    }

    pub fn get(&self, rule: CiRule) -> f64 {
        match rule {
            CiRule::Pointwise => self.pointwise,
            CiRule::Bonferroni => self.bonferroni,
            CiRule::Max => self.max,
        }
    }
}

/// `nu_hat_j +/- c sqrt(S*_jj)` for every row.
pub fn simultaneous_ci(result: &ContrastResult, thresholds: &Thresholds, rule: CiRule) -> Vec<[f64; 2]> {
    let c = thresholds.get(rule);
    (0..result.k())
        .map(|j| {
            let half = c * result.se(j);
            [result.nu_hat[j] - half, result.nu_hat[j] + half]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTest {
    /// 1-based row index.
    pub j: usize,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p_unadj: f64,
    pub p_bonf: f64,
    pub p_max: f64,
    pub ci_pointwise: [f64; 2],
    pub ci_bonf: [f64; 2],
    pub ci_max: [f64; 2],
}

pub fn local_tests(result: &ContrastResult, max: &MaxTest, thresholds: &Thresholds) -> Vec<LocalTest> {
    let k = result.k();
    let pw = simultaneous_ci(result, thresholds, CiRule::Pointwise);
    let bf = simultaneous_ci(result, thresholds, CiRule::Bonferroni);
    let mx = simultaneous_ci(result, thresholds, CiRule::Max);
    (0..k)
        .map(|j| {
            let t = result.t_star[j];
            let p = two_sided_p(t).clamp(0.0, 1.0);
            LocalTest {
                j: j + 1,
                estimate: result.nu_hat[j],
                se: result.se(j),
                t,
                p_unadj: p,
                p_bonf: (k as f64 * p).min(1.0),
                p_max: max.p_local[j],
                ci_pointwise: pw[j],
                ci_bonf: bf[j],
                ci_max: mx[j],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub mvn: MvnConfig,
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            mvn: MvnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxSummary {
    pub stat: f64,
    pub p: f64,
    pub q: f64,
    pub mc_error: f64,
}

/// Full test report for one contrast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub contrast_kind: ContrastKind,
    pub alpha: f64,
    pub wald: WaldTest,
    pub max: MaxSummary,
    pub locals: Vec<LocalTest>,
    pub thresholds: Thresholds,
    pub h: Vec<f64>,
    pub r_star: Vec<Vec<f64>>,
    pub null_rows: Vec<usize>,
    pub warnings: Vec<String>,
}

impl TestReport {
    pub fn wald_rejects(&self) -> bool {
        self.wald.p <= self.alpha
    }

    pub fn max_rejects(&self) -> bool {
        self.max.p <= self.alpha
    }

    /// Rejection decisions of every local test under `rule`.
    pub fn local_rejections(&self, rule: CiRule) -> Vec<bool> {
        self.locals
            .iter()
            .map(|l| {
                let p = match rule {
                    CiRule::Pointwise => l.p_unadj,
                    CiRule::Bonferroni => l.p_bonf,
                    CiRule::Max => l.p_max,
                };
                p <= self.alpha
            })
            .collect()
    }

    /// Whether every interval under `rule` covers the matching entry of `truth`.
    pub fn covers(&self, truth: &[f64], rule: CiRule) -> bool {
        self.locals.iter().zip(truth).all(|(l, &v)| {
            let ci = match rule {
                CiRule::Pointwise => l.ci_pointwise,
                CiRule::Bonferroni => l.ci_bonf,
                CiRule::Max => l.ci_max,
            };
            ci[0] <= v && v <= ci[1]
        })
    }
}

pub fn run_inference(
    stacked: &StackedEstimate,
    contrast: &ContrastMatrix,
    h: Option<&[f64]>,
    config: &InferenceConfig,
) -> Result<TestReport> {
    let result = contrast_estimate(stacked, contrast, h)?;
    report_from_result(&result, contrast.kind, config)
}

pub fn report_from_result(
    result: &ContrastResult,
    kind: ContrastKind,
    config: &InferenceConfig,
) -> Result<TestReport> {
    let wald = wald_test(result)?;
    let max = max_test(result, config.alpha, &config.mvn)?;
    let thresholds = Thresholds::new(config.alpha, result.k(), &max)?;
    let locals = local_tests(result, &max, &thresholds);
    Ok(TestReport {
        contrast_kind: kind,
        alpha: config.alpha,
        wald,
        max: MaxSummary {
            stat: max.stat,
            p: max.p,
            q: max.q,
            mc_error: max.mc_error,
        },
        locals,
        thresholds,
        h: result.h.clone(),
        r_star: result.r_star.clone(),
        null_rows: result.null_rows.iter().map(|j| j + 1).collect(),
        warnings: max.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrajectoryEstimate;
    use crate::numerics::normal_cdf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_eif(n: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: DMatrix<f64> = DMatrix::from_fn(n, cols, |_, _| StandardNormal.sample(&mut rng));
        // mix columns so they are correlated
        let mix = DMatrix::from_fn(
            cols,
            cols,
            |i, j| if j >= i { 1.0 / (1 + j - i) as f64 } else { 0.0 },
        );
        base * mix
    }

    fn stacked(eif: DMatrix<f64>) -> StackedEstimate {
        let tau = eif.ncols() / 2;
        let a = TrajectoryEstimate::from_eif("a", eif.columns(0, tau).into_owned());
        let b = TrajectoryEstimate::from_eif("b", eif.columns(tau, tau).into_owned());
        StackedEstimate::stack(&a, &b).unwrap()
    }

    fn random_correlation(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let w: DMatrix<f64> = DMatrix::from_fn(k, k + 1, |_, _| StandardNormal.sample(rng));
        let s: DMatrix<f64> = &w * w.transpose();
        DMatrix::from_fn(k, k, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt())
    }

    fn result_with(r: DMatrix<f64>, t: Vec<f64>) -> ContrastResult {
        let k = t.len();
        ContrastResult {
            nu_hat: t.clone(),
            s_star: r.row_iter().map(|x| x.iter().copied().collect()).collect(),
            d_star: vec![1.0; k],
            r_star: r.row_iter().map(|x| x.iter().copied().collect()).collect(),
            t_star: t,
            h: vec![0.0; k],
            null_rows: vec![],
        }
    }

    #[test]
    fn contrast_shapes() {
        let b = build_contrast(ContrastKind::Baseline, 2).unwrap();
        assert_eq!(b.matrix, DMatrix::from_row_slice(1, 4, &[1.0, -1.0, -1.0, 1.0]));
        let a = build_contrast(ContrastKind::Adjacent, 3).unwrap();
        assert_eq!(
            a.matrix,
            DMatrix::from_row_slice(2, 6, &[1., -1., 0., -1., 1., 0., 0., 1., -1., 0., -1., 1.])
        );
        assert!(build_contrast(ContrastKind::Baseline, 1).is_err());
    }

    #[test]
    fn adjacent_cumulates_to_baseline() {
        for tau in 2..7 {
            let kb = build_contrast(ContrastKind::Baseline, tau).unwrap().matrix;
            let ka = build_contrast(ContrastKind::Adjacent, tau).unwrap().matrix;
            let a = DMatrix::from_fn(tau - 1, tau - 1, |i, j| if j <= i { 1.0 } else { 0.0 });
            assert_eq!(a * ka, kb);
        }
    }

    #[test]
    fn custom_contrast_validation() {
        assert!(ContrastMatrix::custom(DMatrix::from_row_slice(1, 3, &[1., 0., 0.]), 2).is_err());
        assert!(ContrastMatrix::custom(DMatrix::from_row_slice(1, 4, &[0., 0., 0., 0.]), 2).is_err());
        let c = ContrastMatrix::from_csv_str("# custom\n1,0,0,-1\n0,1,-1,0\n", 2).unwrap();
        assert_eq!(c.k(), 2);
        assert!(ContrastMatrix::from_csv_str("1,0,x,0\n", 2).is_err());
    }

    #[test]
    fn covariance_oracles() {
        let c = empirical_covariance(&DMatrix::from_element(10, 3, 2.5)).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));

        let eif = random_eif(200, 4, 1);
        let s = empirical_covariance(&eif).unwrap();
        let n = 200.0;
        for a in 0..4 {
            for b in 0..4 {
                let ma = eif.column(a).mean();
                let mb = eif.column(b).mean();
                let direct: f64 = (0..200)
                    .map(|i| (eif[(i, a)] - ma) * (eif[(i, b)] - mb))
                    .sum::<f64>()
                    / (n - 1.0)
                    / n;
                assert!((s[(a, b)] - direct).abs() < 1e-14);
            }
        }

        let mut dup = random_eif(50, 2, 2);
        let c0 = dup.column(0).into_owned();
        dup.set_column(1, &c0);
        let st = stacked(dup);
        let k = ContrastMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 1).unwrap();
        let res = contrast_estimate(&st, &k, None).unwrap();
        assert!((res.r_star[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn selecting_one_column_gives_sample_moments() {
        let eif = random_eif(80, 4, 3);
        let st = stacked(eif.clone());
        let k = ContrastMatrix::custom(DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]), 2).unwrap();
        let res = contrast_estimate(&st, &k, None).unwrap();
        let y = eif.column(0);
        let m = y.mean();
        let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 79.0;
        assert!((res.nu_hat[0] - m).abs() < 1e-14);
        assert!((res.s_star[0][0] - var / 80.0).abs() < 1e-15);
    }

    #[test]
    fn hypothesis_at_estimate_gives_zero_statistics() {
        let st = stacked(random_eif(100, 6, 4));
        let k = build_contrast(ContrastKind::Baseline, 3).unwrap();
        let first = contrast_estimate(&st, &k, None).unwrap();
        let res = contrast_estimate(&st, &k, Some(&first.nu_hat)).unwrap();
        assert!(res.t_star.iter().all(|&t| t == 0.0));
        let w = wald_test(&res).unwrap();
        assert_eq!(w.stat, 0.0);
        assert_eq!(w.p, 1.0);
    }

    #[test]
    fn identical_trajectories_give_null_report() {
        let half = random_eif(60, 3, 5);
        let mut eif = DMatrix::zeros(60, 6);
        eif.columns_mut(0, 3).copy_from(&half);
        eif.columns_mut(3, 3).copy_from(&half);
        let st = stacked(eif);
        let k = build_contrast(ContrastKind::Baseline, 3).unwrap();
        let rep = run_inference(&st, &k, None, &InferenceConfig::default()).unwrap();
        assert_eq!(rep.wald.p, 1.0);
        assert_eq!(rep.max.p, 1.0);
        for l in &rep.locals {
            assert_eq!(l.estimate, 0.0);
            assert_eq!((l.p_unadj, l.p_bonf, l.p_max), (1.0, 1.0, 1.0));
        }
        assert_eq!(rep.null_rows, vec![1, 2]);
    }

    #[test]
    fn zero_variance_with_nonzero_estimate_is_degenerate() {
        let mut eif = DMatrix::from_element(10, 4, 1.0);
        for i in 0..10 {
            eif[(i, 2)] = 3.0;
            eif[(i, 3)] = 3.0;
        }
        let st = stacked(eif);
        let k = ContrastMatrix::custom(DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]), 2).unwrap();
        assert!(matches!(
            contrast_estimate(&st, &k, None),
            Err(Error::DegenerateContrast { row: 1 })
        ));
    }

    #[test]
    fn wald_oracles() {
        let r1 = result_with(DMatrix::identity(1, 1), vec![1.959964]);
        let w = wald_test(&r1).unwrap();
        assert!((w.stat - 3.841459).abs() < 1e-4);
        assert!((w.p - 0.05).abs() < 1e-4);
        // chi-square(1) tail equals the two-sided normal tail
        assert!((w.p - 2.0 * (1.0 - normal_cdf(1.959964))).abs() < 1e-12);

        let r2 = result_with(DMatrix::identity(2, 2), vec![1.3, -0.4]);
        assert_eq!(wald_test(&r2).unwrap().stat, 1.3 * 1.3 + 0.4 * 0.4);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            wald_test(&result_with(singular, vec![1.0, 1.0])),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn max_test_oracles() {
        let cfg = MvnConfig::default();
        let one = max_test(&result_with(DMatrix::identity(1, 1), vec![1.959964]), 0.05, &cfg).unwrap();
        assert!((one.p - 0.05).abs() < 1e-4);

        let three = max_test(
            &result_with(DMatrix::identity(3, 3), vec![2.0, 0.5, -1.0]),
            0.05,
            &cfg,
        )
        .unwrap();
        let exact = 1.0 - (2.0 * normal_cdf(2.0) - 1.0).powi(3);
        assert!((three.p - exact).abs() < 2e-4);
        for (j, &t) in [2.0f64, 0.5, -1.0].iter().enumerate() {
            let f = 1.0 - (2.0 * normal_cdf(t.abs()) - 1.0).powi(3);
            assert!((three.p_local[j] - f).abs() < 2e-4);
        }
    }

    #[test]
    fn max_test_matches_plain_monte_carlo() {
        // equicorrelated rho = 0.5, k = 4: X_i = sqrt(rho) Z_0 + sqrt(1 - rho) Z_i
        let (k, rho, t) = (4usize, 0.5, 2.2);
        let r = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
        let res = max_test(
            &result_with(r, vec![t, 0.0, 0.0, 0.0]),
            0.05,
            &MvnConfig::default(),
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000_000usize;
        let mut outside = 0usize;
        for _ in 0..draws {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let mut inside = true;
            for _ in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                if (rho.sqrt() * z0 + (1.0 - rho).sqrt() * z).abs() > t {
                    inside = false;
                }
            }
            if !inside {
                outside += 1;
            }
        }
        let p_mc = outside as f64 / draws as f64;
        let se_mc = (p_mc * (1.0 - p_mc) / draws as f64).sqrt();
        let combined = (se_mc * se_mc + res.mc_error * res.mc_error).sqrt();
        assert!(
            (res.p - p_mc).abs() <= 3.0 * combined,
            "{} vs {p_mc} (se {combined})",
            res.p
        );
    }

    #[test]
    fn single_row_methods_coincide() {
        let res = result_with(DMatrix::identity(1, 1), vec![1.7]);
        let max = max_test(&res, 0.05, &MvnConfig::default()).unwrap();
        let th = Thresholds::new(0.05, 1, &max).unwrap();
        let l = &local_tests(&res, &max, &th)[0];
        assert!((l.p_unadj - l.p_bonf).abs() < 1e-15);
        assert!((l.p_unadj - l.p_max).abs() < 1e-6);
        for (a, b) in l.ci_pointwise.iter().zip(&l.ci_bonf) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in l.ci_pointwise.iter().zip(&l.ci_max) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn threshold_sandwich_and_p_value_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = MvnConfig::default();
        for case in 0..30 {
            let k = 2 + case % 5;
            let r = random_correlation(k, &mut rng);
            let t: Vec<f64> = (0..k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 * z.abs().min(1.2)
                })
                .collect();
            let res = result_with(r, t);
            let max = max_test(&res, 0.05, &cfg).unwrap();
            let th = Thresholds::new(0.05, k, &max).unwrap();
            let tol = 3.0 * max.mc_error.max(1e-5);
            assert!(
                th.pointwise <= th.max + tol && th.max <= th.bonferroni + tol,
                "{th:?}"
            );
            for l in local_tests(&res, &max, &th) {
                assert!(l.p_unadj <= l.p_max);
                assert!(l.p_max <= l.p_bonf + tol, "{} > {}", l.p_max, l.p_bonf);
                assert!((l.ci_max[1] - l.ci_max[0]) <= (l.ci_bonf[1] - l.ci_bonf[0]) + 1e-9);
                assert!((l.ci_pointwise[1] - l.ci_pointwise[0]) <= (l.ci_max[1] - l.ci_max[0]) + 1e-9);
            }
        }
    }

    #[test]
    fn quantile_nonincreasing_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let r = random_correlation(4, &mut rng);
        let res = result_with(r, vec![1.0, 2.0, 0.0, -1.0]);
        let cfg = MvnConfig::default();
        let qs: Vec<f64> = [0.10, 0.05, 0.01]
            .iter()
            .map(|&a| max_test(&res, a, &cfg).unwrap().q)
            .collect();
        assert!(qs[0] <= qs[1] && qs[1] <= qs[2], "{qs:?}");
    }

    #[test]
    fn global_and_local_max_decisions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cfg = InferenceConfig::default();
        for _ in 0..20 {
            let r = random_correlation(3, &mut rng);
            let t: Vec<f64> = (0..3)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    2.5 * z
                })
                .collect();
            let res = result_with(r, t);
            let rep = report_from_result(&res, ContrastKind::Custom, &cfg).unwrap();
            let any_local = rep.local_rejections(CiRule::Max).iter().any(|&b| b);
            assert_eq!(rep.max_rejects(), any_local);
        }
    }

    #[test]
    fn k1_wald_is_squared_z() {
        let res = result_with(DMatrix::identity(1, 1), vec![-2.345678]);
        assert!((wald_test(&res).unwrap().stat - 2.345678f64.powi(2)).abs() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn positive_row_scaling_leaves_tests_unchanged(seed in 0u64..500, row in 0usize..2, c in 0.01f64..100.0) {
            let st = stacked(random_eif(120, 6, seed));
            let k = build_contrast(ContrastKind::Baseline, 3).unwrap();
            let mut scaled = k.matrix.clone();
            scaled.row_mut(row).scale_mut(c);
            let k2 = ContrastMatrix::custom(scaled, 3).unwrap();
            let cfg = InferenceConfig::default();
            let a = run_inference(&st, &k, None, &cfg).unwrap();
            let b = run_inference(&st, &k2, None, &cfg).unwrap();
            prop_assert!((a.wald.stat - b.wald.stat).abs() <= 1e-8 * a.wald.stat.max(1.0));
            prop_assert!((a.max.p - b.max.p).abs() <= 1e-8);
            for (la, lb) in a.locals.iter().zip(&b.locals) {
                prop_assert!((la.t - lb.t).abs() <= 1e-9 * la.t.abs().max(1.0));
                prop_assert!((la.p_max - lb.p_max).abs() <= 1e-8);
                let f = if la.j - 1 == row { c } else { 1.0 };
                prop_assert!((la.ci_max[1] * f - lb.ci_max[1]).abs() <= 1e-9 * lb.ci_max[1].abs().max(1.0));
            }
            prop_assert_eq!(a.local_rejections(CiRule::Max), b.local_rejections(CiRule::Max));
        }
    }
}
