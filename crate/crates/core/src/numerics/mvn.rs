//! Probabilities of symmetric rectangles `[-t, t]^k` under a centred
//! multivariate normal with correlation matrix `R`.
//!
//! The integral is mapped to the unit cube by sequential conditioning on a
//! Cholesky factor (variables reordered so the narrowest conditional interval
//! comes first), then averaged over a randomly shifted rank-1 Korobov lattice
//! with a tent periodization. The spread of the per-shift averages gives the
//! reported standard error.
//!
//! An integrator built once for a given `R` evaluates `g(t; R)` with the same
//! lattice and shifts for every `t`, so root-finding on `t` sees a smooth,
//! reproducible function.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::special::{normal_cdf, normal_pdf, normal_quantile, normal_quantile_fast, normal_sf};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvnConfig {
    /// Largest lattice size per randomization.
    pub max_points: usize,
    /// Lattice size the adaptive doubling starts from.
    pub min_points: usize,
    /// Number of random shifts.
    pub shifts: usize,
    /// Standard error at which doubling stops.
    pub target_se: f64,
    pub seed: u64,
    /// Diagonal loadings tried in order until the factorization succeeds.
    pub jitter: Vec<f64>,
}

impl Default for MvnConfig {
    fn default() -> Self {
        Self {
            max_points: 1 << 15,
            min_points: 1 << 10,
            shifts: 12,
            target_se: 1e-4,
            seed: 0x6d76_6e5f_7365_6564,
            jitter: vec![0.0, 1e-10, 1e-8, 1e-6],
        }
    }
}

impl MvnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_points == 0 || self.min_points == 0 || self.shifts < 2 {
            return Err(Error::Config(
                "MVN budgets must be positive and use at least 2 shifts".into(),
            ));
        }
        if self.min_points > self.max_points {
            return Err(Error::Config("mvn min_points exceeds max_points".into()));
        }
        if !(self.target_se > 0.0) {
            return Err(Error::Config("mvn target_se must be > 0".into()));
        }
        if self.jitter.is_empty() {
            return Err(Error::Config("mvn jitter schedule is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Lattice points per randomization actually used.
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnQuantile {
    pub quantile: f64,
    /// `g(quantile; R)` as evaluated during the search.
    pub probability: f64,
    pub std_error: f64,
    pub points: usize,
}

/// A reusable evaluator of `g(t; R)` for one correlation matrix.
#[derive(Debug, Clone)]
pub struct RectangleIntegrator {
    dim: usize,
    /// Row-major lower Cholesky factor of the reordered, jittered matrix.
    chol: Vec<f64>,
    order: Vec<usize>,
    shifts: Vec<Vec<f64>>,
    jitter: f64,
    config: MvnConfig,
}

impl RectangleIntegrator {
    /// Factorizes `r`, choosing the variable order at `reference_t`.
    pub fn new(r: &DMatrix<f64>, config: &MvnConfig, reference_t: f64) -> Result<Self> {
        config.validate()?;
        let k = check_correlation(r)?;
        let mut last_err = None;
        for &eps in &config.jitter {
            let mut m = r.clone();
            if eps > 0.0 {
                for i in 0..k {
                    m[(i, i)] += eps;
                }
                m /= 1.0 + eps;
            }
            match ordered_cholesky(&m, reference_t.max(1e-3)) {
                Ok((order, chol)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    let shifts = (0..config.shifts)
                        .map(|_| (0..k.saturating_sub(1)).map(|_| rng.random::<f64>()).collect())
                        .collect();
                    return Ok(Self {
                        dim: k,
                        chol,
                        order,
                        shifts,
                        jitter: eps,
                        config: config.clone(),
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Numerical("cholesky failed".into())))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Permutation applied to the variables before factorization.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Evaluates `g(t)` on a lattice of `points` points per shift.
    pub fn evaluate(&self, t: f64, points: usize) -> MvnEstimate {
        if !(t > 0.0) {
            return MvnEstimate {
                estimate: 0.0,
                std_error: 0.0,
                points,
            };
        }
        if t.is_infinite() {
            return MvnEstimate {
                estimate: 1.0,
                std_error: 0.0,
                points,
            };
        }
        if self.dim == 1 {
            return MvnEstimate {
                estimate: (1.0 - 2.0 * normal_sf(t)).clamp(0.0, 1.0),
                std_error: 0.0,
                points,
            };
        }

        let d = self.dim - 1;
        let gen = korobov_generator(points, d);
        let n = points as u64;
        let inv_n = 1.0 / points as f64;
        let mut y = vec![0.0; self.dim];
        let mut w = vec![0.0; d];
        let mut means = Vec::with_capacity(self.shifts.len());
        for shift in &self.shifts {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..d {
                    let base = ((i * gen[j]) % n) as f64 * inv_n;
                    let x = (base + shift[j]).fract();
                    w[j] = (2.0 * x - 1.0).abs();
                }
                acc += self.integrand(t, &w, &mut y);
            }
            means.push(acc * inv_n);
        }
        let s = means.len() as f64;
        let mean = means.iter().sum::<f64>() / s;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (s - 1.0);
        MvnEstimate {
            estimate: mean.clamp(0.0, 1.0),
            std_error: (var / s).sqrt(),
            points,
        }
    }

    /// Doubles the lattice size from `min_points` until the standard error
    /// reaches the target or the budget is exhausted.
    pub fn evaluate_adaptive(&self, t: f64) -> MvnEstimate {
        let mut points = self.config.min_points.next_power_of_two();
        let max = self.config.max_points.next_power_of_two();
        loop {
            let est = self.evaluate(t, points);
            if est.std_error <= self.config.target_se || points >= max {
                if est.std_error > self.config.target_se {
                    log::warn!(
                        "MVN standard error {:.2e} above target {:.2e} after {} points",
                        est.std_error,
                        self.config.target_se,
                        points
                    );
                }
                return est;
            }
            points *= 2;
        }
    }

    fn integrand(&self, t: f64, w: &[f64], y: &mut [f64]) -> f64 {
        let k = self.dim;
        let mut prod = 1.0;
        for i in 0..k {
            let row = &self.chol[i * k..i * k + i + 1];
            let mut s = 0.0;
            for m in 0..i {
                s += row[m] * y[m];
            }
            let diag = row[i];
            let a = (-t - s) / diag;
            let b = (t - s) / diag;
            let (lo, width) = interval_mass(a, b);
            if width <= 0.0 {
                return 0.0;
            }
            prod *= width;
            if i + 1 < k {
                y[i] = normal_quantile_fast(lo + w[i] * width);
            }
        }
        prod
    }
}

/// Returns `(Phi(a), Phi(b) - Phi(a))`, with the difference taken on the tail
/// that avoids cancellation.
#[inline]
fn interval_mass(a: f64, b: f64) -> (f64, f64) {
    if a > 0.0 {
        let sa = normal_sf(a);
        (1.0 - sa, sa - normal_sf(b))
    } else {
        let pa = normal_cdf(a);
        (pa, normal_cdf(b) - pa)
    }
}

fn check_correlation(r: &DMatrix<f64>) -> Result<usize> {
    let k = r.nrows();
    if k == 0 || r.ncols() != k {
        return Err(Error::Validation(format!(
            "correlation matrix must be square and nonempty, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    for i in 0..k {
        if (r[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::Validation(format!(
                "correlation matrix diagonal entry {i} is {} (expected 1)",
                r[(i, i)]
            )));
        }
        for j in 0..i {
            let (a, b) = (r[(i, j)], r[(j, i)]);
            if !a.is_finite() || (a - b).abs() > 1e-10 || a.abs() > 1.0 + 1e-10 {
                return Err(Error::Validation(format!(
                    "correlation matrix entry ({i}, {j}) invalid or asymmetric"
                )));
            }
        }
    }
    Ok(k)
}

/// Cholesky factorization with Genz-Bretz variable prioritization for the
/// symmetric interval `[-t, t]`.
fn ordered_cholesky(r: &DMatrix<f64>, t: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    let k = r.nrows();
    let mut cov = r.clone();
    let mut order: Vec<usize> = (0..k).collect();
    let mut l = vec![0.0; k * k];
    let mut y = vec![0.0; k];

    for i in 0..k {
        let mut best = i;
        let mut best_mass = f64::INFINITY;
        for j in i..k {
            let mut s = 0.0;
            let mut var = cov[(j, j)];
            for m in 0..i {
                s += l[j * k + m] * y[m];
                var -= l[j * k + m] * l[j * k + m];
            }
            let mass = if var > 1e-12 {
                let sd = var.sqrt();
                interval_mass((-t - s) / sd, (t - s) / sd).1
            } else {
                1.0
            };
            if mass < best_mass {
                best_mass = mass;
                best = j;
            }
        }
        if best != i {
            cov.swap_rows(i, best);
            cov.swap_columns(i, best);
            order.swap(i, best);
            for m in 0..i {
                l.swap(i * k + m, best * k + m);
            }
        }

        let mut var = cov[(i, i)];
        let mut s = 0.0;
        for m in 0..i {
            var -= l[i * k + m] * l[i * k + m];
            s += l[i * k + m] * y[m];
        }
        if !(var > 1e-12) {
            return Err(Error::Numerical(format!(
                "correlation matrix is not positive definite (pivot {i}, residual variance {var:.3e})"
            )));
        }
        let diag = var.sqrt();
        l[i * k + i] = diag;
        for j in i + 1..k {
            let mut v = cov[(j, i)];
            for m in 0..i {
                v -= l[j * k + m] * l[i * k + m];
            }
            l[j * k + i] = v / diag;
        }
        let a = (-t - s) / diag;
        let b = (t - s) / diag;
        let (_, mass) = interval_mass(a, b);
        y[i] = if mass > 1e-300 {
            (normal_pdf(a) - normal_pdf(b)) / mass
        } else {
            0.5 * (a.max(-10.0) + b.min(10.0))
        };
    }
    Ok((order, l))
}

/// Korobov generating vector `(1, a, a^2, ...) mod n` for an `n`-point
/// lattice in `dim` dimensions. The multiplier is picked from a fixed
/// candidate set by the weighted P2 criterion and cached.
pub fn korobov_generator(n: usize, dim: usize) -> Vec<u64> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Vec<u64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("lattice cache poisoned").get(&(n, dim)) {
        return v.clone();
    }
    let v = search_korobov(n, dim);
    cache
        .lock()
        .expect("lattice cache poisoned")
        .insert((n, dim), v.clone());
    v
}

fn korobov_vector(a: u64, n: u64, dim: usize) -> Vec<u64> {
    let mut v = Vec::with_capacity(dim);
    let mut z = 1 % n.max(1);
    for _ in 0..dim {
        v.push(z);
        z = (z * a) % n;
    }
    v
}

fn search_korobov(n: usize, dim: usize) -> Vec<u64> {
    let nn = n as u64;
    if dim <= 1 || n < 4 {
        return korobov_vector(1, nn, dim);
    }
    const CANDIDATES: usize = 48;
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let weights: Vec<f64> = (1..=dim).map(|j| 1.0 / (j * j) as f64).collect();
    let two_pi_sq = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

    let mut best = (f64::INFINITY, 1u64);
    for c in 1..=CANDIDATES {
        let mut a = ((c as f64 * golden).fract() * n as f64) as u64 | 1;
        if a <= 1 {
            a = 3;
        }
        let z = korobov_vector(a, nn, dim);
        // P2 with product weights; smaller is better.
        let mut total = 0.0;
        for i in 0..nn {
            let mut prod = 1.0;
            for j in 0..dim {
                let x = ((i * z[j]) % nn) as f64 / n as f64;
                prod *= 1.0 + weights[j] * two_pi_sq * (x * x - x + 1.0 / 6.0);
            }
            total += prod;
        }
        let crit = total / n as f64 - 1.0;
        if crit < best.0 {
            best = (crit, a);
        }
    }
    korobov_vector(best.1, nn, dim)
}

/// `g(t; R)`: probability that every coordinate of `N(0, R)` lies in `[-t, t]`.
pub fn mvn_rect_prob(t: f64, r: &DMatrix<f64>, config: &MvnConfig) -> Result<MvnEstimate> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!(
            "rectangle half-width must be >= 0, got {t}"
        )));
    }
    let integrator = RectangleIntegrator::new(r, config, t)?;
    Ok(integrator.evaluate_adaptive(t))
}

/// Solves `g(t; R) = p` by bisection with common random numbers.
pub fn mvn_rect_quantile(p: f64, r: &DMatrix<f64>, config: &MvnConfig) -> Result<MvnQuantile> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must be in (0, 1), got {p}")));
    }
    let k = r.nrows();
    let lo = normal_quantile(0.5 * (1.0 + p))?;
    let hi = normal_quantile(1.0 - (1.0 - p) / (2.0 * k.max(1) as f64))?;
    let integrator = RectangleIntegrator::new(r, config, 0.5 * (lo + hi))?;
    rect_quantile_with(&integrator, p, lo, hi)
}

/// Bisection on a prebuilt integrator. The lattice size is fixed by an
/// adaptive evaluation at the bracket midpoint and reused for every step.
pub(crate) fn rect_quantile_with(
    integrator: &RectangleIntegrator,
    p: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<MvnQuantile> {
    if integrator.dim() == 1 || hi - lo <= 1e-12 {
        let q = lo;
        let est = integrator.evaluate(q, integrator.config.min_points);
        return Ok(MvnQuantile {
            quantile: q,
            probability: est.estimate,
            std_error: est.std_error,
            points: est.points,
        });
    }
    let probe = integrator.evaluate_adaptive(0.5 * (lo + hi));
    let points = probe.points;
    let slack = (3.0 * probe.std_error).max(1e-4);

    let g_lo = integrator.evaluate(lo, points);
    let g_hi = integrator.evaluate(hi, points);
    if g_lo.estimate > p + slack || g_hi.estimate < p - slack {
        return Err(Error::Numerical(format!(
            "rectangle quantile bracket [{lo:.6}, {hi:.6}] does not contain p = {p} \
             (g(lo) = {:.6}, g(hi) = {:.6})",
            g_lo.estimate, g_hi.estimate
        )));
    }
    if g_lo.estimate >= p {
        return Ok(MvnQuantile {
            quantile: lo,
            probability: g_lo.estimate,
            std_error: g_lo.std_error,
            points,
        });
    }
    if g_hi.estimate <= p {
        return Ok(MvnQuantile {
            quantile: hi,
            probability: g_hi.estimate,
            std_error: g_hi.std_error,
            points,
        });
    }
    let mut last = g_hi;
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        let g = integrator.evaluate(mid, points);
        if g.estimate < p {
            lo = mid;
        } else {
            hi = mid;
            last = g;
        }
    }
    Ok(MvnQuantile {
        quantile: hi,
        probability: last.estimate,
        std_error: last.std_error,
        points,
    })
}
