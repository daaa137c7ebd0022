//! Normal and chi-square distribution functions.

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2: f64 = std::f64::consts::LN_2;
/// 1 / sqrt(2 pi)
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)`, accurate in the right tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Two-sided normal p-value `2 (1 - Phi(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

// Acklam's rational approximation, relative error below 1.2e-9.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_690e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Fast inverse normal CDF without refinement. `p` is clamped into the open
/// unit interval, so this never fails; used inside integrand loops.
#[inline]
pub(crate) fn normal_quantile_fast(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    let p = p.clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q + ACKLAM_C[4]) * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((ACKLAM_A[0] * r + ACKLAM_A[1]) * r + ACKLAM_A[2]) * r + ACKLAM_A[3]) * r + ACKLAM_A[4]) * r
            + ACKLAM_A[5])
            * q
            / (((((ACKLAM_B[0] * r + ACKLAM_B[1]) * r + ACKLAM_B[2]) * r + ACKLAM_B[3]) * r + ACKLAM_B[4])
                * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q + ACKLAM_C[4]) * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    }
}

/// Inverse standard normal CDF, refined by Halley steps to full precision.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }
    let mut x = normal_quantile_fast(p);
    for _ in 0..3 {
        // Residual taken on whichever tail keeps relative precision.
        let e = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_sf(x)
        };
        let u = e / normal_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series expansion below `x < a + 1`, Lentz continued fraction for the
/// complement above it.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn regularized_upper_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum * gamma_prefactor(a, x)).min(1.0)
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (gamma_prefactor(a, x) * h).clamp(0.0, 1.0)
}

fn check_df(k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be >= 1".into()));
    }
    Ok(k as f64)
}

pub fn chisq_cdf(x: f64, k: u32) -> Result<f64> {
    let k = check_df(k)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square CDF requires x >= 0, got {x}")));
    }
    Ok(regularized_lower_gamma(0.5 * k, 0.5 * x))
}

/// Upper tail `P(chi2_k > x)`; used for Wald p-values.
pub fn chisq_sf(x: f64, k: u32) -> Result<f64> {
    let k = check_df(k)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square tail requires x >= 0, got {x}")));
    }
    Ok(regularized_upper_gamma(0.5 * k, 0.5 * x))
}

fn chisq_pdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * k;
    ((half - 1.0) * x.ln() - 0.5 * x - half * LN_2 - ln_gamma(half)).exp()
}

/// Chi-square quantile by Newton's method, safeguarded with a bisection
/// bracket. Stops once the CDF residual is at most 1e-12.
pub fn chisq_quantile(p: f64, k: u32) -> Result<f64> {
    let kf = check_df(k)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile requires p in (0, 1), got {p}"
        )));
    }
    let cdf = |x: f64| regularized_lower_gamma(0.5 * kf, 0.5 * x);

    let mut lo = 0.0;
    let mut hi = kf.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical("chi-square quantile bracket overflow".into()));
        }
    }
    // Wilson-Hilferty start, pulled into the bracket.
    let z = normal_quantile(p)?;
    let c = 2.0 / (9.0 * kf);
    let mut x = (kf * (1.0 - c + z * c.sqrt()).powi(3)).clamp(lo, hi);
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() <= 1e-12 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chisq_pdf(x, kf);
        let newton = if dens > 0.0 { x - f / dens } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(x);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, independent of libm; accurate for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn cdf_at_zero_is_half() {
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn cdf_matches_erf_series() {
        let oracle = 0.5 * (1.0 + erf_series(1.959964 / SQRT_2));
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        assert!((normal_cdf(1.959964) - oracle).abs() < 1e-13);
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let o = 0.5 * (1.0 + erf_series(x / SQRT_2));
            assert!((normal_cdf(x) - o).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn cdf_tail_against_mills_ratio() {
        // Laplace continued fraction for the Mills ratio, far tail.
        for &x in &[5.0_f64, 6.5, 8.0] {
            let mut cf = x;
            for k in (1..200).rev() {
                cf = x + k as f64 / cf;
            }
            let sf = normal_pdf(x) / cf;
            assert!((normal_sf(x) - sf).abs() <= 1e-12 * sf, "x={x}");
            assert!((normal_cdf(-x) - sf).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in -30..=30 {
            let x = i as f64 * 0.1;
            let back = normal_quantile(normal_cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-9, "x={x} back={back}");
        }
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() <= 1e-10 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn quantile_domain_errors() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn chisq_basic_identities() {
        for k in 1..10 {
            assert_eq!(chisq_cdf(0.0, k).unwrap(), 0.0);
        }
        for i in 0..60 {
            let x = i as f64 * 0.5;
            let exact = 1.0 - (-x / 2.0).exp();
            assert!((chisq_cdf(x, 2).unwrap() - exact).abs() < 1e-12, "x={x}");
        }
        // chi2_1 = Z^2
        for &x in &[0.1, 1.0, 3.841_458_820_694_124, 10.0] {
            let via_normal = 1.0 - 2.0 * normal_sf(f64::sqrt(x));
            assert!((chisq_cdf(x, 1).unwrap() - via_normal).abs() < 1e-12);
        }
    }

    #[test]
    fn chisq_quantile_matches_squared_normal() {
        let z = normal_quantile(0.975).unwrap();
        let q = chisq_quantile(0.95, 1).unwrap();
        assert!((q - z * z).abs() < 1e-8);
        for k in [1u32, 2, 3, 5, 10, 30] {
            for &p in &[0.01, 0.5, 0.95, 0.999] {
                let q = chisq_quantile(p, k).unwrap();
                assert!((chisq_cdf(q, k).unwrap() - p).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn chisq_domain_errors() {
        assert!(chisq_cdf(-1.0, 2).is_err());
        assert!(chisq_cdf(1.0, 0).is_err());
        assert!(chisq_quantile(1.0, 3).is_err());
    }

    #[test]
    fn sf_complements_cdf() {
        for k in [1u32, 3, 8] {
            for &x in &[0.5, 2.0, 7.5, 40.0] {
                let s = chisq_sf(x, k).unwrap() + chisq_cdf(x, k).unwrap();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }
}
