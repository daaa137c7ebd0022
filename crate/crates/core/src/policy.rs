//! Modified treatment policies `d(a_t, h_t)`.
//!
//! A policy maps the natural value of exposure and the history at time `t`
//! to an intervened exposure. The variants cover no intervention, additive
//! shifts (optionally only applied when the shifted value stays at or above a
//! lower bound), thresholds, and arbitrary user callbacks.

use std::fmt;
use std::sync::Arc;

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};

/// History-dependent bound `u_t(h_t)`.
pub type BoundFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;
/// Custom policy `(a, h, t) -> a^d`.
pub type PolicyFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;

/// Where the lower bound of a bounded shift comes from.
#[derive(Clone)]
pub enum BoundSource {
    Constant(f64),
    /// Covariate `L{t}_{j}` at the same time point (1-based `j`).
    Covariate(usize),
    /// Function of the history features `H_t` and time.
    Callback(BoundFn),
}

impl fmt::Debug for BoundSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundSource::Constant(c) => write!(f, "Constant({c})"),
            BoundSource::Covariate(j) => write!(f, "Covariate(L{{t}}_{j})"),
            BoundSource::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

#[derive(Clone)]
pub enum PolicyKind {
    Identity,
    /// `a - delta` when `a - delta >= bound`, otherwise `a`. Without a bound
    /// the shift always applies.
    AdditiveShift {
        delta: f64,
        bound: Option<BoundSource>,
    },
    /// `max(a, floor)`.
    Threshold {
        floor: f64,
    },
    Custom(PolicyFn),
}

impl fmt::Debug for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Identity => f.write_str("Identity"),
            PolicyKind::AdditiveShift { delta, bound } => f
                .debug_struct("AdditiveShift")
                .field("delta", delta)
                .field("bound", bound)
                .finish(),
            PolicyKind::Threshold { floor } => f.debug_struct("Threshold").field("floor", floor).finish(),
            PolicyKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub label: String,
}

impl Policy {
    pub fn identity() -> Self {
        Self {
            kind: PolicyKind::Identity,
            label: "identity".into(),
        }
    }

    /// Unbounded shift `a - delta`.
    pub fn shift(delta: f64) -> Self {
        Self {
            kind: PolicyKind::AdditiveShift { delta, bound: None },
            label: format!("shift:{}", -delta),
        }
    }

    pub fn bounded_shift(delta: f64, bound: BoundSource) -> Self {
        let label = match &bound {
            BoundSource::Constant(c) => format!("shift:{},bound={c}", -delta),
            BoundSource::Covariate(j) => format!("shift:{},bound=L{{t}}_{j}", -delta),
            BoundSource::Callback(_) => format!("shift:{},bound=<callback>", -delta),
        };
        Self {
            kind: PolicyKind::AdditiveShift {
                delta,
                bound: Some(bound),
            },
            label,
        }
    }

    pub fn threshold(floor: f64) -> Self {
        Self {
            kind: PolicyKind::Threshold { floor },
            label: format!("threshold:{floor}"),
        }
    }

    pub fn custom(label: impl Into<String>, f: PolicyFn) -> Self {
        Self {
            kind: PolicyKind::Custom(f),
            label: label.into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Structural check on the declared variant; a zero shift is not identity.
    pub fn is_identity(&self) -> bool {
        matches!(self.kind, PolicyKind::Identity)
    }

    /// Whether [`Policy::apply`] needs a bound value.
    pub fn needs_bound(&self) -> bool {
        matches!(self.kind, PolicyKind::AdditiveShift { bound: Some(_), .. })
    }

    /// `d(a, h)` at time `t`. `bound` must be given for bounded shifts and is
    /// ignored otherwise.
    pub fn apply(&self, a: f64, h: &[f64], t: usize, bound: Option<f64>) -> Result<f64> {
        match &self.kind {
            PolicyKind::Identity => Ok(a),
            PolicyKind::AdditiveShift { delta, bound: src } => {
                let shifted = a - delta;
                match (src, bound) {
                    (None, _) => Ok(shifted),
                    (Some(_), Some(u)) => Ok(if shifted >= u { shifted } else { a }),
                    (Some(_), None) => Err(Error::Policy(format!(
                        "policy {} needs a bound value at time {t}",
                        self.label
                    ))),
                }
            }
            PolicyKind::Threshold { floor } => Ok(a.max(*floor)),
            PolicyKind::Custom(f) => {
                let v = f(a, h, t);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Policy(format!(
                        "custom policy {} returned {v} at time {t} for a = {a}",
                        self.label
                    )))
                }
            }
        }
    }

    /// Intervened exposures `A^d_t` for every individual, resolving bounds
    /// from the dataset.
    pub fn intervene(&self, data: &LongitudinalDataset, t: usize) -> Result<Vec<f64>> {
        let a = data.exposure(t);
        if self.is_identity() {
            return Ok(a);
        }
        let needs_history = matches!(
            self.kind,
            PolicyKind::Custom(_)
                | PolicyKind::AdditiveShift {
                    bound: Some(BoundSource::Callback(_)),
                    ..
                }
        );
        let h = needs_history.then(|| data.history_matrix(t));
        let mut row = Vec::new();
        let mut out = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            if let Some(h) = &h {
                row.clear();
                row.extend(h.row(i).iter().copied());
            }
            let bound = match &self.kind {
                PolicyKind::AdditiveShift { bound: Some(src), .. } => Some(match src {
                    BoundSource::Constant(c) => *c,
                    BoundSource::Covariate(j) => {
                        let l = data.covariates(t);
                        if *j == 0 || *j > l.ncols() {
                            return Err(Error::Policy(format!(
                                "bound column L{t}_{j} does not exist (p_{t} = {})",
                                l.ncols()
                            )));
                        }
                        l[(i, j - 1)]
                    }
                    BoundSource::Callback(f) => f(&row, t),
                }),
                _ => None,
            };
            out.push(self.apply(a[i], &row, t, bound)?);
        }
        Ok(out)
    }

    /// Parses the CLI policy syntax.
    ///
    /// * `identity`
    /// * `shift:<amount>`: adds `amount` to the exposure, so `shift:-1` is
    ///   `a - 1`
    /// * `shift:<amount>,bound=<c>` or `shift:<amount>,bound=L{t}_<j>`:
    ///   shift only when the result stays at or above the bound
    /// * `threshold:<floor>`
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("identity") || spec.eq_ignore_ascii_case("none") {
            return Ok(Self::identity());
        }
        let (name, args) = spec
            .split_once(':')
            .ok_or_else(|| Error::Policy(format!("unrecognized policy {spec:?}")))?;
        let mut parts = args.split(',').map(str::trim);
        let first = parts.next().unwrap_or("");
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Policy(format!("bad number {s:?} in policy {spec:?}")))
        };
        let policy = match name.trim() {
            "shift" => {
                let amount = num(first)?;
                let mut bound = None;
                for p in parts {
                    let value = p
                        .strip_prefix("bound=")
                        .ok_or_else(|| Error::Policy(format!("unknown shift option {p:?} in {spec:?}")))?;
                    bound = Some(parse_bound(value, spec)?);
                }
                match bound {
                    Some(b) => Self::bounded_shift(-amount, b),
                    None => Self::shift(-amount),
                }
            }
            "threshold" => {
                if parts.next().is_some() {
                    return Err(Error::Policy(format!("threshold takes one value: {spec:?}")));
                }
                Self::threshold(num(first)?)
            }
            other => return Err(Error::Policy(format!("unknown policy kind {other:?}"))),
        };
        Ok(policy.with_label(spec))
    }
}

fn parse_bound(value: &str, spec: &str) -> Result<BoundSource> {
    if let Some(rest) = value.strip_prefix("L{t}_") {
        let j: usize = rest
            .parse()
            .ok()
            .filter(|&j| j >= 1)
            .ok_or_else(|| Error::Policy(format!("bad bound column in {spec:?}")))?;
        return Ok(BoundSource::Covariate(j));
    }
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(BoundSource::Constant)
        .ok_or_else(|| Error::Policy(format!("bad bound {value:?} in {spec:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn unbounded_shift() {
        assert_eq!(Policy::shift(1.0).apply(5.0, &[], 1, None).unwrap(), 4.0);
    }

    #[test]
    fn bounded_shift_falls_back() {
        let p = Policy::bounded_shift(2.0, BoundSource::Constant(3.0));
        assert_eq!(p.apply(4.0, &[], 1, Some(3.0)).unwrap(), 4.0);
        assert_eq!(p.apply(5.0, &[], 1, Some(3.0)).unwrap(), 3.0);
        assert!(p.apply(5.0, &[], 1, None).is_err());
    }

    #[test]
    fn identity_and_threshold() {
        let x = 7.25_f64;
        let out = Policy::identity().apply(x, &[], 2, None).unwrap();
        assert_eq!(out.to_bits(), x.to_bits());
        let th = Policy::threshold(5.0);
        assert_eq!(th.apply(3.0, &[], 1, None).unwrap(), 5.0);
        assert_eq!(th.apply(6.0, &[], 1, None).unwrap(), 6.0);
    }

    #[test]
    fn identity_detection_is_structural() {
        assert!(Policy::identity().is_identity());
        assert!(!Policy::shift(0.0).is_identity());
        assert!(!Policy::threshold(f64::NEG_INFINITY).is_identity());
    }

    #[test]
    fn custom_non_finite_is_error() {
        let p = Policy::custom("bad", Arc::new(|a, _, _| a / 0.0));
        assert!(matches!(p.apply(1.0, &[], 1, None), Err(Error::Policy(_))));
    }

    #[test]
    fn parse_syntax() {
        let p = Policy::parse("shift:-1").unwrap();
        assert_eq!(p.apply(5.0, &[], 1, None).unwrap(), 4.0);
        assert_eq!(p.label, "shift:-1");
        let b = Policy::parse("shift:-1,bound=L{t}_2").unwrap();
        assert!(matches!(
            b.kind,
            PolicyKind::AdditiveShift {
                bound: Some(BoundSource::Covariate(2)),
                ..
            }
        ));
        assert!(Policy::parse("identity").unwrap().is_identity());
        assert_eq!(
            Policy::parse("threshold:5")
                .unwrap()
                .apply(1.0, &[], 1, None)
                .unwrap(),
            5.0
        );
        assert!(Policy::parse("shift:abc").is_err());
        assert!(Policy::parse("warp:1").is_err());
        assert!(Policy::parse("shift:1,upper=2").is_err());
    }

    #[test]
    fn intervene_resolves_covariate_bound() {
        let l1 = DMatrix::from_row_slice(3, 2, &[0.0, 3.0, 0.0, 1.0, 0.0, 10.0]);
        let a = DMatrix::from_row_slice(3, 1, &[5.0, 5.0, 5.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let d = LongitudinalDataset::new(vec![l1], a, y, None).unwrap();
        let p = Policy::parse("shift:-1,bound=L{t}_2").unwrap();
        assert_eq!(p.intervene(&d, 1).unwrap(), vec![4.0, 4.0, 5.0]);
        let missing = Policy::parse("shift:-1,bound=L{t}_3").unwrap();
        assert!(missing.intervene(&d, 1).is_err());
    }

    #[test]
    fn callback_bound_sees_history() {
        let l1 = DMatrix::from_row_slice(2, 1, &[2.0, 9.0]);
        let a = DMatrix::from_row_slice(2, 1, &[5.0, 5.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let d = LongitudinalDataset::new(vec![l1], a, y, None).unwrap();
        let p = Policy::bounded_shift(1.0, BoundSource::Callback(Arc::new(|h, _| h[0])));
        assert_eq!(p.intervene(&d, 1).unwrap(), vec![4.0, 5.0]);
    }
}
