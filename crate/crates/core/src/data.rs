//! Longitudinal panel representation, CSV ingestion and the estimate
//! containers shared by the estimation and inference modules.
//!
//! Time indices in this crate are 1-based (`t = 1..=tau`), matching the
//! `A{t}` / `Y{t}` / `L{t}_{j}` column names of the wide CSV format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Complete n x tau panel `(L_1, A_1, Y_1, ..., L_tau, A_tau, Y_tau)`.
///
/// Immutable after construction; every matrix has exactly `n` rows and no
/// missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    n: usize,
    tau: usize,
    assessment_times: Vec<f64>,
    covariates: Vec<DMatrix<f64>>,
    exposures: DMatrix<f64>,
    outcomes: DMatrix<f64>,
}

impl LongitudinalDataset {
    /// Builds and validates a dataset. `covariates[t - 1]` is the `n x p_t`
    /// matrix `L_t`; `exposures` and `outcomes` are `n x tau`.
    pub fn new(
        covariates: Vec<DMatrix<f64>>,
        exposures: DMatrix<f64>,
        outcomes: DMatrix<f64>,
        assessment_times: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = exposures.nrows();
        let tau = exposures.ncols();
        if tau == 0 {
            return Err(Error::Validation("dataset needs at least one time point".into()));
        }
        if n < 2 {
            return Err(Error::Validation(format!(
                "dataset needs at least 2 individuals, got {n}"
            )));
        }
        if outcomes.nrows() != n || outcomes.ncols() != tau {
            return Err(Error::Validation(format!(
                "outcome matrix is {}x{}, expected {n}x{tau}",
                outcomes.nrows(),
                outcomes.ncols()
            )));
        }
        if covariates.len() != tau {
            return Err(Error::Validation(format!(
                "expected covariate blocks for {tau} time points, got {}",
                covariates.len()
            )));
        }
        for (t, l) in covariates.iter().enumerate() {
            if l.nrows() != n {
                return Err(Error::Validation(format!(
                    "covariate block L{} has {} rows, expected {n}",
                    t + 1,
                    l.nrows()
                )));
            }
        }
        let check = |m: &DMatrix<f64>, name: &dyn Fn(usize) -> String| -> Result<()> {
            for i in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if !m[(i, c)].is_finite() {
                        return Err(Error::Data {
                            row: i + 1,
                            column: name(c),
                            message: "missing or non-finite value".into(),
                        });
                    }
                }
            }
            Ok(())
        };
        check(&exposures, &|c| format!("A{}", c + 1))?;
        check(&outcomes, &|c| format!("Y{}", c + 1))?;
        for (t, l) in covariates.iter().enumerate() {
            check(l, &|c| format!("L{}_{}", t + 1, c + 1))?;
        }

        let assessment_times = assessment_times.unwrap_or_else(|| (1..=tau).map(|t| t as f64).collect());
        if assessment_times.len() != tau {
            return Err(Error::Validation(format!(
                "expected {tau} assessment times, got {}",
                assessment_times.len()
            )));
        }
        if assessment_times.iter().any(|v| !v.is_finite())
            || assessment_times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Validation(format!(
                "assessment times must be finite and strictly increasing: {assessment_times:?}"
            )));
        }

        Ok(Self {
            n,
            tau,
            assessment_times,
            covariates,
            exposures,
            outcomes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn assessment_times(&self) -> &[f64] {
        &self.assessment_times
    }

    /// Number of covariates `p_t` at time `t`.
    pub fn covariate_count(&self, t: usize) -> usize {
        self.covariates[t - 1].ncols()
    }

    pub fn covariate_counts(&self) -> Vec<usize> {
        self.covariates.iter().map(|l| l.ncols()).collect()
    }

    /// `L_t` as an `n x p_t` matrix.
    pub fn covariates(&self, t: usize) -> &DMatrix<f64> {
        &self.covariates[t - 1]
    }

    pub fn exposures(&self) -> &DMatrix<f64> {
        &self.exposures
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    /// Column `A_t`.
    pub fn exposure(&self, t: usize) -> Vec<f64> {
        self.exposures.column(t - 1).iter().copied().collect()
    }

    /// Column `Y_t`.
    pub fn outcome(&self, t: usize) -> Vec<f64> {
        self.outcomes.column(t - 1).iter().copied().collect()
    }

    fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tau {
            return Err(Error::Validation(format!(
                "time index {t} out of range 1..={}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Width `q` of the history `H_t`: `(t-1) + sum_{s<=t} p_s + (t-1)`.
    pub fn history_width(&self, t: usize) -> usize {
        let ls: usize = self.covariates[..t].iter().map(|l| l.ncols()).sum();
        2 * (t - 1) + ls
    }

    /// Column names of `H_t` in feature order.
    pub fn history_names(&self, t: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(self.history_width(t));
        names.extend((1..t).map(|s| format!("A{s}")));
        for s in 1..=t {
            names.extend((1..=self.covariate_count(s)).map(|j| format!("L{s}_{j}")));
        }
        names.extend((1..t).map(|s| format!("Y{s}")));
        names
    }

    /// Materializes `H_t = (A_1..A_{t-1}, L_1..L_t, Y_1..Y_{t-1})` as an
    /// `n x q` matrix: all exposures, then all covariates, then all outcomes,
    /// each block in time order.
    pub fn history_features(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        Ok(self.history_matrix(t))
    }

    pub(crate) fn history_matrix(&self, t: usize) -> DMatrix<f64> {
        let q = self.history_width(t);
        let mut h = DMatrix::zeros(self.n, q);
        let mut c = 0;
        for s in 1..t {
            h.set_column(c, &self.exposures.column(s - 1));
            c += 1;
        }
        for s in 1..=t {
            let l = &self.covariates[s - 1];
            for j in 0..l.ncols() {
                h.set_column(c, &l.column(j));
                c += 1;
            }
        }
        for s in 1..t {
            h.set_column(c, &self.outcomes.column(s - 1));
            c += 1;
        }
        h
    }

    /// Regression design `[a | H_t]` with the supplied exposure column.
    pub(crate) fn exposure_design(&self, t: usize, exposure: &[f64]) -> DMatrix<f64> {
        let h = self.history_matrix(t);
        let mut x = DMatrix::zeros(self.n, h.ncols() + 1);
        for i in 0..self.n {
            x[(i, 0)] = exposure[i];
        }
        x.view_mut((0, 1), (self.n, h.ncols())).copy_from(&h);
        x
    }

    /// Loads a wide-format CSV file.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_csv_str(&text)
    }

    /// Parses the wide CSV format.
    ///
    /// Leading lines starting with `#` are comments; a comment of the form
    /// `# v: 0,2,4,6` supplies the assessment times (default `1..=tau`).
    /// The header must name `A{t}`, `Y{t}` for `t = 1..=tau` and
    /// `L{t}_{j}` for `j = 1..=p_t`; other columns are ignored and column
    /// order does not matter.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut times = None;
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(list) = comment.strip_prefix("v:") {
                    times = Some(parse_times(list)?);
                }
                body_start += line.len();
            } else if trimmed.is_empty() && body_start == 0 {
                body_start += line.len();
            } else {
                break;
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text[body_start..].as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
            .clone();

        let mut a_cols = BTreeMap::new();
        let mut y_cols = BTreeMap::new();
        let mut l_cols: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        for (idx, name) in headers.iter().enumerate() {
            match parse_column(name) {
                Some(Column::A(t)) => {
                    if a_cols.insert(t, idx).is_some() {
                        return Err(Error::Schema(format!("duplicate column {name}")));
                    }
                }
                Some(Column::Y(t)) => {
                    if y_cols.insert(t, idx).is_some() {
                        return Err(Error::Schema(format!("duplicate column {name}")));
                    }
                }
                Some(Column::L(t, j)) => {
                    if l_cols.entry(t).or_default().insert(j, idx).is_some() {
                        return Err(Error::Schema(format!("duplicate column {name}")));
                    }
                }
                None => {}
            }
        }
        let tau = a_cols
            .keys()
            .chain(y_cols.keys())
            .chain(l_cols.keys())
            .copied()
            .max()
            .ok_or_else(|| Error::Schema("missing column A1".into()))?;

        let mut layout = Vec::with_capacity(tau);
        for t in 1..=tau {
            let a = *a_cols
                .get(&t)
                .ok_or_else(|| Error::Schema(format!("missing column A{t}")))?;
            let y = *y_cols
                .get(&t)
                .ok_or_else(|| Error::Schema(format!("missing column Y{t}")))?;
            let ls = l_cols.remove(&t).unwrap_or_default();
            let p = ls.keys().copied().max().unwrap_or(0);
            let mut l_idx = Vec::with_capacity(p);
            for j in 1..=p {
                l_idx.push(
                    *ls.get(&j)
                        .ok_or_else(|| Error::Schema(format!("missing column L{t}_{j}")))?,
                );
            }
            layout.push((l_idx, a, y));
        }

        let mut rows: Vec<csv::StringRecord> = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data {
                row: r + 1,
                column: String::new(),
                message: format!("malformed record: {e}"),
            })?;
            rows.push(rec);
        }
        let n = rows.len();
        let cell = |r: usize, idx: usize| -> Result<f64> {
            let raw = rows[r].get(idx).unwrap_or("");
            let name = headers.get(idx).unwrap_or("?").to_string();
            if raw.is_empty() {
                return Err(Error::Data {
                    row: r + 1,
                    column: name,
                    message: "empty cell".into(),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data {
                    row: r + 1,
                    column: name,
                    message: format!("not a finite number: {raw:?}"),
                }),
            }
        };

        let mut covariates = Vec::with_capacity(tau);
        let mut exposures = DMatrix::zeros(n, tau);
        let mut outcomes = DMatrix::zeros(n, tau);
        for (t, (l_idx, a, y)) in layout.iter().enumerate() {
            let mut l = DMatrix::zeros(n, l_idx.len());
            for r in 0..n {
                for (j, &idx) in l_idx.iter().enumerate() {
                    l[(r, j)] = cell(r, idx)?;
                }
                exposures[(r, t)] = cell(r, *a)?;
                outcomes[(r, t)] = cell(r, *y)?;
            }
            covariates.push(l);
        }
        Self::new(covariates, exposures, outcomes, times)
    }

    /// Serializes to the wide CSV format accepted by [`Self::from_csv_str`].
    /// Values use the shortest representation that parses back exactly.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let times: Vec<String> = self.assessment_times.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "# v: {}", times.join(","));
        let mut header = Vec::new();
        for t in 1..=self.tau {
            header.extend((1..=self.covariate_count(t)).map(|j| format!("L{t}_{j}")));
            header.push(format!("A{t}"));
            header.push(format!("Y{t}"));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        let mut fields = Vec::with_capacity(header.len());
        for i in 0..self.n {
            fields.clear();
            for t in 1..=self.tau {
                let l = &self.covariates[t - 1];
                fields.extend((0..l.ncols()).map(|j| l[(i, j)].to_string()));
                fields.push(self.exposures[(i, t - 1)].to_string());
                fields.push(self.outcomes[(i, t - 1)].to_string());
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

enum Column {
    A(usize),
    Y(usize),
    L(usize, usize),
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|&v| v >= 1)
}

fn parse_column(name: &str) -> Option<Column> {
    if let Some(rest) = name.strip_prefix('A') {
        return parse_index(rest).map(Column::A);
    }
    if let Some(rest) = name.strip_prefix('Y') {
        return parse_index(rest).map(Column::Y);
    }
    if let Some(rest) = name.strip_prefix('L') {
        let (t, j) = rest.split_once('_')?;
        return Some(Column::L(parse_index(t)?, parse_index(j)?));
    }
    None
}

fn parse_times(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("bad assessment time {s:?} in `# v:` header")))
        })
        .collect()
}

/// Column mean in a fixed summation order. Every estimate and every
/// consistency check goes through this so the two agree bit-for-bit.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    sum / count as f64
}

/// Trajectory `theta_hat_1..theta_hat_tau` under one policy together with
/// the `n x tau` matrix of estimated (uncentred) influence function values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub label: String,
    pub theta_hat: Vec<f64>,
    pub eif: DMatrix<f64>,
}

impl TrajectoryEstimate {
    /// Builds the estimate from its EIF matrix; `theta_hat` is the column mean.
    pub fn from_eif(label: impl Into<String>, eif: DMatrix<f64>) -> Self {
        let theta_hat = eif.column_iter().map(|c| mean(c.iter().copied())).collect();
        Self {
            label: label.into(),
            theta_hat,
            eif,
        }
    }

    pub fn tau(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Natural and counterfactual trajectories stacked into one length-`2 tau`
/// vector `(theta'_1..theta'_tau, theta''_1..theta''_tau)`, with an
/// `n x 2 tau` EIF matrix in the same column order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEstimate {
    pub theta_hat: Vec<f64>,
    pub eif: DMatrix<f64>,
    pub label_prime: String,
    pub label_dprime: String,
}

impl StackedEstimate {
    pub fn stack(prime: &TrajectoryEstimate, dprime: &TrajectoryEstimate) -> Result<Self> {
        if prime.eif.nrows() != dprime.eif.nrows() || prime.tau() != dprime.tau() {
            return Err(Error::Validation(
                "trajectories to stack must share n and tau".into(),
            ));
        }
        let n = prime.eif.nrows();
        let tau = prime.tau();
        let mut eif = DMatrix::zeros(n, 2 * tau);
        eif.view_mut((0, 0), (n, tau)).copy_from(&prime.eif);
        eif.view_mut((0, tau), (n, tau)).copy_from(&dprime.eif);
        let mut theta_hat = prime.theta_hat.clone();
        theta_hat.extend_from_slice(&dprime.theta_hat);
        Ok(Self {
            theta_hat,
            eif,
            label_prime: prime.label.clone(),
            label_dprime: dprime.label.clone(),
        })
    }

    pub fn tau(&self) -> usize {
        self.theta_hat.len() / 2
    }

    pub fn n(&self) -> usize {
        self.eif.nrows()
    }
}
