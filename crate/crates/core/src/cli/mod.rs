//! Command-line front end: `estimate`, `simulate`, `truth`, `contrast` and
//! `generate`. Every output file carries the run's provenance.

mod config;
mod figure;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{LongitudinalDataset, StackedEstimate};
use crate::error::{Error, Result};
use crate::inference::{build_contrast, run_inference, ContrastKind, ContrastMatrix, TestReport};
use crate::numerics::normal_quantile;
use crate::policy::Policy;
use crate::sdr::{estimate_pair, TrajectoryDiagnostics};
use crate::simulation::{analytic_truth, generate_seeded, run_study, DgpParams, StudyConfig, StudyGrid};

pub use config::{Provenance, RunConfig, SCHEMA_VERSION};
use figure::{Panel, Series};

#[derive(Debug, Parser)]
#[command(
    name = "lmtp",
    version,
    about = "Counterfactual outcome trajectories under longitudinal modified treatment policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate both trajectories from a dataset and test the contrast.
    Estimate(EstimateArgs),
    /// Run the replication study on the built-in data generating process.
    Simulate(SimulateArgs),
    /// Analytic true trajectories and effects of the built-in process.
    Truth(TruthArgs),
    /// Print the contrast matrix without estimating anything.
    Contrast(ContrastArgs),
    /// Draw a dataset from the built-in process.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "lmtp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Target standard error of the MVN rectangle probabilities.
    #[arg(long)]
    pub mvn_se: Option<f64>,
    /// Largest lattice size per randomization.
    #[arg(long)]
    pub mvn_max_points: Option<usize>,
    #[arg(long)]
    pub mvn_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Wide-format CSV dataset.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub policy_prime: Option<String>,
    #[arg(long)]
    pub policy_dprime: Option<String>,
    /// `baseline`, `adjacent` or `file:<path>`.
    #[arg(long)]
    pub contrast: Option<String>,
    /// Also write the stacked influence function matrix to eif.csv.
    #[arg(long)]
    pub dump_eif: bool,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Grid such as `n=250,1000 beta=0,1 reps=10`.
    #[arg(long)]
    pub grid: Option<String>,
    /// n in {250, 1000, 2500}, beta in {0, 0.5, 1}, 300 replicates.
    #[arg(long)]
    pub desk_scale: bool,
    /// Comma-separated beta values; replaces the grid's.
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write per-replicate results to replicates.csv.
    #[arg(long)]
    pub keep_replicates: bool,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DgpArgs {
    #[arg(long)]
    pub beta: Option<f64>,
    /// Gap between the two trajectories in the calibrated process.
    #[arg(long, allow_hyphen_values = true)]
    pub dgp_alpha: Option<f64>,
    /// Comma-separated assessment times.
    #[arg(long)]
    pub v: Option<String>,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ContrastArgs {
    #[arg(long)]
    pub contrast: Option<String>,
    /// Number of time points; taken from --input when omitted.
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub input: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn base_config(common: &CommonArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_inference(cfg: &mut RunConfig, a: &InferenceArgs) {
    if let Some(v) = a.alpha {
        cfg.inference.alpha = v;
    }
    if let Some(v) = a.folds {
        cfg.estimator.folds = v;
    }
    if let Some(v) = a.mvn_se {
        cfg.inference.mvn.target_se = v;
    }
    if let Some(v) = a.mvn_max_points {
        cfg.inference.mvn.max_points = v;
        cfg.inference.mvn.min_points = cfg.inference.mvn.min_points.min(v);
    }
    if let Some(v) = a.mvn_seed {
        cfg.inference.mvn.seed = v;
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("{what}: cannot parse {s:?}")))
        })
        .collect()
}

fn apply_dgp(cfg: &mut RunConfig, a: &DgpArgs) -> Result<()> {
    if let Some(b) = a.beta {
        cfg.dgp.beta = b;
    }
    if let Some(al) = a.dgp_alpha {
        cfg.dgp.alpha = al;
    }
    if let Some(v) = &a.v {
        cfg.dgp.v = parse_list(v, "--v")?;
    }
    Ok(())
}

/// Resolves flags and config file into one [`RunConfig`].
pub fn resolve(command: &Command) -> Result<RunConfig> {
    match command {
        Command::Estimate(a) => {
            let mut cfg = base_config(&a.common, "estimate")?;
            if a.input.is_some() {
                cfg.input = a.input.clone();
            }
            if let Some(p) = &a.policy_prime {
                cfg.policy_prime = p.clone();
            }
            if let Some(p) = &a.policy_dprime {
                cfg.policy_dprime = p.clone();
            }
            if let Some(c) = &a.contrast {
                cfg.contrast = c.clone();
            }
            cfg.dump_eif |= a.dump_eif;
            apply_inference(&mut cfg, &a.inference);
            Ok(cfg)
        }
        Command::Simulate(a) => {
            let mut cfg = base_config(&a.common, "simulate")?;
            if a.desk_scale {
                cfg.grid = StudyGrid::desk_scale();
            }
            if let Some(g) = &a.grid {
                cfg.grid = StudyGrid::parse(g)?;
            }
            if let Some(b) = &a.beta {
                cfg.grid.beta = parse_list(b, "--beta")?;
            }
            if let Some(r) = a.reps {
                cfg.grid.reps = r;
            }
            if let Some(t) = a.threads {
                cfg.threads = t;
            }
            cfg.keep_replicates |= a.keep_replicates;
            apply_inference(&mut cfg, &a.inference);
            cfg.grid.validate()?;
            Ok(cfg)
        }
        Command::Truth(a) => {
            let mut cfg = base_config(&a.common, "truth")?;
            apply_dgp(&mut cfg, &a.dgp)?;
            Ok(cfg)
        }
        Command::Contrast(a) => {
            let mut cfg = base_config(&a.common, "contrast")?;
            if let Some(c) = &a.contrast {
                cfg.contrast = c.clone();
            }
            if a.tau.is_some() {
                cfg.tau = a.tau;
            }
            if a.input.is_some() {
                cfg.input = a.input.clone();
            }
            Ok(cfg)
        }
        Command::Generate(a) => {
            let mut cfg = base_config(&a.common, "generate")?;
            if let Some(n) = a.n {
                cfg.n = n;
            }
            apply_dgp(&mut cfg, &a.dgp)?;
            Ok(cfg)
        }
    }
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Estimate(a) => &a.common.out,
        Command::Simulate(a) => &a.common.out,
        Command::Truth(a) => &a.common.out,
        Command::Contrast(a) => &a.common.out,
        Command::Generate(a) => &a.common.out,
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.join(name).display()),
        ))
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// CSV text preceded by a `#` provenance line.
fn csv_with_comment(prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    format!("# {}\n{body}", prov.comment())
}

fn load_input(cfg: &RunConfig) -> Result<LongitudinalDataset> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Validation("no input dataset given (use --input)".into()))?;
    LongitudinalDataset::load_csv(path)
}

/// Builds the contrast from `baseline`, `adjacent` or `file:<path>`.
pub fn parse_contrast(spec: &str, tau: usize) -> Result<ContrastMatrix> {
    match spec.trim() {
        "baseline" => build_contrast(ContrastKind::Baseline, tau),
        "adjacent" => build_contrast(ContrastKind::Adjacent, tau),
        other => {
            let path = other.strip_prefix("file:").ok_or_else(|| {
                Error::Validation(format!(
                    "unknown contrast {other:?}; expected baseline, adjacent or file:<path>"
                ))
            })?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))))?;
            ContrastMatrix::from_csv_str(&text, tau)
        }
    }
}

/// Standard error of the mean of EIF values `col(0..n)`.
fn column_se(col: &dyn Fn(usize) -> f64, n: usize) -> f64 {
    let vals: Vec<f64> = (0..n).map(col).collect();
    let m = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    (var / n as f64).sqrt()
}

#[derive(Serialize)]
struct TrajectoryRow {
    time: usize,
    v: f64,
    theta_prime: f64,
    se_prime: f64,
    theta_dprime: f64,
    se_dprime: f64,
    difference: f64,
    se_difference: f64,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema_version: u32,
    provenance: &'a Provenance,
    n: usize,
    tau: usize,
    policy_prime: &'a str,
    policy_dprime: &'a str,
    trajectories: &'a [TrajectoryRow],
    diagnostics: [&'a TrajectoryDiagnostics; 2],
    contrast_matrix: Vec<Vec<f64>>,
    #[serde(flatten)]
    inference: &'a TestReport,
}

fn trajectory_rows(data: &LongitudinalDataset, stacked: &StackedEstimate) -> Vec<TrajectoryRow> {
    let tau = stacked.tau();
    let n = stacked.n();
    let e = &stacked.eif;
    (0..tau)
        .map(|t| TrajectoryRow {
            time: t + 1,
            v: data.assessment_times()[t],
            theta_prime: stacked.theta_hat[t],
            se_prime: column_se(&|i| e[(i, t)], n),
            theta_dprime: stacked.theta_hat[tau + t],
            se_dprime: column_se(&|i| e[(i, tau + t)], n),
            difference: stacked.theta_hat[tau + t] - stacked.theta_hat[t],
            se_difference: column_se(&|i| e[(i, tau + t)] - e[(i, t)], n),
        })
        .collect()
}

fn cmd_estimate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_input(cfg)?;
    let prime = Policy::parse(&cfg.policy_prime)?;
    let dprime = Policy::parse(&cfg.policy_dprime)?;
    let contrast = parse_contrast(&cfg.contrast, data.tau())?;
    let estimator = crate::sdr::EstimatorConfig {
        seed: cfg.seed,
        ..cfg.estimator.clone()
    };
    cfg.inference.mvn.validate()?;
    let pair = estimate_pair(&data, &prime, &dprime, &estimator)?;
    let report = run_inference(&pair.stacked, &contrast, None, &cfg.inference)?;
    let prov = cfg.provenance();
    let rows = trajectory_rows(&data, &pair.stacked);
    std::fs::create_dir_all(dir)?;

    let full = EstimateReport {
        schema_version: SCHEMA_VERSION,
        provenance: &prov,
        n: data.n(),
        tau: data.tau(),
        policy_prime: &cfg.policy_prime,
        policy_dprime: &cfg.policy_dprime,
        trajectories: &rows,
        diagnostics: [&pair.prime, &pair.dprime],
        contrast_matrix: contrast
            .matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        inference: &report,
    };
    write(dir, "report.json", &to_json(&full)?)?;

    let z = normal_quantile(1.0 - cfg.inference.alpha / 2.0)?;
    let f = |x: f64| x.to_string();
    let header: Vec<String> = [
        "time",
        "v",
        "theta_prime",
        "se_prime",
        "lo_prime",
        "hi_prime",
        "theta_dprime",
        "se_dprime",
        "lo_dprime",
        "hi_dprime",
        "difference",
        "se_difference",
        "lo_difference",
        "hi_difference",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.time.to_string(),
                f(r.v),
                f(r.theta_prime),
                f(r.se_prime),
                f(r.theta_prime - z * r.se_prime),
                f(r.theta_prime + z * r.se_prime),
                f(r.theta_dprime),
                f(r.se_dprime),
                f(r.theta_dprime - z * r.se_dprime),
                f(r.theta_dprime + z * r.se_dprime),
                f(r.difference),
                f(r.se_difference),
                f(r.difference - z * r.se_difference),
                f(r.difference + z * r.se_difference),
            ]
        })
        .collect();
    write(dir, "trajectory.csv", &csv_with_comment(&prov, &header, &body))?;

    let header: Vec<String> = [
        "j",
        "estimate",
        "se",
        "t",
        "p_unadj",
        "p_bonf",
        "p_max",
        "lo_pointwise",
        "hi_pointwise",
        "lo_bonf",
        "hi_bonf",
        "lo_max",
        "hi_max",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = report
        .locals
        .iter()
        .map(|l| {
            vec![
                l.j.to_string(),
                f(l.estimate),
                f(l.se),
                f(l.t),
                f(l.p_unadj),
                f(l.p_bonf),
                f(l.p_max),
                f(l.ci_pointwise[0]),
                f(l.ci_pointwise[1]),
                f(l.ci_bonf[0]),
                f(l.ci_bonf[1]),
                f(l.ci_max[0]),
                f(l.ci_max[1]),
            ]
        })
        .collect();
    write(dir, "delta.csv", &csv_with_comment(&prov, &header, &body))?;

    write(dir, "figure.svg", &estimate_figure(&rows, &report, z, &prov))?;

    if cfg.dump_eif {
        let tau = data.tau();
        let header: Vec<String> = (1..=tau)
            .map(|t| format!("prime_{t}"))
            .chain((1..=tau).map(|t| format!("dprime_{t}")))
            .collect();
        let e = &pair.stacked.eif;
        let body: Vec<Vec<String>> = (0..e.nrows())
            .map(|i| (0..e.ncols()).map(|c| f(e[(i, c)])).collect())
            .collect();
        write(dir, "eif.csv", &csv_with_comment(&prov, &header, &body))?;
    }

    println!("{}", serde_json::to_string(&report.wald)?);
    Ok(())
}

fn estimate_figure(rows: &[TrajectoryRow], report: &TestReport, z: f64, prov: &Provenance) -> String {
    let band = |m: &dyn Fn(&TrajectoryRow) -> (f64, f64)| Some(rows.iter().map(m).collect::<Vec<_>>());
    let traj = Panel {
        title: "Trajectories".into(),
        x_label: "assessment time".into(),
        series: vec![
            Series {
                name: "natural (prime)".into(),
                color: "#1f77b4",
                points: rows.iter().map(|r| (r.v, r.theta_prime)).collect(),
                band: band(&|r| (r.theta_prime - z * r.se_prime, r.theta_prime + z * r.se_prime)),
                bars: None,
            },
            Series {
                name: "intervened (dprime)".into(),
                color: "#d62728",
                points: rows.iter().map(|r| (r.v, r.theta_dprime)).collect(),
                band: band(&|r| (r.theta_dprime - z * r.se_dprime, r.theta_dprime + z * r.se_dprime)),
                bars: None,
            },
        ],
        zero_line: false,
    };
    let diff = Panel {
        title: "Difference dprime - prime".into(),
        x_label: "assessment time".into(),
        series: vec![Series {
            name: "difference".into(),
            color: "#2ca02c",
            points: rows.iter().map(|r| (r.v, r.difference)).collect(),
            band: band(&|r| {
                (
                    r.difference - z * r.se_difference,
                    r.difference + z * r.se_difference,
                )
            }),
            bars: None,
        }],
        zero_line: true,
    };
    let delta = Panel {
        title: format!("Contrast ({}) with simultaneous CIs", report.contrast_kind),
        x_label: "contrast row".into(),
        series: vec![
            Series {
                name: "pointwise".into(),
                color: "#aaaaaa",
                points: report
                    .locals
                    .iter()
                    .map(|l| (l.j as f64 - 0.08, l.estimate))
                    .collect(),
                band: None,
                bars: Some(
                    report
                        .locals
                        .iter()
                        .map(|l| (l.ci_pointwise[0], l.ci_pointwise[1]))
                        .collect(),
                ),
            },
            Series {
                name: "max rule".into(),
                color: "#000000",
                points: report
                    .locals
                    .iter()
                    .map(|l| (l.j as f64 + 0.08, l.estimate))
                    .collect(),
                band: None,
                bars: Some(report.locals.iter().map(|l| (l.ci_max[0], l.ci_max[1])).collect()),
            },
        ],
        zero_line: true,
    };
    figure::render(&[traj, diff, delta], &prov.comment())
}

#[derive(Serialize)]
struct StudyTables<'a> {
    schema_version: u32,
    provenance: &'a Provenance,
    cells: &'a [crate::simulation::CellSummary],
    records: &'a [crate::simulation::ReplicateRecord],
}

fn cmd_simulate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let study = StudyConfig {
        grid: cfg.grid.clone(),
        dgp: cfg.dgp.clone(),
        estimator: cfg.estimator.clone(),
        inference: cfg.inference.clone(),
        seed: cfg.seed,
        threads: cfg.threads,
    };
    let output = run_study(&study)?;
    let prov = cfg.provenance();
    std::fs::create_dir_all(dir)?;
    let tables = StudyTables {
        schema_version: SCHEMA_VERSION,
        provenance: &prov,
        cells: &output.cells,
        records: &output.records,
    };
    write(dir, "study_tables.json", &to_json(&tables)?)?;
    let comment = format!("# {}\n", prov.comment());
    write(dir, "bias_vs_n.csv", &(comment.clone() + &output.bias_csv()))?;
    write(dir, "power_vs_beta.csv", &(comment.clone() + &output.power_csv()))?;
    write(
        dir,
        "simultaneous.csv",
        &(comment.clone() + &output.simultaneous_csv()),
    )?;
    if cfg.keep_replicates {
        let f = |x: f64| x.to_string();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let header: Vec<String> = [
            "n",
            "beta",
            "rep",
            "seed",
            "error",
            "delta_hat",
            "se",
            "wald_stat",
            "wald_p",
            "max_stat",
            "max_p",
            "q_max",
            "wald_reject",
            "max_reject",
            "covered_none",
            "covered_bonferroni",
            "covered_max",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let body: Vec<Vec<String>> = output
            .records
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    f(r.beta),
                    r.rep.to_string(),
                    r.seed.to_string(),
                    r.error.clone().unwrap_or_default(),
                    join(&r.delta_hat),
                    join(&r.se),
                    f(r.wald_stat),
                    f(r.wald_p),
                    f(r.max_stat),
                    f(r.max_p),
                    f(r.q_max),
                    r.wald_reject.to_string(),
                    r.max_reject.to_string(),
                    r.covered.none.to_string(),
                    r.covered.bonferroni.to_string(),
                    r.covered.max.to_string(),
                ]
            })
            .collect();
        write(dir, "replicates.csv", &csv_with_comment(&prov, &header, &body))?;
    }
    let failures: usize = output.cells.iter().map(|c| c.failures).sum();
    println!(
        "{}",
        serde_json::json!({"cells": output.cells.len(), "replicates": output.records.len(), "failures": failures})
    );
    Ok(())
}

#[derive(Serialize)]
struct TruthOutput<'a> {
    schema_version: u32,
    provenance: &'a Provenance,
    alpha: f64,
    beta: f64,
    v: &'a [f64],
    gamma: &'a [f64],
    theta_prime: &'a [f64],
    theta_dprime: &'a [f64],
    delta: &'a [f64],
}

fn cmd_truth(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let params = DgpParams {
        gamma: None,
        ..cfg.dgp.clone()
    }
    .with_gamma()?;
    let truth = analytic_truth(&params)?;
    let prov = cfg.provenance();
    let out = TruthOutput {
        schema_version: SCHEMA_VERSION,
        provenance: &prov,
        alpha: params.alpha,
        beta: params.beta,
        v: &params.v,
        gamma: &truth.gamma,
        theta_prime: &truth.theta_prime,
        theta_dprime: &truth.theta_dprime,
        delta: &truth.delta,
    };
    let json = to_json(&out)?;
    std::fs::create_dir_all(dir)?;
    write(dir, "truth.json", &json)?;
    print!("{json}");
    Ok(())
}

fn cmd_contrast(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let tau = match (cfg.tau, &cfg.input) {
        (Some(t), _) => t,
        (None, Some(_)) => load_input(cfg)?.tau(),
        (None, None) => return Err(Error::Validation("contrast needs --tau or --input".into())),
    };
    let contrast = parse_contrast(&cfg.contrast, tau)?;
    let prov = cfg.provenance();
    let json = to_json(&serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "provenance": &prov,
        "contrast_kind": contrast.kind,
        "tau": tau,
        "k": contrast.k(),
        "matrix": contrast.matrix.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
    }))?;
    std::fs::create_dir_all(dir)?;
    write(dir, "contrast.json", &json)?;
    print!("{json}");
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let params = DgpParams {
        gamma: None,
        ..cfg.dgp.clone()
    }
    .with_gamma()?;
    let data = generate_seeded(&params, cfg.n, cfg.seed)?;
    let prov = cfg.provenance();
    std::fs::create_dir_all(dir)?;
    write(
        dir,
        "data.csv",
        &format!("# {}\n{}", prov.comment(), data.to_csv_string()),
    )?;
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(&cli.command)?;
    let dir = out_dir(&cli.command);
    match &cli.command {
        Command::Estimate(_) => cmd_estimate(&cfg, dir),
        Command::Simulate(_) => cmd_simulate(&cfg, dir),
        Command::Truth(_) => cmd_truth(&cfg, dir),
        Command::Contrast(_) => cmd_contrast(&cfg, dir),
        Command::Generate(_) => cmd_generate(&cfg, dir),
    }
}

/// Machine-readable error report written to stderr.
pub fn error_json(err: &Error) -> serde_json::Value {
    let mut body = serde_json::json!({
        "kind": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    });
    match err {
        Error::Data { row, column, .. } => {
            body["row"] = serde_json::json!(row);
            body["column"] = serde_json::json!(column);
        }
        Error::DegenerateContrast { row } => {
            body["row"] = serde_json::json!(row);
        }
        _ => {}
    }
    serde_json::json!({ "schema_version": SCHEMA_VERSION, "error": body })
}

/// Entry point of the `lmtp` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let report = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "error": {"kind": "usage", "message": e.to_string(), "exit_code": 2},
            });
            eprintln!("{report}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
