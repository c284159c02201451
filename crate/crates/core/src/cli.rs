//! Command-line front end and the Monte-Carlo study driver.
//!
//! Every command accepts `--config FILE` with flat `key = value` lines whose
//! keys are the long flag names; explicit flags take precedence. Output files
//! start with `#` comment lines recording the resolved settings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::asymptotics::{
    classical_sigma_matrix, det_scan, estimator_covariance, printed_sigma_matrix, sigma_matrix, Axis, DiagonalStart,
    Param, ScanGrid,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateReport, SolverConfig};
use crate::fou::{FouSimulator, ModelParams, ObservationSeries, Scheme, SimulationPlan, DEFAULT_SUBSTEPS, DEFAULT_TOL};
use crate::moments::{compute_moments, max_moment_index, MomentVector};
use crate::Matrix3;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FOU_OUT_DIR";

const DEFAULT_H: f64 = 0.5;
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "fou", version, about = "Fractional Ornstein-Uhlenbeck simulation and moment estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one observed path and write it as a t,x table.
    Simulate(SimulateArgs),
    /// Estimate (theta, H, sigma) from a path or from given moments.
    Estimate(EstimateArgs),
    /// Repeat simulate + estimate and summarize the estimates.
    McStudy(McArgs),
    /// Determinant of the forward-map Jacobian over a two-parameter grid.
    DetScan(DetScanArgs),
    /// Limiting covariance of the moments and of the estimates.
    Asymptotics(AsymptoticsArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Observation lag.
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key = value file with defaults for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; defaults to $FOU_OUT_DIR/<command>.csv, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Without --for-estimation: n+1 observations X_0..X_{nh}.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the 2n+3 observations needed for moment index n.
    #[arg(long)]
    pub for_estimation: bool,
    /// euler_fine_grid or stationary_exact.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub substeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Path in t,x format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Moments "eta0,eta1,eta2" instead of a path (requires --h).
    #[arg(long)]
    pub moments: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Moment index; defaults to the largest the series allows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Residual tolerance of the solver.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Also write sqrt(n) (estimate - truth) per replication.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetScanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// First axis as name:lo:hi:count, e.g. theta:1:10:10.
    #[arg(long)]
    pub axis1: Option<String>,
    /// Second axis as name:lo:hi:count.
    #[arg(long)]
    pub axis2: Option<String>,
    /// Value of the remaining parameter.
    #[arg(long)]
    pub fixed: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Flag values merged with an optional config file; remembers what it
/// resolved so the output header can record it.
struct Resolver {
    file: BTreeMap<String, String>,
    record: Vec<(String, String)>,
}

impl Resolver {
    fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { file, record: Vec::new() })
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<T>
    where
        T: std::str::FromStr + std::fmt::Display + Clone,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse::<T>().map_err(|_| Error::Parse(format!("config key '{key}': cannot parse '{raw}'")))?,
                ),
                None => default,
            },
        };
        let value = value.ok_or_else(|| Error::InvalidParameter(format!("missing required setting --{key}")))?;
        self.record.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let value = flag
            || match self.file.get(key) {
                Some(raw) => raw
                    .parse::<bool>()
                    .map_err(|_| Error::Parse(format!("config key '{key}': expected true or false, got '{raw}'")))?,
                None => false,
            };
        self.record.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn model(&mut self, m: &ModelArgs) -> Result<(ModelParams, f64)> {
        let theta = self.get("theta", m.theta, None)?;
        let hurst = self.get("hurst", m.hurst, None)?;
        let sigma = self.get("sigma", m.sigma, None)?;
        let h = self.get("h", m.h, Some(DEFAULT_H))?;
        Ok((ModelParams::new(theta, hurst, sigma)?, h))
    }

    fn header(&self, command: &str) -> Vec<String> {
        let mut lines = vec![format!("fou {command} {}", env!("CARGO_PKG_VERSION"))];
        lines.extend(self.record.iter().map(|(k, v)| format!("{k} = {v}")));
        lines
    }
}

/// Parses flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn output_path(out: &Option<PathBuf>, command: &str) -> Option<PathBuf> {
    out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(|dir| Path::new(&dir).join(format!("{command}.csv"))))
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_header(w: &mut dyn Write, lines: &[String]) -> Result<()> {
    for line in lines {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

fn solver_config(tol: Option<f64>) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = tol {
        cfg.tol_residual = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::McStudy(a) => cmd_mc_study(a),
        Command::DetScan(a) => cmd_det_scan(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
    }
}

pub fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let (params, h) = r.model(&a.model)?;
    let n = r.get("n", a.n, None)?;
    let seed = r.get("seed", a.seed, Some(DEFAULT_SEED))?;
    let for_estimation = r.flag("for-estimation", a.for_estimation)?;
    let scheme: Scheme = r.get("scheme", a.scheme.clone(), Some(Scheme::StationaryExact.to_string()))?.parse()?;
    let substeps = r.get("substeps", a.substeps, Some(DEFAULT_SUBSTEPS))?;
    let n_obs = if for_estimation { 2 * n + 3 } else { n + 1 };
    let plan = SimulationPlan::new(n_obs, h, substeps, seed, scheme)?;
    let series = FouSimulator::new(params, plan)?.sample(0)?;
    let path = output_path(&a.common.out, "simulate");
    series.write_csv(open_output(&path)?, &r.header("simulate"))?;
    eprintln!("seed = {seed}, {} observations", series.len());
    Ok(())
}

fn parse_moments(text: &str) -> Result<MomentVector> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("moments: {e}"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a, b, c] => Ok(MomentVector::new(*a, *b, *c)),
        _ => Err(Error::Parse(format!("moments need three values, got {}", parts.len()))),
    }
}

pub const ESTIMATE_COLUMNS: [&str; 7] = ["theta", "hurst", "sigma", "iterations", "residual", "converged", "detJ"];

fn estimate_record(rep: &EstimateReport) -> Vec<String> {
    vec![
        format!("{}", rep.params.theta),
        format!("{}", rep.params.h()),
        format!("{}", rep.params.sigma),
        rep.iterations.to_string(),
        format!("{:e}", rep.residual_norm),
        rep.converged.to_string(),
        format!("{:e}", rep.jacobian_det_at_solution),
    ]
}

pub fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let tol = r.get("tol", a.tol, Some(SolverConfig::default().tol_residual))?;
    let moments_text = a.moments.clone().or_else(|| r.file.get("moments").cloned());
    let input = a.input.clone().or_else(|| r.file.get("input").map(PathBuf::from));
    let (moments, h) = match (moments_text, input) {
        (Some(text), _) => {
            let m = parse_moments(&text)?;
            r.record.push(("moments".into(), text));
            (m, r.get("h", a.h, None)?)
        }
        (None, Some(path)) => {
            let series = ObservationSeries::read_path(&path)?;
            r.record.push(("input".into(), path.display().to_string()));
            let n = r.get("n", a.n, Some(max_moment_index(series.len()).max(1)))?;
            (compute_moments(&series, n)?, series.h())
        }
        (None, None) => return Err(Error::InvalidParameter("estimate needs --input or --moments".into())),
    };
    let report = estimate(&moments, h, &solver_config(Some(tol))?)?;
    let path = output_path(&a.common.out, "estimate");
    let mut out = open_output(&path)?;
    write_header(&mut out, &r.header("estimate"))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_COLUMNS)?;
    w.write_record(estimate_record(&report))?;
    w.flush()?;
    if path.is_some() {
        println!("{}", ESTIMATE_COLUMNS.join(","));
        println!("{}", estimate_record(&report).join(","));
    }
    if report.converged {
        Ok(())
    } else {
        Err(Error::NotConverged { residual: report.residual_norm })
    }
}

/// Settings of a Monte-Carlo study.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub params: ModelParams,
    pub h: f64,
    /// Moment index; each path has 2n+3 observations.
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub substeps: usize,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct McReplication {
    pub rep: usize,
    pub moments: Option<MomentVector>,
    pub outcome: std::result::Result<EstimateReport, String>,
}

impl McReplication {
    pub fn converged(&self) -> Option<&EstimateReport> {
        self.outcome.as_ref().ok().filter(|r| r.converged)
    }
}

/// Runs the replications in parallel; the result is ordered by replication
/// and does not depend on the schedule.
pub fn run_mc(cfg: &McConfig) -> Result<Vec<McReplication>> {
    if cfg.reps < 2 {
        return Err(Error::InvalidParameter(format!("mc-study needs at least 2 replications, got {}", cfg.reps)));
    }
    let plan = SimulationPlan::new(2 * cfg.n + 3, cfg.h, cfg.substeps, cfg.seed, cfg.scheme)?;
    let sim = FouSimulator::new(cfg.params, plan)?;
    Ok((0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let moments = sim.sample(rep as u64).and_then(|x| compute_moments(&x, cfg.n));
            match moments {
                Ok(m) => McReplication {
                    rep,
                    moments: Some(m),
                    outcome: estimate(&m, cfg.h, &cfg.solver).map_err(|e| e.to_string()),
                },
                Err(e) => McReplication { rep, moments: None, outcome: Err(e.to_string()) },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub param: &'static str,
    pub truth: f64,
    pub mean: f64,
    /// Sample standard deviation with divisor R - 1.
    pub sd: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

type Column = (&'static str, f64, fn(&EstimateReport) -> f64);

/// Mean and SD of the converged estimates.
pub fn summarize(truth: &ModelParams, reps: &[McReplication]) -> Vec<SummaryRow> {
    let ok: Vec<&EstimateReport> = reps.iter().filter_map(|r| r.converged()).collect();
    let failed = reps.len() - ok.len();
    let pick: [Column; 3] = [
        ("theta", truth.theta, |r| r.params.theta),
        ("hurst", truth.h(), |r| r.params.h()),
        ("sigma", truth.sigma, |r| r.params.sigma),
    ];
    pick.iter()
        .map(|&(param, t, f)| {
            let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            let (mean, sd) = mean_sd(&vals);
            SummaryRow { param, truth: t, mean, sd, n_ok: ok.len(), n_failed: failed }
        })
        .collect()
}

/// Mean and (R-1)-divisor standard deviation; NaN when undefined.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_summary.csv"))
}

fn write_summary(w: Box<dyn Write>, header: &[String], rows: &[SummaryRow]) -> Result<()> {
    let mut w = w;
    write_header(&mut w, header)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["param", "true", "mean", "sd", "n_ok", "n_failed"])?;
    for row in rows {
        csv.write_record([
            row.param.to_string(),
            format!("{}", row.truth),
            format!("{}", row.mean),
            format!("{}", row.sd),
            row.n_ok.to_string(),
            row.n_failed.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn cmd_mc_study(a: McArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let (params, h) = r.model(&a.model)?;
    let n = r.get("n", a.n, Some(4096))?;
    let reps = r.get("reps", a.reps, Some(100))?;
    let seed = r.get("seed", a.seed, Some(DEFAULT_SEED))?;
    let scheme: Scheme = r.get("scheme", a.scheme.clone(), Some(Scheme::StationaryExact.to_string()))?.parse()?;
    let substeps = r.get("substeps", a.substeps, Some(DEFAULT_SUBSTEPS))?;
    let normalized = r.flag("normalized", a.normalized)?;
    let tol = r.get("tol", a.tol, Some(SolverConfig::default().tol_residual))?;
    let cfg = McConfig { params, h, n, reps, seed, scheme, substeps, solver: solver_config(Some(tol))? };
    let results = run_mc(&cfg)?;
    let header = r.header("mc-study");

    let path = output_path(&a.common.out, "mc-study");
    let mut out = open_output(&path)?;
    write_header(&mut out, &header)?;
    let mut w = csv::Writer::from_writer(out);
    let mut columns = vec!["rep"];
    columns.extend(ESTIMATE_COLUMNS);
    if normalized {
        columns.extend(["z_theta", "z_hurst", "z_sigma"]);
    }
    columns.push("status");
    w.write_record(&columns)?;
    let root_n = (n as f64).sqrt();
    for rep in &results {
        let mut rec = vec![rep.rep.to_string()];
        match &rep.outcome {
            Ok(est) => {
                rec.extend(estimate_record(est));
                if normalized {
                    rec.push(format!("{}", root_n * (est.params.theta - params.theta)));
                    rec.push(format!("{}", root_n * (est.params.h() - params.h())));
                    rec.push(format!("{}", root_n * (est.params.sigma - params.sigma)));
                }
                rec.push(if est.converged { "ok".into() } else { "not_converged".into() });
            }
            Err(msg) => {
                rec.extend(std::iter::repeat_n(String::new(), columns.len() - 2));
                rec.push(format!("error: {msg}"));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);

    let rows = summarize(&params, &results);
    match &path {
        Some(p) => {
            write_summary(open_output(&Some(summary_path(p)))?, &header, &rows)?;
            write_summary(Box::new(std::io::stdout().lock()), &[], &rows)?;
        }
        None => write_summary(Box::new(std::io::stdout().lock()), &[], &rows)?,
    }
    Ok(())
}

/// Parses name:lo:hi:count.
pub fn parse_axis(text: &str) -> Result<Axis> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("axis '{text}': expected name:lo:hi:count")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("axis '{text}': {e}")));
    Ok(Axis {
        param: parts[0].parse::<Param>()?,
        lo: num(parts[1])?,
        hi: num(parts[2])?,
        count: parts[3].parse::<usize>().map_err(|e| Error::Parse(format!("axis '{text}': {e}")))?,
    })
}

pub fn cmd_det_scan(a: DetScanArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let axis1 = parse_axis(&r.get("axis1", a.axis1.clone(), None)?)?;
    let axis2 = parse_axis(&r.get("axis2", a.axis2.clone(), None)?)?;
    let fixed = r.get("fixed", a.fixed, None)?;
    let h = r.get("h", a.h, Some(DEFAULT_H))?;
    let grid = ScanGrid { axis1, axis2, fixed, h };
    let rows = det_scan(&grid)?;
    let path = output_path(&a.common.out, "det-scan");
    let mut out = open_output(&path)?;
    let mut header = r.header("det-scan");
    header.push(format!("p1 = {}, p2 = {}", axis1.param, axis2.param));
    write_header(&mut out, &header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p1", "p2", "detJ"])?;
    for row in rows {
        let det = row.det.map(|d| format!("{d:e}")).unwrap_or_else(|| "fail".into());
        w.write_record([format!("{}", row.p1), format!("{}", row.p2), det])?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut csv::Writer<W>, name: &str, m: &Matrix3) -> Result<()> {
    for i in 0..3 {
        w.write_record([
            name.to_string(),
            (i + 1).to_string(),
            format!("{:e}", m[(i, 0)]),
            format!("{:e}", m[(i, 1)]),
            format!("{:e}", m[(i, 2)]),
        ])?;
    }
    Ok(())
}

pub fn cmd_asymptotics(a: AsymptoticsArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let (params, h) = r.model(&a.model)?;
    let tol = r.get("tol", a.tol, Some(DEFAULT_TOL))?;
    let sigma = sigma_matrix(&params, h, tol)?;
    let printed = printed_sigma_matrix(&params, h, tol, DiagonalStart::One)?;
    let mut header = r.header("asymptotics");
    header.push(format!("crossover lag = {}, expansion terms = {}", sigma.crossover, sigma.expansion_terms));
    if sigma.half_warning {
        header.push("warning: H = 1/2 lies outside the CLT hypothesis; shown for comparison with closed forms".into());
    }
    let path = output_path(&a.common.out, "asymptotics");
    let mut out = open_output(&path)?;
    write_header(&mut out, &header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["matrix", "row", "col1", "col2", "col3"])?;
    write_matrix(&mut w, "sigma", &sigma.matrix)?;
    write_matrix(&mut w, "sigma_printed", &printed.matrix)?;
    if sigma.half_warning {
        write_matrix(&mut w, "sigma_closed_form", &classical_sigma_matrix(params.theta, params.sigma, h))?;
    } else {
        match estimator_covariance(&params, h) {
            Ok(cov) => write_matrix(&mut w, "estimator_covariance", &cov)?,
            Err(e) => eprintln!("estimator covariance unavailable: {e}"),
        }
    }
    w.flush()?;
    Ok(())
}
