//! Command-line front end for the `qstar` library.
//!
//! Seven subcommands: `solve` (closed forms + fixed point + optional
//! Bellman), `sweep` (log-spaced beta sweep to CSV), `backtest` (one
//! strategy over a simulated ensemble), `optimize` (common-random-number
//! grid search), `bellman` (finite-horizon dynamic program), `passage`
//! (first-passage Monte Carlo), and `verify` (invariant battery).
//!
//! Output discipline:
//! - JSON reports are a single object with sorted keys; CSV reports carry
//!   `#` metadata lines (command, seed, version) ahead of a header row and
//!   print numbers with 12 significant digits. Both are byte-deterministic
//!   for a given command line and seed.
//! - Errors go to stderr as `{"error": <code>, "message": <text>}`.
//! - Exit codes: 0 success, 1 invariant failure, 2 usage error, 3 numerical
//!   failure (no convergence / unreliable estimate).
//! - Flags win over `key = value` lines in `--config`, which win over
//!   built-in defaults. Every command honors `--seed` and echoes it.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qstar::backtest::{self, Objective, SearchConfig};
use qstar::bellman::{self, GridSpec};
use qstar::sde::{self, OuParams, PathSample, StartState};
use qstar::special::Tolerances;
use qstar::{analytic, checks, CostModel, Error as CoreError};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// A failed run: exit code plus the message for the stderr error object.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        // Bad inputs are usage errors; everything else is a numerical
        // failure of the requested computation.
        let code = match &e {
            CoreError::Domain { .. } | CoreError::EmptyPath => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Continuum closed form via the inverse threshold function.
    Analytic,
    /// Stationary self-consistent solve of the gain function.
    FixedPoint,
    /// Finite-horizon dynamic program (converged first-step threshold).
    Bellman,
    /// All of the above.
    All,
}

#[derive(Debug, Parser)]
#[command(
    name = "qstar",
    version,
    about = "Optimal trading threshold under linear costs: closed forms, fixed point, Bellman, and simulation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat `key = value` file supplying defaults for any flag not given.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for all randomness; echoed in every report [default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report to this file instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Output format. `sweep` emits csv, every other command json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the threshold q* of one parameter set.
    Solve(SolveArgs),
    /// Sweep beta on a log grid and tabulate thresholds as CSV.
    Sweep(SweepArgs),
    /// Run one strategy over a simulated path ensemble.
    Backtest(BacktestArgs),
    /// Grid-search the empirically optimal threshold or band.
    Optimize(OptimizeArgs),
    /// Finite-horizon dynamic program and its threshold sequence.
    Bellman(BellmanArgs),
    /// First-passage Monte Carlo out of the interval (-q, q).
    Passage(PassageArgs),
    /// Run the invariant battery and report per-check results.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Innovation scale per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Linear cost per unit traded.
    #[arg(long)]
    gamma: Option<f64>,
    /// Position cap M [default: 1].
    #[arg(long)]
    max_pos: Option<f64>,
    /// Method(s) to run; repeatable or comma-separated [default: analytic,fixed-point].
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<MethodArg>,
    /// Bellman horizon [default: min(ceil(50/epsilon), 1000)].
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Linear cost per unit traded.
    #[arg(long)]
    gamma: Option<f64>,
    /// Position cap M [default: 1].
    #[arg(long)]
    max_pos: Option<f64>,
    /// Smallest beta of the sweep.
    #[arg(long)]
    beta_min: Option<f64>,
    /// Largest beta of the sweep.
    #[arg(long)]
    beta_max: Option<f64>,
    /// Number of log-spaced sweep points [default: 25].
    #[arg(long)]
    points: Option<usize>,
    /// Also fill the simulated grid-search column (expensive).
    #[arg(long)]
    grid_search: bool,
    /// Steps per simulated path for the grid-search column [default: 1000000].
    #[arg(long)]
    steps: Option<usize>,
    /// Paths per candidate for the grid-search column [default: 1].
    #[arg(long)]
    paths: Option<usize>,
    /// Candidates per search round [default: 21].
    #[arg(long)]
    candidates: Option<usize>,
    /// Search rounds [default: 6].
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Innovation scale per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Linear cost per unit traded.
    #[arg(long)]
    gamma: Option<f64>,
    /// Position cap M [default: 1].
    #[arg(long)]
    max_pos: Option<f64>,
    /// Trigger threshold (or half-band with --band) [default: closed-form q*].
    #[arg(long)]
    q: Option<f64>,
    /// Steps per path [default: 100000].
    #[arg(long)]
    steps: Option<usize>,
    /// Number of paths [default: 100].
    #[arg(long)]
    paths: Option<usize>,
    /// Run the quadratic-penalty band strategy instead of the threshold one.
    #[arg(long)]
    band: bool,
    /// Risk-penalty coefficient for --band.
    #[arg(long)]
    lambda: Option<f64>,
    /// Start paths at p = 0 and discard this many warm-up steps [default: 0,
    /// which starts paths in the exact stationary law instead].
    #[arg(long)]
    burn_in: Option<usize>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Innovation scale per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Linear cost per unit traded.
    #[arg(long)]
    gamma: Option<f64>,
    /// Position cap M [default: 1].
    #[arg(long)]
    max_pos: Option<f64>,
    /// Steps per path [default: 1000000].
    #[arg(long)]
    steps: Option<usize>,
    /// Paths per candidate [default: 1].
    #[arg(long)]
    paths: Option<usize>,
    /// Candidates per round [default: 21].
    #[arg(long)]
    candidates: Option<usize>,
    /// Search rounds [default: 6].
    #[arg(long)]
    rounds: Option<usize>,
    /// Range shrink factor per round [default: 0.4].
    #[arg(long)]
    shrink: Option<f64>,
    /// Lower edge of the initial search range [default: bracket around the
    /// closed-form estimate].
    #[arg(long)]
    range_lo: Option<f64>,
    /// Upper edge of the initial search range.
    #[arg(long)]
    range_hi: Option<f64>,
    /// Search the band strategy's half-band instead of the threshold.
    #[arg(long)]
    band: bool,
    /// Risk-penalty coefficient for --band.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct BellmanArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Innovation scale per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Linear cost per unit traded.
    #[arg(long)]
    gamma: Option<f64>,
    /// Position cap M [default: 1].
    #[arg(long)]
    max_pos: Option<f64>,
    /// Decision steps before the terminal condition [default:
    /// min(ceil(50/epsilon), 1000)].
    #[arg(long)]
    horizon: Option<usize>,
    /// Position-grid nodes for the bang-bang audit [default: 11].
    #[arg(long)]
    n_pos: Option<usize>,
    /// Predictor-grid nodes (odd, >= 33) [default: resolution-based].
    #[arg(long)]
    grid_points: Option<usize>,
    /// Predictor-grid half-width [default: resolution-based].
    #[arg(long)]
    p_max: Option<f64>,
}

#[derive(Debug, Args)]
struct PassageArgs {
    /// Mean-reversion rate per step, in (0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Innovation scale per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Absorbing boundary; paths run until |p| >= q.
    #[arg(long)]
    q: Option<f64>,
    /// Start value, strictly inside (-q, q).
    #[arg(long, allow_hyphen_values = true)]
    start: Option<f64>,
    /// Number of paths [default: 10000].
    #[arg(long)]
    paths: Option<usize>,
    /// Censoring step budget per path [default: 100 relaxation times].
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Tighten one tolerance beyond reach; the battery must then report
    /// exactly one failure.
    #[arg(long)]
    self_test_fault: bool,
}

/// Parsed `key = value` defaults file. `#` starts a comment; blank lines are
/// skipped; keys use the flag spelling without the leading dashes.
#[derive(Debug, Default)]
struct FileCfg(BTreeMap<String, String>);

impl FileCfg {
    fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::usage(format!(
                    "config line {} is not `key = value`: {raw:?}",
                    i + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Failure::usage(format!("config key {key} has invalid value {raw:?}: {e}"))
            }),
        }
    }

    fn flag(&self, set_on_cli: bool, key: &str) -> Result<bool, Failure> {
        if set_on_cli {
            return Ok(true);
        }
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Flag value if present, else the config-file value, else `None`.
fn resolve<T: FromStr>(flag: Option<T>, cfg: &FileCfg, key: &str) -> Result<Option<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::usage(format!("missing parameter: {name}")))
}

/// 12 significant digits; non-finite values print as `nan`.
fn sig12(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        "nan".to_string()
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, Failure> {
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Failure::usage(format!(
            "need 0 < beta-min <= beta-max, got [{lo}, {hi}]"
        )));
    }
    if n == 0 {
        return Err(Failure::usage("points must be >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let ratio = hi / lo;
    Ok((0..n)
        .map(|i| lo * ratio.powf(i as f64 / (n - 1) as f64))
        .collect())
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn default_horizon(params: &OuParams) -> usize {
    ((50.0 / params.epsilon()).ceil() as usize).clamp(1, 1000)
}

fn envelope(command: &str, seed: u64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(seed));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m
}

fn params_json(params: &OuParams, cost: Option<&CostModel>) -> Value {
    let mut m = Map::new();
    m.insert("epsilon".into(), json!(params.epsilon()));
    m.insert("beta".into(), json!(params.beta()));
    if let Some(c) = cost {
        m.insert("gamma".into(), json!(c.gamma()));
        m.insert("max_pos".into(), json!(c.max_pos()));
    }
    Value::Object(m)
}

/// One finished command: report body, exit code, stderr warning lines.
struct CmdOut {
    body: String,
    exit: i32,
    warnings: Vec<String>,
}

impl CmdOut {
    fn json(map: Map<String, Value>) -> Self {
        let mut body = serde_json::to_string_pretty(&Value::Object(map)).expect("valid json");
        body.push('\n');
        Self {
            body,
            exit: 0,
            warnings: Vec::new(),
        }
    }
}

fn check_format(requested: Option<Format>, supported: Format, command: &str) -> Result<(), Failure> {
    match requested {
        None => Ok(()),
        Some(f) if f == supported => Ok(()),
        Some(_) => Err(Failure::usage(format!(
            "command {command} only supports --format {}",
            match supported {
                Format::Json => "json",
                Format::Csv => "csv",
            }
        ))),
    }
}

fn cmd_solve(a: &SolveArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let beta = required(resolve(a.beta, cfg, "beta")?, "beta")?;
    let gamma = required(resolve(a.gamma, cfg, "gamma")?, "gamma")?;
    let max_pos = resolve(a.max_pos, cfg, "max-pos")?.unwrap_or(1.0);
    let params = OuParams::new(epsilon, beta)?;
    let cost = CostModel::new(gamma, max_pos)?;

    let mut methods = if !a.method.is_empty() {
        a.method.clone()
    } else if let Some(raw) = cfg.0.get("method") {
        raw.split(',')
            .map(|s| {
                <MethodArg as ValueEnum>::from_str(s.trim(), true)
                    .map_err(|e| Failure::usage(format!("config key method: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![MethodArg::Analytic, MethodArg::FixedPoint]
    };
    if methods.contains(&MethodArg::All) {
        methods = vec![MethodArg::Analytic, MethodArg::FixedPoint, MethodArg::Bellman];
    }
    methods.dedup();

    let mut out = envelope("solve", seed);
    out.insert("params".into(), params_json(&params, Some(&cost)));
    out.insert("eta".into(), json!(analytic::eta(&params, &cost)));
    out.insert(
        "regime".into(),
        json!(analytic::regime_classify(&params, &cost, analytic::DEFAULT_REGIME_CUTS)?.as_str()),
    );
    out.insert(
        "limits".into(),
        json!(analytic::threshold_limits(&params, &cost).as_map()),
    );

    let mut methods_json = Map::new();
    for m in methods {
        match m {
            MethodArg::Analytic => {
                let est = analytic::threshold_continuum(&params, &cost)?;
                methods_json.insert(
                    est.method.as_str().into(),
                    json!({"q_star": est.q_star, "diagnostics": est.diagnostics}),
                );
            }
            MethodArg::FixedPoint => {
                let grid = GridSpec::stationary_auto(&params, &cost)?;
                let sol = bellman::stationary_g_solve(&params, &cost, &grid, &Tolerances::default())?;
                methods_json.insert(
                    "fixed-point".into(),
                    json!({
                        "q_star": sol.q_star,
                        "iterations": sol.iterations,
                        "residual": sol.residual,
                        "grid_points": grid.n_points(),
                    }),
                );
            }
            MethodArg::Bellman => {
                let horizon = resolve(a.horizon, cfg, "horizon")?
                    .unwrap_or_else(|| default_horizon(&params));
                let grid = GridSpec::for_params(&params, &cost)?;
                let sol = bellman::finite_horizon_solve(&params, &cost, horizon, &grid, 11)?;
                methods_json.insert(
                    "bellman".into(),
                    json!({
                        "q_star": sol.thresholds[0],
                        "horizon": horizon,
                        "grid_points": grid.n_points(),
                        "bang_bang_violations": sol.bang_bang_violations,
                    }),
                );
            }
            MethodArg::All => unreachable!("expanded above"),
        }
    }
    out.insert("methods".into(), Value::Object(methods_json));
    Ok(CmdOut::json(out))
}

fn cmd_sweep(a: &SweepArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let gamma = required(resolve(a.gamma, cfg, "gamma")?, "gamma")?;
    let max_pos = resolve(a.max_pos, cfg, "max-pos")?.unwrap_or(1.0);
    let beta_min = required(resolve(a.beta_min, cfg, "beta-min")?, "beta-min")?;
    let beta_max = required(resolve(a.beta_max, cfg, "beta-max")?, "beta-max")?;
    let points = resolve(a.points, cfg, "points")?.unwrap_or(25);
    let with_grid_search = cfg.flag(a.grid_search, "grid-search")?;
    let steps = resolve(a.steps, cfg, "steps")?.unwrap_or(1_000_000);
    let paths = resolve(a.paths, cfg, "paths")?.unwrap_or(1);
    let candidates = resolve(a.candidates, cfg, "candidates")?;
    let rounds = resolve(a.rounds, cfg, "rounds")?;
    let betas = log_spaced(beta_min, beta_max, points)?;

    let mut body = String::new();
    let mut warnings = Vec::new();
    writeln!(body, "# command: sweep").unwrap();
    writeln!(body, "# seed: {seed}").unwrap();
    writeln!(body, "# version: {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(
        body,
        "beta,q_analytic,q_fixed_point,q_grid_search,q_naive,q_brownian,regime"
    )
    .unwrap();

    // The same seed is reused for every row, so the grid-search column sees
    // common random numbers across betas and traces a smooth curve.
    for beta in betas {
        let mut row_warn = |col: &str, e: &Failure| {
            warnings.push(format!("sweep row beta={beta:.6e}: {col}: {}", e.message));
        };
        let cell = |r: Result<f64, Failure>, col: &str, w: &mut dyn FnMut(&str, &Failure)| match r {
            Ok(v) => v,
            Err(e) => {
                w(col, &e);
                f64::NAN
            }
        };
        match (OuParams::new(epsilon, beta), CostModel::new(gamma, max_pos)) {
            (Ok(params), Ok(cost)) => {
                let limits = analytic::threshold_limits(&params, &cost);
                let q_analytic = cell(
                    analytic::threshold_continuum(&params, &cost)
                        .map(|e| e.q_star)
                        .map_err(Failure::from),
                    "q_analytic",
                    &mut row_warn,
                );
                let q_fixed = cell(
                    GridSpec::stationary_auto(&params, &cost)
                        .and_then(|g| {
                            bellman::stationary_g_solve(&params, &cost, &g, &Tolerances::default())
                        })
                        .map(|s| s.q_star)
                        .map_err(Failure::from),
                    "q_fixed_point",
                    &mut row_warn,
                );
                let q_grid = if with_grid_search {
                    cell(
                        run_sweep_search(&params, &cost, steps, paths, candidates, rounds, seed),
                        "q_grid_search",
                        &mut row_warn,
                    )
                } else {
                    f64::NAN
                };
                let regime = analytic::regime_classify(&params, &cost, analytic::DEFAULT_REGIME_CUTS)
                    .map(|r| r.as_str().to_string())
                    .unwrap_or_else(|_| "nan".to_string());
                writeln!(
                    body,
                    "{},{},{},{},{},{},{}",
                    sig12(beta),
                    sig12(q_analytic),
                    sig12(q_fixed),
                    sig12(q_grid),
                    sig12(limits.naive),
                    sig12(limits.brownian),
                    regime
                )
                .unwrap();
            }
            (p, _) => {
                let msg = match p {
                    Err(e) => e.to_string(),
                    Ok(_) => "invalid cost parameters".to_string(),
                };
                warnings.push(format!("sweep row beta={beta:.6e}: skipped: {msg}"));
                writeln!(body, "{},nan,nan,nan,nan,nan,nan", sig12(beta)).unwrap();
            }
        }
    }
    Ok(CmdOut {
        body,
        exit: 0,
        warnings,
    })
}

fn run_sweep_search(
    params: &OuParams,
    cost: &CostModel,
    steps: usize,
    paths: usize,
    candidates: Option<usize>,
    rounds: Option<usize>,
    seed: u64,
) -> Result<f64, Failure> {
    let mut search = SearchConfig::around_threshold(params, cost)?;
    if let Some(c) = candidates {
        search.n_candidates = c;
    }
    if let Some(r) = rounds {
        search.rounds = r;
    }
    search.validate()?;
    let (est, _) = backtest::grid_search(
        params,
        Objective::Threshold(*cost),
        &search,
        steps,
        paths,
        seed,
    )?;
    Ok(est.q_star)
}

fn cmd_backtest(a: &BacktestArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let beta = required(resolve(a.beta, cfg, "beta")?, "beta")?;
    let gamma = required(resolve(a.gamma, cfg, "gamma")?, "gamma")?;
    let max_pos = resolve(a.max_pos, cfg, "max-pos")?.unwrap_or(1.0);
    let steps = resolve(a.steps, cfg, "steps")?.unwrap_or(100_000);
    let paths = resolve(a.paths, cfg, "paths")?.unwrap_or(100);
    let band = cfg.flag(a.band, "band")?;
    let burn_in = resolve(a.burn_in, cfg, "burn-in")?.unwrap_or(0);
    let params = OuParams::new(epsilon, beta)?;
    if steps == 0 || paths == 0 {
        return Err(Failure::usage("need steps >= 1 and paths >= 1"));
    }

    let lambda = if band {
        Some(required(
            resolve(a.lambda, cfg, "lambda")?,
            "lambda (required with --band)",
        )?)
    } else {
        None
    };
    let q = match resolve(a.q, cfg, "q")? {
        Some(q) => q,
        None if band => (1.5 * gamma * beta * beta).cbrt(),
        None => {
            let cost = CostModel::new(gamma, max_pos)?;
            analytic::threshold_continuum(&params, &cost)?.q_star
        }
    };

    let mut reports = Vec::with_capacity(paths);
    for i in 0..paths {
        let start = if burn_in > 0 {
            StartState::At(0.0)
        } else {
            StartState::Stationary
        };
        let sample = sde::simulate_path_stream(&params, steps + burn_in, seed, i as u64, start)?;
        let sample = if burn_in > 0 {
            PathSample {
                values: sample.values[burn_in..].to_vec(),
                seed: sample.seed,
                stream: sample.stream,
                params: sample.params,
            }
        } else {
            sample
        };
        let report = match lambda {
            Some(l) => backtest::run_band_strategy(&sample, q, l, gamma)?,
            None => {
                let cost = CostModel::new(gamma, max_pos)?;
                backtest::run_threshold_strategy(&sample, q, &cost)?
            }
        };
        reports.push(report);
    }

    let n = reports.len() as f64;
    let nets: Vec<f64> = reports.iter().map(|r| r.net).collect();
    let (mean_net, se_net) = mean_and_se(&nets);
    let mean_of = |f: fn(&backtest::BacktestReport) -> f64| reports.iter().map(f).sum::<f64>() / n;

    let mut out = envelope("backtest", seed);
    out.insert("params".into(), params_json(&params, None));
    out.insert("gamma".into(), json!(gamma));
    out.insert("max_pos".into(), json!(max_pos));
    let strategy = match lambda {
        Some(l) => json!({"kind": "band", "half_band": q, "lambda": l}),
        None => json!({"kind": "threshold", "q": q}),
    };
    out.insert("strategy".into(), strategy);
    out.insert("n_steps".into(), json!(steps));
    out.insert("n_paths".into(), json!(paths));
    out.insert("burn_in".into(), json!(burn_in));
    out.insert(
        "mean".into(),
        json!({
            "gross_gain": mean_of(|r| r.gross_gain),
            "cost_paid": mean_of(|r| r.cost_paid),
            "risk_penalty": mean_of(|r| r.risk_penalty),
            "net": mean_net,
            "n_trades": mean_of(|r| r.n_trades as f64),
        }),
    );
    out.insert("se_net".into(), json!(se_net));
    Ok(CmdOut::json(out))
}

fn cmd_optimize(a: &OptimizeArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let beta = required(resolve(a.beta, cfg, "beta")?, "beta")?;
    let gamma = required(resolve(a.gamma, cfg, "gamma")?, "gamma")?;
    let max_pos = resolve(a.max_pos, cfg, "max-pos")?.unwrap_or(1.0);
    let steps = resolve(a.steps, cfg, "steps")?.unwrap_or(1_000_000);
    let paths = resolve(a.paths, cfg, "paths")?.unwrap_or(1);
    let band = cfg.flag(a.band, "band")?;
    let params = OuParams::new(epsilon, beta)?;
    let cost = CostModel::new(gamma, max_pos)?;

    let range_lo = resolve(a.range_lo, cfg, "range-lo")?;
    let range_hi = resolve(a.range_hi, cfg, "range-hi")?;
    let mut search = match (range_lo, range_hi) {
        (Some(lo), Some(hi)) => SearchConfig::new((lo, hi))?,
        (None, None) if band => {
            // Bracket the Brownian-limit half-band prediction.
            let pred = (1.5 * gamma * beta * beta).cbrt();
            SearchConfig::new((pred / 4.0, 4.0 * pred))?
        }
        (None, None) => SearchConfig::around_threshold(&params, &cost)?,
        _ => {
            return Err(Failure::usage(
                "give both --range-lo and --range-hi or neither",
            ))
        }
    };
    if let Some(c) = resolve(a.candidates, cfg, "candidates")? {
        search.n_candidates = c;
    }
    if let Some(r) = resolve(a.rounds, cfg, "rounds")? {
        search.rounds = r;
    }
    if let Some(s) = resolve(a.shrink, cfg, "shrink")? {
        search.shrink = s;
    }
    search.validate()?;

    let objective = if band {
        let lambda = required(
            resolve(a.lambda, cfg, "lambda")?,
            "lambda (required with --band)",
        )?;
        Objective::Band { lambda, gamma }
    } else {
        Objective::Threshold(cost)
    };
    let (est, curve) = backtest::grid_search(&params, objective, &search, steps, paths, seed)?;

    let mut out = envelope("optimize", seed);
    out.insert("params".into(), params_json(&params, Some(&cost)));
    let objective_json = if band {
        json!({"kind": "band", "lambda": a.lambda})
    } else {
        json!({"kind": "threshold"})
    };
    out.insert("objective".into(), objective_json);
    out.insert(
        "search".into(),
        json!({
            "candidates": search.n_candidates,
            "rounds": search.rounds,
            "shrink": search.shrink,
            "range_lo": search.initial_range.0,
            "range_hi": search.initial_range.1,
        }),
    );
    out.insert("n_steps".into(), json!(steps));
    out.insert("n_paths".into(), json!(paths));
    out.insert(
        "estimate".into(),
        json!({
            "q_star": est.q_star,
            "method": est.method.as_str(),
            "regime": est.regime.as_str(),
            "eta": est.eta,
        }),
    );
    out.insert("diagnostics".into(), json!(est.diagnostics));
    out.insert("curve".into(), json!(curve));
    Ok(CmdOut::json(out))
}

fn cmd_bellman(a: &BellmanArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let beta = required(resolve(a.beta, cfg, "beta")?, "beta")?;
    let gamma = required(resolve(a.gamma, cfg, "gamma")?, "gamma")?;
    let max_pos = resolve(a.max_pos, cfg, "max-pos")?.unwrap_or(1.0);
    let n_pos = resolve(a.n_pos, cfg, "n-pos")?.unwrap_or(11);
    let params = OuParams::new(epsilon, beta)?;
    let cost = CostModel::new(gamma, max_pos)?;
    let horizon = resolve(a.horizon, cfg, "horizon")?.unwrap_or_else(|| default_horizon(&params));

    let auto = GridSpec::for_params(&params, &cost)?;
    let p_max = resolve(a.p_max, cfg, "p-max")?.unwrap_or_else(|| auto.p_max());
    let n_points = resolve(a.grid_points, cfg, "grid-points")?.unwrap_or_else(|| auto.n_points());
    let grid = GridSpec::new(p_max, n_points, auto.quadrature())?;

    let sol = bellman::finite_horizon_solve(&params, &cost, horizon, &grid, n_pos)?;
    let mut out = envelope("bellman", seed);
    out.insert("params".into(), params_json(&params, Some(&cost)));
    out.insert("horizon".into(), json!(horizon));
    out.insert("n_pos".into(), json!(n_pos));
    out.insert(
        "grid".into(),
        json!({"p_max": grid.p_max(), "n_points": grid.n_points()}),
    );
    out.insert("q_initial".into(), json!(sol.thresholds[0]));
    out.insert(
        "q_terminal".into(),
        json!(sol.thresholds[sol.thresholds.len() - 1]),
    );
    out.insert("thresholds".into(), json!(sol.thresholds));
    out.insert(
        "bang_bang_violations".into(),
        json!(sol.bang_bang_violations),
    );
    out.insert(
        "max_interior_overshoot".into(),
        json!(sol.max_interior_overshoot),
    );
    Ok(CmdOut::json(out))
}

fn cmd_passage(a: &PassageArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let epsilon = required(resolve(a.epsilon, cfg, "epsilon")?, "epsilon")?;
    let beta = required(resolve(a.beta, cfg, "beta")?, "beta")?;
    let q = required(resolve(a.q, cfg, "q")?, "q")?;
    let start = required(resolve(a.start, cfg, "start")?, "start")?;
    let paths = resolve(a.paths, cfg, "paths")?.unwrap_or(10_000);
    let params = OuParams::new(epsilon, beta)?;
    let max_steps =
        resolve(a.max_steps, cfg, "max-steps")?.unwrap_or_else(|| backtest::default_max_steps(&params));

    let stats = backtest::first_passage_mc(&params, q, start, paths, seed, max_steps)?;
    let mut out = envelope("passage", seed);
    out.insert("params".into(), params_json(&params, None));
    out.insert("q".into(), json!(q));
    out.insert("start".into(), json!(start));
    out.insert("n_paths".into(), json!(paths));
    out.insert("max_steps".into(), json!(max_steps));
    out.insert("est_l".into(), json!(stats.est_l));
    out.insert("se_l".into(), json!(stats.se_l));
    out.insert("est_p".into(), json!(stats.est_p));
    out.insert("se_p".into(), json!(stats.se_p));
    out.insert("mean_exit_time".into(), json!(stats.mean_exit_time));
    out.insert("censored".into(), json!(stats.censored));
    match stats.ratio_l_over_p() {
        Ok((r, se)) => {
            out.insert("ratio_l_over_p".into(), json!(r));
            out.insert("ratio_se".into(), json!(se));
        }
        Err(e) => {
            out.insert("ratio_note".into(), json!(e.to_string()));
        }
    }
    // Continuum closed forms at the same point, for reference. They differ
    // from the discrete-chain estimates by boundary-layer effects of
    // relative order beta/q.
    if let Ok(l) = analytic::expected_sum_closed(start, q, &params) {
        out.insert("closed_form_l".into(), json!(l));
    }
    if let Ok(p) = analytic::hitting_prob_closed(start, q, &params) {
        out.insert("closed_form_p".into(), json!(p));
    }
    Ok(CmdOut::json(out))
}

fn cmd_verify(a: &VerifyArgs, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let fault = cfg.flag(a.self_test_fault, "self-test-fault")?;
    let results = checks::run_all(fault);
    let n_failed = results.iter().filter(|c| !c.passed).count();
    let total_millis: f64 = results.iter().map(|c| c.millis).sum();
    // Soft budget: the battery is meant to be cheap enough to run on every
    // build, so flag (but do not fail) runs beyond five minutes.
    let runtime_warning = total_millis > 300_000.0;

    let mut out = envelope("verify", seed);
    out.insert("fault_injected".into(), json!(fault));
    out.insert("passed".into(), json!(n_failed == 0));
    out.insert("n_checks".into(), json!(results.len()));
    out.insert("n_failed".into(), json!(n_failed));
    out.insert("total_millis".into(), json!(total_millis));
    out.insert("runtime_warning".into(), json!(runtime_warning));
    out.insert(
        "checks".into(),
        serde_json::to_value(&results).expect("checks serialize"),
    );
    let mut cmd_out = CmdOut::json(out);
    if runtime_warning {
        cmd_out.warnings.push(format!(
            "verify battery took {:.1} s, over the 300 s soft budget",
            total_millis / 1e3
        ));
    }
    if n_failed > 0 {
        cmd_out.exit = 1;
    }
    Ok(cmd_out)
}

fn dispatch(cli: &Cli, cfg: &FileCfg, seed: u64) -> Result<CmdOut, Failure> {
    let fmt = cli.global.format;
    match &cli.command {
        Command::Solve(a) => {
            check_format(fmt, Format::Json, "solve")?;
            cmd_solve(a, cfg, seed)
        }
        Command::Sweep(a) => {
            check_format(fmt, Format::Csv, "sweep")?;
            cmd_sweep(a, cfg, seed)
        }
        Command::Backtest(a) => {
            check_format(fmt, Format::Json, "backtest")?;
            cmd_backtest(a, cfg, seed)
        }
        Command::Optimize(a) => {
            check_format(fmt, Format::Json, "optimize")?;
            cmd_optimize(a, cfg, seed)
        }
        Command::Bellman(a) => {
            check_format(fmt, Format::Json, "bellman")?;
            cmd_bellman(a, cfg, seed)
        }
        Command::Passage(a) => {
            check_format(fmt, Format::Json, "passage")?;
            cmd_passage(a, cfg, seed)
        }
        Command::Verify(a) => {
            check_format(fmt, Format::Json, "verify")?;
            cmd_verify(a, cfg, seed)
        }
    }
}

/// Parse `args`, run the command, and write the report. Returns the process
/// exit code; all output goes through the two writers so tests can capture
/// it.
pub fn run<I, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator,
    I::Item: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = out.write_all(rendered.as_bytes());
                0
            } else {
                let _ = err.write_all(rendered.as_bytes());
                2
            };
        }
    };

    let result = (|| -> Result<CmdOut, Failure> {
        let cfg = match &cli.global.config {
            Some(path) => FileCfg::load(path)?,
            None => FileCfg::default(),
        };
        let seed = resolve(cli.global.seed, &cfg, "seed")?.unwrap_or(1);
        dispatch(&cli, &cfg, seed)
    })();

    match result {
        Ok(cmd_out) => {
            for w in &cmd_out.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            if let Some(path) = &cli.global.output {
                if let Err(e) = std::fs::write(path, cmd_out.body.as_bytes()) {
                    let _ = writeln!(
                        err,
                        "{}",
                        json!({"error": 2, "message": format!("cannot write {}: {e}", path.display())})
                    );
                    return 2;
                }
            } else if out.write_all(cmd_out.body.as_bytes()).is_err() {
                return 2;
            }
            cmd_out.exit
        }
        Err(f) => {
            let _ = writeln!(err, "{}", json!({"error": f.code, "message": f.message}));
            f.code
        }
    }
}
