//! Experiment configs, batch execution over an `n` grid, report files and
//! re-verification of stored reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clt::{
    calibrate_tv_floor, limiting_variance, nnp21_rate, partial_sum_by, stein_discrepancy,
    tv_estimate, EmpiricalVariance, PartialSumSample, Reference, TestFunction, DEFAULT_LAG_CUTOFF,
};
use crate::error::{LabError, Result};
use crate::gaussproc::{simulate, write_atomic, CorrelationModel};
use crate::hermite::{FunctionSpec, HermiteExpansion, DEFAULT_MAX_ORDER};
use crate::malliavin::{
    bilinearity_residual, gamma_estimate, key_identity_grid, GammaMode, IdentityReport,
    DEFAULT_HAT_COUNT, DEFAULT_ST_GRID, DEFAULT_XI_GRID, IDENTITY_Z,
};
use crate::stats::variance_estimate;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Number of standard-normal samples used to calibrate the TV floor.
pub const TV_FLOOR_REPEATS: usize = 8;
/// Tolerance on the bilinearity residual and on negative `Gamma[F,F]`.
pub const EXACT_TOL: f64 = 1e-10;
/// 99% quantile of the Kolmogorov distribution, scaled by `M^{-1/2}` to
/// give the noise floor of the Kolmogorov distance.
pub const KOLMOGOROV_Q99: f64 = 1.628;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Variance,
    Tv,
    Identity,
    Gamma,
    Stein,
    Rate,
}

impl Check {
    pub const ALL: [Check; 6] =
        [Check::Variance, Check::Tv, Check::Identity, Check::Gamma, Check::Stein, Check::Rate];

    pub fn name(self) -> &'static str {
        match self {
            Check::Variance => "variance",
            Check::Tv => "tv",
            Check::Identity => "identity",
            Check::Gamma => "gamma",
            Check::Stein => "stein",
            Check::Rate => "rate",
        }
    }
}

impl FromStr for Check {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown check '{s}'")))
    }
}

fn default_hat_count() -> usize {
    DEFAULT_HAT_COUNT
}
fn default_max_order() -> usize {
    DEFAULT_MAX_ORDER
}
fn default_lag_cutoff() -> usize {
    DEFAULT_LAG_CUTOFF
}
fn default_xi_grid() -> Vec<f64> {
    DEFAULT_XI_GRID.to_vec()
}

/// One experiment: a function, a correlation model, and checks over `n_grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub function: String,
    pub model: String,
    pub n_grid: Vec<usize>,
    #[serde(rename = "M", alias = "replications")]
    pub replications: usize,
    #[serde(default = "default_hat_count")]
    pub hat_count: usize,
    #[serde(default)]
    pub seed: u64,
    pub checks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_xi_grid")]
    pub xi_grid: Vec<f64>,
    #[serde(default = "default_lag_cutoff")]
    pub lag_cutoff: usize,
}

/// Config with every field parsed.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub function: FunctionSpec,
    pub expansion: HermiteExpansion,
    pub model: CorrelationModel,
    pub checks: Vec<Check>,
}

impl ExperimentConfig {
    /// Reads TOML or JSON, chosen by extension (JSON also when the content
    /// starts with `{`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn validate(&self) -> Result<ResolvedConfig> {
        if self.n_grid.is_empty() {
            return Err(LabError::Config("n_grid is empty".into()));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Config(format!(
                "n_grid must be positive and strictly increasing, got {:?}",
                self.n_grid
            )));
        }
        if self.replications < 2 {
            return Err(LabError::Config("M must be at least 2".into()));
        }
        if self.workers == Some(0) {
            return Err(LabError::Config("workers must be positive".into()));
        }
        let mut checks = self
            .checks
            .iter()
            .map(|c| c.parse::<Check>())
            .collect::<Result<Vec<_>>>()?;
        checks.sort();
        checks.dedup();
        if checks.contains(&Check::Identity) && self.hat_count < 2 {
            return Err(LabError::Config("hat_count must be >= 2 for the identity check".into()));
        }
        let function = FunctionSpec::parse(&self.function)?;
        let expansion = function.expansion(self.max_order)?;
        let model: CorrelationModel = self.model.parse()?;
        Ok(ResolvedConfig { function, expansion, model, checks })
    }
}

/// Per-`n` metrics. Absent metrics are `None` (empty CSV cells).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    #[serde(rename = "M")]
    pub replications: usize,
    pub seed: u64,
    pub version: String,
    pub var_hat: Option<f64>,
    pub var_se: Option<f64>,
    pub sigma2: Option<f64>,
    pub tv: Option<f64>,
    pub tv_floor: Option<f64>,
    pub kolmogorov: Option<f64>,
    pub nnp21_rate: Option<f64>,
    pub stein_disc: Option<f64>,
    pub stein_se: Option<f64>,
    pub nu_hat: Option<f64>,
    pub gamma_ff_min: Option<f64>,
    pub gamma_fg_mean: Option<f64>,
    pub gamma_fg_se: Option<f64>,
    pub gamma_fg_var: Option<f64>,
    pub gamma_fg_var_se: Option<f64>,
    pub bilinearity: Option<f64>,
    pub identity_max_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub identity: Vec<IdentityReport>,
    #[serde(default)]
    pub errors: Vec<String>,
    #[serde(default)]
    pub verdicts: BTreeMap<String, Verdict>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Not applicable, e.g. CLT checks when `sigma^2 = 0`.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub generated_at: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub wall_clock_secs: f64,
    pub rows: Vec<ReportRow>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| !r.errors.is_empty())
    }

    /// 0 pass, 1 check failure, 3 numerical/model error.
    pub fn exit_code(&self) -> i32 {
        if self.has_errors() {
            3
        } else if self.passed {
            0
        } else {
            1
        }
    }
}

/// Column order of the CSV report.
pub const CSV_COLUMNS: [&str; 22] = [
    "n", "M", "seed", "version", "var_hat", "var_se", "sigma2", "tv", "tv_floor", "kolmogorov",
    "nnp21_rate", "stein_disc", "stein_se", "nu_hat", "gamma_ff_min", "gamma_fg_mean",
    "gamma_fg_se", "gamma_fg_var", "gamma_fg_var_se", "bilinearity", "identity_max_z", "pass",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let pass = r.errors.is_empty() && r.verdicts.values().all(|v| *v != Verdict::Fail);
        let cells = [
            r.n.to_string(),
            r.replications.to_string(),
            r.seed.to_string(),
            r.version.clone(),
            cell(r.var_hat),
            cell(r.var_se),
            cell(r.sigma2),
            cell(r.tv),
            cell(r.tv_floor),
            cell(r.kolmogorov),
            cell(r.nnp21_rate),
            cell(r.stein_disc),
            cell(r.stein_se),
            cell(r.nu_hat),
            cell(r.gamma_ff_min),
            cell(r.gamma_fg_mean),
            cell(r.gamma_fg_se),
            cell(r.gamma_fg_var),
            cell(r.gamma_fg_var_se),
            cell(r.bilinearity),
            cell(r.identity_max_z),
            pass.to_string(),
        ];
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn row_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Metrics for one `n`; errors are recorded per check.
fn run_row(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    index: usize,
    n: usize,
    sigma2: Option<f64>,
    tv_floor: Option<f64>,
) -> (ReportRow, Option<PartialSumSample>) {
    let f = &resolved.expansion;
    let seed = row_seed(cfg.seed, index);
    let mut row = ReportRow {
        n,
        replications: cfg.replications,
        seed,
        version: CODE_VERSION.to_string(),
        ..Default::default()
    };
    let has = |c: Check| resolved.checks.contains(&c);
    if has(Check::Rate) {
        row.nnp21_rate = Some(nnp21_rate(&resolved.model, n));
    }
    let needs_paths = resolved.checks.iter().any(|c| *c != Check::Rate);
    if !needs_paths {
        return (row, None);
    }
    let batch = match simulate(&resolved.model, n, cfg.replications, seed, false, Default::default()) {
        Ok(b) => b,
        Err(e) => {
            row.errors.push(format!("simulate: {e}"));
            return (row, None);
        }
    };
    let mut sample = None;
    if has(Check::Variance) || has(Check::Tv) || has(Check::Stein) {
        // The closed form avoids the truncation error of the `abs` expansion.
        let summed = f.require_centered("the partial sum").map(|_| {
            let spec = &resolved.function;
            partial_sum_by(|x| spec.closed_form(x).unwrap_or_else(|| f.eval(x)), &batch)
        });
        match summed {
            Ok(s) => sample = Some(s),
            Err(e) => row.errors.push(format!("partial_sum: {e}")),
        }
    }
    if let (true, Some(s)) = (has(Check::Variance), &sample) {
        let ev = EmpiricalVariance::from_sample(s);
        row.var_hat = Some(ev.var_hat);
        row.var_se = Some(ev.se);
        row.sigma2 = sigma2;
    }
    if let (true, Some(s)) = (has(Check::Tv), &sample) {
        row.tv_floor = tv_floor;
        match s.normalize().and_then(|z| tv_estimate(&z.values, Reference::StandardNormal)) {
            Ok(d) => {
                row.tv = Some(d.tv);
                row.kolmogorov = Some(d.kolmogorov);
            }
            Err(e) => row.errors.push(format!("tv: {e}")),
        }
    }
    if has(Check::Gamma) || has(Check::Stein) {
        match gamma_estimate(f, &batch, cfg.hat_count, GammaMode::ExactQuadratic) {
            Ok(g) => {
                let lim = g.limits();
                let fg_var = variance_estimate(&g.gamma_fg);
                row.nu_hat = Some(lim.nu.value);
                if has(Check::Gamma) {
                    row.gamma_ff_min = Some(g.gamma_ff.iter().copied().fold(f64::INFINITY, f64::min));
                    row.gamma_fg_mean = Some(lim.nu.value);
                    row.gamma_fg_se = Some(lim.nu.se);
                    row.gamma_fg_var = Some(fg_var.value);
                    row.gamma_fg_var_se = Some(fg_var.se);
                    match bilinearity_residual(f, &DEFAULT_ST_GRID, &batch) {
                        Ok(b) => row.bilinearity = Some(b),
                        Err(e) => row.errors.push(format!("gamma: {e}")),
                    }
                }
            }
            Err(e) => row.errors.push(format!("gamma: {e}")),
        }
    }
    if has(Check::Identity) {
        match key_identity_grid(f, &DEFAULT_ST_GRID, &cfg.xi_grid, &batch, cfg.hat_count) {
            Ok(reports) => {
                let z = reports
                    .iter()
                    .flat_map(|r| &r.residuals)
                    .map(|r| {
                        if r.residual() <= 1e-12 {
                            0.0
                        } else {
                            r.residual() / r.se
                        }
                    })
                    .fold(0.0, f64::max);
                row.identity_max_z = Some(z);
                row.identity = reports;
            }
            Err(e) => row.errors.push(format!("identity: {e}")),
        }
    }
    (row, sample)
}

/// Executes every `(n, check)` cell, evaluates verdicts, and writes
/// `report.csv` and `report.json` under `config.out` when set.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    let started = std::time::Instant::now();
    let mut rows = pool.install(|| run_cells(config, &resolved));
    apply_verdicts(&mut rows, &resolved.checks);
    let passed = rows
        .iter()
        .all(|r| r.errors.is_empty() && r.verdicts.values().all(|v| *v != Verdict::Fail));
    let report = ExperimentReport {
        generated_at: timestamp(),
        version: CODE_VERSION.to_string(),
        config: config.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        rows,
        passed,
    };
    if let Some(dir) = &config.out {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn run_cells(config: &ExperimentConfig, resolved: &ResolvedConfig) -> Vec<ReportRow> {
    let has = |c: Check| resolved.checks.contains(&c);
    let f = &resolved.expansion;
    let mut global_errors = Vec::new();
    let sigma2 = if has(Check::Variance) || has(Check::Tv) {
        match limiting_variance(f, &resolved.model, config.lag_cutoff) {
            Ok(v) => Some(v.sigma2),
            Err(e) => {
                global_errors.push(format!("variance: {e}"));
                None
            }
        }
    } else {
        None
    };
    let tv_floor = if has(Check::Tv) {
        match calibrate_tv_floor(config.replications, config.seed ^ 0x5EED_F100, TV_FLOOR_REPEATS) {
            Ok(e) => Some(e.value),
            Err(e) => {
                global_errors.push(format!("tv: {e}"));
                None
            }
        }
    } else {
        None
    };
    let mut results: Vec<(ReportRow, Option<PartialSumSample>)> = config
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| run_row(config, resolved, i, n, sigma2, tv_floor))
        .collect();
    if has(Check::Stein) {
        // nu from the largest n feeds every row.
        let nu = results.last().and_then(|(r, _)| r.nu_hat);
        for (row, sample) in &mut results {
            match (nu, sample.as_ref()) {
                (Some(nu), Some(s)) => {
                    let rep = stein_discrepancy(s, nu, &TestFunction::default_family());
                    row.stein_disc = Some(rep.max);
                    row.stein_se = Some(rep.max_se);
                }
                _ => row.errors.push("stein: missing partial sums or nu estimate".into()),
            }
        }
    }
    for (row, _) in &mut results {
        row.errors.extend(global_errors.iter().cloned());
    }
    results.into_iter().map(|(r, _)| r).collect()
}

/// Pass/fail rules, evaluated from stored row values only.
pub fn apply_verdicts(rows: &mut [ReportRow], checks: &[Check]) {
    let last = rows.len().saturating_sub(1);
    for i in 0..rows.len() {
        let mut verdicts = BTreeMap::new();
        let prev = i.checked_sub(1).map(|j| rows[j].clone());
        let row = &rows[i];
        let sigma_positive = row.sigma2.is_none_or(|s| s > 0.0);
        for &check in checks {
            let v = match check {
                Check::Variance => match (row.var_hat, row.var_se, row.sigma2) {
                    (_, _, Some(s)) if s <= 0.0 => Verdict::Skipped,
                    (Some(v), Some(se), Some(s)) => {
                        let gap = (v - s).abs();
                        let within = gap <= (0.1 * s).max(4.0 * se);
                        let shrinking = prev
                            .as_ref()
                            .and_then(|p| p.var_hat.map(|pv| gap <= (pv - s).abs() + 2.0 * se))
                            .unwrap_or(true);
                        verdict(within || (i < last && shrinking))
                    }
                    _ => Verdict::Fail,
                },
                Check::Tv => match (row.tv, row.tv_floor, row.kolmogorov) {
                    _ if !sigma_positive => Verdict::Skipped,
                    (Some(tv), Some(floor), Some(ks)) => {
                        let ks_floor = KOLMOGOROV_Q99 / (row.replications as f64).sqrt();
                        let tv_ok = tv <= 2.0 * floor
                            || prev.as_ref().and_then(|p| p.tv).is_none_or(|ptv| tv < ptv);
                        let ks_ok = ks <= ks_floor
                            || prev.as_ref().and_then(|p| p.kolmogorov).is_none_or(|pks| ks < pks);
                        verdict(tv_ok && ks_ok)
                    }
                    _ => Verdict::Fail,
                },
                Check::Identity => match row.identity_max_z {
                    Some(z) => verdict(z <= IDENTITY_Z),
                    None => Verdict::Fail,
                },
                Check::Gamma => match (row.gamma_ff_min, row.bilinearity, row.gamma_fg_var, row.gamma_fg_var_se) {
                    (Some(ff), Some(bl), Some(var), Some(se)) => {
                        let concentrating = prev
                            .as_ref()
                            .and_then(|p| p.gamma_fg_var)
                            .is_none_or(|pv| var <= pv + 2.0 * se);
                        verdict(ff >= -EXACT_TOL && bl <= EXACT_TOL && concentrating)
                    }
                    _ => Verdict::Fail,
                },
                Check::Stein => match (row.stein_disc, row.stein_se) {
                    _ if !sigma_positive => Verdict::Skipped,
                    (Some(d), Some(se)) => {
                        let decreasing = prev.as_ref().and_then(|p| p.stein_disc).is_none_or(|pd| d < pd);
                        verdict(d <= 4.0 * se || decreasing)
                    }
                    _ => Verdict::Fail,
                },
                Check::Rate => verdict(row.nnp21_rate.is_some_and(|r| r.is_finite() && r > 0.0)),
            };
            verdicts.insert(check.name().to_string(), v);
        }
        rows[i].verdicts = verdicts;
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("report.csv"), report_csv(&report.rows).as_bytes())?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| LabError::Parse(e.to_string()))?;
    write_atomic(&dir.join("report.json"), &json)
}

/// Outcome of re-checking a stored report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub passed: bool,
    /// `"n=<n> <check>"` for every failing cell, plus recorded errors.
    pub failures: Vec<String>,
}

/// Re-evaluates all verdicts of `report.json` (or a directory holding it)
/// from the stored rows, without re-simulating.
pub fn verify(report_path: &Path) -> Result<VerifyOutcome> {
    let path = if report_path.is_dir() { report_path.join("report.json") } else { report_path.to_path_buf() };
    let text = std::fs::read_to_string(&path)?;
    let mut report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))?;
    let checks = report
        .config
        .checks
        .iter()
        .map(|c| c.parse::<Check>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| LabError::Parse(e.to_string()))?;
    apply_verdicts(&mut report.rows, &checks);
    let mut failures = Vec::new();
    for row in &report.rows {
        for e in &row.errors {
            failures.push(format!("n={} error: {e}", row.n));
        }
        for (name, v) in &row.verdicts {
            if *v == Verdict::Fail {
                failures.push(format!("n={} {name}", row.n));
            }
        }
    }
    Ok(VerifyOutcome { passed: failures.is_empty(), failures })
}
