//! Sharp-gradient doubling construction and carré du champ estimates for
//! Breuer-Major functionals.
//!
//! For `F_n = n^{-1/2} sum_k f(X_k)` and `G_n = -L^{-1} F_n`, the sharp
//! gradient pairs each derivative with an independent copy `X_hat`:
//! `#F_n = n^{-1/2} sum_k f'(X_k) X_hat_k`. Conditionally on `X` this is a
//! centered Gaussian with variance `n^{-1} a^T R a`, `a_k = f'(X_k)` and `R`
//! the Toeplitz correlation matrix, which is the carré du champ
//! `Gamma[F_n, F_n]`. The exact-quadratic mode evaluates that form directly;
//! the Monte-Carlo mode averages over fresh copies of `X_hat`.

mod toeplitz;

pub use toeplitz::{QuadraticKernel, ToeplitzOperator, DIRECT_ORACLE_MAX_N};

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gaussproc::{stream_rng, PathBatch, PathSampler, COPY_HAT_BASE};
use crate::hermite::HermiteExpansion;
use crate::stats::{mean, mean_estimate, variance, Estimate};

/// Default number of `X_hat` copies per base path.
pub const DEFAULT_HAT_COUNT: usize = 64;
/// Default frequencies for the key identity check.
pub const DEFAULT_XI_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
/// Default `(s, t)` pairs for the key identity check.
pub const DEFAULT_ST_GRID: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];
/// Number of standard errors used by the identity pass rule.
pub const IDENTITY_Z: f64 = 4.0;

/// `(f', g')` with `g = -L^{-1} f`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativePair {
    pub f_prime: HermiteExpansion,
    pub g_prime: HermiteExpansion,
}

impl DerivativePair {
    pub fn new(f: &HermiteExpansion) -> Result<Self> {
        f.require_centered("the sharp construction")?;
        let g = f.ou_pseudo_inverse()?;
        Ok(Self { f_prime: f.derivative(), g_prime: g.derivative() })
    }

    /// Both derivatives projected on chaoses `0..=p-1`, so that the
    /// two-variable functional `(f'(x) y, g'(x) y)` keeps chaoses `<= p`.
    pub fn truncated(&self, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(LabError::Construction("chaos truncation order must be >= 1".into()));
        }
        Ok(Self { f_prime: self.f_prime.truncate(p - 1), g_prime: self.g_prime.truncate(p - 1) })
    }

    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            x.iter().map(|&v| self.f_prime.eval(v)).collect(),
            x.iter().map(|&v| self.g_prime.eval(v)).collect(),
        )
    }
}

/// Per-replication values of `(#F_n, #G_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpPair {
    pub values: Vec<[f64; 2]>,
    pub n: usize,
    pub hat_count: usize,
}

impl SharpPair {
    pub fn first(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }

    pub fn second(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[1]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sharp_pair_with(pair: &DerivativePair, batch: &PathBatch) -> Result<SharpPair> {
    if batch.doubled().is_none() {
        return Err(LabError::Construction(
            "the sharp construction needs a batch with the doubled copy".into(),
        ));
    }
    let norm = (batch.n() as f64).sqrt();
    let values = (0..batch.replications())
        .into_par_iter()
        .map(|r| {
            let (a, b) = pair.evaluate(batch.row(r));
            let hat = batch.hat_row(r).expect("doubled copy checked above");
            [dot(&a, hat) / norm, dot(&b, hat) / norm]
        })
        .collect();
    Ok(SharpPair { values, n: batch.n(), hat_count: 1 })
}

/// `(#F_n, #G_n) = n^{-1/2} sum_k (f'(X_k), g'(X_k)) X_hat_k` per replication.
pub fn sharp_partial_sums(f: &HermiteExpansion, batch: &PathBatch) -> Result<SharpPair> {
    let pair = DerivativePair::new(f)?;
    sharp_pair_with(&pair, batch)
}

/// The sharp pair built from the chaos-`p` truncation of the functional.
pub fn truncated_sharp_pair(f: &HermiteExpansion, p: usize, batch: &PathBatch) -> Result<SharpPair> {
    let pair = DerivativePair::new(f)?.truncated(p)?;
    sharp_pair_with(&pair, batch)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    MonteCarlo,
    #[default]
    ExactQuadratic,
}

/// Per-replication carré du champ values `Gamma[F,F]`, `Gamma[G,G]`,
/// `Gamma[F,G]`, with the inner Monte-Carlo standard errors (zero in the
/// exact mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub mode: GammaMode,
    pub hat_count: usize,
    pub gamma_ff: Vec<f64>,
    pub gamma_gg: Vec<f64>,
    pub gamma_fg: Vec<f64>,
    pub se_ff: Vec<f64>,
    pub se_gg: Vec<f64>,
    pub se_fg: Vec<f64>,
}

impl GammaEstimate {
    pub fn replications(&self) -> usize {
        self.gamma_ff.len()
    }

    /// `Gamma[tF + sG, tF + sG]` by bilinearity.
    pub fn combined(&self, s: f64, t: f64) -> Vec<f64> {
        (0..self.replications())
            .map(|r| {
                t * t * self.gamma_ff[r] + s * s * self.gamma_gg[r] + 2.0 * t * s * self.gamma_fg[r]
            })
            .collect()
    }

    /// Replications whose `Gamma[F,F]` is negative beyond tolerance:
    /// `-1e-10` in the exact mode, `-3 SE` in the Monte-Carlo mode.
    pub fn negative_ff(&self) -> Vec<usize> {
        (0..self.replications())
            .filter(|&r| match self.mode {
                GammaMode::ExactQuadratic => self.gamma_ff[r] < -1e-10,
                GammaMode::MonteCarlo => self.gamma_ff[r] < -3.0 * self.se_ff[r],
            })
            .collect()
    }

    /// CSV with columns `replication,gamma_ff,gamma_gg,gamma_fg,se`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replication,gamma_ff,gamma_gg,gamma_fg,se\n");
        for r in 0..self.replications() {
            let _ = writeln!(
                out,
                "{r},{},{},{},{}",
                self.gamma_ff[r], self.gamma_gg[r], self.gamma_fg[r], self.se_fg[r]
            );
        }
        out
    }

    /// Pooled means of `Gamma[F,F]`, `Gamma[G,G]`, `Gamma[F,G]`, i.e. the
    /// estimates of the limits `lambda`, `mu`, `nu`.
    pub fn limits(&self) -> Limits {
        Limits {
            lambda: mean_estimate(&self.gamma_ff),
            mu: mean_estimate(&self.gamma_gg),
            nu: mean_estimate(&self.gamma_fg),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub lambda: Estimate,
    pub mu: Estimate,
    pub nu: Estimate,
}

/// Carré du champ estimates for every replication of `batch`.
pub fn gamma_estimate(
    f: &HermiteExpansion,
    batch: &PathBatch,
    hat_count: usize,
    mode: GammaMode,
) -> Result<GammaEstimate> {
    let pair = DerivativePair::new(f)?;
    match mode {
        GammaMode::ExactQuadratic => exact_gamma(&pair, batch, QuadraticKernel::Fft),
        GammaMode::MonteCarlo => monte_carlo_gamma(&pair, batch, hat_count),
    }
}

/// Exact-quadratic mode with an explicit kernel choice.
pub fn gamma_exact_with_kernel(
    f: &HermiteExpansion,
    batch: &PathBatch,
    kernel: QuadraticKernel,
) -> Result<GammaEstimate> {
    exact_gamma(&DerivativePair::new(f)?, batch, kernel)
}

fn exact_gamma(
    pair: &DerivativePair,
    batch: &PathBatch,
    kernel: QuadraticKernel,
) -> Result<GammaEstimate> {
    let op = ToeplitzOperator::new(batch.model(), batch.n())?;
    let n = batch.n() as f64;
    let forms: Vec<[f64; 3]> = (0..batch.replications())
        .into_par_iter()
        .map(|r| {
            let (a, b) = pair.evaluate(batch.row(r));
            op.quadratic_forms(&a, &b, kernel).map(|v| v / n)
        })
        .collect();
    let m = forms.len();
    Ok(GammaEstimate {
        mode: GammaMode::ExactQuadratic,
        hat_count: 0,
        gamma_ff: forms.iter().map(|v| v[0]).collect(),
        gamma_gg: forms.iter().map(|v| v[1]).collect(),
        gamma_fg: forms.iter().map(|v| v[2]).collect(),
        se_ff: vec![0.0; m],
        se_gg: vec![0.0; m],
        se_fg: vec![0.0; m],
    })
}

/// `hat_count` fresh sharp samples per base replication, as a row-major
/// `M x hat_count` table of `(#F, #G)`.
fn hat_samples(pair: &DerivativePair, batch: &PathBatch, hat_count: usize) -> Result<Vec<Vec<[f64; 2]>>> {
    if hat_count < 2 {
        return Err(LabError::Construction("hat_count must be >= 2".into()));
    }
    let sampler = PathSampler::new(batch.model(), batch.n(), Default::default())?;
    let norm = (batch.n() as f64).sqrt();
    Ok((0..batch.replications())
        .into_par_iter()
        .map(|r| {
            let (a, b) = pair.evaluate(batch.row(r));
            (0..hat_count)
                .map(|j| {
                    let hat = sampler.sample(&mut stream_rng(batch.seed(), r, COPY_HAT_BASE + j as u64));
                    [dot(&a, &hat) / norm, dot(&b, &hat) / norm]
                })
                .collect()
        })
        .collect())
}

fn monte_carlo_gamma(pair: &DerivativePair, batch: &PathBatch, hat_count: usize) -> Result<GammaEstimate> {
    let samples = hat_samples(pair, batch, hat_count)?;
    let inner = |prod: &dyn Fn(&[f64; 2]) -> f64| -> (Vec<f64>, Vec<f64>) {
        samples
            .iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().map(prod).collect();
                let e = mean_estimate(&v);
                (e.value, e.se)
            })
            .unzip()
    };
    let (gamma_ff, se_ff) = inner(&|p| p[0] * p[0]);
    let (gamma_gg, se_gg) = inner(&|p| p[1] * p[1]);
    let (gamma_fg, se_fg) = inner(&|p| p[0] * p[1]);
    Ok(GammaEstimate {
        mode: GammaMode::MonteCarlo,
        hat_count,
        gamma_ff,
        gamma_gg,
        gamma_fg,
        se_ff,
        se_gg,
        se_fg,
    })
}

/// One frequency of the key identity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub xi: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub pass: bool,
}

impl IdentityResidual {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Key identity residuals for one `(s, t)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub s: f64,
    pub t: f64,
    pub residuals: Vec<IdentityResidual>,
    /// Pooled mean of `sin(xi (t #F + s #G))` per frequency.
    pub imaginary: Vec<f64>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.residuals.iter().all(|r| r.pass)
    }
}

/// `E exp(-xi^2/2 Gamma[tF+sG, tF+sG])` against `E E_hat exp(i xi (t #F + s #G))`
/// for one `(s, t)`.
pub fn key_identity_check(
    f: &HermiteExpansion,
    s: f64,
    t: f64,
    xi_grid: &[f64],
    batch: &PathBatch,
    hat_count: usize,
) -> Result<IdentityReport> {
    let mut reports = key_identity_grid(f, &[(s, t)], xi_grid, batch, hat_count)?;
    Ok(reports.remove(0))
}

/// The key identity check on a grid of `(s, t)` pairs, sharing one set of
/// sharp samples. The standard error is that of the per-replication
/// difference `exp(-xi^2 Gamma_r / 2) - mean_j cos(xi L_rj)`, whose
/// conditional mean is zero given the base path.
pub fn key_identity_grid(
    f: &HermiteExpansion,
    st_grid: &[(f64, f64)],
    xi_grid: &[f64],
    batch: &PathBatch,
    hat_count: usize,
) -> Result<Vec<IdentityReport>> {
    if let Some(xi) = xi_grid.iter().find(|x| !x.is_finite()) {
        return Err(LabError::Construction(format!("non-finite frequency {xi}")));
    }
    let pair = DerivativePair::new(f)?;
    let gamma = exact_gamma(&pair, batch, QuadraticKernel::Fft)?;
    let samples = hat_samples(&pair, batch, hat_count)?;
    let m = batch.replications();
    Ok(st_grid
        .iter()
        .map(|&(s, t)| {
            let g = gamma.combined(s, t);
            let mut residuals = Vec::with_capacity(xi_grid.len());
            let mut imaginary = Vec::with_capacity(xi_grid.len());
            for &xi in xi_grid {
                let mut lhs = Vec::with_capacity(m);
                let mut rhs = Vec::with_capacity(m);
                let mut im = Vec::with_capacity(m);
                for (r, row) in samples.iter().enumerate() {
                    lhs.push((-0.5 * xi * xi * g[r]).exp());
                    let phases: Vec<f64> = row.iter().map(|p| xi * (t * p[0] + s * p[1])).collect();
                    rhs.push(mean(&phases.iter().map(|v| v.cos()).collect::<Vec<_>>()));
                    im.push(mean(&phases.iter().map(|v| v.sin()).collect::<Vec<_>>()));
                }
                let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
                let se = (variance(&diff) / m as f64).sqrt();
                let (l, rr) = (mean(&lhs), mean(&rhs));
                residuals.push(IdentityResidual {
                    xi,
                    lhs: l,
                    rhs: rr,
                    se,
                    pass: (l - rr).abs() <= IDENTITY_Z * se + 1e-12,
                });
                imaginary.push(mean(&im));
            }
            IdentityReport { s, t, residuals, imaginary }
        })
        .collect())
}

/// Largest per-replication gap between the carré du champ of `tF + sG`,
/// computed from its own derivative `t f' + s g'`, and the bilinear
/// expansion `t^2 Gamma[F,F] + s^2 Gamma[G,G] + 2ts Gamma[F,G]`.
pub fn bilinearity_residual(
    f: &HermiteExpansion,
    st_grid: &[(f64, f64)],
    batch: &PathBatch,
) -> Result<f64> {
    let pair = DerivativePair::new(f)?;
    let gamma = exact_gamma(&pair, batch, QuadraticKernel::Fft)?;
    let op = ToeplitzOperator::new(batch.model(), batch.n())?;
    let n = batch.n() as f64;
    let mut worst: f64 = 0.0;
    for &(s, t) in st_grid {
        let expanded = gamma.combined(s, t);
        let direct: Vec<f64> = (0..batch.replications())
            .into_par_iter()
            .map(|r| {
                let (a, b) = pair.evaluate(batch.row(r));
                let h: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + s * y).collect();
                op.quadratic_forms(&h, &h, QuadraticKernel::Fft)[0] / n
            })
            .collect();
        for (d, e) in direct.iter().zip(&expanded) {
            worst = worst.max((d - e).abs());
        }
    }
    Ok(worst)
}

/// Second moment of `#F_n - #F_n^{(p)}` against `||(Psi - Psi_p)_1||^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationGap {
    pub n: usize,
    pub p: usize,
    pub second_moment: Estimate,
    /// `||f' - proj_{<= p-1} f'||^2_{L^2(gamma)}`, equal to the squared
    /// `L^2(gamma_2)` norm of the first component of `Psi - Psi_p`.
    pub psi_tail_norm2: f64,
}

impl TruncationGap {
    /// Ratio of the pooled second moment to the functional tail norm.
    pub fn ratio(&self) -> Estimate {
        Estimate {
            value: self.second_moment.value / self.psi_tail_norm2,
            se: self.second_moment.se / self.psi_tail_norm2,
        }
    }
}

pub fn truncation_gap(f: &HermiteExpansion, p: usize, batch: &PathBatch) -> Result<TruncationGap> {
    let full = DerivativePair::new(f)?;
    let cut = full.truncated(p)?;
    let a = sharp_pair_with(&full, batch)?.first();
    let b = sharp_pair_with(&cut, batch)?.first();
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).collect();
    let psi_tail_norm2: f64 = (p..=full.f_prime.max_order())
        .map(|m| full.f_prime.chaos_energy(m))
        .sum();
    Ok(TruncationGap { n: batch.n(), p, second_moment: mean_estimate(&sq), psi_tail_norm2 })
}
