//! Breuer-Major partial sums, the limiting variance, and distance-to-normal
//! diagnostics (kernel TV surrogate, Kolmogorov distance, Stein discrepancy).

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gaussproc::{stream_rng, CorrelationModel, PathBatch, SummabilityReport};
use crate::hermite::HermiteExpansion;
use crate::stats::{mean_estimate, std_normal_cdf, variance, variance_estimate, Estimate};

/// Lag cutoff for models without a closed-form power sum.
pub const DEFAULT_LAG_CUTOFF: usize = 100_000;
/// Grid size for the kernel density estimate.
pub const TV_GRID_POINTS: usize = 4096;
/// Half-width of the TV grid in pooled standard deviations.
pub const TV_GRID_HALF_WIDTH: f64 = 8.0;
/// Smallest sample accepted by the default bandwidth rule.
pub const TV_MIN_SAMPLE: usize = 500;

/// Per-replication values of `S_n(f) = n^{-1/2} sum_k f(X_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSumSample {
    pub values: Vec<f64>,
    pub n: usize,
    pub normalized: bool,
}

impl PartialSumSample {
    /// Sample variance of the values.
    pub fn variance(&self) -> Estimate {
        variance_estimate(&self.values)
    }

    /// Divides by the pooled standard deviation, `S_n / sqrt(var(S_n))`.
    pub fn normalize(&self) -> Result<PartialSumSample> {
        let v = variance(&self.values);
        if v.is_nan() || v <= 0.0 || !v.is_finite() {
            return Err(LabError::Estimation(format!("cannot normalize: sample variance {v}")));
        }
        let sd = v.sqrt();
        Ok(PartialSumSample {
            values: self.values.iter().map(|x| x / sd).collect(),
            n: self.n,
            normalized: true,
        })
    }
}

pub fn partial_sum(f: &HermiteExpansion, batch: &PathBatch) -> Result<PartialSumSample> {
    f.require_centered("the partial sum")?;
    Ok(partial_sum_by(|x| f.eval(x), batch))
}

/// Partial sums of a pointwise callable. Centering is the caller's job.
pub fn partial_sum_by<F: Fn(f64) -> f64 + Sync>(f: F, batch: &PathBatch) -> PartialSumSample {
    let norm = (batch.n() as f64).sqrt();
    let values = (0..batch.replications())
        .into_par_iter()
        .map(|r| batch.row(r).iter().map(|&x| f(x)).sum::<f64>() / norm)
        .collect();
    PartialSumSample { values, n: batch.n(), normalized: false }
}

/// Empirical variance of `S_n` with a normal-theory 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariance {
    pub n: usize,
    pub var_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EmpiricalVariance {
    pub fn from_sample(sample: &PartialSumSample) -> Self {
        let e = sample.variance();
        Self {
            n: sample.n,
            var_hat: e.value,
            se: e.se,
            ci_low: e.value - 1.96 * e.se,
            ci_high: e.value + 1.96 * e.se,
        }
    }
}

/// `sigma^2 = sum_{m >= d} m! c_m^2 sum_{k in Z} rho(k)^m` with the
/// truncation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub sigma2: f64,
    /// Per-order contributions `m! c_m^2 sum_k rho(k)^m`.
    pub contributions: Vec<f64>,
    /// `None` when every order used a closed-form lag sum.
    pub lag_cutoff: Option<usize>,
    pub max_order: usize,
    /// Largest `m! c_m^2 * 2 |rho(K)|^m` over orders (last included lags).
    pub lag_tail: f64,
    /// `m! c_M^2 sum_k rho(k)^M` for the top order `M` (last included order).
    pub order_tail: f64,
    pub summability: SummabilityReport,
    pub warning: Option<String>,
    pub empirical: Vec<EmpiricalVariance>,
}

impl VarianceReport {
    pub fn is_positive(&self) -> bool {
        self.sigma2 > 0.0
    }
}

pub fn limiting_variance(
    f: &HermiteExpansion,
    model: &CorrelationModel,
    lag_cutoff: usize,
) -> Result<VarianceReport> {
    let d = f.require_centered("the limiting variance")?;
    let max_order = f.max_order();
    let mut used_cutoff = false;
    let mut lag_tail: f64 = 0.0;
    let rho: Vec<f64> = if model.two_sided_power_sum(1).is_none() {
        used_cutoff = true;
        (1..=lag_cutoff).map(|k| model.rho(k)).collect()
    } else {
        Vec::new()
    };
    let contributions: Vec<f64> = (0..=max_order)
        .map(|m| {
            let energy = f.chaos_energy(m);
            if m < d || energy == 0.0 {
                return 0.0;
            }
            let lag_sum = match model.two_sided_power_sum(m) {
                Some(s) => s,
                None => {
                    let last = rho.last().map_or(0.0, |r| r.abs().powi(m as i32));
                    lag_tail = lag_tail.max(energy * 2.0 * last);
                    1.0 + 2.0 * rho.iter().map(|r| r.powi(m as i32)).sum::<f64>()
                }
            };
            energy * lag_sum
        })
        .collect();
    let sigma2: f64 = contributions.iter().sum();
    let summability = model.summability(d, if used_cutoff { lag_cutoff } else { lag_cutoff.min(1000) });
    let warning = (!summability.converges).then(|| {
        format!("rho is not in l^{d}: the lag sum of |rho|^{d} diverges and sigma^2 is a truncated value")
    });
    Ok(VarianceReport {
        sigma2: sigma2.max(0.0),
        order_tail: contributions[max_order],
        contributions,
        lag_cutoff: used_cutoff.then_some(lag_cutoff),
        max_order,
        lag_tail,
        summability,
        warning,
        empirical: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Reference {
    StandardNormal,
    Normal { mu: f64, s2: f64 },
}

impl Reference {
    fn params(self) -> (f64, f64) {
        match self {
            Reference::StandardNormal => (0.0, 1.0),
            Reference::Normal { mu, s2 } => (mu, s2.sqrt()),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        let (mu, s) = self.params();
        crate::stats::std_normal_pdf((x - mu) / s) / s
    }

    pub fn cdf(self, x: f64) -> f64 {
        let (mu, s) = self.params();
        std_normal_cdf((x - mu) / s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// Half the L1 distance between the kernel density estimate and the
    /// reference density.
    pub tv: f64,
    /// Exact sup-distance between the empirical and reference CDFs.
    pub kolmogorov: f64,
    pub bandwidth: f64,
    pub sample_size: usize,
}

/// Values on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_fn(start: f64, end: f64, points: usize, f: impl Fn(f64) -> f64) -> Self {
        let step = (end - start) / (points - 1) as f64;
        let values = (0..points).map(|i| f(start + i as f64 * step)).collect();
        Self { start, step, values }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    /// `0.5 * int |p - q|` by the trapezoid rule on a shared grid.
    pub fn half_l1(&self, other: &DensityGrid) -> f64 {
        let d: Vec<f64> = self.values.iter().zip(&other.values).map(|(p, q)| (p - q).abs()).collect();
        let inner: f64 = d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]);
        0.5 * inner * self.step
    }
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) M^{-1/5}`.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    let sd = variance(sorted).sqrt();
    let q = |p: f64| {
        let pos = p * (m - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (m as f64).powf(-0.2)
}

/// Gaussian kernel density estimate on `grid` via linear binning.
pub fn kde_on_grid(sample: &[f64], bandwidth: f64, start: f64, step: f64, points: usize) -> DensityGrid {
    let mut counts = vec![0.0; points];
    for &x in sample {
        let pos = (x - start) / step;
        if pos < 0.0 || pos > (points - 1) as f64 {
            continue;
        }
        let i = (pos.floor() as usize).min(points - 2);
        let frac = pos - i as f64;
        counts[i] += 1.0 - frac;
        counts[i + 1] += frac;
    }
    let reach = ((6.0 * bandwidth / step).ceil() as usize).min(points - 1);
    let kernel: Vec<f64> = (0..=reach)
        .map(|j| {
            let u = j as f64 * step / bandwidth;
            (-0.5 * u * u).exp()
        })
        .collect();
    let ksum = kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>();
    let scale = 1.0 / (ksum * step * sample.len() as f64);
    let values = (0..points)
        .map(|i| {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(points - 1);
            (lo..=hi).map(|j| counts[j] * kernel[i.abs_diff(j)]).sum::<f64>() * scale
        })
        .collect();
    DensityGrid { start, step, values }
}

/// Kolmogorov distance between the empirical CDF of `sorted` and `reference`.
pub fn kolmogorov_distance(sorted: &[f64], reference: Reference) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = reference.cdf(x);
            ((i + 1) as f64 / m - c).abs().max((c - i as f64 / m).abs())
        })
        .fold(0.0, f64::max)
}

pub fn tv_estimate(sample: &[f64], reference: Reference) -> Result<DistanceReport> {
    if sample.len() < TV_MIN_SAMPLE {
        return Err(LabError::Estimation(format!(
            "TV estimate needs at least {TV_MIN_SAMPLE} values, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Estimation("sample contains non-finite values".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = variance(&sorted).sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(LabError::Estimation("degenerate sample with zero variance".into()));
    }
    let bandwidth = silverman_bandwidth(&sorted);
    let mean = crate::stats::mean(&sorted);
    let (mu, s) = reference.params();
    let half = TV_GRID_HALF_WIDTH * sd.max(s);
    let start = mean.min(mu) - half;
    let end = mean.max(mu) + half;
    let step = (end - start) / (TV_GRID_POINTS - 1) as f64;
    let kde = kde_on_grid(&sorted, bandwidth, start, step, TV_GRID_POINTS);
    let refd = DensityGrid::from_fn(start, end, TV_GRID_POINTS, |x| reference.pdf(x));
    Ok(DistanceReport {
        tv: kde.half_l1(&refd),
        kolmogorov: kolmogorov_distance(&sorted, reference),
        bandwidth,
        sample_size: sample.len(),
    })
}

/// Mean and spread of the TV estimator on exact standard-normal samples of
/// size `sample_size`: the bias floor of the surrogate.
pub fn calibrate_tv_floor(sample_size: usize, seed: u64, repeats: usize) -> Result<Estimate> {
    let tvs: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i, u64::from(u32::MAX));
            let s: Vec<f64> = (0..sample_size).map(|_| StandardNormal.sample(&mut rng)).collect();
            tv_estimate(&s, Reference::StandardNormal).map(|r| r.tv)
        })
        .collect::<Result<_>>()?;
    Ok(mean_estimate(&tvs))
}

/// `n^{-1/2} [ (sum_{|k|<=n} |rho(k)|)^{1/2} + (sum_{|k|<=n} |rho(k)|^{4/3})^{3/2} ]`.
pub fn nnp21_rate(model: &CorrelationModel, n: usize) -> f64 {
    let (mut s1, mut s43) = (1.0, 1.0);
    for k in 1..=n {
        let r = model.rho(k).abs();
        s1 += 2.0 * r;
        s43 += 2.0 * r.powf(4.0 / 3.0);
    }
    (s1.sqrt() + s43.powf(1.5)) / (n as f64).sqrt()
}

/// Smooth test functions for the Stein discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// `tanh(beta x)`
    Tanh(f64),
    /// `sin(beta x)`
    Sin(f64),
    /// `u e^{-u^2/4}` with `u = beta x`
    GaussBump(f64),
}

impl TestFunction {
    /// The built-in family: each shape at `beta` in `{0.5, 1, 2}`.
    pub fn default_family() -> Vec<TestFunction> {
        let betas = [0.5, 1.0, 2.0];
        let mut v = Vec::new();
        for b in betas {
            v.push(TestFunction::Tanh(b));
        }
        for b in betas {
            v.push(TestFunction::Sin(b));
        }
        for b in betas {
            v.push(TestFunction::GaussBump(b));
        }
        v
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            TestFunction::Tanh(b) => (b * x).tanh(),
            TestFunction::Sin(b) => (b * x).sin(),
            TestFunction::GaussBump(b) => {
                let u = b * x;
                u * (-u * u / 4.0).exp()
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            TestFunction::Tanh(b) => {
                let t = (b * x).tanh();
                b * (1.0 - t * t)
            }
            TestFunction::Sin(b) => b * (b * x).cos(),
            TestFunction::GaussBump(b) => {
                let u = b * x;
                b * (-u * u / 4.0).exp() * (1.0 - u * u / 2.0)
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            TestFunction::Tanh(b) => format!("tanh({b}x)"),
            TestFunction::Sin(b) => format!("sin({b}x)"),
            TestFunction::GaussBump(b) => format!("bump({b}x)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinTerm {
    pub function: String,
    /// `E[F phi(F)] - nu E[phi'(F)]` (signed).
    pub discrepancy: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinReport {
    pub terms: Vec<SteinTerm>,
    /// Largest absolute discrepancy over the family.
    pub max: f64,
    /// Standard error of the maximizing term.
    pub max_se: f64,
}

impl SteinReport {
    /// Whether every term is within `z` standard errors of zero.
    pub fn within(&self, z: f64) -> bool {
        self.terms.iter().all(|t| t.discrepancy.abs() <= z * t.se)
    }
}

pub fn stein_discrepancy(sample: &PartialSumSample, nu: f64, family: &[TestFunction]) -> SteinReport {
    let terms: Vec<SteinTerm> = family
        .iter()
        .map(|&phi| {
            let v: Vec<f64> = sample
                .values
                .iter()
                .map(|&x| x * phi.value(x) - nu * phi.derivative(x))
                .collect();
            let e = mean_estimate(&v);
            SteinTerm { function: phi.name(), discrepancy: e.value, se: e.se }
        })
        .collect();
    let best = terms
        .iter()
        .max_by(|a, b| a.discrepancy.abs().total_cmp(&b.discrepancy.abs()));
    let (max, max_se) = best.map_or((0.0, 0.0), |t| (t.discrepancy.abs(), t.se));
    SteinReport { terms, max, max_se }
}
