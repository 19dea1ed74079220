use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::CorrelationModel;
use crate::error::{LabError, Result};

/// Eigenvalues in `[-EIGEN_TOL, 0)` are treated as rounding noise.
pub const EIGEN_TOL: f64 = 1e-10;
/// Largest padding factor tried on top of the minimal power-of-two embedding.
pub const MAX_PADDING: usize = 8;
/// Largest `n` handled by the dense Cholesky fallback.
pub const CHOLESKY_MAX_N: usize = 2048;

/// Result of the circulant-embedding PSD check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n: usize,
    pub embedding_size: usize,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

/// First row of the symmetric circulant of size `m` built from `rho`.
fn embedding_row(model: &CorrelationModel, m: usize) -> Result<Vec<f64>> {
    let lags = model.lags(m / 2 + 1)?;
    Ok((0..m).map(|j| lags[j.min(m - j)]).collect())
}

fn circulant_eigenvalues(row: &[f64]) -> Vec<f64> {
    let m = row.len();
    let mut buf: Vec<Complex<f64>> = row.iter().map(|&r| Complex::new(r, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Minimal embedding size `2(n-1)` (1 when `n = 1`).
fn minimal_size(n: usize) -> usize {
    (2 * n.saturating_sub(1)).max(1)
}

/// Spectral check of the minimal circulant embedding of `rho(0..n)`.
pub fn validate(model: &CorrelationModel, n: usize) -> Result<SpectralReport> {
    if n == 0 {
        return Err(LabError::Construction("path length must be positive".into()));
    }
    let m = minimal_size(n);
    let eig = circulant_eigenvalues(&embedding_row(model, m)?);
    let min_eigenvalue = min_of(&eig);
    Ok(SpectralReport { n, embedding_size: m, min_eigenvalue, psd: min_eigenvalue >= -EIGEN_TOL })
}

/// Exact FFT sampler for a stationary Gaussian vector of length `n`.
#[derive(Clone)]
pub struct CirculantSampler {
    n: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("n", &self.n)
            .field("embedding_size", &self.scale.len())
            .finish()
    }
}

impl CirculantSampler {
    /// Searches embeddings of size `m0, 2 m0, ..., MAX_PADDING m0` with
    /// `m0` the smallest power of two `>= 2(n-1)`. Fails with the most
    /// negative eigenvalue seen when none is PSD and `clip` is off; with
    /// `clip` the negative eigenvalues of the largest embedding are zeroed.
    pub fn new(model: &CorrelationModel, n: usize, clip: bool) -> Result<Self> {
        if n == 0 {
            return Err(LabError::Construction("path length must be positive".into()));
        }
        let m0 = minimal_size(n).next_power_of_two();
        // Open tables cannot be padded: the extra lags are undefined.
        let sizes: Vec<usize> = if matches!(model, CorrelationModel::Table { zero_tail: false, .. }) {
            vec![minimal_size(n)]
        } else {
            std::iter::successors(Some(m0), |m| Some(m * 2))
                .take_while(|m| *m <= m0 * MAX_PADDING)
                .collect()
        };
        let mut worst = f64::INFINITY;
        let mut last: Option<Vec<f64>> = None;
        for m in sizes {
            let eig = circulant_eigenvalues(&embedding_row(model, m)?);
            let lo = min_of(&eig);
            if lo >= -EIGEN_TOL {
                return Ok(Self::from_eigenvalues(n, &eig));
            }
            worst = worst.min(lo);
            last = Some(eig);
        }
        match last {
            Some(eig) if clip => Ok(Self::from_eigenvalues(n, &eig)),
            _ => Err(LabError::NotPsd { min_eigenvalue: worst }),
        }
    }

    fn from_eigenvalues(n: usize, eig: &[f64]) -> Self {
        let m = eig.len();
        let scale = eig.iter().map(|l| (l.max(0.0) / m as f64).sqrt()).collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        Self { n, scale, fft }
    }

    pub fn embedding_size(&self) -> usize {
        self.scale.len()
    }

    /// Real part of `FFT(sqrt(lambda / m) (A + iB))`, first `n` entries.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.iter().take(self.n).map(|c| c.re).collect()
    }
}

/// Dense Cholesky sampler for the Toeplitz covariance of `rho(0..n)`.
#[derive(Clone, Debug)]
pub struct CholeskySampler {
    n: usize,
    lower: Vec<f64>,
}

impl CholeskySampler {
    pub fn new(model: &CorrelationModel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::Construction("path length must be positive".into()));
        }
        if n > CHOLESKY_MAX_N {
            return Err(LabError::Construction(format!(
                "dense Cholesky limited to n <= {CHOLESKY_MAX_N}, got {n}"
            )));
        }
        let rho = model.lags(n)?;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = rho[i - j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(LabError::NotPsd { min_eigenvalue: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| self.lower[i * n..i * n + i + 1].iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }
}
