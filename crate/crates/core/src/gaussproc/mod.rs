//! Exact simulation of centered, unit-variance stationary Gaussian
//! sequences, including the independent copy used by the sharp gradient.

mod embedding;
mod model;

pub use embedding::{
    validate, CholeskySampler, CirculantSampler, SpectralReport, CHOLESKY_MAX_N, EIGEN_TOL,
    MAX_PADDING,
};
pub use model::{CorrelationModel, SummabilityReport};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Stream copy index of the base paths `X`.
pub const COPY_BASE: u64 = 0;
/// Stream copy index of the doubled paths `X_hat`.
pub const COPY_DOUBLE: u64 = 1;
/// First copy index used for extra Monte-Carlo copies of `X_hat`.
pub const COPY_HAT_BASE: u64 = 2;

const REPLICATION_BITS: u32 = 40;

/// RNG for replication `replication` and copy `copy` under `seed`. Each
/// `(seed, replication, copy)` triple owns a disjoint ChaCha stream, so
/// generation order never affects the draws.
pub fn stream_rng(seed: u64, replication: usize, copy: u64) -> ChaCha8Rng {
    debug_assert!((replication as u64) < (1 << REPLICATION_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((copy << REPLICATION_BITS) | replication as u64);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMethod {
    /// Circulant embedding, falling back to Cholesky for small `n`.
    #[default]
    Auto,
    Circulant,
    Cholesky,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub method: SimulationMethod,
    /// Zero negative embedding eigenvalues instead of failing.
    pub clip: bool,
}

/// A sampler for one path of a fixed model and length.
#[derive(Clone, Debug)]
pub enum PathSampler {
    Circulant(CirculantSampler),
    Cholesky(CholeskySampler),
}

impl PathSampler {
    pub fn new(model: &CorrelationModel, n: usize, options: SimulationOptions) -> Result<Self> {
        match options.method {
            SimulationMethod::Circulant => {
                CirculantSampler::new(model, n, options.clip).map(PathSampler::Circulant)
            }
            SimulationMethod::Cholesky => CholeskySampler::new(model, n).map(PathSampler::Cholesky),
            SimulationMethod::Auto => match CirculantSampler::new(model, n, options.clip) {
                Ok(s) => Ok(PathSampler::Circulant(s)),
                Err(err @ LabError::NotPsd { .. }) if n <= CHOLESKY_MAX_N => {
                    CholeskySampler::new(model, n)
                        .map(PathSampler::Cholesky)
                        .map_err(|_| err)
                }
                Err(e) => Err(e),
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PathSampler::Circulant(s) => s.sample(rng),
            PathSampler::Cholesky(s) => s.sample(rng),
        }
    }

    /// Rows `0..replications` drawn from streams `(seed, r, copy)`.
    pub fn sample_rows(&self, seed: u64, replications: usize, copy: u64) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = (0..replications)
            .into_par_iter()
            .map(|r| self.sample(&mut stream_rng(seed, r, copy)))
            .collect();
        rows.concat()
    }
}

/// `M` realizations of `(X_1, ..., X_n)`, stored row-major, with an optional
/// independent copy `X_hat` of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    n: usize,
    replications: usize,
    seed: u64,
    model: CorrelationModel,
    data: Vec<f64>,
    doubled: Option<Vec<f64>>,
}

/// JSON sidecar for the binary batch format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub n: usize,
    #[serde(rename = "M")]
    pub replications: usize,
    pub seed: u64,
    pub model: CorrelationModel,
    pub doubled: bool,
}

/// Draws `replications` paths of length `n`; `with_double` adds `X_hat`
/// from the disjoint copy stream.
pub fn simulate(
    model: &CorrelationModel,
    n: usize,
    replications: usize,
    seed: u64,
    with_double: bool,
    options: SimulationOptions,
) -> Result<PathBatch> {
    if replications == 0 {
        return Err(LabError::Construction("replication count must be positive".into()));
    }
    let sampler = PathSampler::new(model, n, options)?;
    let data = sampler.sample_rows(seed, replications, COPY_BASE);
    let doubled = with_double.then(|| sampler.sample_rows(seed, replications, COPY_DOUBLE));
    Ok(PathBatch { n, replications, seed, model: model.clone(), data, doubled })
}

impl PathBatch {
    /// Batch from explicit rows (fixtures and loaded data).
    pub fn from_rows(
        model: CorrelationModel,
        n: usize,
        data: Vec<f64>,
        doubled: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || data.is_empty() || !data.len().is_multiple_of(n) {
            return Err(LabError::Construction(format!(
                "data length {} is not a positive multiple of n = {n}",
                data.len()
            )));
        }
        if let Some(d) = &doubled {
            if d.len() != data.len() {
                return Err(LabError::Construction("doubled copy has a different shape".into()));
            }
        }
        Ok(Self { n, replications: data.len() / n, seed, model, data, doubled })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &CorrelationModel {
        &self.model
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn doubled(&self) -> Option<&[f64]> {
        self.doubled.as_deref()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn hat_row(&self, r: usize) -> Option<&[f64]> {
        self.doubled.as_ref().map(|d| &d[r * self.n..(r + 1) * self.n])
    }

    pub fn sidecar(&self) -> BatchSidecar {
        BatchSidecar {
            n: self.n,
            replications: self.replications,
            seed: self.seed,
            model: self.model.clone(),
            doubled: self.doubled.is_some(),
        }
    }

    /// Writes `<stem>.bin` (little-endian f64, base rows then doubled rows)
    /// and `<stem>.json`; both go through a temporary file and a rename.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.data.len() * 2);
        for v in self.data.iter().chain(self.doubled.iter().flatten()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let sidecar = serde_json::to_vec_pretty(&self.sidecar())
            .map_err(|e| LabError::Parse(e.to_string()))?;
        write_atomic(&with_ext(stem, "bin"), &bytes)?;
        write_atomic(&with_ext(stem, "json"), &sidecar)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let sidecar: BatchSidecar = serde_json::from_slice(&fs::read(with_ext(stem, "json"))?)
            .map_err(|e| LabError::Parse(format!("batch sidecar: {e}")))?;
        let bytes = fs::read(with_ext(stem, "bin"))?;
        let count = sidecar.n * sidecar.replications;
        let expected = 8 * count * if sidecar.doubled { 2 } else { 1 };
        if bytes.len() != expected {
            return Err(LabError::Parse(format!(
                "batch binary has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (data, rest) = values.split_at(count);
        let doubled = sidecar.doubled.then(|| rest.to_vec());
        Self::from_rows(sidecar.model, sidecar.n, data.to_vec(), doubled, sidecar.seed)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pooled autocovariances `sum_r sum_i x_i x_{i+k} / (M (n - k))` for
/// `k = 0..=max_lag`; unbiased because the paths are centered by
/// construction.
pub fn empirical_covariance(batch: &PathBatch, max_lag: usize) -> Result<Vec<f64>> {
    let n = batch.n();
    if max_lag >= n {
        return Err(LabError::Construction(format!("max_lag {max_lag} must be < n = {n}")));
    }
    let m = batch.replications();
    Ok((0..=max_lag)
        .map(|k| {
            let s: f64 = (0..m)
                .map(|r| {
                    let x = batch.row(r);
                    x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum();
            s / (m * (n - k)) as f64
        })
        .collect())
}

/// Pooled lag-0 sample correlation between `X` and `X_hat`.
pub fn cross_correlation(batch: &PathBatch) -> Result<f64> {
    let hat = batch
        .doubled()
        .ok_or_else(|| LabError::Construction("batch has no doubled copy".into()))?;
    let x = batch.data();
    let sxy: f64 = x.iter().zip(hat).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = hat.iter().map(|a| a * a).sum();
    Ok(sxy / (sxx * syy).sqrt())
}
