use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::gaussproc::CorrelationModel;

/// Largest `n` for which the direct O(n^2) kernel is used as an oracle.
pub const DIRECT_ORACLE_MAX_N: usize = 512;

/// How the quadratic form `a^T R b` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuadraticKernel {
    #[default]
    Fft,
    Direct,
}

/// Symmetric Toeplitz matrix `R_{kl} = rho(|k - l|)` of size `n`.
#[derive(Clone)]
pub struct ToeplitzOperator {
    n: usize,
    rho: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl ToeplitzOperator {
    pub fn new(model: &CorrelationModel, n: usize) -> Result<Self> {
        let rho = model.lags(n)?;
        let size = (2 * n).saturating_sub(1).max(1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spectrum = vec![Complex::new(0.0, 0.0); size];
        for (k, &r) in rho.iter().enumerate() {
            spectrum[k].re = r;
            if k > 0 {
                spectrum[size - k].re = r;
            }
        }
        forward.process(&mut spectrum);
        let scale = 1.0 / size as f64;
        for s in &mut spectrum {
            *s *= scale;
        }
        Ok(Self { n, rho, spectrum, forward, inverse })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(R a, R b)` with one complex FFT round trip.
    pub fn apply_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.spectrum.len()];
        for (k, slot) in buf.iter_mut().take(self.n).enumerate() {
            *slot = Complex::new(a[k], b[k]);
        }
        self.forward.process(&mut buf);
        for (v, s) in buf.iter_mut().zip(&self.spectrum) {
            *v *= s;
        }
        self.inverse.process(&mut buf);
        buf.truncate(self.n);
        (buf.iter().map(|c| c.re).collect(), buf.iter().map(|c| c.im).collect())
    }

    /// `R a` by direct summation.
    pub fn apply_direct(&self, a: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| (0..self.n).map(|l| self.rho[k.abs_diff(l)] * a[l]).sum())
            .collect()
    }

    /// `(a^T R a, b^T R b, a^T R b)`.
    pub fn quadratic_forms(&self, a: &[f64], b: &[f64], kernel: QuadraticKernel) -> [f64; 3] {
        let (ra, rb) = match kernel {
            QuadraticKernel::Fft => self.apply_pair(a, b),
            QuadraticKernel::Direct => (self.apply_direct(a), self.apply_direct(b)),
        };
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        [dot(a, &ra), dot(b, &rb), dot(a, &rb)]
    }
}
