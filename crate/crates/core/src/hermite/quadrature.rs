use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default number of nodes for integrals against the standard Gaussian measure.
pub const DEFAULT_NODES: usize = 200;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_EPS: f64 = 3.0e-14;

/// Gauss-Hermite rule normalized for the standard Gaussian measure, so that
/// `sum_j weights[j] * f(nodes[j])` approximates `E[f(N)]` with `N ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds the `order`-point rule. Positive roots of the orthonormal
    /// physicists' Hermite function are bracketed by a downward scan with
    /// a step well below the smallest root spacing, then polished by
    /// safeguarded Newton. Nodes are rescaled by `sqrt(2)` and weights
    /// divided by `sqrt(pi)`.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(LabError::Construction("quadrature order must be positive".into()));
        }
        let n = order;
        let nf = n as f64;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let eval = |z: f64| orthonormal_physicists(n, z, pim4);
        let positive = n / 2;
        let mut roots = Vec::with_capacity(positive);
        // Roots lie below sqrt(2n + 1) and are at least ~pi / sqrt(2n + 1) apart.
        let step = 0.2 / (2.0 * nf + 1.0).sqrt();
        let mut hi = (2.0 * nf + 1.0).sqrt() + 1.0;
        let mut p_hi = eval(hi).0;
        while roots.len() < positive {
            let lo = (hi - step).max(0.0);
            let p_lo = eval(lo).0;
            if p_lo == 0.0 || (p_lo.is_finite() && p_hi.is_finite() && p_lo.signum() != p_hi.signum()) {
                roots.push(polish(&eval, nf, lo, hi)?);
            }
            if lo == 0.0 && roots.len() < positive {
                return Err(LabError::Construction(format!(
                    "Gauss-Hermite scan of order {n} found only {} positive roots",
                    roots.len()
                )));
            }
            hi = lo;
            p_hi = p_lo;
        }
        // Descending positive roots, then zero for odd orders, then mirrors.
        let mut z_nodes: Vec<f64> = roots.clone();
        if n % 2 == 1 {
            z_nodes.push(0.0);
        }
        z_nodes.extend(roots.iter().rev().map(|r| -r));
        let w_nodes: Vec<f64> = z_nodes
            .iter()
            .map(|&z| {
                let pp = (2.0 * nf).sqrt() * eval(z).1;
                2.0 / (pp * pp)
            })
            .collect();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let sqrt_2 = std::f64::consts::SQRT_2;
        // Newton produces descending nodes; store ascending.
        let nodes: Vec<f64> = z_nodes.iter().rev().map(|z| z * sqrt_2).collect();
        let mut weights: Vec<f64> = w_nodes.iter().rev().map(|w| w / sqrt_pi).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Approximates `E[f(N)]` for a standard Gaussian `N`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_NODES).expect("default Gauss-Hermite rule")
    }
}

/// Newton iteration on `h_n` kept inside the sign-change bracket `[lo, hi]`,
/// falling back to bisection whenever a step would leave it.
fn polish<E: Fn(f64) -> (f64, f64)>(eval: &E, nf: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let p_lo = eval(lo).0;
    if p_lo == 0.0 {
        return Ok(lo);
    }
    let lo_sign = p_lo.signum();
    let mut z = 0.5 * (lo + hi);
    for _ in 0..NEWTON_MAX_ITER {
        let (p, p_prev) = eval(z);
        if p == 0.0 {
            return Ok(z);
        }
        if p.signum() == lo_sign {
            lo = z;
        } else {
            hi = z;
        }
        let dp = (2.0 * nf).sqrt() * p_prev;
        let newton = z - p / dp;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - z).abs() <= NEWTON_EPS * next.abs().max(1.0) || hi - lo <= NEWTON_EPS {
            return Ok(next);
        }
        z = next;
    }
    Err(LabError::Construction(format!("Gauss-Hermite root near {z} did not converge")))
}

/// Returns `(h_n(z), h_{n-1}(z))` for the orthonormal physicists' Hermite
/// functions (weight `exp(-z^2)`), started at `h_0 = pi^{-1/4}`.
fn orthonormal_physicists(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}
