use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hermite::{format_list, parse_list};

/// Correlation function `rho(k) = E[X_j X_{j+k}]` of a unit-variance
/// stationary sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CorrelationModel {
    /// `rho(0) = 1`, `rho(k) = 0` otherwise (i.i.d. sequence).
    Kronecker,
    /// `rho(k) = a^k`, `|a| < 1`.
    Geometric { a: f64 },
    /// `rho(k) = (1 + k)^{-alpha}`, `alpha > 0`.
    PolyDecay { alpha: f64 },
    /// Tabulated `rho(0..len)`. With `zero_tail` the lags past the table are
    /// zero; otherwise they are unknown and requesting them is an error.
    Table { values: Vec<f64>, zero_tail: bool },
}

/// Convergence report for `sum_{|k| <= K} |rho(k)|^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub power: usize,
    pub lag_cutoff: usize,
    /// Two-sided sum over `|k| <= lag_cutoff`.
    pub partial_sum: f64,
    /// `|rho(lag_cutoff)|^d`.
    pub last_term: f64,
    /// Whether `rho` belongs to `l^d`.
    pub converges: bool,
}

impl CorrelationModel {
    pub fn geometric(a: f64) -> Result<Self> {
        let m = CorrelationModel::Geometric { a };
        m.check()?;
        Ok(m)
    }

    pub fn poly_decay(alpha: f64) -> Result<Self> {
        let m = CorrelationModel::PolyDecay { alpha };
        m.check()?;
        Ok(m)
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        let m = CorrelationModel::Table { values, zero_tail: true };
        m.check()?;
        Ok(m)
    }

    pub fn open_table(values: Vec<f64>) -> Result<Self> {
        let m = CorrelationModel::Table { values, zero_tail: false };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        match self {
            CorrelationModel::Kronecker => Ok(()),
            CorrelationModel::Geometric { a } => {
                if a.is_finite() && a.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(LabError::Model(format!("geometric parameter must satisfy |a| < 1, got {a}")))
                }
            }
            CorrelationModel::PolyDecay { alpha } => {
                if alpha.is_finite() && *alpha > 0.0 {
                    Ok(())
                } else {
                    Err(LabError::Model(format!("decay exponent must be positive, got {alpha}")))
                }
            }
            CorrelationModel::Table { values, .. } => {
                if values.first() != Some(&1.0) {
                    return Err(LabError::Model("table must start with rho(0) = 1".into()));
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
                    return Err(LabError::Model(format!("table entry {v} outside [-1, 1]")));
                }
                Ok(())
            }
        }
    }

    /// `rho(k)` if known.
    pub fn lag(&self, k: usize) -> Option<f64> {
        match self {
            CorrelationModel::Kronecker => Some(if k == 0 { 1.0 } else { 0.0 }),
            CorrelationModel::Geometric { a } => Some(a.powi(k.min(i32::MAX as usize) as i32)),
            CorrelationModel::PolyDecay { alpha } => Some((1.0 + k as f64).powf(-alpha)),
            CorrelationModel::Table { values, zero_tail } => match values.get(k) {
                Some(v) => Some(*v),
                None if *zero_tail => Some(0.0),
                None => None,
            },
        }
    }

    /// `rho(k)`, treating unknown lags as zero.
    pub fn rho(&self, k: usize) -> f64 {
        self.lag(k).unwrap_or(0.0)
    }

    /// `rho(0..n)`, failing when a lag is unknown.
    pub fn lags(&self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|k| {
                self.lag(k).ok_or_else(|| {
                    LabError::Model(format!(
                        "correlation table lacks lag {k} (needed lags 0..{})",
                        n.saturating_sub(1)
                    ))
                })
            })
            .collect()
    }

    /// Closed form for `sum_{k in Z} rho(k)^m` when one exists.
    pub fn two_sided_power_sum(&self, m: usize) -> Option<f64> {
        match self {
            CorrelationModel::Kronecker => Some(1.0),
            CorrelationModel::Geometric { a } => {
                let am = a.powi(m as i32);
                Some((1.0 + am) / (1.0 - am))
            }
            CorrelationModel::Table { values, zero_tail: true } => Some(
                values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| if k == 0 { 1.0 } else { 2.0 * v.powi(m as i32) })
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Summability of `|rho|^d` truncated at `lag_cutoff`.
    pub fn summability(&self, d: usize, lag_cutoff: usize) -> SummabilityReport {
        let mut partial_sum = 1.0;
        for k in 1..=lag_cutoff {
            partial_sum += 2.0 * self.rho(k).abs().powi(d as i32);
        }
        let converges = match self {
            CorrelationModel::PolyDecay { alpha } => d > 0 && alpha * d as f64 > 1.0,
            CorrelationModel::Table { zero_tail: false, .. } => false,
            _ => d > 0,
        };
        SummabilityReport {
            power: d,
            lag_cutoff,
            partial_sum,
            last_term: self.rho(lag_cutoff).abs().powi(d as i32),
            converges,
        }
    }
}

impl fmt::Display for CorrelationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationModel::Kronecker => f.write_str("kronecker"),
            CorrelationModel::Geometric { a } => write!(f, "geom:{a}"),
            CorrelationModel::PolyDecay { alpha } => write!(f, "poly:{alpha}"),
            CorrelationModel::Table { values, zero_tail: true } => {
                write!(f, "table:{}", format_list(values))
            }
            CorrelationModel::Table { values, zero_tail: false } => {
                write!(f, "open-table:{}", format_list(values))
            }
        }
    }
}

impl FromStr for CorrelationModel {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "kronecker" {
            return Ok(CorrelationModel::Kronecker);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| LabError::Config(format!("unknown correlation model '{s}'")))?;
        let number = || {
            arg.trim()
                .parse::<f64>()
                .map_err(|e| LabError::Config(format!("bad parameter in '{s}': {e}")))
        };
        match kind.trim() {
            "geom" => CorrelationModel::geometric(number()?),
            "poly" => CorrelationModel::poly_decay(number()?),
            "table" => CorrelationModel::table(parse_list(arg)?),
            "open-table" => CorrelationModel::open_table(parse_list(arg)?),
            other => Err(LabError::Config(format!("unknown correlation model kind '{other}'"))),
        }
    }
}

impl TryFrom<String> for CorrelationModel {
    type Error = LabError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CorrelationModel> for String {
    fn from(m: CorrelationModel) -> String {
        m.to_string()
    }
}
