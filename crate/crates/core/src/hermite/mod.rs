//! Probabilists' Hermite polynomials, `L^2(gamma)` expansions and the
//! coefficient calculus (derivative, Ornstein-Uhlenbeck pseudo-inverse,
//! chaos truncation) used by the rest of the crate.

mod quadrature;

pub use quadrature::{QuadratureRule, DEFAULT_NODES};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LabError, Result};

/// Largest Hermite order accepted by [`hermite_eval`].
pub const MAX_HERMITE_ORDER: usize = 512;
/// Default truncation order for expansions of callables.
pub const DEFAULT_MAX_ORDER: usize = 30;
/// Default rank tolerance, relative to `||f||_{L^2(gamma)}`.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// `H_m(x)` via `H_{m+1} = x H_m - m H_{m-1}`.
pub fn hermite_eval(m: usize, x: f64) -> Result<f64> {
    if m > MAX_HERMITE_ORDER {
        return Err(LabError::OrderRange { order: m, max: MAX_HERMITE_ORDER });
    }
    let mut prev = 1.0;
    if m == 0 {
        return Ok(prev);
    }
    let mut cur = x;
    for k in 1..m {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    if !cur.is_finite() {
        return Err(LabError::Evaluation { x, value: cur });
    }
    Ok(cur)
}

/// Fills `out[m] = H_m(x)` for `m < out.len()`.
pub fn hermite_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        out[k + 1] = x * out[k] - k as f64 * out[k - 1];
    }
}

/// `ln(m!)`.
pub fn ln_factorial(m: usize) -> f64 {
    if m <= 170 {
        factorial(m).ln()
    } else {
        ln_gamma(m as f64 + 1.0)
    }
}

/// `m!` as a float product; infinite beyond `170!`.
pub fn factorial(m: usize) -> f64 {
    (2..=m).fold(1.0, |acc, k| acc * k as f64)
}

/// Hermite rank of an expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Order(usize),
    /// Every coefficient is below the rank tolerance.
    Undefined,
}

impl Rank {
    pub fn order(self) -> Option<usize> {
        match self {
            Rank::Order(d) => Some(d),
            Rank::Undefined => None,
        }
    }
}

impl std::fmt::Display for Rank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rank::Order(d) => write!(f, "{d}"),
            Rank::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionSource {
    SymbolicCoefficients,
    QuadratureOfCallable,
}

/// Post-hoc diagnostics attached to expansions computed by quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionDiagnostics {
    /// `sum_m m! c_m^2`.
    pub parseval_norm2: f64,
    /// Quadrature estimate of `E[f(N)^2]`.
    pub direct_norm2: f64,
    /// Share of `sum_m m * m! c_m^2` carried by the top quarter of orders.
    /// Values near zero indicate a well-resolved `D^{1,2}` energy.
    pub sobolev_tail_share: f64,
    pub integrability_warning: Option<String>,
}

/// Finite Hermite expansion `f = sum_{m=0}^{M} c_m H_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteExpansion {
    coeffs: Vec<f64>,
    rank: Rank,
    rank_tol: f64,
    source: ExpansionSource,
    diagnostics: Option<ExpansionDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct ExpansionJson {
    coeffs: Vec<f64>,
    rank: Option<usize>,
    max_order: usize,
}

impl Serialize for HermiteExpansion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ExpansionJson {
            coeffs: self.coeffs.clone(),
            rank: self.rank.order(),
            max_order: self.max_order(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermiteExpansion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ExpansionJson::deserialize(d)?;
        if raw.coeffs.len() != raw.max_order + 1 {
            return Err(serde::de::Error::custom(format!(
                "coeffs has {} entries but max_order is {}",
                raw.coeffs.len(),
                raw.max_order
            )));
        }
        Ok(HermiteExpansion::from_coeffs(raw.coeffs))
    }
}

impl HermiteExpansion {
    /// Expansion from known coefficients; no quadrature involved.
    pub fn from_coeffs(mut coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        let mut e = Self {
            coeffs,
            rank: Rank::Undefined,
            rank_tol: 0.0,
            source: ExpansionSource::SymbolicCoefficients,
            diagnostics: None,
        };
        e.rank_tol = DEFAULT_RANK_TOL * e.norm2().sqrt();
        e.rank = e.rank_of(e.rank_tol);
        e
    }

    /// The single polynomial `H_m`.
    pub fn hermite(m: usize) -> Self {
        let mut c = vec![0.0; m + 1];
        c[m] = 1.0;
        Self::from_coeffs(c)
    }

    /// Converts monomial coefficients `a_0 + a_1 x + ...` exactly, using
    /// `x^k = sum_j k! / (j! (k-2j)! 2^j) H_{k-2j}`.
    pub fn from_monomials(a: &[f64]) -> Self {
        let mut c = vec![0.0; a.len().max(1)];
        for (k, &ak) in a.iter().enumerate() {
            if ak == 0.0 {
                continue;
            }
            for j in 0..=k / 2 {
                let log_w = ln_factorial(k)
                    - ln_factorial(j)
                    - ln_factorial(k - 2 * j)
                    - j as f64 * std::f64::consts::LN_2;
                c[k - 2 * j] += ak * log_w.exp();
            }
        }
        Self::from_coeffs(c)
    }

    /// Closed-form expansion of the centered absolute value
    /// `|x| - sqrt(2/pi)` up to `max_order`. Odd coefficients vanish and
    /// `c_{2k} = sqrt(2/pi) (-1)^{k+1} (2k-3)!! / (2k)!` for `k >= 1`.
    pub fn centered_abs(max_order: usize) -> Self {
        let mut c = vec![0.0; max_order + 1];
        let amp = (2.0 / std::f64::consts::PI).sqrt();
        for k in 1..=max_order / 2 {
            // ln((2k-3)!!) = ln((2k-2)!) - (k-1) ln 2 - ln((k-1)!)
            let ln_dfact = ln_factorial(2 * k - 2)
                - (k - 1) as f64 * std::f64::consts::LN_2
                - ln_factorial(k - 1);
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            c[2 * k] = sign * amp * (ln_dfact - ln_factorial(2 * k)).exp();
        }
        Self::from_coeffs(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, m: usize) -> f64 {
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn source(&self) -> ExpansionSource {
        self.source
    }

    pub fn diagnostics(&self) -> Option<&ExpansionDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// `m! c_m^2`, evaluated in log-space.
    pub fn chaos_energy(&self, m: usize) -> f64 {
        let c = self.coeff(m);
        if c == 0.0 {
            return 0.0;
        }
        (ln_factorial(m) + 2.0 * c.abs().ln()).exp()
    }

    /// `||f||^2_{L^2(gamma)} = sum_m m! c_m^2`.
    pub fn norm2(&self) -> f64 {
        (0..self.coeffs.len()).map(|m| self.chaos_energy(m)).sum()
    }

    /// `||f||^2_{1,2} = E[f^2] + E[f'^2] = sum_m (1 + m) m! c_m^2`.
    pub fn sobolev_norm2(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|m| (1 + m) as f64 * self.chaos_energy(m))
            .sum()
    }

    /// Absolute tolerance used for the stored rank: [`DEFAULT_RANK_TOL`]
    /// times the norm of the expansion this one was built from.
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Smallest `m` with `|c_m| > rank_tol`.
    pub fn rank_of(&self, rank_tol: f64) -> Rank {
        self.coeffs
            .iter()
            .position(|c| c.abs() > rank_tol)
            .map_or(Rank::Undefined, Rank::Order)
    }

    /// Requires a rank of at least one (vanishing mean).
    pub fn require_centered(&self, what: &str) -> Result<usize> {
        match self.rank {
            Rank::Order(0) => Err(LabError::Rank(format!(
                "{what} requires Hermite rank >= 1, but c_0 = {:e}",
                self.coeff(0)
            ))),
            Rank::Order(d) => Ok(d),
            Rank::Undefined => Err(LabError::Rank(format!(
                "{what} requires a nonzero function (rank undefined)"
            ))),
        }
    }

    /// `f(x) = sum_m c_m H_m(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = self.coeffs[0];
        if self.coeffs.len() == 1 {
            return acc;
        }
        let mut prev = 1.0;
        let mut cur = x;
        acc += self.coeffs[1] * cur;
        for (k, &c) in self.coeffs.iter().enumerate().skip(2) {
            let next = x * cur - (k - 1) as f64 * prev;
            prev = cur;
            cur = next;
            acc += c * cur;
        }
        acc
    }

    /// `f'` through `H_m' = m H_{m-1}`.
    pub fn derivative(&self) -> Self {
        let coeffs: Vec<f64> = if self.coeffs.len() == 1 {
            vec![0.0]
        } else {
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(m, c)| m as f64 * c)
                .collect()
        };
        Self::from_coeffs(coeffs)
    }

    /// `g = -L^{-1} f = sum_{m>=1} (c_m / m) H_m`.
    pub fn ou_pseudo_inverse(&self) -> Result<Self> {
        if self.coeff(0).abs() > self.rank_tol {
            return Err(LabError::Rank(format!(
                "OU pseudo-inverse undefined on the constant chaos (c_0 = {:e})",
                self.coeff(0)
            )));
        }
        let mut coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| if m == 0 { 0.0 } else { c / m as f64 })
            .collect();
        coeffs[0] = 0.0;
        Ok(Self::from_coeffs(coeffs))
    }

    /// Projection onto chaoses `0..=p`.
    pub fn truncate(&self, p: usize) -> Self {
        if p >= self.max_order() {
            return self.clone();
        }
        // Keep the parent's tolerance so truncation never lowers the rank.
        let mut t = Self::from_coeffs(self.coeffs[..=p].to_vec());
        t.rank_tol = self.rank_tol;
        t.rank = t.rank_of(t.rank_tol);
        t.source = self.source;
        t
    }

    /// `alpha * f`.
    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_coeffs(self.coeffs.iter().map(|c| alpha * c).collect())
    }
}

/// Computes `c_m = E[f(N) H_m(N)] / m!` for `m = 0..=max_order` with `rule`.
pub fn expand<F>(f: F, max_order: usize, rule: &QuadratureRule) -> Result<HermiteExpansion>
where
    F: Fn(f64) -> f64,
{
    if max_order > MAX_HERMITE_ORDER {
        return Err(LabError::OrderRange { order: max_order, max: MAX_HERMITE_ORDER });
    }
    let mut sums = vec![0.0; max_order + 1];
    let mut h = vec![0.0; max_order + 1];
    let mut direct_norm2 = 0.0;
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let fx = f(x);
        if !fx.is_finite() {
            return Err(LabError::Evaluation { x, value: fx });
        }
        direct_norm2 += w * fx * fx;
        hermite_values(x, &mut h);
        for (s, hm) in sums.iter_mut().zip(&h) {
            *s += w * fx * hm;
        }
    }
    let coeffs: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(m, s)| if m <= 170 { s / factorial(m) } else { s * (-ln_factorial(m)).exp() })
        .collect();

    let mut e = HermiteExpansion::from_coeffs(coeffs);
    e.source = ExpansionSource::QuadratureOfCallable;

    let energies: Vec<f64> = (0..=max_order).map(|m| e.chaos_energy(m)).collect();
    let parseval_norm2: f64 = energies.iter().sum();
    let sobolev: Vec<f64> = energies.iter().enumerate().map(|(m, v)| m as f64 * v).collect();
    let sobolev_total: f64 = sobolev.iter().sum();
    let tail_start = max_order + 1 - (max_order + 1).div_ceil(4);
    let sobolev_tail_share = if sobolev_total > 0.0 {
        sobolev[tail_start..].iter().sum::<f64>() / sobolev_total
    } else {
        0.0
    };

    // |c_m| m! not decaying over the top quarter of orders.
    let scaled: Vec<f64> = (tail_start..=max_order)
        .map(|m| (e.coeff(m).abs().ln() + ln_factorial(m)).exp())
        .collect();
    let not_decaying = scaled.len() >= 2 && scaled.last() >= scaled.first() && scaled[0] > 0.0;
    let integrability_warning = if not_decaying && parseval_norm2 > 1.1 * direct_norm2 {
        Some(format!(
            "coefficient energy {parseval_norm2:.6e} exceeds direct estimate {direct_norm2:.6e} by more than 10% and m! c_m is not decaying; f may not be square integrable"
        ))
    } else {
        None
    };
    e.diagnostics = Some(ExpansionDiagnostics {
        parseval_norm2,
        direct_norm2,
        sobolev_tail_share,
        integrability_warning,
    });
    Ok(e)
}

/// Named function inputs accepted by configs and the CLI.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionSpec {
    /// `hermite:m`
    Hermite(usize),
    /// `abs`: the centered absolute value `|x| - sqrt(2/pi)`.
    CenteredAbs,
    /// `poly:[a0,a1,...]` in the monomial basis.
    Poly(Vec<f64>),
    /// `coeffs:[c0,c1,...]` in the Hermite basis.
    Coeffs(Vec<f64>),
}

impl FunctionSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "abs" {
            return Ok(FunctionSpec::CenteredAbs);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| LabError::Config(format!("unknown function spec '{s}'")))?;
        match kind.trim() {
            "hermite" => arg
                .trim()
                .parse::<usize>()
                .map(FunctionSpec::Hermite)
                .map_err(|e| LabError::Config(format!("bad Hermite order in '{s}': {e}"))),
            "poly" => parse_list(arg).map(FunctionSpec::Poly),
            "coeffs" => parse_list(arg).map(FunctionSpec::Coeffs),
            other => Err(LabError::Config(format!("unknown function kind '{other}'"))),
        }
    }

    /// Builds the expansion; `max_order` applies to `abs` only, other
    /// specs are exact finite expansions.
    pub fn expansion(&self, max_order: usize) -> Result<HermiteExpansion> {
        Ok(match self {
            FunctionSpec::Hermite(m) => {
                if *m > MAX_HERMITE_ORDER {
                    return Err(LabError::OrderRange { order: *m, max: MAX_HERMITE_ORDER });
                }
                HermiteExpansion::hermite(*m)
            }
            FunctionSpec::CenteredAbs => HermiteExpansion::centered_abs(max_order),
            FunctionSpec::Poly(a) => HermiteExpansion::from_monomials(a),
            FunctionSpec::Coeffs(c) => HermiteExpansion::from_coeffs(c.clone()),
        })
    }

    /// Pointwise value from the closed form, bypassing any truncation of
    /// the expansion. `None` for coefficient lists, whose expansion is the
    /// function itself.
    pub fn closed_form(&self, x: f64) -> Option<f64> {
        match self {
            FunctionSpec::Hermite(m) => hermite_eval(*m, x).ok(),
            FunctionSpec::CenteredAbs => Some(x.abs() - (2.0 / std::f64::consts::PI).sqrt()),
            FunctionSpec::Poly(a) => Some(a.iter().rev().fold(0.0, |acc, c| acc * x + c)),
            FunctionSpec::Coeffs(_) => None,
        }
    }
}

impl std::fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FunctionSpec::Hermite(m) => write!(f, "hermite:{m}"),
            FunctionSpec::CenteredAbs => f.write_str("abs"),
            FunctionSpec::Poly(a) => write!(f, "poly:{}", format_list(a)),
            FunctionSpec::Coeffs(c) => write!(f, "coeffs:{}", format_list(c)),
        }
    }
}

pub(crate) fn parse_list(arg: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = serde_json::from_str(arg.trim())
        .map_err(|e| LabError::Config(format!("expected a JSON number list, got '{arg}': {e}")))?;
    if values.is_empty() {
        return Err(LabError::Config("empty coefficient list".into()));
    }
    Ok(values)
}

pub(crate) fn format_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eval_small_orders() {
        assert_eq!(hermite_eval(0, 1.7).unwrap(), 1.0);
        assert_eq!(hermite_eval(2, 2.0).unwrap(), 3.0);
        assert_eq!(hermite_eval(3, 1.0).unwrap(), -2.0);
        assert!(matches!(
            hermite_eval(513, 0.1),
            Err(LabError::OrderRange { order: 513, .. })
        ));
        assert!(hermite_eval(150, 0.1).unwrap().is_finite());
        assert!(matches!(hermite_eval(512, 0.1), Err(LabError::Evaluation { .. })));
    }

    #[test]
    fn hermite_values_matches_eval() {
        let mut h = vec![0.0; 12];
        hermite_values(0.37, &mut h);
        for (m, v) in h.iter().enumerate() {
            assert!(close(*v, hermite_eval(m, 0.37).unwrap(), 1e-12));
        }
    }

    #[test]
    fn expand_x_squared() {
        let rule = QuadratureRule::default();
        let e = expand(|x| x * x, 30, &rule).unwrap();
        for (m, c) in e.coeffs().iter().enumerate() {
            let want = if m == 0 || m == 2 { 1.0 } else { 0.0 };
            assert!(close(*c, want, 1e-10), "c_{m} = {c}");
        }
        assert_eq!(e.rank(), Rank::Order(0));
        assert_eq!(e.source(), ExpansionSource::QuadratureOfCallable);
    }

    #[test]
    fn expand_h3() {
        let rule = QuadratureRule::default();
        let e = expand(|x| hermite_eval(3, x).unwrap(), 30, &rule).unwrap();
        for (m, c) in e.coeffs().iter().enumerate() {
            let want = if m == 3 { 1.0 } else { 0.0 };
            assert!(close(*c, want, 1e-10), "c_{m} = {c}");
        }
        assert_eq!(e.rank(), Rank::Order(3));
    }

    #[test]
    fn expand_abs() {
        // Oracle: E|N| = sqrt(2/pi) = 0.7978845608028654 (adaptive quadrature
        // of 2 x phi(x) on [0, 40] to 1e-14).
        let rule = QuadratureRule::default();
        let e = expand(f64::abs, 30, &rule).unwrap();
        // The kink limits Gauss-Hermite to algebraic convergence: the
        // 200-node error is about 1.6e-3 and shrinks with more nodes.
        let err200 = (e.coeff(0) - 0.797_884_560_802_865_4).abs();
        assert!(err200 < 2.5e-3, "{}", e.coeff(0));
        let finer = expand(f64::abs, 2, &QuadratureRule::gauss_hermite(400).unwrap()).unwrap();
        assert!((finer.coeff(0) - 0.797_884_560_802_865_4).abs() < 0.5 * err200);
        assert!(e.coeff(1).abs() < 1e-12);
        // The closed form matches quadrature on the low orders.
        let closed = HermiteExpansion::centered_abs(30);
        for m in 1..=10 {
            assert!(close(e.coeff(m), closed.coeff(m), 2.5e-3), "m = {m}");
        }
    }

    #[test]
    fn centered_abs_has_rank_two() {
        let e = HermiteExpansion::centered_abs(30);
        assert_eq!(e.rank(), Rank::Order(2));
        let amp = (2.0 / std::f64::consts::PI).sqrt();
        assert!(close(e.coeff(2), amp / 2.0, 1e-15));
        // c_4 = -sqrt(2/pi) * 1 / 24
        assert!(close(e.coeff(4), -amp / 24.0, 1e-15));
        // Var(|N|) = 1 - 2/pi; truncation loses a small tail only.
        let var = 1.0 - 2.0 / std::f64::consts::PI;
        assert!(e.norm2() < var && e.norm2() > var - 2e-3);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let rule = QuadratureRule::gauss_hermite(20).unwrap();
        let err = expand(|x| 1.0 / x.abs().min(0.0), 5, &rule).unwrap_err();
        assert!(matches!(err, LabError::Evaluation { .. }));
    }

    #[test]
    fn integrability_warning_on_exploding_callable() {
        let rule = QuadratureRule::default();
        let e = expand(|x| (x * x * 0.49).exp(), 30, &rule).unwrap();
        let d = e.diagnostics().unwrap();
        assert!(d.integrability_warning.is_some() || d.sobolev_tail_share > 0.1);
    }

    #[test]
    fn rank_detection() {
        assert_eq!(HermiteExpansion::hermite(2).rank(), Rank::Order(2));
        assert_eq!(HermiteExpansion::from_monomials(&[0.0, 1.0]).rank(), Rank::Order(1));
        assert_eq!(HermiteExpansion::from_monomials(&[0.0, 0.0, 1.0]).rank(), Rank::Order(0));
        let zero = HermiteExpansion::from_coeffs(vec![0.0; 4]);
        assert_eq!(zero.rank(), Rank::Undefined);
        assert_eq!(zero.rank_of(0.0), Rank::Undefined);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(HermiteExpansion::hermite(2).derivative().coeffs(), &[0.0, 2.0]);
        assert_eq!(HermiteExpansion::hermite(1).derivative().coeffs(), &[1.0]);
        let f = HermiteExpansion::from_coeffs(vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(f.derivative().coeffs(), &[1.0, 0.0, 3.0]);
        assert_eq!(HermiteExpansion::hermite(0).derivative().coeffs(), &[0.0]);
    }

    #[test]
    fn pseudo_inverse_examples() {
        let g = HermiteExpansion::hermite(2).ou_pseudo_inverse().unwrap();
        assert_eq!(g.coeffs(), &[0.0, 0.0, 0.5]);
        let g = HermiteExpansion::from_coeffs(vec![0.0, 1.0, 0.0, 1.0])
            .ou_pseudo_inverse()
            .unwrap();
        assert_eq!(g.coeffs(), &[0.0, 1.0, 0.0, 1.0 / 3.0]);
        let err = HermiteExpansion::from_monomials(&[0.0, 0.0, 1.0])
            .ou_pseudo_inverse()
            .unwrap_err();
        assert!(matches!(err, LabError::Rank(_)));
    }

    #[test]
    fn truncate_examples() {
        let f = HermiteExpansion::from_coeffs(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(f.truncate(3).coeffs(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(f.truncate(3).rank(), Rank::Order(2));
        assert_eq!(f.truncate(5), f);
        assert_eq!(f.truncate(9), f);
        let t = HermiteExpansion::hermite(2).truncate(1);
        assert_eq!(t.rank(), Rank::Undefined);
    }

    #[test]
    fn monomials_convert_exactly() {
        // x^4 = H_4 + 6 H_2 + 3
        let e = HermiteExpansion::from_monomials(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(close(e.coeff(0), 3.0, 1e-12));
        assert!(close(e.coeff(2), 6.0, 1e-12));
        assert!(close(e.coeff(4), 1.0, 1e-12));
        for x in [-2.0, -0.3, 0.0, 1.5] {
            assert!(close(e.eval(x), x.powi(4), 1e-10));
        }
    }

    #[test]
    fn orthogonality_normalized() {
        let rule = QuadratureRule::default();
        for m in 0..=20 {
            for l in 0..=20 {
                let v = rule.integrate(|x| hermite_eval(m, x).unwrap() * hermite_eval(l, x).unwrap());
                let scale = ((ln_factorial(m) + ln_factorial(l)) / 2.0).exp();
                let want = if m == l { 1.0 } else { 0.0 };
                assert!(close(v / scale, want, 1e-8), "m={m} l={l}: {}", v / scale);
            }
        }
    }

    #[test]
    fn json_shape() {
        let e = HermiteExpansion::from_coeffs(vec![0.0, 1.0, 0.0, 1.0]);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"coeffs":[0.0,1.0,0.0,1.0],"rank":1,"max_order":3}"#);
        let back: HermiteExpansion = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<HermiteExpansion>(r#"{"coeffs":[1.0],"rank":0,"max_order":3}"#).is_err());
    }

    #[test]
    fn function_specs() {
        assert_eq!(FunctionSpec::parse("hermite:3").unwrap(), FunctionSpec::Hermite(3));
        assert_eq!(FunctionSpec::parse("abs").unwrap(), FunctionSpec::CenteredAbs);
        assert_eq!(FunctionSpec::Poly(vec![1.0, 0.0, 2.0]).closed_form(3.0), Some(19.0));
        assert_eq!(FunctionSpec::Hermite(3).closed_form(1.0), Some(-2.0));
        assert_eq!(FunctionSpec::Coeffs(vec![0.0, 1.0]).closed_form(1.0), None);
        assert_eq!(
            FunctionSpec::parse("poly:[0, 1, 2]").unwrap(),
            FunctionSpec::Poly(vec![0.0, 1.0, 2.0])
        );
        assert_eq!(
            FunctionSpec::parse("coeffs:[0,1,0,1]").unwrap().to_string(),
            "coeffs:[0,1,0,1]"
        );
        assert!(FunctionSpec::parse("cosh").is_err());
        assert!(FunctionSpec::parse("hermite:x").is_err());
        assert!(FunctionSpec::parse("poly:[]").is_err());
    }

    fn poly_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 1..=21)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_and_parseval(hcoeffs in poly_strategy()) {
            let rule = QuadratureRule::default();
            let f = HermiteExpansion::from_coeffs(hcoeffs.clone());
            let e = expand(|x| f.eval(x), 20, &rule).unwrap();
            // Compared on the orthonormal scale sqrt(m!) c_m, relative to ||f||.
            let scale = f.norm2().sqrt().max(1.0);
            for (m, c) in hcoeffs.iter().enumerate() {
                let err = (e.coeff(m) - c).abs() * factorial(m).sqrt();
                prop_assert!(err <= 1e-10 * scale, "m={} {} vs {}", m, e.coeff(m), c);
            }
            let direct = rule.integrate(|x| f.eval(x).powi(2));
            prop_assert!((f.norm2() - direct).abs() <= 1e-6 * direct.max(1e-300));
        }

        #[test]
        fn calculus_preserves_rank_order(hcoeffs in poly_strategy(), p in 0usize..25) {
            let mut c = hcoeffs;
            c[0] = 0.0;
            let f = HermiteExpansion::from_coeffs(c);
            if f.rank() != Rank::Undefined {
                let g = f.ou_pseudo_inverse().unwrap();
                let _ = g.derivative();
                let t = f.truncate(p);
                if let (Rank::Order(rt), Rank::Order(rf)) = (t.rank(), f.rank()) {
                    prop_assert!(rt >= rf);
                }
            }
        }
    }
}
