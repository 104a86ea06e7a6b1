//! Step-size thresholds for SGD-k from a spectrum `λ1 ≥ … ≥ λm > 0` and the
//! higher-order curvature pair `(s, t)`.
//!
//! The same formulas serve the stochastic quadratic (with `s_Q`, `t_Q`) and the
//! ball-averaged nonconvex geometry (with `s_f`, `t_f`).
//!
//! Both thresholds pick one "active" eigenvalue. For the divergence bound the
//! active index is the one maximizing `2λ/(λ² + s/k)` over the spectrum, found
//! through the batch-size brackets `k ≤ s/(λ_l λ_{l+1})`; for the convergence
//! bound it is whichever end of the spectrum minimizes `2λ/(λ² + t/k)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of sampled gradients averaged per update. `Infinite` is gradient
/// descent on the expected objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BatchSize {
    Finite(u64),
    Infinite,
}

impl BatchSize {
    pub fn new(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidBatchSize);
        }
        Ok(BatchSize::Finite(k))
    }

    /// `1/k`, with `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        match self {
            BatchSize::Finite(k) => 1.0 / k as f64,
            BatchSize::Infinite => 0.0,
        }
    }

    /// `k ≤ bound`, with `∞ ≤ bound` false for every finite bound.
    pub fn at_most(self, bound: f64) -> bool {
        match self {
            BatchSize::Finite(k) => (k as f64) <= bound,
            BatchSize::Infinite => bound == f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, BatchSize::Infinite)
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            BatchSize::Finite(0) => Err(Error::InvalidBatchSize),
            k => Ok(k),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Finite(k) => write!(f, "{k}"),
            BatchSize::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" | "gd" => Ok(BatchSize::Infinite),
            other => {
                let k: u64 = other
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad batch size {s:?}")))?;
                BatchSize::new(k)
            }
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            BatchSize::Finite(k) => serializer.serialize_u64(*k),
            BatchSize::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(k) => BatchSize::new(k).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Homogeneous,
    Inhomogeneous,
    Mechanism,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Homogeneous => "homogeneous",
            Regime::Inhomogeneous => "inhomogeneous",
            Regime::Mechanism => "mechanism",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(Regime::Homogeneous),
            "inhomogeneous" => Ok(Regime::Inhomogeneous),
            "mechanism" => Ok(Regime::Mechanism),
            _ => Err(Error::InvalidArgument(format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub k: BatchSize,
    pub regime: Regime,
    /// Step sizes below this contract the expected error.
    pub conv_ub: f64,
    /// Step sizes above this grow the conditional error geometrically.
    pub div_lb: f64,
    /// 1-based index of the eigenvalue active in `div_lb`.
    pub j_index: usize,
    pub gamma: f64,
    pub k_max_div: u64,
    pub k_max_conv: u64,
}

/// Spectrum plus curvature pair; the input to every threshold formula.
#[derive(Debug, Clone, Copy)]
pub struct Curvature<'a> {
    /// Nonzero eigenvalues, descending.
    pub lambdas: &'a [f64],
    pub s: f64,
    pub t: f64,
}

impl Curvature<'_> {
    fn check(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::ZeroExpectedCurvature);
        }
        Ok(())
    }

    fn lambda_1(&self) -> f64 {
        self.lambdas[0]
    }

    fn lambda_m(&self) -> f64 {
        *self.lambdas.last().unwrap()
    }

    /// Largest integer strictly below `s/(λ_{m-1} λ_m)`, or 0 without a bracket.
    pub fn k_max_div(&self) -> u64 {
        let m = self.lambdas.len();
        if m < 2 {
            return 0;
        }
        let ratio = self.s / (self.lambdas[m - 2] * self.lambdas[m - 1]);
        strictly_below(ratio)
    }

    /// Integer closest to `t/(λ_m λ_1)`.
    pub fn k_max_conv(&self) -> u64 {
        let ratio = self.t / (self.lambda_m() * self.lambda_1());
        if ratio.is_finite() && ratio > 0.0 {
            ratio.round() as u64
        } else {
            0
        }
    }
}

fn strictly_below(x: f64) -> u64 {
    if !(x > 0.0) {
        return 0;
    }
    if !x.is_finite() {
        return u64::MAX;
    }
    let c = x.ceil();
    if c >= 1.0 {
        (c - 1.0) as u64
    } else {
        0
    }
}

/// 0-based index picked by the brackets `k ≤ s / d(λ_l, λ_{l+1})`: the first
/// `l` whose bracket contains `k`, else the last eigenvalue.
fn bracket_index(lambdas: &[f64], k: BatchSize, s: f64, d: impl Fn(f64, f64) -> f64) -> usize {
    let m = lambdas.len();
    for l in 0..m.saturating_sub(1) {
        if k.at_most(s / d(lambdas[l], lambdas[l + 1])) {
            return l;
        }
    }
    m - 1
}

/// Convergence bound `2λ_j/(λ_j² + t/k)` with `j = 1` when `k > t/(λ1 λm)`.
pub fn homogeneous_conv_ub(c: &Curvature<'_>, k: BatchSize) -> f64 {
    let tk = c.t * k.recip();
    let (l1, lm) = (c.lambda_1(), c.lambda_m());
    let lam = if k.at_most(c.t / (l1 * lm)) { lm } else { l1 };
    2.0 * lam / (lam * lam + tk)
}

/// Divergence bound `2λ_j/(λ_j² + s/k)` and the 1-based active index.
pub fn homogeneous_div_lb(c: &Curvature<'_>, k: BatchSize) -> (f64, usize) {
    let sk = c.s * k.recip();
    let j = bracket_index(c.lambdas, k, c.s, |a, b| a * b);
    let lam = c.lambdas[j];
    (2.0 * lam / (lam * lam + sk), j + 1)
}

/// Thresholds for a homogeneous minimizer (also used, with `s_f`/`t_f`, by
/// the deterministic mechanism).
pub fn homogeneous_report(c: &Curvature<'_>, k: BatchSize, regime: Regime) -> Result<ThresholdReport> {
    c.check()?;
    let k = k.validate()?;
    let (div_lb, j_index) = homogeneous_div_lb(c, k);
    Ok(ThresholdReport {
        k,
        regime,
        conv_ub: homogeneous_conv_ub(c, k),
        div_lb,
        j_index,
        gamma: 0.0,
        k_max_div: c.k_max_div(),
        k_max_conv: c.k_max_conv(),
    })
}

/// Largest admissible slack `γ = ½√(s/k)`; zero for gradient descent.
pub fn default_gamma(s: f64, k: BatchSize) -> f64 {
    0.5 * (s * k.recip()).sqrt()
}

/// Thresholds for an inhomogeneous minimizer.
///
/// The convergence bound uses `2λ_j / ((1 + 1/k)λ_j² + t/k)` with `j = 1` when
/// `k + 1 > t/(λ1 λm)`. The divergence bound is `2(λ_j + γ)/(λ_j² + s/k)` over
/// the γ-shifted brackets. `gamma = None` selects [`default_gamma`]. For
/// `k = ∞` the only admissible slack is 0, which recovers gradient descent.
pub fn inhomogeneous_report(c: &Curvature<'_>, k: BatchSize, gamma: Option<f64>) -> Result<ThresholdReport> {
    c.check()?;
    let k = k.validate()?;
    if !(c.s > 0.0) {
        return Err(Error::DegenerateInhomogeneous(c.s));
    }
    let sk = c.s * k.recip();
    let gamma = match (gamma, k) {
        (None, _) => default_gamma(c.s, k),
        (Some(g), BatchSize::Infinite) if g == 0.0 => 0.0,
        (Some(g), _) => {
            let four_g2 = 4.0 * g * g;
            if !(g > 0.0) || !(four_g2 <= sk * (1.0 + 1e-12)) {
                return Err(Error::InvalidGamma { gamma: g, limit: sk });
            }
            g
        }
    };

    let (l1, lm) = (c.lambda_1(), c.lambda_m());
    let lam_c = match k {
        BatchSize::Infinite => l1,
        BatchSize::Finite(kk) if (kk as f64) + 1.0 > c.t / (l1 * lm) => l1,
        BatchSize::Finite(_) => lm,
    };
    let conv_ub = 2.0 * lam_c / ((1.0 + k.recip()) * lam_c * lam_c + c.t * k.recip());

    let j = bracket_index(c.lambdas, k, c.s, |a, b| a * b + gamma * (a + b));
    let lam = c.lambdas[j];
    let div_lb = 2.0 * (lam + gamma) / (lam * lam + sk);

    Ok(ThresholdReport {
        k,
        regime: Regime::Inhomogeneous,
        conv_ub,
        div_lb,
        j_index: j + 1,
        gamma,
        k_max_div: c.k_max_div(),
        k_max_conv: c.k_max_conv(),
    })
}

/// One row of the threshold CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub model: String,
    pub k: String,
    pub regime: String,
    pub conv_ub: f64,
    pub div_lb: f64,
    pub j: usize,
    pub gamma: f64,
    pub kmax_div: u64,
    pub kmax_conv: u64,
}

impl ThresholdRow {
    pub fn new(model: impl Into<String>, report: &ThresholdReport) -> Self {
        Self {
            model: model.into(),
            k: report.k.to_string(),
            regime: report.regime.to_string(),
            conv_ub: report.conv_ub,
            div_lb: report.div_lb,
            j: report.j_index,
            gamma: report.gamma,
            kmax_div: report.k_max_div,
            kmax_conv: report.k_max_conv,
        }
    }

    pub fn report(&self) -> Result<ThresholdReport> {
        Ok(ThresholdReport {
            k: self.k.parse()?,
            regime: self.regime.parse()?,
            conv_ub: self.conv_ub,
            div_lb: self.div_lb,
            j_index: self.j,
            gamma: self.gamma,
            k_max_div: self.kmax_div,
            k_max_conv: self.kmax_conv,
        })
    }
}

pub fn write_threshold_csv<W: Write>(rows: &[ThresholdRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_threshold_csv<R: Read>(input: R) -> Result<Vec<ThresholdRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curv(lambdas: &[f64], s: f64, t: f64) -> Curvature<'_> {
        Curvature { lambdas, s, t }
    }

    #[test]
    fn batch_size_parse_and_order() {
        assert_eq!("inf".parse::<BatchSize>().unwrap(), BatchSize::Infinite);
        assert_eq!("12".parse::<BatchSize>().unwrap(), BatchSize::Finite(12));
        assert!("0".parse::<BatchSize>().is_err());
        assert!(BatchSize::Finite(u64::MAX) < BatchSize::Infinite);
        let json = serde_json::to_string(&[BatchSize::Finite(3), BatchSize::Infinite]).unwrap();
        assert_eq!(json, r#"[3,"inf"]"#);
        let back: Vec<BatchSize> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![BatchSize::Finite(3), BatchSize::Infinite]);
    }

    #[test]
    fn zero_curvature_pair_gives_gradient_descent_bounds() {
        let c = curv(&[4.0, 2.0, 0.5], 0.0, 0.0);
        for k in [BatchSize::Finite(1), BatchSize::Finite(77), BatchSize::Infinite] {
            let r = homogeneous_report(&c, k, Regime::Homogeneous).unwrap();
            assert_eq!(r.conv_ub, 0.5);
            assert_eq!(r.div_lb, 4.0);
            assert_eq!(r.j_index, 3);
        }
    }

    #[test]
    fn single_eigenvalue_bracket_is_degenerate() {
        let c = curv(&[2.0], 1.0, 1.0);
        let r = homogeneous_report(&c, BatchSize::Finite(1), Regime::Mechanism).unwrap();
        assert_eq!(r.j_index, 1);
        assert!((r.div_lb - 0.8).abs() < 1e-15);
        assert_eq!(r.k_max_div, 0);
    }

    #[test]
    fn k_max_strictly_below_integer_ratio() {
        // s/(λ_{m-1} λ_m) = 8/(2*1) = 4 exactly -> 3
        let c = curv(&[2.0, 1.0], 8.0, 8.0);
        assert_eq!(c.k_max_div(), 3);
        assert_eq!(c.k_max_conv(), 4);
        let c = curv(&[2.0, 1.0], 9.0, 9.2);
        assert_eq!(c.k_max_div(), 4);
        assert_eq!(c.k_max_conv(), 5);
    }

    #[test]
    fn rejects_zero_batch_and_empty_spectrum() {
        let c = curv(&[1.0], 0.0, 0.0);
        assert!(homogeneous_report(&c, BatchSize::Finite(0), Regime::Homogeneous).is_err());
        let empty = curv(&[], 0.0, 0.0);
        assert!(homogeneous_report(&empty, BatchSize::Infinite, Regime::Homogeneous).is_err());
    }

    #[test]
    fn gamma_range_enforced() {
        let c = curv(&[2.0], 1.0, 1.0);
        let k = BatchSize::Finite(1);
        assert!(inhomogeneous_report(&c, k, Some(0.5)).is_ok());
        assert!(inhomogeneous_report(&c, k, Some(0.51)).is_err());
        assert!(inhomogeneous_report(&c, k, Some(0.0)).is_err());
        assert!(inhomogeneous_report(&c, k, Some(-0.1)).is_err());
        assert!(inhomogeneous_report(&c, BatchSize::Infinite, Some(0.1)).is_err());
        assert!(inhomogeneous_report(&c, BatchSize::Infinite, Some(0.0)).is_ok());
        let flat = curv(&[2.0], 0.0, 1.0);
        assert!(matches!(
            inhomogeneous_report(&flat, k, None),
            Err(Error::DegenerateInhomogeneous(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let c = curv(&[3.0, 1.0], 2.0, 5.0);
        let rows: Vec<ThresholdRow> = [BatchSize::Finite(1), BatchSize::Infinite]
            .iter()
            .map(|&k| ThresholdRow::new("m1", &homogeneous_report(&c, k, Regime::Homogeneous).unwrap()))
            .collect();
        let mut buf = Vec::new();
        write_threshold_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,k,regime,conv_ub,div_lb,j,gamma,kmax_div,kmax_conv\n"));
        let back = read_threshold_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[1].report().unwrap().k, BatchSize::Infinite);
    }
}
