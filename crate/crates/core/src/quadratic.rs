//! Discrete stochastic quadratic problems.
//!
//! The random objective is `½ θ'Qθ + r'θ` where `(Q, r)` takes the value
//! `(Q_i, r_i)` with probability `p_i`. Each `Q_i` is symmetric PSD and each
//! `r_i` lies in the range of `Q_i`, so every realization has a minimizer.
//!
//! [`expected_geometry`] computes everything the SGD-k analysis needs:
//! `E[Q]`, the minimum-norm minimizer `θ* = −E[Q]^† E[r]`, the nonzero
//! spectrum of `E[Q]`, the fourth-moment matrix `M = E[Q E[Q] Q] − E[Q]³`,
//! and the curvature pair `(t_Q, s_Q)`, the extreme values of
//! `v'Mv / v'E[Q]v` over the range of `E[Q]`.
//!
//! Note on the inhomogeneous convergence bound: the threshold uses the
//! numerator `2λ_j`, which is the dimensionally consistent form arising from
//! the one-step contraction factor `1 − 2Cλ + (1 + 1/k)C²λ² + C²t/k`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, matrix_from_rows, matrix_to_rows, pinv_psd, whitened_extremes_with, Matrix, SortedEigen,
    Vector, DEFAULT_RANK_TOL,
};
use crate::mixture::Mixture;
use crate::thresholds::{self, BatchSize, Curvature, Regime, ThresholdReport};

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-10;
const PROB_TOL: f64 = 1e-12;
const HOMOGENEITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadComponent {
    pub q: Matrix,
    pub r: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticQuadratic {
    dim: usize,
    components: Vec<QuadComponent>,
    probs: Vec<f64>,
}

impl StochasticQuadratic {
    /// Validates and builds a mixture from `(Q_i, r_i, p_i)` triples.
    pub fn new(parts: Vec<(Matrix, Vector, f64)>) -> Result<Self> {
        let Some((q0, _, _)) = parts.first() else {
            return Err(Error::InvalidProblem("no components".into()));
        };
        let dim = q0.nrows();
        let mut components = Vec::with_capacity(parts.len());
        let mut probs = Vec::with_capacity(parts.len());
        let mut any_nonzero = false;

        for (i, (q, r, p)) in parts.into_iter().enumerate() {
            if q.nrows() != dim || q.ncols() != dim || r.len() != dim {
                return Err(Error::InvalidProblem(format!(
                    "component {i}: expected {dim}x{dim} matrix and length-{dim} vector"
                )));
            }
            if q.iter().chain(r.iter()).any(|v| !v.is_finite()) || !p.is_finite() {
                return Err(Error::InvalidProblem(format!("component {i}: non-finite entry")));
            }
            let asym = asymmetry(&q);
            if asym > SYM_TOL {
                return Err(Error::InvalidProblem(format!("component {i}: asymmetry {asym:e}")));
            }
            let eig = SortedEigen::new(&q);
            let top = eig.max();
            let bottom = *eig.values.last().unwrap();
            if bottom < -PSD_TOL * (1.0 + top.abs()) {
                return Err(Error::InvalidProblem(format!(
                    "component {i}: not positive semidefinite (min eigenvalue {bottom:e})"
                )));
            }
            let proj = &q * pinv_psd(&q, DEFAULT_RANK_TOL);
            let residual = (&r - &proj * &r).norm();
            if residual > RANGE_TOL * (1.0 + r.norm()) {
                return Err(Error::InvalidProblem(format!(
                    "component {i}: r is not in the range of Q (residual {residual:e})"
                )));
            }
            if !(p > 0.0) {
                return Err(Error::InvalidProblem(format!("component {i}: probability {p} not positive")));
            }
            any_nonzero |= q.amax() > 0.0;
            components.push(QuadComponent { q, r });
            probs.push(p);
        }

        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidProblem(format!("probabilities sum to {total}")));
        }
        if !any_nonzero {
            return Err(Error::InvalidProblem("every Q_i is zero".into()));
        }
        Ok(Self { dim, components, probs })
    }

    /// Equiprobable mixture.
    pub fn uniform(parts: Vec<(Matrix, Vector)>) -> Result<Self> {
        let w = 1.0 / parts.len() as f64;
        Self::new(parts.into_iter().map(|(q, r)| (q, r, w)).collect())
    }

    /// Scalar mixture `(q_i, r_i)` with the given weights.
    pub fn scalar(parts: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            parts
                .iter()
                .map(|&(q, r, p)| (Matrix::from_element(1, 1, q), Vector::from_element(1, r), p))
                .collect(),
        )
    }

    pub fn components(&self) -> &[QuadComponent] {
        &self.components
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(text)?;
        spec.into_problem()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemSpec::from(self))?)
    }
}

impl Mixture for StochasticQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        let c = &self.components[i];
        0.5 * x.dot(&(&c.q * x)) + c.r.dot(x)
    }

    fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        let c = &self.components[i];
        &c.q * x + &c.r
    }

    fn component_hessian(&self, i: usize, _x: &Vector) -> Matrix {
        self.components[i].q.clone()
    }
}

/// JSON form: `{"dim": p, "components": [{"Q": [[..],..], "r": [..], "p": w}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dim: usize,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentSpec {
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
    pub r: Vec<f64>,
    pub p: f64,
}

/// A row-major matrix, either as nested rows or as a flat `p*p` list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixSpec {
    fn to_matrix(&self, dim: usize) -> Result<Matrix> {
        let bad = || Error::InvalidProblem(format!("Q must be {dim}x{dim}"));
        match self {
            MatrixSpec::Rows(rows) => {
                let m = matrix_from_rows(rows).ok_or_else(bad)?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(bad());
                }
                Ok(m)
            }
            MatrixSpec::Flat(v) if v.len() == dim * dim => Ok(Matrix::from_row_slice(dim, dim, v)),
            MatrixSpec::Flat(_) => Err(bad()),
        }
    }
}

impl ProblemSpec {
    pub fn into_problem(self) -> Result<StochasticQuadratic> {
        let dim = self.dim;
        let parts = self
            .components
            .iter()
            .map(|c| {
                if c.r.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: c.r.len() });
                }
                Ok((c.q.to_matrix(dim)?, Vector::from_vec(c.r.clone()), c.p))
            })
            .collect::<Result<Vec<_>>>()?;
        StochasticQuadratic::new(parts)
    }
}

impl From<&StochasticQuadratic> for ProblemSpec {
    fn from(p: &StochasticQuadratic) -> Self {
        Self {
            dim: p.dim,
            components: p
                .components
                .iter()
                .zip(&p.probs)
                .map(|(c, &w)| ComponentSpec {
                    q: MatrixSpec::Rows(matrix_to_rows(&c.q)),
                    r: c.r.iter().copied().collect(),
                    p: w,
                })
                .collect(),
        }
    }
}

/// Expected geometry of a stochastic quadratic.
#[derive(Debug, Clone)]
pub struct QuadraticGeometry {
    pub eq: Matrix,
    pub er: Vector,
    pub theta_star: Vector,
    /// Rank of `E[Q]`.
    pub m: usize,
    /// Nonzero eigenvalues of `E[Q]`, descending.
    pub lambdas: Vec<f64>,
    /// `E[Q E[Q] Q] − E[Q]³`.
    pub big_m: Matrix,
    pub t_q: f64,
    pub s_q: f64,
    pub homogeneous: bool,
    pub rank_tol: f64,
}

impl QuadraticGeometry {
    pub fn curvature(&self) -> Curvature<'_> {
        Curvature { lambdas: &self.lambdas, s: self.s_q, t: self.t_q }
    }

    /// `e = (θ − θ*)' E[Q] (θ − θ*)`.
    pub fn error(&self, theta: &Vector) -> f64 {
        let d = theta - &self.theta_star;
        d.dot(&(&self.eq * &d))
    }
}

pub fn expected_geometry(problem: &StochasticQuadratic, rank_tol: f64) -> Result<QuadraticGeometry> {
    let p = problem.dim;
    let mut eq = Matrix::zeros(p, p);
    let mut er = Vector::zeros(p);
    for (c, &w) in problem.components.iter().zip(&problem.probs) {
        eq += &c.q * w;
        er.axpy(w, &c.r, 1.0);
    }
    let eig = SortedEigen::new(&eq);
    let m = eig.positive_rank(rank_tol);
    if m == 0 {
        return Err(Error::ZeroExpectedCurvature);
    }
    let lambdas = eig.values[..m].to_vec();
    let theta_star = -(pinv_psd(&eq, rank_tol) * &er);

    let mut big_m = -(&eq * &eq * &eq);
    for (c, &w) in problem.components.iter().zip(&problem.probs) {
        big_m += (&c.q * &eq * &c.q) * w;
    }

    let homogeneous = problem
        .components
        .iter()
        .all(|c| (&c.q * &theta_star + &c.r).norm() <= HOMOGENEITY_TOL * (1.0 + c.r.norm()));

    let mut geom = QuadraticGeometry {
        eq,
        er,
        theta_star,
        m,
        lambdas,
        big_m,
        t_q: 0.0,
        s_q: 0.0,
        homogeneous,
        rank_tol,
    };
    let (t_q, s_q) = curvature_params_with(&geom, &eig);
    geom.t_q = t_q;
    geom.s_q = s_q;
    Ok(geom)
}

/// `(t_Q, s_Q)`: extreme eigenvalues of `M` whitened against `E[Q]` on its
/// range, clamped at zero.
pub fn curvature_params(geom: &QuadraticGeometry) -> (f64, f64) {
    curvature_params_with(geom, &SortedEigen::new(&geom.eq))
}

fn curvature_params_with(geom: &QuadraticGeometry, eig: &SortedEigen) -> (f64, f64) {
    match whitened_extremes_with(&geom.big_m, eig, geom.rank_tol) {
        Some((lo, hi)) => (hi.max(0.0), lo.max(0.0)),
        None => (0.0, 0.0),
    }
}

/// Convergence and divergence step sizes around a homogeneous minimizer.
pub fn homogeneous_thresholds(geom: &QuadraticGeometry, k: BatchSize) -> Result<ThresholdReport> {
    if !geom.homogeneous {
        warn!("homogeneous thresholds requested for an inhomogeneous minimizer");
    }
    thresholds::homogeneous_report(&geom.curvature(), k, Regime::Homogeneous)
}

/// Convergence and divergence step sizes around an inhomogeneous minimizer.
/// `gamma = None` uses the largest admissible slack `½√(s_Q/k)`.
pub fn inhomogeneous_thresholds(
    geom: &QuadraticGeometry,
    k: BatchSize,
    gamma: Option<f64>,
) -> Result<ThresholdReport> {
    if geom.homogeneous {
        warn!("inhomogeneous thresholds requested for a homogeneous minimizer");
    }
    thresholds::inhomogeneous_report(&geom.curvature(), k, gamma)
}
