//! Quadratic-circle sums on the plane.
//!
//! Each component is `min(g, h)` with a parabolic valley
//! `g(x) = q1 (x2 − q2 x1² − q3)²` and a radial basin `h` that is `c4` inside
//! radius `c2`, `c4 + c1` outside radius `c3`, and blends between them with
//! the quintic smoothstep `s(t) = t³(6t² − 15t + 10)`. Where `g ≤ h`
//! (including ties) derivatives come from `g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mixture::Mixture;
use crate::sgd::{rng_from_seed, BoxConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcComponent {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Value, gradient and Hessian at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

/// Which piece of `min(g, h)` is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Quadratic,
    CircleInner,
    CircleRing,
    CircleOuter,
}

/// Quintic smoothstep and its first two derivatives.
pub fn smoothstep(t: f64) -> (f64, f64, f64) {
    let s = t * t * t * (6.0 * t * t - 15.0 * t + 10.0);
    let ds = 30.0 * t * t * (t - 1.0) * (t - 1.0);
    let dds = 60.0 * t * (2.0 * t - 1.0) * (t - 1.0);
    (s, ds, dds)
}

impl QcComponent {
    pub fn validate(&self) -> Result<()> {
        let all = [self.q1, self.q2, self.q3, self.c1, self.c2, self.c3, self.c4];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite QC parameter".into()));
        }
        if self.q1 < 0.0 || self.q2 < 0.0 {
            return Err(Error::InvalidProblem("q1 and q2 must be nonnegative".into()));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 || self.c4 < 0.0 || !(self.c3 > self.c2) {
            return Err(Error::InvalidProblem("need c1, c2, c4 >= 0 and c3 > c2".into()));
        }
        Ok(())
    }

    pub fn quad_eval(&self, x: &Vector) -> Eval {
        let (x1, x2) = (x[0], x[1]);
        let u = x2 - self.q2 * x1 * x1 - self.q3;
        let du = Vector::from_vec(vec![-2.0 * self.q2 * x1, 1.0]);
        let mut hess = &du * du.transpose();
        hess[(0, 0)] += u * (-2.0 * self.q2);
        Eval {
            value: self.q1 * u * u,
            grad: &du * (2.0 * self.q1 * u),
            hess: hess * (2.0 * self.q1),
        }
    }

    pub fn circle_eval(&self, x: &Vector) -> (Eval, Branch) {
        let r = x.norm();
        let flat = |value: f64, branch| {
            (Eval { value, grad: Vector::zeros(2), hess: Matrix::zeros(2, 2) }, branch)
        };
        if r <= self.c2 {
            return flat(self.c4, Branch::CircleInner);
        }
        if r >= self.c3 {
            return flat(self.c4 + self.c1, Branch::CircleOuter);
        }
        let w = self.c3 - self.c2;
        let t = (r - self.c2) / w;
        let (s, ds, dds) = smoothstep(t);
        let d1 = self.c1 * ds / w;
        let d2 = self.c1 * dds / (w * w);
        let unit = x / r;
        let radial = &unit * unit.transpose();
        let tangential = Matrix::identity(2, 2) - &radial;
        (
            Eval {
                value: self.c4 + self.c1 * s,
                grad: &unit * d1,
                hess: radial * d2 + tangential * (d1 / r),
            },
            Branch::CircleRing,
        )
    }

    pub fn eval_with_branch(&self, x: &Vector) -> (Eval, Branch) {
        let quad = self.quad_eval(x);
        let (circle, branch) = self.circle_eval(x);
        if quad.value <= circle.value {
            (quad, Branch::Quadratic)
        } else {
            (circle, branch)
        }
    }

    pub fn eval(&self, x: &Vector) -> Eval {
        self.eval_with_branch(x).0
    }
}

/// Convenience wrapper returning `(value, gradient, Hessian)`.
pub fn qc_eval_grad_hess(comp: &QcComponent, x: &Vector) -> (f64, Vector, Matrix) {
    let e = comp.eval(x);
    (e.value, e.grad, e.hess)
}

pub const QC_BOX_LOWER: [f64; 2] = [-10.0, -20.0];
pub const QC_BOX_UPPER: [f64; 2] = [10.0, 15.0];
pub const CIRCLE_MINIMIZER: [f64; 2] = [0.0, 0.0];
pub const QUAD_MINIMIZER: [f64; 2] = [0.0, -15.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSumsModel {
    pub name: String,
    pub components: Vec<QcComponent>,
    pub probs: Vec<f64>,
    pub circ_min: [f64; 2],
    pub quad_min: [f64; 2],
}

impl QcSumsModel {
    pub fn new(name: impl Into<String>, components: Vec<QcComponent>, probs: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != probs.len() {
            return Err(Error::InvalidProblem("need one positive weight per component".into()));
        }
        for c in &components {
            c.validate()?;
        }
        check_probs(&probs)?;
        let model = Self {
            name: name.into(),
            components,
            probs,
            circ_min: CIRCLE_MINIMIZER,
            quad_min: QUAD_MINIMIZER,
        };
        for (label, point) in [("circular", model.circ_min), ("quadratic", model.quad_min)] {
            let g = model.expected_grad(&Vector::from_row_slice(&point)).norm();
            if g > 1e-8 {
                return Err(Error::DegenerateModel(format!(
                    "{label} minimizer is not stationary (|grad F| = {g:e})"
                )));
            }
        }
        Ok(model)
    }

    pub fn bounds(&self) -> BoxConstraint {
        BoxConstraint { lower: QC_BOX_LOWER.to_vec(), upper: QC_BOX_UPPER.to_vec() }
    }

    /// Largest component-gradient norm at `x`; zero at a homogeneous minimizer.
    pub fn max_component_grad(&self, x: &Vector) -> f64 {
        (0..self.components.len())
            .map(|i| self.component_grad(i, x).norm())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidProblem("probabilities must be positive".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidProblem(format!("probabilities sum to {total}")));
    }
    Ok(())
}

impl Mixture for QcSumsModel {
    fn dim(&self) -> usize {
        2
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.components[i].eval(x).value
    }

    fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        self.components[i].eval(x).grad
    }

    fn component_hessian(&self, i: usize, x: &Vector) -> Matrix {
        self.components[i].eval(x).hess
    }
}

/// Sharpness of each basin in a generated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharpness {
    Sharp,
    Flat,
}

pub const QC_COMPONENTS: usize = 20;

/// Parameter ranges for the generator. Each component draws uniformly from
/// these intervals; `w` is the ring width `c3 − c2`.
struct QcRanges {
    q1: (f64, f64),
    w: (f64, f64),
}

fn ranges(circle: Sharpness, quad: Sharpness) -> QcRanges {
    QcRanges {
        q1: match quad {
            Sharpness::Sharp => (0.16, 0.24),
            Sharpness::Flat => (0.0008, 0.0012),
        },
        w: match circle {
            Sharpness::Sharp => (0.25, 1.0),
            Sharpness::Flat => (2.5, 10.0),
        },
    }
}

/// `(circle, quadratic)` sharpness of Models 1 through 4.
pub const QC_MODEL_LAYOUT: [(Sharpness, Sharpness); 4] = [
    (Sharpness::Sharp, Sharpness::Sharp),
    (Sharpness::Sharp, Sharpness::Flat),
    (Sharpness::Flat, Sharpness::Sharp),
    (Sharpness::Flat, Sharpness::Flat),
];

/// Four seeded models. Every component shares `q3 = −15` and `c4 = 0` and
/// has `c2 ≤ 1e-10`, so `(0, −15)` zeroes every `g` and `(0, 0)` sits in
/// every flat disc: both minimizers are homogeneous.
///
/// `q2 ≤ 2e-9` keeps the valleys nearly straight. Across a ball of radius
/// `ε ≤ 0.02` the `x1` curvature of each `g` is at most about `2 q2 ε` relative
/// to its `x2` curvature, which stays below the default rank tolerance.
pub fn generate_qc_models(seed: u64) -> Result<Vec<QcSumsModel>> {
    QC_MODEL_LAYOUT
        .iter()
        .enumerate()
        .map(|(idx, &(circle, quad))| {
            let mut rng = rng_from_seed(crate::sgd::derive_seed(seed, &[0x9c, idx as u64]));
            let r = ranges(circle, quad);
            let components = (0..QC_COMPONENTS)
                .map(|_| {
                    let c2 = rng.random_range(1e-11..1e-10);
                    QcComponent {
                        q1: rng.random_range(r.q1.0..r.q1.1),
                        q2: rng.random_range(5e-10..2e-9),
                        q3: -15.0,
                        c1: rng.random_range(0.8..1.2),
                        c2,
                        c3: c2 + rng.random_range(r.w.0..r.w.1),
                        c4: 0.0,
                    }
                })
                .collect();
            let probs = vec![1.0 / QC_COMPONENTS as f64; QC_COMPONENTS];
            QcSumsModel::new(format!("qc-model-{}", idx + 1), components, probs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp() -> QcComponent {
        QcComponent { q1: 0.7, q2: 0.05, q3: -15.0, c1: 1.3, c2: 0.2, c3: 1.5, c4: 0.1 }
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), (0.0, 0.0, 0.0));
        let (s, ds, dds) = smoothstep(1.0);
        assert_eq!((s, ds, dds), (1.0, 0.0, 0.0));
        assert_eq!(smoothstep(0.5).0, 0.5);
    }

    #[test]
    fn circle_midpoint_value() {
        let c = comp();
        let r = 0.5 * (c.c2 + c.c3);
        let (e, branch) = c.circle_eval(&Vector::from_vec(vec![r * 0.6, r * 0.8]));
        assert_eq!(branch, Branch::CircleRing);
        assert!((e.value - (c.c4 + 0.5 * c.c1)).abs() < 1e-14);
    }

    #[test]
    fn parabola_is_zero_set_of_g() {
        let c = comp();
        for x1 in [-3.0, 0.0, 2.5] {
            let x = Vector::from_vec(vec![x1, c.q2 * x1 * x1 + c.q3]);
            let e = c.quad_eval(&x);
            assert_eq!(e.value, 0.0);
            assert_eq!(e.grad.norm(), 0.0);
        }
    }

    #[test]
    fn ties_take_the_quadratic_branch() {
        // g = h = c4 + c1 outside the ring with q1 chosen to match
        let c = QcComponent { q1: 1.0, q2: 0.0, q3: 0.0, c1: 4.0, c2: 0.0, c3: 1.0, c4: 0.0 };
        let x = Vector::from_vec(vec![0.0, 2.0]);
        let (e, branch) = c.eval_with_branch(&x);
        assert_eq!(branch, Branch::Quadratic);
        assert_eq!(e.value, 4.0);
        assert_eq!(e.grad[1], 4.0);
    }

    #[test]
    fn validation() {
        assert!(comp().validate().is_ok());
        assert!(QcComponent { q1: -1.0, ..comp() }.validate().is_err());
        assert!(QcComponent { c3: 0.1, ..comp() }.validate().is_err());
    }

    #[test]
    fn generated_models_are_stationary_and_homogeneous() {
        let models = generate_qc_models(3).unwrap();
        assert_eq!(models.len(), 4);
        for m in &models {
            for point in [m.circ_min, m.quad_min] {
                let x = Vector::from_row_slice(&point);
                assert!(m.expected_grad(&x).norm() <= 1e-8);
                assert_eq!(m.max_component_grad(&x), 0.0);
            }
            assert!(m.components.iter().all(|c| c.c2 <= 1e-3 && c.q3 == -15.0 && c.c4 == 0.0));
        }
        assert_eq!(models, generate_qc_models(3).unwrap());
        assert_ne!(models, generate_qc_models(4).unwrap());
    }
}
