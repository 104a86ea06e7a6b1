//! Finite mixtures of smooth component objectives.
//!
//! A mixture is a discrete random objective `f` taking the value `f_i` with
//! probability `p_i`; the expected objective is `F = Σ p_i f_i`. SGD-k samples
//! component indices, and the curvature analysis needs exact component and
//! expected Hessians.

use crate::linalg::{whitened_extremes_with, Matrix, SortedEigen, Vector};

pub trait Mixture: Sync {
    fn dim(&self) -> usize;

    /// Mixture weights; positive, summing to one.
    fn probs(&self) -> &[f64];

    fn n_components(&self) -> usize {
        self.probs().len()
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64;
    fn component_grad(&self, i: usize, x: &Vector) -> Vector;
    fn component_hessian(&self, i: usize, x: &Vector) -> Matrix;

    /// `out += ∇f_i(x)`.
    fn add_component_grad(&self, i: usize, x: &Vector, out: &mut Vector) {
        *out += self.component_grad(i, x);
    }

    fn expected_value(&self, x: &Vector) -> f64 {
        self.probs()
            .iter()
            .enumerate()
            .map(|(i, p)| p * self.component_value(i, x))
            .sum()
    }

    fn expected_grad(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for (i, p) in self.probs().iter().enumerate() {
            g.axpy(*p, &self.component_grad(i, x), 1.0);
        }
        g
    }

    fn expected_hessian(&self, x: &Vector) -> Matrix {
        let n = self.dim();
        let mut h = Matrix::zeros(n, n);
        for (i, p) in self.probs().iter().enumerate() {
            h += self.component_hessian(i, x) * *p;
        }
        h
    }

    /// `(H, M)` at `x` where `H = Σ p_i H_i` and `M = Σ p_i H_i H H_i − H³`.
    fn curvature_moments(&self, x: &Vector) -> (Matrix, Matrix) {
        let hessians: Vec<Matrix> = (0..self.n_components())
            .map(|i| self.component_hessian(i, x))
            .collect();
        let n = self.dim();
        let mut h = Matrix::zeros(n, n);
        for (hi, p) in hessians.iter().zip(self.probs()) {
            h += hi * *p;
        }
        let mut m = -(&h * &h * &h);
        for (hi, p) in hessians.iter().zip(self.probs()) {
            m += (hi * &h * hi) * *p;
        }
        (h, m)
    }

    /// `H` at `x` together with the extreme generalized eigenvalues of
    /// `(M, H)` over the positive eigenspace of `H`; `None` if that space is
    /// empty.
    fn curvature_extremes(&self, x: &Vector, rank_tol: f64) -> (Matrix, Option<(f64, f64)>) {
        let (h, m) = self.curvature_moments(x);
        let eig = SortedEigen::new(&h);
        let extremes = whitened_extremes_with(&m, &eig, rank_tol);
        (h, extremes)
    }
}
