//! Local geometry of a nonconvex mixture around a candidate minimizer and
//! the resulting SGD-k thresholds.
//!
//! Around `θ*` we average over the ball `B(θ*, ε)`, by Monte Carlo:
//!
//! * the expected Hessian `∇²F`, whose nonzero eigenvalues give `λ1 ≥ … ≥ λm`;
//! * per point, the extreme values of `v'M(θ)v / v'∇²F(θ)v` with
//!   `M(θ) = E[∇²f ∇²F ∇²f] − (∇²F)³`. The mean of the per-point minima,
//!   clamped at zero, is `s_f`; the mean of the per-point maxima is `t_f`.
//!
//! `t_f` is the supremum analogue of `s_f` (as `t_Q` is of `s_Q`) and feeds
//! the convergence bound. At points where `∇²F` is indefinite the ratio is
//! taken over its positive eigenspace; points with no positive curvature are
//! "flat" and contribute zero to both averages.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SortedEigen, Vector, DEFAULT_RANK_TOL};
use crate::mixture::Mixture;
use crate::sgd::rng_from_seed;
use crate::thresholds::{homogeneous_report, BatchSize, Curvature, Regime, ThresholdReport};

pub const DEFAULT_EPSILON: f64 = 2e-2;
pub const DEFAULT_SAMPLES: usize = 1000;

/// `n` points uniform in the closed ball of radius `epsilon` about `center`.
pub fn sample_ball(center: &Vector, epsilon: f64, n: usize, seed: u64) -> Result<Vec<Vector>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("ball radius {epsilon} must be positive")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| center + ball_offset(&mut rng, center.len(), epsilon)).collect())
}

/// Uniform point in the ball of radius `epsilon` about the origin.
pub fn ball_offset<R: Rng + ?Sized>(rng: &mut R, p: usize, epsilon: f64) -> Vector {
    let dir = loop {
        let v = Vector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            break v / norm;
        }
    };
    let u: f64 = rng.random();
    dir * (epsilon * u.powf(1.0 / p as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGeometry {
    pub center: Vector,
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub avg_hessian: Matrix,
    /// Nonzero eigenvalues of `avg_hessian`, descending.
    pub lambdas: Vec<f64>,
    pub s_f: f64,
    pub t_f: f64,
    /// Sample points at which the expected Hessian had no positive eigenvalue.
    pub flat_samples: usize,
}

impl LocalGeometry {
    pub fn curvature(&self) -> Curvature<'_> {
        Curvature { lambdas: &self.lambdas, s: self.s_f, t: self.t_f }
    }

    pub fn summary(&self) -> GeometrySummary {
        GeometrySummary {
            center: self.center.iter().copied().collect(),
            epsilon: self.epsilon,
            n: self.n_samples,
            seed: self.seed,
            lambdas: self.lambdas.clone(),
            s_f: self.s_f,
            t_f: self.t_f,
            flat_samples: self.flat_samples,
        }
    }
}

/// JSON view of a [`LocalGeometry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub center: Vec<f64>,
    pub epsilon: f64,
    pub n: usize,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub s_f: f64,
    pub t_f: f64,
    pub flat_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryOptions {
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, n_samples: DEFAULT_SAMPLES, seed: 0, rank_tol: DEFAULT_RANK_TOL }
    }
}

pub fn local_geometry<M: Mixture + ?Sized>(mixture: &M, center: &Vector, opts: &GeometryOptions) -> Result<LocalGeometry> {
    if center.len() != mixture.dim() {
        return Err(Error::DimensionMismatch { expected: mixture.dim(), got: center.len() });
    }
    let points = sample_ball(center, opts.epsilon, opts.n_samples, opts.seed)?;

    // Per-point work in parallel; results come back in sample order and are
    // reduced sequentially so the output does not depend on scheduling.
    let per_point: Vec<(Matrix, Option<(f64, f64)>)> = points
        .par_iter()
        .map(|x| mixture.curvature_extremes(x, opts.rank_tol))
        .collect();

    let p = mixture.dim();
    let mut avg = Matrix::zeros(p, p);
    let (mut lo_sum, mut hi_sum, mut flat) = (0.0, 0.0, 0usize);
    for (h, extremes) in &per_point {
        avg += h;
        match extremes {
            Some((lo, hi)) => {
                lo_sum += lo;
                hi_sum += hi;
            }
            None => flat += 1,
        }
    }
    let n = opts.n_samples as f64;
    avg /= n;

    let eig = SortedEigen::new(&avg);
    let m = eig.positive_rank(opts.rank_tol);
    Ok(LocalGeometry {
        center: center.clone(),
        epsilon: opts.epsilon,
        n_samples: opts.n_samples,
        seed: opts.seed,
        avg_hessian: avg,
        lambdas: eig.values[..m].to_vec(),
        s_f: (lo_sum / n).max(0.0),
        t_f: (hi_sum / n).max(0.0),
        flat_samples: flat,
    })
}

/// Divergence bound from `(λ, s_f)` and convergence bound from `(λ1, λm, t_f)`.
pub fn mechanism_thresholds(geom: &LocalGeometry, k: BatchSize) -> Result<ThresholdReport> {
    homogeneous_report(&geom.curvature(), k, Regime::Mechanism)
}

/// Local geometry at each ball radius in `epsilons`, all other options fixed.
pub fn epsilon_sweep<M: Mixture + ?Sized>(
    mixture: &M,
    center: &Vector,
    epsilons: &[f64],
    opts: &GeometryOptions,
) -> Result<Vec<LocalGeometry>> {
    epsilons
        .iter()
        .map(|&epsilon| local_geometry(mixture, center, &GeometryOptions { epsilon, ..*opts }))
        .collect()
}
