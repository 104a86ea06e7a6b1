//! SGD-k on finite mixtures.
//!
//! One update averages `k` component gradients drawn i.i.d. (with
//! replacement) from the mixture weights:
//!
//! ```text
//! θ_{N+1} = Π_box( θ_N − (C_{N+1}/k) Σ_{j=1..k} ∇f_{i_j}(θ_N) )
//! ```
//!
//! `k = ∞` uses the exact expected gradient, i.e. gradient descent.

use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, Matrix, Vector};
use crate::mixture::Mixture;
use crate::quadratic::{QuadraticGeometry, StochasticQuadratic};
use crate::thresholds::BatchSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    /// `C_N = c0 / N`.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub c0: f64,
}

impl StepSchedule {
    pub fn constant(c0: f64) -> Self {
        Self { kind: ScheduleKind::Constant, c0 }
    }

    pub fn harmonic(c0: f64) -> Self {
        Self { kind: ScheduleKind::Harmonic, c0 }
    }

    /// Step size `C_n` for the update producing iterate `n` (`n ≥ 1`).
    pub fn step(&self, n: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.c0,
            ScheduleKind::Harmonic => self.c0 / n.max(1) as f64,
        }
    }
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^p`.
    pub fn cube(p: usize, lo: f64, hi: f64) -> Self {
        Self { lower: vec![lo; p], upper: vec![hi; p] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut Vector) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((xi, lo), hi)| lo <= xi && xi <= hi)
    }

    /// True when some coordinate sits exactly on a face.
    pub fn on_boundary(&self, x: &Vector) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .any(|((xi, lo), hi)| xi == lo || xi == hi)
    }
}

/// One SGD-k update from explicit gradient samples.
pub fn sgd_k_step(theta: &Vector, grads: &[Vector], c: f64, bounds: Option<&BoxConstraint>) -> Result<Vector> {
    if grads.is_empty() {
        return Err(Error::InvalidBatchSize);
    }
    if !c.is_finite() {
        return Err(Error::InvalidArgument(format!("step size {c} is not finite")));
    }
    let mut sum = Vector::zeros(theta.len());
    for g in grads {
        if g.len() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), got: g.len() });
        }
        sum += g;
    }
    if let Some(coordinate) = sum.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { iteration: 0, coordinate });
    }
    let mut next = theta - sum * (c / grads.len() as f64);
    if let Some(b) = bounds {
        b.project(&mut next);
    }
    Ok(next)
}

/// Seed for one stream derived from a master seed and a path of indices, so a
/// run's randomness does not depend on execution order.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Identifying factors carried along with a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFactors {
    pub model: String,
    pub k: BatchSize,
    pub schedule: StepSchedule,
    pub init_radius: f64,
    pub reference: Vec<f64>,
    pub run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub factors: RunFactors,
    pub theta0: Vector,
    pub iterations: usize,
    pub bounds: Option<BoxConstraint>,
    /// Second point to track distances against, if any.
    pub alt_reference: Option<Vector>,
    /// Store every iterate, not just the distances.
    pub keep_iterates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub factors: RunFactors,
    /// Empty unless the run was configured to keep iterates.
    pub iterates: Vec<Vector>,
    /// Euclidean distance of each iterate to `factors.reference`.
    pub distances: Vec<f64>,
    pub alt_distances: Option<Vec<f64>>,
    /// Whether each iterate sits on a face of the box.
    pub on_box: Vec<bool>,
    /// `(θ_N − θ*)' E[Q] (θ_N − θ*)` once a quadratic geometry is attached.
    pub errors: Option<Vec<f64>>,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn attach_errors(&mut self, geom: &QuadraticGeometry) {
        self.errors = Some(self.iterates.iter().map(|t| geom.error(t)).collect());
    }

    pub fn final_distance(&self) -> f64 {
        *self.distances.last().unwrap_or(&f64::NAN)
    }

    pub fn initial_distance(&self) -> f64 {
        *self.distances.first().unwrap_or(&f64::NAN)
    }
}

/// Runs SGD-k for `cfg.iterations` updates.
pub fn run<M: Mixture + ?Sized>(objective: &M, cfg: &RunConfig) -> Result<RunRecord> {
    let (record, err) = run_partial(objective, cfg);
    match err {
        Some(e) => Err(e),
        None => Ok(record),
    }
}

/// Like [`run`], but keeps the trajectory up to a failure and flags it.
pub fn run_partial<M: Mixture + ?Sized>(objective: &M, cfg: &RunConfig) -> (RunRecord, Option<Error>) {
    let reference = Vector::from_vec(cfg.factors.reference.clone());
    let mut record = RunRecord {
        factors: cfg.factors.clone(),
        iterates: Vec::with_capacity(if cfg.keep_iterates { cfg.iterations + 1 } else { 0 }),
        distances: Vec::with_capacity(cfg.iterations + 1),
        alt_distances: cfg.alt_reference.as_ref().map(|_| Vec::with_capacity(cfg.iterations + 1)),
        on_box: Vec::with_capacity(cfg.iterations + 1),
        errors: None,
        failure: None,
    };
    let fail = |mut record: RunRecord, e: Error| {
        record.failure = Some(e.to_string());
        (record, Some(e))
    };

    let p = objective.dim();
    for (what, len) in [("theta0", cfg.theta0.len()), ("reference", reference.len())] {
        if len != p {
            let e = Error::DimensionMismatch { expected: p, got: len };
            return fail(record, Error::InvalidArgument(format!("{what}: {e}")));
        }
    }
    if cfg.bounds.as_ref().is_some_and(|b| b.dim() != p) {
        return fail(record, Error::DimensionMismatch { expected: p, got: cfg.bounds.as_ref().unwrap().dim() });
    }
    let weights = match WeightedIndex::new(objective.probs()) {
        Ok(w) => w,
        Err(e) => return fail(record, Error::InvalidProblem(format!("mixture weights: {e}"))),
    };
    let mut rng = rng_from_seed(cfg.factors.seed);

    let mut theta = cfg.theta0.clone();
    let push = |record: &mut RunRecord, theta: &Vector| {
        record.distances.push((theta - &reference).norm());
        if let (Some(alt), Some(d)) = (&cfg.alt_reference, record.alt_distances.as_mut()) {
            d.push((theta - alt).norm());
        }
        record.on_box.push(cfg.bounds.as_ref().is_some_and(|b| b.on_boundary(theta)));
        if cfg.keep_iterates {
            record.iterates.push(theta.clone());
        }
    };
    push(&mut record, &theta);

    for n in 1..=cfg.iterations {
        let c = cfg.factors.schedule.step(n);
        let grad = match cfg.factors.k {
            BatchSize::Infinite => objective.expected_grad(&theta),
            BatchSize::Finite(k) => {
                let mut g = Vector::zeros(p);
                for _ in 0..k {
                    let i = weights.sample(&mut rng);
                    objective.add_component_grad(i, &theta, &mut g);
                }
                g / k as f64
            }
        };
        match sgd_k_step(&theta, std::slice::from_ref(&grad), c, cfg.bounds.as_ref()) {
            Ok(next) => theta = next,
            Err(Error::NonFiniteGradient { coordinate, .. }) => {
                return fail(record, Error::NonFiniteGradient { iteration: n, coordinate });
            }
            Err(e) => return fail(record, e),
        }
        push(&mut record, &theta);
    }
    (record, None)
}

/// Both sides of the one-step conditional-expectation identity for `e_{N+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionCheck {
    /// Closed form built from `e_N`, `e_{N,2}`, `e_{N,3}`, `e_{N,M}` and the
    /// inhomogeneity terms.
    pub formula: f64,
    /// Exact expectation over every batch draw.
    pub enumeration: f64,
}

pub const ENUMERATION_BUDGET: u64 = 1_000_000;

/// Evaluates `E[e_{N+1} | θ_N = theta]` for one SGD-k step with step size `c`
/// two ways: the closed-form recursion and brute-force enumeration of all
/// `N_c^k` ordered batches.
pub fn recursion_oracle(
    problem: &StochasticQuadratic,
    geom: &QuadraticGeometry,
    theta: &Vector,
    c: f64,
    k: usize,
) -> Result<RecursionCheck> {
    if k == 0 {
        return Err(Error::InvalidBatchSize);
    }
    let nc = problem.n_components();
    let outcomes = (nc as f64).powi(k as i32);
    if outcomes > ENUMERATION_BUDGET as f64 {
        return Err(Error::EnumerationBudget { outcomes, budget: ENUMERATION_BUDGET });
    }
    Ok(RecursionCheck {
        formula: recursion_formula(problem, geom, theta, c, k),
        enumeration: recursion_enumeration(problem, geom, theta, c, k)?,
    })
}

fn recursion_formula(problem: &StochasticQuadratic, geom: &QuadraticGeometry, theta: &Vector, c: f64, k: usize) -> f64 {
    let a = &geom.eq;
    let d = theta - &geom.theta_star;
    let ad = a * &d;
    let e = d.dot(&ad);
    let e2 = ad.dot(&ad);
    let e3 = ad.dot(&(a * &ad));
    let em = quad_form(&geom.big_m, &d);

    // E[Q E[Q] w] and E[w' E[Q] w] with w = Qθ* + r.
    let p = problem.dim();
    let mut cross = Vector::zeros(p);
    let mut var = 0.0;
    for (comp, &w) in problem.components().iter().zip(problem.probs()) {
        let resid = &comp.q * &geom.theta_star + &comp.r;
        let a_resid: Vector = a * &resid;
        cross.axpy(w, &(&comp.q * &a_resid), 1.0);
        var += w * resid.dot(&a_resid);
    }

    let c2k = c * c / k as f64;
    e - 2.0 * c * e2 + c * c * e3 + c2k * em + 2.0 * c2k * d.dot(&cross) + c2k * var
}

fn recursion_enumeration(
    problem: &StochasticQuadratic,
    geom: &QuadraticGeometry,
    theta: &Vector,
    c: f64,
    k: usize,
) -> Result<f64> {
    let nc = problem.n_components();
    let grads: Vec<Vector> = (0..nc).map(|i| problem.component_grad(i, theta)).collect();
    let probs = problem.probs();
    let mut idx = vec![0usize; k];
    let mut batch: Vec<Vector> = Vec::with_capacity(k);
    let mut total = 0.0;
    loop {
        batch.clear();
        batch.extend(idx.iter().map(|&i| grads[i].clone()));
        let weight: f64 = idx.iter().map(|&i| probs[i]).product();
        let next = sgd_k_step(theta, &batch, c, None)?;
        total += weight * geom.error(&next);

        // odometer increment
        let mut pos = 0;
        loop {
            if pos == k {
                return Ok(total);
            }
            idx[pos] += 1;
            if idx[pos] < nc {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(slope)` of the least-squares line through `(n, ln d_n)`.
    pub rate: f64,
    /// Coefficient of determination of that line (1 for an exact fit,
    /// including a constant trajectory).
    pub r2: f64,
}

/// First iteration used when fitting a divergence rate; skips the transient.
pub const DEFAULT_FIT_START: usize = 2;

/// Iterations `DEFAULT_FIT_START..len`.
pub fn default_window(len: usize) -> Range<usize> {
    DEFAULT_FIT_START.min(len)..len
}

/// Fits `ln d_n ≈ a + n ln(rate)` over `window` (iteration indices).
pub fn fit_log_rate(distances: &[f64], window: Range<usize>) -> Result<RateFit> {
    if window.end > distances.len() {
        return Err(Error::RateFit(format!(
            "window {window:?} exceeds trajectory length {}",
            distances.len()
        )));
    }
    if window.len() < 2 {
        return Err(Error::RateFit(format!("window {window:?} has fewer than two points")));
    }
    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    for n in window {
        let d = distances[n];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::RateFit(format!("distance {d} at iteration {n}")));
        }
        xs.push(n as f64);
        ys.push(d.ln());
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit { rate: slope.exp(), r2 })
}

pub fn fit_divergence_rate(record: &RunRecord, window: Range<usize>) -> Result<RateFit> {
    fit_log_rate(&record.distances, window)
}

/// Iterates of gradient descent on the expected quadratic,
/// `θ_{N+1} = θ* + (I − C E[Q])(θ_N − θ*)`.
pub fn closed_form_gd(geom: &QuadraticGeometry, theta0: &Vector, c: f64, iterations: usize) -> Vec<Vector> {
    let p = theta0.len();
    let step = Matrix::identity(p, p) - &geom.eq * c;
    let mut out = Vec::with_capacity(iterations + 1);
    let mut d = theta0 - &geom.theta_star;
    out.push(theta0.clone());
    for _ in 0..iterations {
        d = &step * d;
        out.push(&geom.theta_star + &d);
    }
    out
}
