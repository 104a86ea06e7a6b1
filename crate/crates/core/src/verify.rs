//! Acceptance checks: each criterion runs end to end and reports one line.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::experiments::{
    minimizer_geometries, run_cells, run_plan, summarize_results, Cell, CellResult, ExperimentPlan, RateLevel,
    RateSpec, SummaryRow, DIVERGENCE_R2, DIVERGENCE_RATE, ST_TABLE_KS,
};
use crate::linalg::{whitened_extremes, Matrix, Vector, DEFAULT_RANK_TOL};
use crate::mechanism::{local_geometry, mechanism_thresholds, GeometryOptions, LocalGeometry};
use crate::mixture::Mixture;
use crate::problems::qc::{QcComponent, QC_MODEL_LAYOUT, Sharpness};
use crate::problems::st::StComponent;
use crate::problems::{generate_models, Family, Model};
use crate::quadratic::{expected_geometry, homogeneous_thresholds, StochasticQuadratic};
use crate::sgd::{
    default_window, fit_log_rate, recursion_oracle, rng_from_seed, run, sgd_k_step, RunConfig, RunFactors,
    StepSchedule,
};
use crate::thresholds::BatchSize;
use crate::Result;

pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Seed for generated QC/ST models.
    pub model_seed: u64,
    /// Seed for everything random inside the checks.
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { model_seed: 2024, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    /// Extra lines printed under the summary.
    pub details: Vec<String>,
    pub elapsed: Duration,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "criterion {:>2} {status} {}: {} [{:.2} s]",
            self.id,
            self.name,
            self.summary,
            self.elapsed.as_secs_f64()
        )?;
        for d in &self.details {
            write!(f, "\n    {d}")?;
        }
        Ok(())
    }
}

pub fn run_criterion(id: u8, opts: &VerifyOptions) -> Result<CheckResult> {
    let start = Instant::now();
    let (name, outcome): (&'static str, Result<Outcome>) = match id {
        1 => ("GD classical thresholds", gd_classical(opts)),
        2 => ("worked example on x^2", worked_example()),
        3 => ("recursion oracle", recursion(opts)),
        4 => ("homogeneous threshold sharpness", homogeneous_sharpness(opts)),
        5 => ("Jensen and positivity", jensen_positivity(opts)),
        6 => ("mechanism vs quadratic thresholds", cross_module(opts)),
        7 => ("finite differences and C2 ring", finite_differences(opts)),
        8 => ("threshold table orderings", table_orderings(opts)),
        9 => ("divergence and stability figures", figures(opts)),
        10 => ("batch-size prediction", batch_size_prediction(opts)),
        _ => return Err(crate::Error::InvalidArgument(format!("no criterion {id}; expected 1 to 10"))),
    };
    let mut o = outcome?;
    let elapsed = start.elapsed();
    if let Some(limit) = o.time_limit {
        if elapsed > limit {
            o.passed = false;
            o.details.push(format!("runtime {:.2} s exceeds {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()));
        }
    }
    Ok(CheckResult { id, name, passed: o.passed, summary: o.summary, details: o.details, elapsed })
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    CRITERIA.map(|id| run_criterion(id, opts)).collect()
}

struct Outcome {
    passed: bool,
    summary: String,
    details: Vec<String>,
    time_limit: Option<Duration>,
}

impl Outcome {
    fn new(passed: bool, summary: String) -> Self {
        Self { passed, summary, details: Vec::new(), time_limit: None }
    }

    fn within(mut self, secs: u64) -> Self {
        self.time_limit = Some(Duration::from_secs(secs));
        self
    }
}

/// Shape of a random quadratic mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureKind {
    /// Every component minimized at one common point.
    Homogeneous,
    /// Independent shifts, so the minimizer is generically inhomogeneous.
    Inhomogeneous,
    /// One `Q` shared by every component, independent shifts.
    Degenerate,
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `V diag(λ) V'` with `V` a random `p × rank` orthonormal frame and
/// eigenvalues drawn from `[0.2, 2]`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, p: usize, rank: usize) -> Matrix {
    let v = random_matrix(rng, p, p).qr().q().columns(0, rank).into_owned();
    let d = Matrix::from_diagonal(&Vector::from_fn(rank, |_, _| rng.random_range(0.2..=2.0)));
    &v * d * v.transpose()
}

/// Orthogonal `V diag(λ) V'` with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, p: usize, lo: f64, hi: f64) -> Matrix {
    let v = random_matrix(rng, p, p).qr().q();
    let d = Matrix::from_diagonal(&Vector::from_fn(p, |_, _| rng.random_range(lo..=hi)));
    &v * d * v.transpose()
}

/// Random mixture of `n` components in dimension `p`. Component ranks are
/// drawn from `1..=p`, shifts lie in the range of each `Q_i`, and weights
/// are random and positive.
pub fn random_mixture<R: Rng + ?Sized>(rng: &mut R, p: usize, n: usize, kind: MixtureKind) -> Result<StochasticQuadratic> {
    let anchor = random_vector(rng, p);
    let shared = random_psd(rng, p, p);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let parts = raw
        .into_iter()
        .map(|w| {
            let q = match kind {
                MixtureKind::Degenerate => shared.clone(),
                _ => {
                    let rank = rng.random_range(1..=p);
                    random_psd(rng, p, rank)
                }
            };
            let r = match kind {
                MixtureKind::Homogeneous => -(&q * &anchor),
                _ => &q * random_vector(rng, p),
            };
            (q, r, w / total)
        })
        .collect();
    StochasticQuadratic::new(parts)
}

fn fraction(num: usize, den: usize) -> String {
    format!("{num}/{den}")
}

fn gd_classical(opts: &VerifyOptions) -> Result<Outcome> {
    let mut rng = rng_from_seed(opts.seed ^ 0x01);
    let instances = 100;
    let iterations = 30;
    let (mut contract_ok, mut diverge_ok) = (0, 0);
    let mut worst_rate = f64::INFINITY;
    for i in 0..instances {
        let p = rng.random_range(1..=10);
        let a = random_spd(&mut rng, p, 0.5, 5.0);
        let theta_star = random_vector(&mut rng, p);
        let problem = StochasticQuadratic::new(vec![(a.clone(), -(&a * &theta_star), 1.0)])?;
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL)?;
        let (lmax, lmin) = (geom.lambdas[0], *geom.lambdas.last().unwrap());
        let theta0 = &theta_star + random_vector(&mut rng, p);
        let cfg = |c: f64| RunConfig {
            factors: RunFactors {
                model: format!("spd-{i}"),
                k: BatchSize::Infinite,
                schedule: StepSchedule::constant(c),
                init_radius: 1.0,
                reference: theta_star.iter().copied().collect(),
                run: i,
                seed: 0,
            },
            theta0: theta0.clone(),
            iterations,
            bounds: None,
            alt_reference: None,
            keep_iterates: true,
        };

        let mut rec = run(&problem, &cfg(0.9 * 2.0 / lmax))?;
        rec.attach_errors(&geom);
        let errors = rec.errors.as_ref().unwrap();
        if errors.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0) {
            contract_ok += 1;
        }

        let rec = run(&problem, &cfg(1.1 * 2.0 / lmin))?;
        if let Ok(fit) = fit_log_rate(&rec.distances, default_window(rec.distances.len())) {
            worst_rate = worst_rate.min(fit.rate);
            if fit.rate > 1.0 && rec.final_distance() > rec.initial_distance() {
                diverge_ok += 1;
            }
        }
    }
    let passed = contract_ok == instances && diverge_ok == instances;
    Ok(Outcome::new(
        passed,
        format!(
            "C=0.9(2/lmax) contracts monotonically {}; C=1.1(2/lmin) diverges {} (smallest fitted rate {worst_rate:.3})",
            fraction(contract_ok, instances),
            fraction(diverge_ok, instances)
        ),
    )
    .within(1))
}

fn worked_example() -> Result<Outcome> {
    let problem = StochasticQuadratic::scalar(&[(2.0, 0.0, 1.0)])?;
    let cfg = |iterations| RunConfig {
        factors: RunFactors {
            model: "x^2".into(),
            k: BatchSize::Infinite,
            schedule: StepSchedule::constant(1.1),
            init_radius: 1.0,
            reference: vec![0.0],
            run: 0,
            seed: 0,
        },
        theta0: Vector::from_element(1, -1.0),
        iterations,
        bounds: None,
        alt_reference: None,
        keep_iterates: true,
    };
    let rec = run(&problem, &cfg(2))?;
    let xs: Vec<f64> = rec.iterates.iter().map(|t| t[0]).collect();
    let expected = [-1.0, 1.2, -1.44];
    let iterates_ok = xs.iter().zip(expected).all(|(x, e)| (x - e).abs() <= 1e-12);
    let long = run(&problem, &cfg(20))?;
    let fit = fit_log_rate(&long.distances, default_window(long.distances.len()))?;
    let rate_ok = (fit.rate - 1.2).abs() <= 1e-9;
    Ok(Outcome::new(
        iterates_ok && rate_ok,
        format!("iterates {xs:?}, fitted rate {:.12}", fit.rate),
    ))
}

fn recursion(opts: &VerifyOptions) -> Result<Outcome> {
    let mut rng = rng_from_seed(opts.seed ^ 0x03);
    let tuples = 200;
    let mut worst = 0.0f64;
    let mut ok = 0;
    for i in 0..tuples {
        let p = rng.random_range(1..=3);
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let kind = if i % 2 == 0 { MixtureKind::Homogeneous } else { MixtureKind::Inhomogeneous };
        let problem = random_mixture(&mut rng, p, n, kind)?;
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL)?;
        let theta = random_vector(&mut rng, p);
        let c = rng.random_range(0.05..1.5);
        let check = recursion_oracle(&problem, &geom, &theta, c, k)?;
        let err = (check.formula - check.enumeration).abs() / check.enumeration.abs().max(1.0);
        worst = worst.max(err);
        if err <= 1e-12 {
            ok += 1;
        }
    }
    Ok(Outcome::new(
        ok == tuples,
        format!("formula matches enumeration on {} tuples, worst relative gap {worst:.1e}", fraction(ok, tuples)),
    )
    .within(10))
}

fn homogeneous_sharpness(opts: &VerifyOptions) -> Result<Outcome> {
    let problem = StochasticQuadratic::scalar(&[(1.0, 0.0, 0.5), (3.0, 0.0, 0.5)])?;
    let geom = expected_geometry(&problem, DEFAULT_RANK_TOL)?;
    let report = homogeneous_thresholds(&geom, BatchSize::Finite(1))?;
    let bounds_ok = (report.conv_ub - 0.8).abs() < 1e-12 && (report.div_lb - 0.8).abs() < 1e-12;

    let steps = 100_000;
    let mut rng = rng_from_seed(opts.seed ^ 0x04);
    let mut line = |c: f64| -> Result<(f64, f64)> {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..steps {
            let theta = Vector::from_element(1, rng.random_range(0.1..1.0) * if rng.random() { 1.0 } else { -1.0 });
            let i = usize::from(rng.random::<bool>());
            let next = sgd_k_step(&theta, &[problem.component_grad(i, &theta)], c, None)?;
            let ratio = geom.error(&next) / geom.error(&theta);
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        let mean = sum / steps as f64;
        let se = ((sum_sq / steps as f64 - mean * mean) / (steps as f64 - 1.0)).sqrt();
        Ok((mean, se))
    };
    let (lo_mean, lo_se) = line(0.9 * report.conv_ub)?;
    let (hi_mean, hi_se) = line(1.1 * report.div_lb)?;
    let lo_z = (1.0 - lo_mean) / lo_se;
    let hi_z = (hi_mean - 1.0) / hi_se;
    Ok(Outcome::new(
        bounds_ok && lo_z >= 3.0 && hi_z >= 3.0,
        format!(
            "conv_ub={:.6} div_lb={:.6}; C=0.72 mean ratio {lo_mean:.4} ({lo_z:.0} SE below 1); C=0.88 mean ratio {hi_mean:.4} ({hi_z:.0} SE above 1)",
            report.conv_ub, report.div_lb
        ),
    ))
}

fn jensen_positivity(opts: &VerifyOptions) -> Result<Outcome> {
    let mut rng = rng_from_seed(opts.seed ^ 0x05);
    let total = 1000;
    let (mut psd_ok, mut iff_ok) = (0, 0);
    let mut min_eig = f64::INFINITY;
    for i in 0..total {
        let p = rng.random_range(1..=4);
        let n = rng.random_range(2..=5);
        let kind = match i % 3 {
            0 => MixtureKind::Homogeneous,
            1 => MixtureKind::Inhomogeneous,
            _ => MixtureKind::Degenerate,
        };
        let problem = random_mixture(&mut rng, p, n, kind)?;
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL)?;
        let (lo, _) = whitened_extremes(&geom.big_m, &geom.eq, DEFAULT_RANK_TOL).unwrap_or((0.0, 0.0));
        min_eig = min_eig.min(lo);
        if lo >= -1e-9 {
            psd_ok += 1;
        }
        let scale = geom.lambdas[0] * geom.lambdas[0];
        let varies = problem.components().iter().any(|c| (&c.q - &geom.eq).amax() > 1e-12 * (1.0 + geom.eq.amax()));
        let positive = geom.s_q > 1e-9 * scale;
        if positive == varies {
            iff_ok += 1;
        }
    }
    Ok(Outcome::new(
        psd_ok == total && iff_ok == total,
        format!(
            "B >= -1e-9 on {} (smallest eigenvalue {min_eig:.1e}); s_q > 0 iff Q varies on {}",
            fraction(psd_ok, total),
            fraction(iff_ok, total)
        ),
    ))
}

fn cross_module(opts: &VerifyOptions) -> Result<Outcome> {
    let mut rng = rng_from_seed(opts.seed ^ 0x06);
    let mixtures = 10;
    let ks = [BatchSize::Finite(1), BatchSize::Finite(10), BatchSize::Finite(100), BatchSize::Infinite];
    let mut worst = 0.0f64;
    for i in 0..mixtures {
        let problem = random_mixture(&mut rng, 3, 4, MixtureKind::Homogeneous)?;
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL)?;
        let local = local_geometry(
            &problem,
            &geom.theta_star,
            &GeometryOptions { n_samples: 10_000, seed: opts.seed.wrapping_add(i), ..Default::default() },
        )?;
        for &k in &ks {
            let a = homogeneous_thresholds(&geom, k)?;
            let b = mechanism_thresholds(&local, k)?;
            for (x, y) in [(a.conv_ub, b.conv_ub), (a.div_lb, b.div_lb)] {
                worst = worst.max((x - y).abs() / x.abs());
            }
        }
    }
    Ok(Outcome::new(
        worst <= 0.01,
        format!("{mixtures} mixtures x {} batch sizes, worst relative gap {worst:.1e} (n_samples = 1e4)", ks.len()),
    ))
}

fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

fn fd_hessian(g: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let n = x.len();
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        out.set_column(j, &((g(&xp) - g(&xm)) / (2.0 * h)));
    }
    out
}

fn relative_gap(fd: &[f64], exact: &[f64]) -> f64 {
    let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    fd.iter().zip(exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Component used for the QC derivative checks; both branches and the
/// ring are reachable in `[−3, 3]²`.
pub fn qc_probe_component() -> QcComponent {
    QcComponent { q1: 0.3, q2: 0.2, q3: -1.5, c1: 1.0, c2: 0.5, c3: 2.0, c4: 0.1 }
}

fn finite_differences(opts: &VerifyOptions) -> Result<Outcome> {
    const H: f64 = 1e-5;
    const MARGIN: f64 = 1e-3;
    let mut rng = rng_from_seed(opts.seed ^ 0x07);
    let points = 100;

    let comp = qc_probe_component();
    let (mut qc_ok, mut qc_worst, mut ring, mut quad) = (0, 0.0f64, 0, 0);
    let mut accepted = 0;
    while accepted < points {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        let r = x.norm();
        let gap = (comp.quad_eval(&x).value - comp.circle_eval(&x).0.value).abs();
        if (r - comp.c2).abs() < MARGIN || (r - comp.c3).abs() < MARGIN || gap < MARGIN {
            continue;
        }
        accepted += 1;
        let (e, branch) = comp.eval_with_branch(&x);
        match branch {
            crate::problems::qc::Branch::Quadratic => quad += 1,
            crate::problems::qc::Branch::CircleRing => ring += 1,
            _ => {}
        }
        let g = fd_gradient(|y| comp.eval(y).value, &x, H);
        let hm = fd_hessian(|y| comp.eval(y).grad, &x, H);
        let err = relative_gap(g.as_slice(), e.grad.as_slice()).max(relative_gap(hm.as_slice(), e.hess.as_slice()));
        qc_worst = qc_worst.max(err);
        if err <= 1e-5 {
            qc_ok += 1;
        }
    }

    let p = 4;
    let st = StComponent {
        coeffs: (0..p)
            .map(|_| [rng.random_range(0.5..1.5), rng.random_range(-20.0..-10.0), rng.random_range(0.0..8.0)])
            .collect(),
    };
    let (mut st_ok, mut st_worst) = (0, 0.0f64);
    for _ in 0..points {
        let x = Vector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
        let (_, grad, hess) = crate::problems::st::st_eval_grad_hess(&st, &x);
        let g = fd_gradient(|y| st.value(y), &x, H);
        let hm = fd_hessian(|y| st.grad(y), &x, H);
        let err = relative_gap(g.as_slice(), grad.as_slice()).max(relative_gap(hm.as_slice(), hess.as_slice()));
        st_worst = st_worst.max(err);
        if err <= 1e-5 {
            st_ok += 1;
        }
    }

    // One-sided difference quotients of the gradient and the branch Hessians
    // on either side of each ring boundary.
    let delta = 1e-6;
    let angles = 16;
    let (mut c2_ok, mut c2_worst) = (0, 0.0f64);
    for radius in [comp.c2, comp.c3] {
        for a in 0..angles {
            let theta = std::f64::consts::TAU * a as f64 / angles as f64;
            let u = Vector::from_vec(vec![theta.cos(), theta.sin()]);
            let at = |s: f64| comp.circle_eval(&(&u * (radius + s))).0;
            let inner = (at(0.0).grad - at(-delta).grad) / delta;
            let outer = (at(delta).grad - at(0.0).grad) / delta;
            let hess_gap = relative_gap(at(delta).hess.as_slice(), at(-delta).hess.as_slice());
            let err = relative_gap(inner.as_slice(), outer.as_slice()).max(hess_gap);
            c2_worst = c2_worst.max(err);
            if err <= 1e-4 {
                c2_ok += 1;
            }
        }
    }

    let mut out = Outcome::new(
        qc_ok == points && st_ok == points && c2_ok == 2 * angles,
        format!(
            "QC {} (worst {qc_worst:.1e}), ST {} (worst {st_worst:.1e}), ring boundaries {} (worst {c2_worst:.1e})",
            fraction(qc_ok, points),
            fraction(st_ok, points),
            fraction(c2_ok, 2 * angles)
        ),
    );
    out.details.push(format!("QC points: {quad} on the quadratic branch, {ring} in the ring"));
    Ok(out)
}

fn qc_table_ks() -> Vec<BatchSize> {
    [1, 2, 5, 10, 20, 50, 100, 1_000, 10_000, 1_000_000]
        .map(BatchSize::Finite)
        .into_iter()
        .chain([BatchSize::Infinite])
        .collect()
}

fn st_table_ks() -> Vec<BatchSize> {
    ST_TABLE_KS.map(BatchSize::Finite).into_iter().chain([BatchSize::Infinite]).collect()
}

/// Both minimizer geometries of every model, failing on the first error.
fn geometry_pairs(models: &[Model], opts: &GeometryOptions) -> Result<Vec<(LocalGeometry, LocalGeometry)>> {
    minimizer_geometries(models, opts)
        .into_iter()
        .map(|g| {
            let mut it = g.into_iter();
            match (it.next(), it.next()) {
                (Some(a), Some(b)) => Ok((a?, b?)),
                _ => Err(crate::Error::InvalidArgument("model without two minimizers".into())),
            }
        })
        .collect()
}

fn threshold_columns(geom: &LocalGeometry, ks: &[BatchSize]) -> Result<Vec<(f64, f64)>> {
    ks.iter()
        .map(|&k| mechanism_thresholds(geom, k).map(|r| (r.conv_ub, r.div_lb)))
        .collect()
}

fn nondecreasing(xs: impl Iterator<Item = f64>) -> bool {
    let xs: Vec<f64> = xs.collect();
    xs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12))
}

fn table_orderings(opts: &VerifyOptions) -> Result<Outcome> {
    let geometry = GeometryOptions::default();
    let mut details = Vec::new();
    let mut passed = true;

    let qc = generate_models(Family::Qc, opts.model_seed)?;
    let ks = qc_table_ks();
    let mut cols: Vec<[Vec<(f64, f64)>; 2]> = Vec::new();
    for (circ, quad) in geometry_pairs(&qc, &geometry)? {
        cols.push([threshold_columns(&circ, &ks)?, threshold_columns(&quad, &ks)?]);
    }
    let mut monotone = 0;
    for c in cols.iter().flatten() {
        if nondecreasing(c.iter().map(|r| r.0)) && nondecreasing(c.iter().map(|r| r.1)) {
            monotone += 1;
        }
    }
    let mut flat_sharp = (0, 0);
    for basin in 0..2 {
        let sharpness = |m: usize| if basin == 0 { QC_MODEL_LAYOUT[m].0 } else { QC_MODEL_LAYOUT[m].1 };
        for f in (0..qc.len()).filter(|&m| sharpness(m) == Sharpness::Flat) {
            for s in (0..qc.len()).filter(|&m| sharpness(m) == Sharpness::Sharp) {
                flat_sharp.1 += 1;
                if (0..ks.len()).all(|i| cols[f][basin][i].1 > cols[s][basin][i].1) {
                    flat_sharp.0 += 1;
                }
            }
        }
    }
    let qc_ok = monotone == 2 * qc.len() && flat_sharp.0 == flat_sharp.1;
    passed &= qc_ok;
    details.push(format!(
        "QC: thresholds nondecreasing in k for {} geometries; flat-model div_lb > sharp-model div_lb at every k for {} basin pairs",
        fraction(monotone, 2 * qc.len()),
        fraction(flat_sharp.0, flat_sharp.1)
    ));

    let st = generate_models(Family::St, opts.model_seed)?;
    let ks = st_table_ks();
    let (mut st_mono, mut st_flat) = (0, 0);
    for (model, (flat, sharp)) in st.iter().zip(geometry_pairs(&st, &geometry)?) {
        let flat = threshold_columns(&flat, &ks)?;
        let sharp = threshold_columns(&sharp, &ks)?;
        for c in [&flat, &sharp] {
            if nondecreasing(c.iter().map(|r| r.0)) && nondecreasing(c.iter().map(|r| r.1)) {
                st_mono += 1;
            }
        }
        if flat.iter().zip(&sharp).all(|(f, s)| f.1 > s.1) {
            st_flat += 1;
        }
        let row = |c: &[(f64, f64)]| c.iter().map(|r| format!("{:.4e}", r.1)).collect::<Vec<_>>().join(" ");
        details.push(format!("{} div_lb at k=1,100,200,350,500,inf: flat {} | sharp {}", model.name(), row(&flat), row(&sharp)));
    }
    let st_ok = st_mono == 2 * st.len() && st_flat == st.len();
    passed &= st_ok;
    details.push(format!(
        "ST: thresholds nondecreasing in k for {} geometries; flat div_lb > sharp div_lb at every k in {} models",
        fraction(st_mono, 2 * st.len()),
        fraction(st_flat, st.len())
    ));

    let summary = format!("QC {}, ST {}", if qc_ok { "ok" } else { "violated" }, if st_ok { "ok" } else { "violated" });
    Ok(Outcome { passed, summary, details, time_limit: None })
}

fn figure_plans(opts: &VerifyOptions) -> [ExperimentPlan; 2] {
    let rates = RateSpec::Relative(vec![RateLevel::Div(1.5), RateLevel::Conv(0.5)]);
    let mut qc = ExperimentPlan::default_qc(opts.model_seed, opts.seed);
    qc.rates = rates.clone();
    let mut st = ExperimentPlan::default_st(opts.model_seed, opts.seed);
    st.rates = rates;
    [qc, st]
}

struct Tally {
    cells: usize,
    passing: usize,
    runs: usize,
    hits: usize,
}

impl Tally {
    fn new() -> Self {
        Self { cells: 0, passing: 0, runs: 0, hits: 0 }
    }

    fn add(&mut self, runs: usize, hits: usize, want_all: bool) {
        self.cells += 1;
        self.runs += runs;
        self.hits += hits;
        if (want_all && hits == runs) || (!want_all && hits == 0) {
            self.passing += 1;
        }
    }

    fn ok(&self) -> bool {
        self.cells > 0 && self.cells == self.passing
    }
}

fn figures(opts: &VerifyOptions) -> Result<Outcome> {
    let mut passed = true;
    let mut details = Vec::new();
    for plan in figure_plans(opts) {
        let models = plan.load_models()?;
        let results = run_plan(&plan, &models)?;
        let summary = summarize_results(&results)?;
        let family = plan.family;
        let mut div: Vec<(String, Tally)> = Vec::new();
        let mut stable = Tally::new();
        let mut far = (0, 0);
        for (res, row) in results.iter().zip(&summary) {
            if res.cell.rate_label == "1.5l" {
                let tally = match div.iter_mut().find(|(m, _)| *m == res.cell.minimizer) {
                    Some((_, t)) => t,
                    None => {
                        div.push((res.cell.minimizer.clone(), Tally::new()));
                        &mut div.last_mut().unwrap().1
                    }
                };
                tally.add(row.runs, row.diverged, true);
                far.1 += row.runs;
                far.0 += res.records.iter().filter(|r| r.final_distance() > 10.0 * r.initial_distance()).count();
            } else {
                match family {
                    Family::Qc => stable.add(row.runs, row.diverged, false),
                    Family::St => stable.add(row.runs, row.bounded, true),
                }
            }
        }
        for (minimizer, t) in &div {
            passed &= t.ok();
            details.push(format!(
                "{family} {minimizer} at 1.5 div_lb: {} cells with every run diverging; {} runs diverged",
                fraction(t.passing, t.cells),
                fraction(t.hits, t.runs)
            ));
        }
        details.push(format!(
            "{family} at 1.5 div_lb: {} runs end more than 10x farther than they started",
            fraction(far.0, far.1)
        ));
        passed &= stable.ok();
        let what = match family {
            Family::Qc => "with no run diverging",
            Family::St => "with every run bounded (not diverged, box never reached)",
        };
        details.push(format!(
            "{family} at 0.5 conv_ub: {} cells {what}; {} runs {}",
            fraction(stable.passing, stable.cells),
            fraction(stable.hits, stable.runs),
            if family == Family::Qc { "diverged" } else { "bounded" }
        ));
        if family == Family::St {
            details.extend(st_escape_breakdown(&results));
            details.extend(st_stability_breakdown(&results, &summary));
        }
    }
    Ok(Outcome { passed, summary: "100 runs x 20 iterations per cell".into(), details, time_limit: Some(Duration::from_secs(300)) })
}

/// Informational: the same divergence test restricted to iterations before
/// the first box contact, grouped by batch size.
fn st_escape_breakdown(results: &[CellResult]) -> Vec<String> {
    let mut by_k: Vec<(String, usize, usize)> = Vec::new();
    for res in results.iter().filter(|r| r.cell.rate_label == "1.5l") {
        let hits = res
            .records
            .iter()
            .filter(|rec| {
                let end = rec.on_box.iter().position(|&b| b).unwrap_or(rec.distances.len());
                end >= 5
                    && fit_log_rate(&rec.distances, 2..end).is_ok_and(|f| f.rate > DIVERGENCE_RATE && f.r2 > DIVERGENCE_R2)
            })
            .count();
        let k = res.cell.k.to_string();
        match by_k.iter_mut().find(|(key, _, _)| *key == k) {
            Some(e) => {
                e.1 += hits;
                e.2 += res.records.len();
            }
            None => by_k.push((k, hits, res.records.len())),
        }
    }
    by_k.into_iter()
        .map(|(k, h, n)| format!("  st 1.5 div_lb, k={k}: {} runs grow exponentially before first touching the box", fraction(h, n)))
        .collect()
}

fn st_stability_breakdown(results: &[CellResult], summary: &[SummaryRow]) -> Vec<String> {
    let mut by_k: Vec<(String, usize, usize)> = Vec::new();
    for (res, row) in results.iter().zip(summary) {
        if res.cell.rate_label != "0.5u" {
            continue;
        }
        let k = res.cell.k.to_string();
        match by_k.iter_mut().find(|(key, _, _)| *key == k) {
            Some(e) => {
                e.1 += row.bounded;
                e.2 += row.runs;
            }
            None => by_k.push((k, row.bounded, row.runs)),
        }
    }
    by_k.into_iter().map(|(k, b, n)| format!("  st 0.5 conv_ub, k={k}: {} runs bounded", fraction(b, n))).collect()
}

fn batch_size_prediction(opts: &VerifyOptions) -> Result<Outcome> {
    let models = generate_models(Family::Qc, opts.model_seed)?;
    let geoms = geometry_pairs(&models, &GeometryOptions::default())?;
    let mut cells = Vec::new();
    let mut rates = Vec::new();
    for (mi, (model, (_, quad))) in models.iter().zip(&geoms).enumerate() {
        let d1 = mechanism_thresholds(quad, BatchSize::Finite(1))?.div_lb;
        let dinf = mechanism_thresholds(quad, BatchSize::Infinite)?.div_lb;
        let rate = 0.5 * (d1 + dinf);
        rates.push((d1, dinf, rate));
        for k in [BatchSize::Finite(1), BatchSize::Infinite] {
            cells.push(Cell::new(model, mi, "quad", k, rate, 1e-8)?);
        }
    }
    let results = run_cells(&cells, &models, 100, 20, opts.seed)?;
    let summary = summarize_results(&results)?;
    let mut details = Vec::new();
    let mut passed = false;
    for (i, pair) in summary.chunks(2).enumerate() {
        let (sgd1, gd) = (&pair[0], &pair[1]);
        let (d1, dinf, rate) = rates[i];
        let ok = gd.diverged == 0 && sgd1.diverged > gd.diverged;
        if i == 0 {
            passed = ok;
        }
        details.push(format!(
            "{}: div_lb(1)={d1:.4e} div_lb(inf)={dinf:.4e} rate={rate:.4e}: SGD-1 diverged {}, GD diverged {}{}",
            sgd1.model,
            fraction(sgd1.diverged, sgd1.runs),
            fraction(gd.diverged, gd.runs),
            if i == 0 { " (decides the criterion)" } else { "" }
        ));
    }
    Ok(Outcome { passed, summary: "rate midway between div_lb(1) and div_lb(inf) at the quadratic basin".into(), details, time_limit: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SortedEigen;

    #[test]
    fn random_mixtures_have_the_requested_shape() {
        let mut rng = rng_from_seed(3);
        let h = random_mixture(&mut rng, 3, 4, MixtureKind::Homogeneous).unwrap();
        assert!(expected_geometry(&h, DEFAULT_RANK_TOL).unwrap().homogeneous);
        let d = random_mixture(&mut rng, 2, 3, MixtureKind::Degenerate).unwrap();
        let g = expected_geometry(&d, DEFAULT_RANK_TOL).unwrap();
        assert!(g.s_q <= 1e-12 && g.t_q <= 1e-12);
        let spd = random_spd(&mut rng, 5, 0.5, 5.0);
        let eig = SortedEigen::new(&spd);
        assert!(eig.values[0] <= 5.0 + 1e-9 && eig.values[4] >= 0.5 - 1e-9);
    }

    #[test]
    fn quick_criteria_pass() {
        let opts = VerifyOptions::default();
        for id in [2, 4, 6] {
            let r = run_criterion(id, &opts).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn unknown_criterion_rejected() {
        assert!(run_criterion(11, &VerifyOptions::default()).is_err());
    }
}
