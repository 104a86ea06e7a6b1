use sgdk::linalg::{Matrix, Vector, DEFAULT_RANK_TOL};
use sgdk::mechanism::{local_geometry, mechanism_thresholds, sample_ball, GeometryOptions};
use sgdk::mixture::Mixture;
use sgdk::quadratic::{expected_geometry, homogeneous_thresholds};
use sgdk::sgd::{rng_from_seed, run, RunConfig, RunFactors, StepSchedule};
use sgdk::thresholds::BatchSize;
use sgdk::verify::{random_mixture, MixtureKind};

/// Largest gap between the empirical CDF of `xs` and `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// 1% critical value of the one-sample KS statistic.
fn ks_critical(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[test]
fn ball_in_one_dimension_is_uniform() {
    let n = 20_000;
    let center = Vector::from_element(1, 0.7);
    let xs: Vec<f64> = sample_ball(&center, 0.25, n, 3).unwrap().iter().map(|x| x[0]).collect();
    let d = ks_statistic(xs, |x| ((x - 0.45) / 0.5).clamp(0.0, 1.0));
    assert!(d < ks_critical(n), "KS statistic {d}");
}

#[test]
fn ball_radius_in_three_dimensions_has_cubic_cdf() {
    let n = 20_000;
    let center = Vector::from_vec(vec![1.0, -1.0, 2.0]);
    let pts = sample_ball(&center, 2.0, n, 4).unwrap();
    let radii: Vec<f64> = pts.iter().map(|x| (x - &center).norm() / 2.0).collect();
    let d = ks_statistic(radii, |r| r.clamp(0.0, 1.0).powi(3));
    assert!(d < ks_critical(n), "radial KS statistic {d}");
    // The polar angle cosine is uniform on [-1, 1].
    let cosines: Vec<f64> = pts.iter().map(|x| (x - &center).normalize()[2]).collect();
    let d = ks_statistic(cosines, |c| ((c + 1.0) / 2.0).clamp(0.0, 1.0));
    assert!(d < ks_critical(n), "angular KS statistic {d}");
}

#[test]
fn quadratic_mixtures_give_the_same_thresholds_both_ways() {
    let mut rng = rng_from_seed(17);
    for i in 0..10 {
        let problem = random_mixture(&mut rng, 3, 4, MixtureKind::Homogeneous).unwrap();
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL).unwrap();
        let opts = GeometryOptions { n_samples: 10_000, seed: i, ..Default::default() };
        let local = local_geometry(&problem, &geom.theta_star, &opts).unwrap();
        for k in [1, 10, 100].map(BatchSize::Finite).into_iter().chain([BatchSize::Infinite]) {
            let a = homogeneous_thresholds(&geom, k).unwrap();
            let b = mechanism_thresholds(&local, k).unwrap();
            assert!((a.conv_ub - b.conv_ub).abs() <= 0.01 * a.conv_ub, "{k:?}: {} vs {}", a.conv_ub, b.conv_ub);
            assert!((a.div_lb - b.div_lb).abs() <= 0.01 * a.div_lb, "{k:?}: {} vs {}", a.div_lb, b.div_lb);
        }
    }
}

/// Two equiprobable scalar quartics `a x²/2 + b x⁴/4`.
struct Quartics {
    a: [f64; 2],
    b: [f64; 2],
}

impl Mixture for Quartics {
    fn dim(&self) -> usize {
        1
    }
    fn probs(&self) -> &[f64] {
        &[0.5, 0.5]
    }
    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.a[i] * x[0].powi(2) / 2.0 + self.b[i] * x[0].powi(4) / 4.0
    }
    fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        Vector::from_element(1, self.a[i] * x[0] + self.b[i] * x[0].powi(3))
    }
    fn component_hessian(&self, i: usize, x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, self.a[i] + 3.0 * self.b[i] * x[0].powi(2))
    }
}

#[test]
fn ball_averages_match_closed_form_in_one_dimension() {
    let f = Quartics { a: [1.0, 3.0], b: [0.5, 2.0] };
    let eps = 0.5;
    let opts = GeometryOptions { epsilon: eps, n_samples: 100_000, seed: 9, ..Default::default() };
    let local = local_geometry(&f, &Vector::zeros(1), &opts).unwrap();
    // With x uniform on [-ε, ε]: E x² = ε²/3, E x⁴ = ε⁴/5.
    let (m2, m4) = (eps * eps / 3.0, eps.powi(4) / 5.0);
    let lambda = 2.0 + 3.75 * m2;
    // In one dimension the ratio is Var_i h_i(x) = (2 + 4.5 x²)² / 4.
    let s = 1.0 + 4.5 * m2 + 5.0625 * m4;
    assert!((local.lambdas[0] - lambda).abs() <= 0.01 * lambda, "{} vs {lambda}", local.lambdas[0]);
    assert!((local.s_f - s).abs() <= 0.01 * s, "{} vs {s}", local.s_f);
    assert!((local.t_f - s).abs() <= 0.01 * s, "{} vs {s}", local.t_f);
}

#[test]
fn single_steps_around_the_sharp_threshold() {
    // Q ∈ {1, 3} equiprobable: both thresholds equal 0.8 at k = 1, and
    // E[e_1 / e_0] = ((1 − C)² + (1 − 3C)²) / 2 for every start.
    let problem = sgdk::quadratic::StochasticQuadratic::scalar(&[(1.0, 0.0, 0.5), (3.0, 0.0, 0.5)]).unwrap();
    let runs = 40_000;
    for c in [0.72f64, 0.88] {
        let expected = ((1.0 - c).powi(2) + (1.0 - 3.0 * c).powi(2)) / 2.0;
        let ratios: Vec<f64> = (0..runs)
            .map(|i| {
                let cfg = RunConfig {
                    factors: RunFactors {
                        model: "pair".into(),
                        k: BatchSize::Finite(1),
                        schedule: StepSchedule::constant(c),
                        init_radius: 1.0,
                        reference: vec![0.0],
                        run: i,
                        seed: i as u64,
                    },
                    theta0: Vector::from_element(1, 1.0),
                    iterations: 1,
                    bounds: None,
                    alt_reference: None,
                    keep_iterates: false,
                };
                run(&problem, &cfg).unwrap().final_distance().powi(2)
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / runs as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
        let se = (var / runs as f64).sqrt();
        assert!((mean - expected).abs() <= 4.0 * se, "C={c}: mean {mean} vs {expected} (se {se})");
        assert_eq!(mean < 1.0, c < 0.8);
    }
}
