use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgdk::linalg::{whitened_extremes, Matrix, Vector, DEFAULT_RANK_TOL};
use sgdk::mixture::Mixture;
use sgdk::quadratic::{expected_geometry, homogeneous_thresholds, inhomogeneous_thresholds, StochasticQuadratic};
use sgdk::thresholds::BatchSize;
use sgdk::verify::{random_mixture, random_vector, MixtureKind};

fn mixture(seed: u64, kind: MixtureKind) -> StochasticQuadratic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=4);
    let n = rng.random_range(2..=5);
    random_mixture(&mut rng, p, n, kind).unwrap()
}

/// `E[Q]` and `M = E[(Q − E[Q]) E[Q] (Q − E[Q])]` summed directly.
fn moments_by_definition(problem: &StochasticQuadratic) -> (Matrix, Matrix) {
    let p = problem.components()[0].q.nrows();
    let probs = problem.probs();
    let mut eq = Matrix::zeros(p, p);
    for (c, w) in problem.components().iter().zip(probs) {
        eq += &c.q * *w;
    }
    let mut m = Matrix::zeros(p, p);
    for (c, w) in problem.components().iter().zip(probs) {
        let d = &c.q - &eq;
        m += (&d * &eq * &d) * *w;
    }
    (eq, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn whitened_fourth_moment_is_psd(seed in any::<u64>(), kind in 0..3usize) {
        let kind = [MixtureKind::Homogeneous, MixtureKind::Inhomogeneous, MixtureKind::Degenerate][kind];
        let problem = mixture(seed, kind);
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL).unwrap();
        let (lo, _) = whitened_extremes(&geom.big_m, &geom.eq, DEFAULT_RANK_TOL).unwrap();
        prop_assert!(lo >= -1e-9, "min eigenvalue {lo}");
        let (_, m) = moments_by_definition(&problem);
        prop_assert!((&m - &geom.big_m).amax() <= 1e-10 * (1.0 + m.amax()));
    }

    #[test]
    fn curvature_pair_vanishes_exactly_when_q_is_constant(seed in any::<u64>(), degenerate in any::<bool>()) {
        let kind = if degenerate { MixtureKind::Degenerate } else { MixtureKind::Inhomogeneous };
        let problem = mixture(seed, kind);
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL).unwrap();
        let scale = geom.lambdas[0] * geom.lambdas[0];
        prop_assert!(geom.s_q >= 0.0 && geom.s_q <= geom.t_q + 1e-12 * scale);
        prop_assert_eq!(geom.t_q > 1e-9 * scale, !degenerate, "t_q = {}", geom.t_q);
        if degenerate {
            prop_assert!(geom.s_q <= 1e-12 * scale, "s_q = {}", geom.s_q);
        }
    }
}

#[test]
fn s_vanishes_when_every_q_agrees_on_one_direction() {
    // Q varies, yet every component acts identically on e1, so s_Q = 0.
    let q1 = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
    let q2 = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
    let zero = Vector::zeros(2);
    let problem = StochasticQuadratic::uniform(vec![(q1, zero.clone()), (q2, zero)]).unwrap();
    let geom = expected_geometry(&problem, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(geom.lambdas, vec![1.0, 1.0]);
    assert_eq!(geom.s_q, 0.0);
    assert!((geom.t_q - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curvature_pair_matches_brute_force_rayleigh(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..=3);
        let problem = random_mixture(&mut rng, p, 3, MixtureKind::Inhomogeneous).unwrap();
        let geom = expected_geometry(&problem, DEFAULT_RANK_TOL).unwrap();
        let (eq, m) = moments_by_definition(&problem);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..100_000 {
            let v = random_vector(&mut rng, p);
            let den = v.dot(&(&eq * &v));
            if den <= 1e-12 * v.norm_squared() {
                continue;
            }
            let r = v.dot(&(&m * &v)) / den;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let spread = (geom.t_q - geom.s_q).max(1e-12);
        prop_assert!(lo >= geom.s_q - 1e-9 && hi <= geom.t_q + 1e-9, "[{lo}, {hi}] vs [{}, {}]", geom.s_q, geom.t_q);
        prop_assert!(lo - geom.s_q <= 0.05 * spread + 1e-9, "min {lo} far above s_q {}", geom.s_q);
        prop_assert!(geom.t_q - hi <= 0.05 * spread + 1e-9, "max {hi} far below t_q {}", geom.t_q);
    }

    #[test]
    fn thresholds_nondecreasing_in_k(seed in any::<u64>(), k1 in 1u64..2000, dk in 1u64..2000) {
        let k2 = k1 + dk;
        let (a, b) = (BatchSize::Finite(k1), BatchSize::Finite(k2));
        let homog = expected_geometry(&mixture(seed, MixtureKind::Homogeneous), DEFAULT_RANK_TOL).unwrap();
        let ra = homogeneous_thresholds(&homog, a).unwrap();
        let rb = homogeneous_thresholds(&homog, b).unwrap();
        let rinf = homogeneous_thresholds(&homog, BatchSize::Infinite).unwrap();
        prop_assert!(rb.div_lb >= ra.div_lb * (1.0 - 1e-12) && rinf.div_lb >= rb.div_lb * (1.0 - 1e-12));
        prop_assert!(rb.conv_ub >= ra.conv_ub * (1.0 - 1e-12) && rinf.conv_ub >= rb.conv_ub * (1.0 - 1e-12));

        let inhom = expected_geometry(&mixture(seed, MixtureKind::Inhomogeneous), DEFAULT_RANK_TOL).unwrap();
        let gamma = 0.5 * (inhom.s_q / k2 as f64).sqrt();
        let ia = inhomogeneous_thresholds(&inhom, a, Some(gamma)).unwrap();
        let ib = inhomogeneous_thresholds(&inhom, b, Some(gamma)).unwrap();
        prop_assert!(ib.div_lb >= ia.div_lb * (1.0 - 1e-12));
        prop_assert!(ib.conv_ub >= ia.conv_ub * (1.0 - 1e-12));
    }

    #[test]
    fn huge_batches_recover_gradient_descent(seed in any::<u64>()) {
        let k = BatchSize::Finite(1_000_000_000);
        for kind in [MixtureKind::Homogeneous, MixtureKind::Inhomogeneous] {
            let geom = expected_geometry(&mixture(seed, kind), DEFAULT_RANK_TOL).unwrap();
            let (l1, lm) = (geom.lambdas[0], *geom.lambdas.last().unwrap());
            let r = if kind == MixtureKind::Homogeneous {
                homogeneous_thresholds(&geom, k).unwrap()
            } else {
                inhomogeneous_thresholds(&geom, k, None).unwrap()
            };
            prop_assert!((r.conv_ub - 2.0 / l1).abs() <= 1e-6 * 2.0 / l1, "conv {} vs {}", r.conv_ub, 2.0 / l1);
            prop_assert!((r.div_lb - 2.0 / lm).abs() <= 1e-3 * 2.0 / lm, "div {} vs {}", r.div_lb, 2.0 / lm);
        }
    }
}
