use proptest::prelude::*;
use rand::Rng;

use sgdk::linalg::{Matrix, Vector};
use sgdk::mixture::Mixture;
use sgdk::problems::qc::{Branch, QcComponent};
use sgdk::problems::{generate_models, Family, Model};
use sgdk::sgd::rng_from_seed;

const H: f64 = 1e-5;

fn central_gradient(f: impl Fn(&Vector) -> f64, x: &Vector) -> Vector {
    Vector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[j] += H;
            b[j] -= H;
            (f(&a) - f(&b)) / (2.0 * H)
        }),
    )
}

fn central_jacobian(g: impl Fn(&Vector) -> Vector, x: &Vector) -> Matrix {
    let p = x.len();
    let mut out = Matrix::zeros(p, p);
    for j in 0..p {
        let (mut a, mut b) = (x.clone(), x.clone());
        a[j] += H;
        b[j] -= H;
        out.set_column(j, &((g(&a) - g(&b)) / (2.0 * H)));
    }
    out
}

fn gap(fd: &[f64], exact: &[f64]) -> f64 {
    let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    fd.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn qc_component() -> impl Strategy<Value = QcComponent> {
    (0.001f64..1.0, 0.0f64..0.5, -3.0f64..3.0, 0.0f64..3.0, 0.0f64..2.0, 0.1f64..3.0, 0.0f64..1.0)
        .prop_map(|(q1, q2, q3, c1, c2, w, c4)| QcComponent { q1, q2, q3, c1, c2, c3: c2 + w, c4 })
}

/// The active branch is the same at every point within `delta` along the axes.
fn branch_is_stable(comp: &QcComponent, x: &Vector, delta: f64) -> bool {
    let branch = comp.eval_with_branch(x).1;
    (0..2).all(|j| {
        [-delta, delta].iter().all(|d| {
            let mut y = x.clone();
            y[j] += d;
            comp.eval_with_branch(&y).1 == branch
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn qc_derivatives_match_finite_differences(comp in qc_component(), x1 in -4.0f64..4.0, x2 in -4.0f64..4.0) {
        let x = Vector::from_vec(vec![x1, x2]);
        prop_assume!(branch_is_stable(&comp, &x, 1e-3));
        let e = comp.eval(&x);
        let g = central_gradient(|y| comp.eval(y).value, &x);
        prop_assert!(gap(g.as_slice(), e.grad.as_slice()) <= 1e-5, "grad {g} vs {}", e.grad);
        let h = central_jacobian(|y| comp.eval(y).grad, &x);
        prop_assert!(gap(h.as_slice(), e.hess.as_slice()) <= 1e-5, "hess {h} vs {}", e.hess);
    }

    #[test]
    fn circle_ring_is_twice_differentiable_at_its_edges(comp in qc_component(), angle in 0.0f64..std::f64::consts::TAU, outer in any::<bool>()) {
        let r = if outer { comp.c3 } else { comp.c2 };
        prop_assume!(r > 1e-3);
        let unit = Vector::from_vec(vec![angle.cos(), angle.sin()]);
        // Second derivatives meet with a finite slope of order c1 / w³.
        let w = comp.c3 - comp.c2;
        let delta = 1e-8 * w.powi(3) / (1.0 + comp.c1);
        let (inside, b_in) = comp.circle_eval(&(&unit * (r - delta)));
        let (outside, b_out) = comp.circle_eval(&(&unit * (r + delta)));
        prop_assert!(b_in != b_out);
        prop_assert!((inside.value - outside.value).abs() <= 1e-4 * (1.0 + comp.c1));
        prop_assert!(gap(inside.grad.as_slice(), outside.grad.as_slice()) <= 1e-4);
        prop_assert!(gap(inside.hess.as_slice(), outside.hess.as_slice()) <= 1e-4);
    }
}

#[test]
fn ring_branch_sits_between_the_radii() {
    let comp = QcComponent { q1: 0.0, q2: 0.0, q3: 0.0, c1: 1.0, c2: 1.0, c3: 2.0, c4: 0.0 };
    let at = |r: f64| comp.circle_eval(&Vector::from_vec(vec![r, 0.0])).1;
    assert_eq!(at(0.5), Branch::CircleInner);
    assert_eq!(at(1.5), Branch::CircleRing);
    assert_eq!(at(2.5), Branch::CircleOuter);
}

#[test]
fn generated_models_match_finite_differences() {
    let mut rng = rng_from_seed(5);
    for family in [Family::Qc, Family::St] {
        for model in generate_models(family, 2024).unwrap() {
            let p = model.dim();
            let mut checked = 0;
            while checked < 20 {
                let x = Vector::from_iterator(p, (0..p).map(|_| rng.random_range(-3.0..3.0)));
                let i = rng.random_range(0..model.n_components());
                if let Model::Qc(m) = &model {
                    if !branch_is_stable(&m.components[i], &x, 1e-3) {
                        continue;
                    }
                }
                let g = model.component_grad(i, &x);
                let fd = central_gradient(|y| model.component_value(i, y), &x);
                assert!(gap(fd.as_slice(), g.as_slice()) <= 1e-5, "{} component {i} at {x}", model.name());
                let h = model.component_hessian(i, &x);
                let fd = central_jacobian(|y| model.component_grad(i, y), &x);
                assert!(gap(fd.as_slice(), h.as_slice()) <= 1e-5, "{} component {i} at {x}", model.name());
                checked += 1;
            }
        }
    }
}
