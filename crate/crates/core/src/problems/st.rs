//! Styblinski-Tang sums on the box `(−5, 5)^p`.
//!
//! Component `i` is `f_i(x) = ½ Σ_j (c_{ij1} x_j⁴ + c_{ij2} x_j² + c_{ij3} x_j)`.
//! Every Hessian is diagonal, so the expected objective separates by
//! coordinate and its local minimizers are products of per-coordinate roots.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mixture::Mixture;
use crate::sgd::{derive_seed, rng_from_seed, BoxConstraint};

use super::qc::check_probs;

pub const ST_BOX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StComponent {
    /// One `(c1, c2, c3)` triple per coordinate.
    pub coeffs: Vec<[f64; 3]>,
}

impl StComponent {
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (j, &[c1, c2, c3]) in self.coeffs.iter().enumerate() {
            if !(c1 > 0.0) || !(c2 <= 0.0) || !(c3 >= 0.0) || !c1.is_finite() || !c2.is_finite() || !c3.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "coordinate {j}: need c1 > 0, c2 <= 0, c3 >= 0, got ({c1}, {c2}, {c3})"
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * self
            .coeffs
            .iter()
            .zip(x.iter())
            .map(|(&[c1, c2, c3], &x)| c1 * x.powi(4) + c2 * x * x + c3 * x)
            .sum::<f64>()
    }

    pub fn add_grad(&self, x: &Vector, scale: f64, out: &mut Vector) {
        for (j, &[c1, c2, c3]) in self.coeffs.iter().enumerate() {
            let x = x[j];
            out[j] += scale * coord_grad(c1, c2, c3, x);
        }
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim());
        self.add_grad(x, 1.0, &mut g);
        g
    }

    /// Diagonal of the Hessian.
    pub fn curvatures(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.dim(), self.coeffs.iter().zip(x.iter()).map(|(&[c1, c2, _], &x)| coord_curv(c1, c2, x)))
    }
}

fn coord_grad(c1: f64, c2: f64, c3: f64, x: f64) -> f64 {
    2.0 * c1 * x * x * x + c2 * x + 0.5 * c3
}

fn coord_curv(c1: f64, c2: f64, x: f64) -> f64 {
    6.0 * c1 * x * x + c2
}

/// Convenience wrapper returning `(value, gradient, Hessian)`.
pub fn st_eval_grad_hess(comp: &StComponent, x: &Vector) -> (f64, Vector, Matrix) {
    (comp.value(x), comp.grad(x), Matrix::from_diagonal(&comp.curvatures(x)))
}

/// The two local minima of one coordinate of the expected objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMinima {
    /// Negative-side and positive-side roots, ascending.
    pub roots: [f64; 2],
    pub curvatures: [f64; 2],
}

impl CoordinateMinima {
    /// Index of the flatter root; ties go to the negative root.
    pub fn flat_index(&self) -> usize {
        usize::from(self.curvatures[1] < self.curvatures[0])
    }

    /// Index of the sharper root; ties go to the negative root.
    pub fn sharp_index(&self) -> usize {
        usize::from(self.curvatures[1] > self.curvatures[0])
    }
}

/// Real roots of `2a x³ + b x + c/2`, ascending, Newton-polished.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let p = b / (2.0 * a);
    let q = c / (4.0 * a);
    let disc = 4.0 * p * p * p + 27.0 * q * q;
    let mut roots = if disc < 0.0 {
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
        (0..3).map(|k| r * (phi / 3.0 - 2.0 * PI * k as f64 / 3.0).cos()).collect::<Vec<_>>()
    } else {
        let s = (q * q / 4.0 + p * p * p / 27.0).max(0.0).sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    };
    for x in roots.iter_mut() {
        for _ in 0..4 {
            let f = coord_grad(a, b, c, *x);
            let df = coord_curv(a, b, *x);
            if df == 0.0 {
                break;
            }
            *x -= f / df;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Both local minima of `½(a x⁴ + b x² + c x)`, or an error if there are fewer.
pub fn coordinate_minima(a: f64, b: f64, c: f64) -> Result<CoordinateMinima> {
    let roots = cubic_roots(a, b, c);
    if roots.len() != 3 {
        return Err(Error::DegenerateModel(format!("cubic with coefficients ({a}, {b}, {c}) has one real root")));
    }
    let lo = roots[0];
    let hi = roots[2];
    let curvatures = [coord_curv(a, b, lo), coord_curv(a, b, hi)];
    if !(curvatures[0] > 0.0 && curvatures[1] > 0.0) || !(roots[0] < roots[1] && roots[1] < roots[2]) {
        return Err(Error::DegenerateModel(format!("cubic with coefficients ({a}, {b}, {c}) lacks two distinct minima")));
    }
    Ok(CoordinateMinima { roots: [lo, hi], curvatures })
}

/// Local minimizers of the expected objective.
///
/// There are `2^p` of them; only the extremes are stored and the rest are
/// built on demand from an index whose bit `j` selects the root of coordinate `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerCatalog {
    pub coordinates: Vec<CoordinateMinima>,
    pub flattest: Vec<f64>,
    pub sharpest: Vec<f64>,
}

impl MinimizerCatalog {
    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    /// Number of minimizers, if it fits.
    pub fn count(&self) -> Option<u128> {
        1u128.checked_shl(self.dim() as u32)
    }

    pub fn minimizer(&self, index: u128) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.coordinates.iter().enumerate().map(|(j, c)| c.roots[((index >> j) & 1) as usize]),
        )
    }

    /// Expected-Hessian diagonal at the indexed minimizer.
    pub fn curvatures(&self, index: u128) -> Vec<f64> {
        self.coordinates.iter().enumerate().map(|(j, c)| c.curvatures[((index >> j) & 1) as usize]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vector> + '_ {
        let n = self.count().unwrap_or(u128::MAX);
        (0..n).map(|i| self.minimizer(i))
    }
}

/// Probability-weighted coefficient triples per coordinate.
pub fn mean_coefficients(components: &[StComponent], probs: &[f64]) -> Vec<[f64; 3]> {
    let p = components.first().map_or(0, StComponent::dim);
    let mut mean = vec![[0.0; 3]; p];
    for (comp, w) in components.iter().zip(probs) {
        for (m, c) in mean.iter_mut().zip(&comp.coeffs) {
            for l in 0..3 {
                m[l] += w * c[l];
            }
        }
    }
    mean
}

pub fn minimizers_from_mean(mean: &[[f64; 3]]) -> Result<MinimizerCatalog> {
    let coordinates = mean
        .iter()
        .map(|&[a, b, c]| coordinate_minima(a, b, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(MinimizerCatalog {
        flattest: coordinates.iter().map(|c| c.roots[c.flat_index()]).collect(),
        sharpest: coordinates.iter().map(|c| c.roots[c.sharp_index()]).collect(),
        coordinates,
    })
}

pub fn st_minimizers(model: &StSumsModel) -> Result<MinimizerCatalog> {
    minimizers_from_mean(&model.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StSumsRaw", into = "StSumsRaw")]
pub struct StSumsModel {
    pub name: String,
    pub dim: usize,
    pub components: Vec<StComponent>,
    pub probs: Vec<f64>,
    pub mean: Vec<[f64; 3]>,
    pub catalog: MinimizerCatalog,
}

#[derive(Serialize, Deserialize)]
struct StSumsRaw {
    name: String,
    components: Vec<StComponent>,
    probs: Vec<f64>,
}

impl TryFrom<StSumsRaw> for StSumsModel {
    type Error = Error;
    fn try_from(raw: StSumsRaw) -> Result<Self> {
        StSumsModel::new(raw.name, raw.components, raw.probs)
    }
}

impl From<StSumsModel> for StSumsRaw {
    fn from(m: StSumsModel) -> Self {
        StSumsRaw { name: m.name, components: m.components, probs: m.probs }
    }
}

impl StSumsModel {
    pub fn new(name: impl Into<String>, components: Vec<StComponent>, probs: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != probs.len() {
            return Err(Error::InvalidProblem("need one positive weight per component".into()));
        }
        let dim = components[0].dim();
        if dim == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.dim() });
            }
            c.validate()?;
        }
        check_probs(&probs)?;
        let mean = mean_coefficients(&components, &probs);
        let catalog = minimizers_from_mean(&mean)?;
        Ok(Self { name: name.into(), dim, components, probs, mean, catalog })
    }

    pub fn bounds(&self) -> BoxConstraint {
        BoxConstraint::cube(self.dim, -ST_BOX, ST_BOX)
    }

    pub fn flattest(&self) -> Vector {
        Vector::from_vec(self.catalog.flattest.clone())
    }

    pub fn sharpest(&self) -> Vector {
        Vector::from_vec(self.catalog.sharpest.clone())
    }

    /// Largest component-gradient norm at `x`.
    pub fn max_component_grad(&self, x: &Vector) -> f64 {
        self.components.iter().map(|c| c.grad(x).norm()).fold(0.0, f64::max)
    }

    /// Diagonals `(H, M)` of the expected Hessian and the curvature moment.
    pub fn diagonal_moments(&self, x: &Vector) -> (Vector, Vector) {
        let h = Vector::from_iterator(self.dim, self.mean.iter().zip(x.iter()).map(|(&[a, b, _], &x)| coord_curv(a, b, x)));
        let mut second = Vector::zeros(self.dim);
        for (comp, w) in self.components.iter().zip(&self.probs) {
            for (j, &[c1, c2, _]) in comp.coeffs.iter().enumerate() {
                let hj = coord_curv(c1, c2, x[j]);
                second[j] += w * hj * hj;
            }
        }
        // M_jj = H_jj (E[h_jj²] − H_jj²)
        let m = Vector::from_iterator(self.dim, (0..self.dim).map(|j| h[j] * (second[j] - h[j] * h[j])));
        (h, m)
    }
}

impl Mixture for StSumsModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.components[i].value(x)
    }

    fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        self.components[i].grad(x)
    }

    fn add_component_grad(&self, i: usize, x: &Vector, out: &mut Vector) {
        self.components[i].add_grad(x, 1.0, out);
    }

    fn component_hessian(&self, i: usize, x: &Vector) -> Matrix {
        Matrix::from_diagonal(&self.components[i].curvatures(x))
    }

    fn expected_value(&self, x: &Vector) -> f64 {
        StComponent { coeffs: self.mean.clone() }.value(x)
    }

    fn expected_grad(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim);
        for (j, &[a, b, c]) in self.mean.iter().enumerate() {
            g[j] = coord_grad(a, b, c, x[j]);
        }
        g
    }

    fn expected_hessian(&self, x: &Vector) -> Matrix {
        Matrix::from_diagonal(&self.diagonal_moments(x).0)
    }

    fn curvature_moments(&self, x: &Vector) -> (Matrix, Matrix) {
        let (h, m) = self.diagonal_moments(x);
        (Matrix::from_diagonal(&h), Matrix::from_diagonal(&m))
    }

    fn curvature_extremes(&self, x: &Vector, rank_tol: f64) -> (Matrix, Option<(f64, f64)>) {
        let (h, m) = self.diagonal_moments(x);
        let top = h.max();
        let extremes = if top > 0.0 {
            let cutoff = rank_tol * top;
            let ratios = (0..self.dim).filter(|&j| h[j] > cutoff).map(|j| m[j] / h[j]);
            Some(ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r))))
        } else {
            None
        };
        (Matrix::from_diagonal(&h), extremes)
    }
}

/// `(dimension, components)` of Models 1 through 3.
pub const ST_MODEL_SIZES: [(usize, usize); 3] = [(10, 200), (50, 1000), (100, 2000)];

/// Per-coordinate centres are drawn from these ranges; each component then
/// perturbs the centre by a relative factor in `1 ± ST_SPREAD`.
pub const ST_CENTER_RANGES: [(f64, f64); 3] = [(0.8, 1.2), (-18.0, -12.0), (2.0, 7.0)];
pub const ST_SPREAD: f64 = 0.5;
const ST_RETRIES: usize = 16;

fn generate_st_model(name: String, p: usize, n: usize, seed: u64) -> Result<StSumsModel> {
    let mut last_err = None;
    for attempt in 0..ST_RETRIES {
        let mut rng = rng_from_seed(derive_seed(seed, &[attempt as u64]));
        let centers: Vec<[f64; 3]> = (0..p)
            .map(|_| ST_CENTER_RANGES.map(|(lo, hi)| rng.random_range(lo..hi)))
            .collect();
        let components = (0..n)
            .map(|_| StComponent {
                coeffs: centers
                    .iter()
                    .map(|mu| mu.map(|m| m * (1.0 + ST_SPREAD * rng.random_range(-1.0..1.0))))
                    .collect(),
            })
            .collect();
        let probs = vec![1.0 / n as f64; n];
        match StSumsModel::new(name.clone(), components, probs) {
            Ok(model) => {
                let inside = model.catalog.coordinates.iter().all(|c| c.roots.iter().all(|r| r.abs() < ST_BOX));
                let inhomogeneous = model.max_component_grad(&model.flattest()) > 1e-3
                    && model.max_component_grad(&model.sharpest()) > 1e-3;
                if inside && inhomogeneous {
                    return Ok(model);
                }
                last_err = Some(Error::DegenerateModel(format!("{name}: minimizer outside box or homogeneous")));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::DegenerateModel(name)))
}

pub fn generate_st_models(seed: u64) -> Result<Vec<StSumsModel>> {
    ST_MODEL_SIZES
        .iter()
        .enumerate()
        .map(|(idx, &(p, n))| generate_st_model(format!("st-model-{}", idx + 1), p, n, derive_seed(seed, &[0x57, idx as u64])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_substitution() {
        let c = StComponent { coeffs: vec![[1.0, -2.0, 1.0]] };
        let (v, g, h) = st_eval_grad_hess(&c, &Vector::zeros(1));
        assert_eq!((v, g[0], h[(0, 0)]), (0.0, 0.5, -2.0));
        let c = StComponent { coeffs: vec![[1.0, -2.0, 0.0]] };
        assert_eq!(c.grad(&Vector::zeros(1))[0], 0.0);
    }

    #[test]
    fn symmetric_double_well_tie_goes_negative() {
        let m = coordinate_minima(1.0, -2.0, 0.0).unwrap();
        assert!((m.roots[0] + 1.0).abs() < 1e-14 && (m.roots[1] - 1.0).abs() < 1e-14);
        assert!((m.curvatures[0] - 4.0).abs() < 1e-12 && (m.curvatures[1] - 4.0).abs() < 1e-12);
        let cat = minimizers_from_mean(&[[1.0, -2.0, 0.0]]).unwrap();
        assert_eq!(cat.flattest, cat.sharpest);
        assert!(cat.flattest[0] < 0.0);
    }

    #[test]
    fn classic_global_minimizer() {
        let m = coordinate_minima(1.0, -16.0, 5.0).unwrap();
        // fine grid over (−5, 5)
        let f = |x: f64| 0.5 * (x.powi(4) - 16.0 * x * x + 5.0 * x);
        let best = (0..=1_000_000)
            .map(|i| -5.0 + 1e-5 * i as f64)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert!((m.roots[0] - best).abs() < 2e-5);
        assert!((m.roots[0] + 2.903534).abs() < 1e-6);
    }

    #[test]
    fn one_real_root_is_degenerate() {
        assert!(coordinate_minima(1.0, 1.0, 0.0).is_err());
        assert!(coordinate_minima(1.0, -1.0, 10.0).is_err());
    }

    #[test]
    fn catalog_indexing() {
        let cat = minimizers_from_mean(&vec![[1.0, -16.0, 5.0]; 10]).unwrap();
        assert_eq!(cat.count(), Some(1024));
        assert_eq!(cat.minimizer(0).as_slice(), &[cat.coordinates[0].roots[0]; 10]);
        assert_eq!(cat.iter().count(), 1024);
    }

    #[test]
    fn diagonal_fast_path_matches_dense() {
        let models = generate_st_models(1).unwrap();
        let m = &models[0];
        let x = m.flattest().add_scalar(0.01);
        let (h, extremes) = m.curvature_extremes(&x, 1e-10);
        let (hd, md) = m.curvature_moments(&x);
        let dense = crate::linalg::whitened_extremes(&md, &hd, 1e-10).unwrap();
        let fast = extremes.unwrap();
        assert!((h - hd).amax() < 1e-12);
        assert!((fast.0 - dense.0).abs() < 1e-8 * dense.0.abs().max(1.0));
        assert!((fast.1 - dense.1).abs() < 1e-8 * dense.1.abs().max(1.0));
    }

    #[test]
    fn generated_models() {
        let models = generate_st_models(7).unwrap();
        for (m, &(p, n)) in models.iter().zip(&ST_MODEL_SIZES) {
            assert_eq!((m.dim, m.components.len()), (p, n));
            for x in [m.flattest(), m.sharpest()] {
                assert!(x.amax() < ST_BOX);
                assert!(m.expected_grad(&x).norm() < 1e-9);
                assert!(m.max_component_grad(&x) > 1e-3);
            }
        }
        assert_eq!(models[0].catalog.count(), Some(1 << 10));
        assert_eq!(models[0], generate_st_models(7).unwrap()[0]);
    }
}
