//! Nonconvex test families and their on-disk model format.

pub mod qc;
pub mod st;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mixture::Mixture;
use crate::sgd::BoxConstraint;

pub use qc::{generate_qc_models, qc_eval_grad_hess, QcComponent, QcSumsModel};
pub use st::{generate_st_models, st_eval_grad_hess, st_minimizers, MinimizerCatalog, StComponent, StSumsModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qc,
    St,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qc" => Ok(Family::Qc),
            "st" => Ok(Family::St),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Qc => "qc",
            Family::St => "st",
        })
    }
}

/// A generated model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Qc(QcSumsModel),
    St(StSumsModel),
}

/// A named reference point of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedPoint {
    pub label: &'static str,
    pub point: Vector,
}

impl Model {
    pub fn name(&self) -> &str {
        match self {
            Model::Qc(m) => &m.name,
            Model::St(m) => &m.name,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Model::Qc(_) => Family::Qc,
            Model::St(_) => Family::St,
        }
    }

    pub fn bounds(&self) -> BoxConstraint {
        match self {
            Model::Qc(m) => m.bounds(),
            Model::St(m) => m.bounds(),
        }
    }

    /// `circ`/`quad` for QC, `flat`/`sharp` for ST.
    pub fn minimizers(&self) -> [NamedPoint; 2] {
        match self {
            Model::Qc(m) => [
                NamedPoint { label: "circ", point: Vector::from_row_slice(&m.circ_min) },
                NamedPoint { label: "quad", point: Vector::from_row_slice(&m.quad_min) },
            ],
            Model::St(m) => [
                NamedPoint { label: "flat", point: m.flattest() },
                NamedPoint { label: "sharp", point: m.sharpest() },
            ],
        }
    }

    pub fn minimizer(&self, label: &str) -> Result<Vector> {
        self.minimizers()
            .into_iter()
            .find(|m| m.label == label)
            .map(|m| m.point)
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no minimizer {label:?}", self.name())))
    }

    pub fn to_file(&self, seed: u64) -> ModelFile {
        let bounds = self.bounds();
        let (components, probs, minimizers) = match self {
            Model::Qc(m) => (
                serde_json::to_value(&m.components),
                m.probs.clone(),
                json!({ "circ": m.circ_min, "quad": m.quad_min }),
            ),
            Model::St(m) => (
                serde_json::to_value(&m.components),
                m.probs.clone(),
                json!({
                    "flattest": m.catalog.flattest,
                    "sharpest": m.catalog.sharpest,
                    "count_log2": m.dim,
                    "coordinates": m.catalog.coordinates,
                }),
            ),
        };
        ModelFile {
            family: self.family(),
            name: self.name().to_string(),
            seed,
            components: components.expect("components serialize"),
            probs,
            bounds: BoxSpec { lower: bounds.lower, upper: bounds.upper },
            minimizers,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        match file.family {
            Family::Qc => {
                let components: Vec<QcComponent> = serde_json::from_value(file.components)?;
                Ok(Model::Qc(QcSumsModel::new(file.name, components, file.probs)?))
            }
            Family::St => {
                let components: Vec<StComponent> = serde_json::from_value(file.components)?;
                Ok(Model::St(StSumsModel::new(file.name, components, file.probs)?))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::from_file(file)
    }

    pub fn save(&self, seed: u64, path: &Path) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, &self.to_file(seed))?;
        Ok(())
    }
}

/// Generates the seeded models of one family.
pub fn generate_models(family: Family, seed: u64) -> Result<Vec<Model>> {
    Ok(match family {
        Family::Qc => generate_qc_models(seed)?.into_iter().map(Model::Qc).collect(),
        Family::St => generate_st_models(seed)?.into_iter().map(Model::St).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// On-disk form of a generated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: Family,
    pub name: String,
    pub seed: u64,
    pub components: Value,
    pub probs: Vec<f64>,
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
    pub minimizers: Value,
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Qc($m) => $e,
            Model::St($m) => $e,
        }
    };
}

impl Mixture for Model {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn probs(&self) -> &[f64] {
        delegate!(self, m => m.probs())
    }
    fn component_value(&self, i: usize, x: &Vector) -> f64 {
        delegate!(self, m => m.component_value(i, x))
    }
    fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        delegate!(self, m => m.component_grad(i, x))
    }
    fn add_component_grad(&self, i: usize, x: &Vector, out: &mut Vector) {
        delegate!(self, m => m.add_component_grad(i, x, out))
    }
    fn component_hessian(&self, i: usize, x: &Vector) -> Matrix {
        delegate!(self, m => m.component_hessian(i, x))
    }
    fn expected_value(&self, x: &Vector) -> f64 {
        delegate!(self, m => m.expected_value(x))
    }
    fn expected_grad(&self, x: &Vector) -> Vector {
        delegate!(self, m => m.expected_grad(x))
    }
    fn expected_hessian(&self, x: &Vector) -> Matrix {
        delegate!(self, m => m.expected_hessian(x))
    }
    fn curvature_moments(&self, x: &Vector) -> (Matrix, Matrix) {
        delegate!(self, m => m.curvature_moments(x))
    }
    fn curvature_extremes(&self, x: &Vector, rank_tol: f64) -> (Matrix, Option<(f64, f64)>) {
        delegate!(self, m => m.curvature_extremes(x, rank_tol))
    }
}
