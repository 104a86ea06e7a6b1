use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mechanism::{ball_offset, local_geometry, mechanism_thresholds, GeometryOptions, LocalGeometry};
use crate::mixture::Mixture;
use crate::problems::{generate_models, Family, Model};
use crate::sgd::{derive_seed, rng_from_seed, run_partial, RunConfig, RunFactors, RunRecord, StepSchedule};
use crate::thresholds::BatchSize;

/// A step size expressed through the thresholds at the cell's batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateLevel {
    /// `a·l`
    Div(f64),
    /// `a·u`
    Conv(f64),
    /// `a·(u + l)`
    Sum(f64),
}

impl RateLevel {
    pub fn resolve(&self, conv_ub: f64, div_lb: f64) -> f64 {
        match *self {
            RateLevel::Div(a) => a * div_lb,
            RateLevel::Conv(a) => a * conv_ub,
            RateLevel::Sum(a) => a * (conv_ub + div_lb),
        }
    }
}

impl fmt::Display for RateLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateLevel::Div(a) => write!(f, "{a}l"),
            RateLevel::Conv(a) => write!(f, "{a}u"),
            RateLevel::Sum(a) => write!(f, "{a}(u+l)"),
        }
    }
}

impl FromStr for RateLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::InvalidArgument(format!("rate level {s:?}; expected e.g. 1.5l, 0.5u, 0.5(u+l)"));
        let (coef, kind): (&str, fn(f64) -> RateLevel) = if let Some(c) = s.strip_suffix("(u+l)").or(s.strip_suffix("(l+u)")) {
            (c, RateLevel::Sum)
        } else if let Some(c) = s.strip_suffix('l') {
            (c, RateLevel::Div)
        } else if let Some(c) = s.strip_suffix('u') {
            (c, RateLevel::Conv)
        } else {
            return Err(bad());
        };
        let coef = if coef.is_empty() { 1.0 } else { coef.trim_end_matches('*').parse().map_err(|_| bad())? };
        if !(coef > 0.0) {
            return Err(bad());
        }
        Ok(kind(coef))
    }
}

impl Serialize for RateLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RateLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateSpec {
    /// Fixed step sizes per minimizer label.
    Explicit(BTreeMap<String, Vec<f64>>),
    /// Step sizes relative to the thresholds of each cell.
    Relative(Vec<RateLevel>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometrySpec {
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        let d = GeometryOptions::default();
        Self { epsilon: d.epsilon, n_samples: d.n_samples, seed: d.seed, rank_tol: d.rank_tol }
    }
}

impl From<GeometrySpec> for GeometryOptions {
    fn from(g: GeometrySpec) -> Self {
        GeometryOptions { epsilon: g.epsilon, n_samples: g.n_samples, seed: g.seed, rank_tol: g.rank_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub family: Family,
    /// Seed for generating models when `model_files` is empty.
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub model_files: Vec<PathBuf>,
    /// Restrict to these model names.
    #[serde(default)]
    pub models: Option<Vec<String>>,
    pub minimizers: Vec<String>,
    pub methods: Vec<BatchSize>,
    pub radii: Vec<f64>,
    pub rates: RateSpec,
    pub runs_per_cell: usize,
    pub max_iters: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub geometry: GeometrySpec,
}

impl ExperimentPlan {
    /// SGD-1 and GD from discs of radius `1e-8` with the fixed rate grids.
    pub fn default_qc(model_seed: u64, master_seed: u64) -> Self {
        let mut rates = BTreeMap::new();
        rates.insert("circ".to_string(), vec![1e10, 5e10, 1e11, 5e11, 1e12, 5e12]);
        rates.insert("quad".to_string(), vec![1.0, 4.0, 16.0, 64.0, 256.0, 1024.0]);
        Self {
            family: Family::Qc,
            model_seed,
            model_files: Vec::new(),
            models: None,
            minimizers: vec!["circ".into(), "quad".into()],
            methods: vec![BatchSize::Finite(1), BatchSize::Infinite],
            radii: vec![1e-8],
            rates: RateSpec::Explicit(rates),
            runs_per_cell: 100,
            max_iters: 20,
            master_seed,
            geometry: GeometrySpec::default(),
        }
    }

    /// SGD-k for `k ∈ {1, 200, 500, ∞}` at `1.5l`, `0.5(u+l)` and `0.5u`.
    pub fn default_st(model_seed: u64, master_seed: u64) -> Self {
        Self {
            family: Family::St,
            model_seed,
            model_files: Vec::new(),
            models: None,
            minimizers: vec!["flat".into(), "sharp".into()],
            methods: [1, 200, 500].map(BatchSize::Finite).into_iter().chain([BatchSize::Infinite]).collect(),
            radii: vec![1e-3, 1e-2, 1e-1, 1.0],
            rates: RateSpec::Relative(vec![RateLevel::Div(1.5), RateLevel::Sum(0.5), RateLevel::Conv(0.5)]),
            runs_per_cell: 100,
            max_iters: 20,
            master_seed,
            geometry: GeometrySpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.minimizers.is_empty() || self.methods.is_empty() || self.radii.is_empty() {
            return bad("plan needs minimizers, methods and radii");
        }
        if self.runs_per_cell == 0 || self.max_iters == 0 {
            return bad("runs_per_cell and max_iters must be positive");
        }
        if self.radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return bad("radii must be finite and nonnegative");
        }
        for k in &self.methods {
            k.validate()?;
        }
        match &self.rates {
            RateSpec::Explicit(map) => {
                for label in &self.minimizers {
                    let rates = map.get(label).ok_or_else(|| {
                        Error::InvalidArgument(format!("no explicit rates for minimizer {label:?}"))
                    })?;
                    if rates.is_empty() || rates.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
                        return bad("explicit rates must be positive and finite");
                    }
                }
            }
            RateSpec::Relative(levels) if levels.is_empty() => return bad("no rate levels"),
            RateSpec::Relative(_) => {}
        }
        Ok(())
    }

    /// Models named by the plan, loaded or generated.
    pub fn load_models(&self) -> Result<Vec<Model>> {
        let all = if self.model_files.is_empty() {
            generate_models(self.family, self.model_seed)?
        } else {
            self.model_files.iter().map(|p| Model::load(p)).collect::<Result<Vec<_>>>()?
        };
        if all.iter().any(|m| m.family() != self.family) {
            return Err(Error::InvalidArgument(format!("plan family is {} but a model differs", self.family)));
        }
        Ok(match &self.models {
            Some(names) => {
                for n in names {
                    if !all.iter().any(|m| m.name() == n) {
                        return Err(Error::InvalidArgument(format!("unknown model {n:?}")));
                    }
                }
                all.into_iter().filter(|m| names.iter().any(|n| n == m.name())).collect()
            }
            None => all,
        })
    }
}

/// Seed for the local geometry of minimizer `b` of model `a`.
fn geometry_seed(base: u64, model: usize, minimizer: usize) -> u64 {
    derive_seed(base, &[0x6e0, model as u64, minimizer as u64])
}

/// Local geometry at each minimizer of each model, indexed `[model][minimizer]`.
pub fn minimizer_geometries(models: &[Model], opts: &GeometryOptions) -> Vec<Vec<Result<LocalGeometry>>> {
    models
        .iter()
        .enumerate()
        .map(|(mi, model)| {
            model
                .minimizers()
                .iter()
                .enumerate()
                .map(|(ni, np)| {
                    let opts = GeometryOptions { seed: geometry_seed(opts.seed, mi, ni), ..*opts };
                    local_geometry(model, &np.point, &opts)
                })
                .collect()
        })
        .collect()
}

/// One fully specified factor combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub minimizer: String,
    pub k: BatchSize,
    pub rate: f64,
    /// How the rate was chosen, e.g. `1.5l`, or the literal value.
    pub rate_label: String,
    pub init_radius: f64,
    #[serde(skip)]
    model_index: usize,
    #[serde(skip)]
    minimizer_index: usize,
}

impl Cell {
    /// `model:minimizer`, the model column of the trajectory CSV.
    pub fn model_key(&self) -> String {
        format!("{}:{}", self.model, self.minimizer)
    }

    pub fn method(&self) -> String {
        method_name(self.k)
    }

    fn seed(&self, master: u64, run: usize) -> u64 {
        let k = match self.k {
            BatchSize::Finite(k) => k,
            BatchSize::Infinite => u64::MAX,
        };
        derive_seed(
            master,
            &[self.model_index as u64, self.minimizer_index as u64, k, self.rate.to_bits(), self.init_radius.to_bits(), run as u64],
        )
    }
}

pub fn method_name(k: BatchSize) -> String {
    match k {
        BatchSize::Finite(k) => format!("sgd-{k}"),
        BatchSize::Infinite => "gd".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub records: Vec<RunRecord>,
}

impl ExperimentPlan {
    /// Cells in `(model, minimizer, k, rate, radius)` order. Relative rates
    /// need the geometry of their minimizer; cells whose geometry failed are
    /// returned separately.
    pub fn cells(
        &self,
        models: &[Model],
        geometries: &[Vec<Result<LocalGeometry>>],
    ) -> Result<(Vec<Cell>, Vec<(String, String)>)> {
        self.validate()?;
        let mut cells = Vec::new();
        let mut skipped = Vec::new();
        for (mi, model) in models.iter().enumerate() {
            let labels: Vec<&str> = model.minimizers().iter().map(|m| m.label).collect();
            for label in &self.minimizers {
                let ni = labels.iter().position(|l| l == label).ok_or_else(|| {
                    Error::InvalidArgument(format!("{} has no minimizer {label:?}", model.name()))
                })?;
                for &k in &self.methods {
                    let rates: Vec<(f64, String)> = match &self.rates {
                        RateSpec::Explicit(map) => map[label].iter().map(|&c| (c, format!("{c}"))).collect(),
                        RateSpec::Relative(levels) => {
                            let report = geometries[mi][ni]
                                .as_ref()
                                .map_err(|e| e.to_string())
                                .and_then(|g| mechanism_thresholds(g, k).map_err(|e| e.to_string()));
                            match report {
                                Ok(r) => levels.iter().map(|l| (l.resolve(r.conv_ub, r.div_lb), l.to_string())).collect(),
                                Err(e) => {
                                    skipped.push((format!("{}:{label} k={k}", model.name()), e));
                                    continue;
                                }
                            }
                        }
                    };
                    for (rate, rate_label) in rates {
                        for &init_radius in &self.radii {
                            cells.push(Cell {
                                model: model.name().to_string(),
                                minimizer: label.clone(),
                                k,
                                rate,
                                rate_label: rate_label.clone(),
                                init_radius,
                                model_index: mi,
                                minimizer_index: ni,
                            });
                        }
                    }
                }
            }
        }
        Ok((cells, skipped))
    }
}

/// Runs every cell of the plan. Runs execute in parallel; results come back
/// in cell order and run order.
pub fn run_plan(plan: &ExperimentPlan, models: &[Model]) -> Result<Vec<CellResult>> {
    let geometries = match plan.rates {
        RateSpec::Relative(_) => minimizer_geometries(models, &plan.geometry.into()),
        RateSpec::Explicit(_) => Vec::new(),
    };
    let (cells, skipped) = plan.cells(models, &geometries)?;
    for (what, why) in &skipped {
        log::warn!("skipping {what}: {why}");
    }
    run_cells(&cells, models, plan.runs_per_cell, plan.max_iters, plan.master_seed)
}

/// Runs hand-built cells; `models` must be the slice the cells were built against.
pub fn run_cells(
    cells: &[Cell],
    models: &[Model],
    runs: usize,
    iterations: usize,
    master_seed: u64,
) -> Result<Vec<CellResult>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..runs).map(move |r| (c, r))).collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(ci, run)| {
            let cell = &cells[ci];
            let model = &models[cell.model_index];
            let points = model.minimizers();
            let center = &points[cell.minimizer_index].point;
            let alt = (model.family() == Family::Qc).then(|| points[1 - cell.minimizer_index].point.clone());
            let seed = cell.seed(master_seed, run);
            let mut init_rng = rng_from_seed(derive_seed(seed, &[1]));
            let theta0 = if cell.init_radius > 0.0 {
                center + ball_offset(&mut init_rng, model.dim(), cell.init_radius)
            } else {
                center.clone()
            };
            let cfg = RunConfig {
                factors: RunFactors {
                    model: cell.model_key(),
                    k: cell.k,
                    schedule: StepSchedule::constant(cell.rate),
                    init_radius: cell.init_radius,
                    reference: center.iter().copied().collect(),
                    run,
                    seed,
                },
                theta0,
                iterations,
                bounds: Some(model.bounds()),
                alt_reference: alt,
                keep_iterates: false,
            };
            run_partial(model, &cfg).0
        })
        .collect();
    let mut records = records.into_iter();
    Ok(cells
        .iter()
        .map(|cell| CellResult { cell: cell.clone(), records: records.by_ref().take(runs).collect() })
        .collect())
}

impl Cell {
    pub fn new(model: &Model, model_index: usize, minimizer: &str, k: BatchSize, rate: f64, init_radius: f64) -> Result<Self> {
        let minimizer_index = model
            .minimizers()
            .iter()
            .position(|m| m.label == minimizer)
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no minimizer {minimizer:?}", model.name())))?;
        Ok(Self {
            model: model.name().to_string(),
            minimizer: minimizer.to_string(),
            k,
            rate,
            rate_label: format!("{rate}"),
            init_radius,
            model_index,
            minimizer_index,
        })
    }
}
