use crate::error::Error;
use crate::mechanism::{mechanism_thresholds, GeometryOptions, LocalGeometry};
use crate::problems::{Family, Model};
use crate::thresholds::{BatchSize, ThresholdRow};

use super::plan::minimizer_geometries;

pub const ST_TABLE_KS: [u64; 5] = [1, 100, 200, 350, 500];

/// Batch sizes tabulated for one geometry: `1, 0.99·k_max, 2·k_max, ∞` for
/// QC (for both `k_max` values, skipping those below one) and
/// `1, 100, 200, 350, 500, ∞` for ST.
pub fn default_table_ks(family: Family, geom: &LocalGeometry) -> Vec<BatchSize> {
    let mut ks: Vec<BatchSize> = match family {
        Family::St => ST_TABLE_KS.iter().map(|&k| BatchSize::Finite(k)).collect(),
        Family::Qc => {
            let c = geom.curvature();
            let mut ks = vec![BatchSize::Finite(1)];
            for kmax in [c.k_max_div(), c.k_max_conv()] {
                for k in [(0.99 * kmax as f64).round() as u64, 2 * kmax] {
                    if k >= 1 {
                        ks.push(BatchSize::Finite(k));
                    }
                }
            }
            ks
        }
    };
    ks.push(BatchSize::Infinite);
    ks.sort();
    ks.dedup();
    ks
}

/// Mechanism thresholds for every minimizer of every model. The model column
/// reads `model:minimizer`. Cells whose geometry or thresholds fail are
/// reported alongside and do not stop the others.
pub fn threshold_table(
    models: &[Model],
    opts: &GeometryOptions,
    ks: Option<&[BatchSize]>,
) -> (Vec<ThresholdRow>, Vec<(String, Error)>) {
    let geometries = minimizer_geometries(models, opts);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (model, geoms) in models.iter().zip(geometries) {
        for (np, geom) in model.minimizers().iter().zip(geoms) {
            let key = format!("{}:{}", model.name(), np.label);
            let geom = match geom {
                Ok(g) => g,
                Err(e) => {
                    failures.push((key, e));
                    continue;
                }
            };
            let list = match ks {
                Some(ks) => ks.to_vec(),
                None => default_table_ks(model.family(), &geom),
            };
            for k in list {
                match mechanism_thresholds(&geom, k) {
                    Ok(r) => rows.push(ThresholdRow::new(key.clone(), &r)),
                    Err(e) => failures.push((format!("{key} k={k}"), e)),
                }
            }
        }
    }
    (rows, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::generate_models;

    #[test]
    fn st_rows_cover_standard_batch_sizes() {
        let models = generate_models(Family::St, 3).unwrap();
        let opts = GeometryOptions { n_samples: 50, ..Default::default() };
        let (rows, failures) = threshold_table(&models[..1], &opts, None);
        assert!(failures.is_empty());
        assert_eq!(rows.len(), 2 * 6);
        let ks: Vec<&str> = rows[..6].iter().map(|r| r.k.as_str()).collect();
        assert_eq!(ks, ["1", "100", "200", "350", "500", "inf"]);
    }
}
