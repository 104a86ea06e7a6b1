use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgd::{default_window, fit_log_rate, RateFit};

use super::plan::CellResult;

/// A run diverged if its final distance exceeds this multiple of the initial one...
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// ...its fitted per-step rate exceeds this...
pub const DIVERGENCE_RATE: f64 = 1.05;
/// ...and the log-linear fit explains at least this fraction of the variance.
pub const DIVERGENCE_R2: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub model: String,
    pub method: String,
    pub k: String,
    pub rate: f64,
    pub init_radius: f64,
    pub run: usize,
    pub iter: usize,
    pub dist_ref: f64,
    pub dist_alt: Option<f64>,
    pub on_box: bool,
}

/// One row per run and iteration; a run that stopped early ends with a row
/// whose `dist_ref` is NaN.
pub fn write_trajectory_csv<W: Write>(results: &[CellResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for res in results {
        let cell = &res.cell;
        let (model, method, k) = (cell.model_key(), cell.method(), cell.k.to_string());
        for rec in &res.records {
            let mut row = TrajectoryRow {
                model: model.clone(),
                method: method.clone(),
                k: k.clone(),
                rate: cell.rate,
                init_radius: cell.init_radius,
                run: rec.factors.run,
                iter: 0,
                dist_ref: 0.0,
                dist_alt: None,
                on_box: false,
            };
            for (n, &d) in rec.distances.iter().enumerate() {
                row.iter = n;
                row.dist_ref = d;
                row.dist_alt = rec.alt_distances.as_ref().map(|a| a[n]);
                row.on_box = rec.on_box.get(n).copied().unwrap_or(false);
                w.serialize(&row)?;
            }
            if rec.failure.is_some() {
                row.iter = rec.distances.len();
                row.dist_ref = f64::NAN;
                row.dist_alt = None;
                row.on_box = false;
                w.serialize(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Classification of a single trajectory of distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub initial: f64,
    pub last: f64,
    pub max: f64,
    pub fit: Option<RateFit>,
    pub diverged: bool,
}

pub fn classify_run(distances: &[f64]) -> RunOutcome {
    let initial = distances.first().copied().unwrap_or(f64::NAN);
    let last = distances.last().copied().unwrap_or(f64::NAN);
    let max = distances.iter().copied().fold(f64::NAN, f64::max);
    let fit = fit_log_rate(distances, default_window(distances.len())).ok();
    let diverged = last > DIVERGENCE_FACTOR * initial
        && fit.is_some_and(|f| f.rate > DIVERGENCE_RATE && f.r2 > DIVERGENCE_R2);
    RunOutcome { initial, last, max, fit, diverged }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub method: String,
    pub k: String,
    pub rate: f64,
    pub init_radius: f64,
    pub runs: usize,
    pub failed: usize,
    pub diverged: usize,
    pub frac_diverged: f64,
    /// Runs that neither diverged nor touched the box.
    pub bounded: usize,
    pub median_rate: f64,
    pub min_final: f64,
    pub max_final: f64,
    /// Largest distance reached by any run at any iteration.
    pub max_dist: f64,
}

struct Group {
    model: String,
    method: String,
    k: String,
    rate: f64,
    init_radius: f64,
    runs: Vec<Trace>,
}

struct Trace {
    distances: Vec<f64>,
    touched_box: bool,
    failed: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn summarize_group(g: Group) -> Result<SummaryRow> {
    let runs: Vec<&Trace> = g.runs.iter().filter(|r| !r.distances.is_empty()).collect();
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!("cell {} {} rate {} has no runs", g.model, g.method, g.rate)));
    }
    let outcomes: Vec<(RunOutcome, bool)> = runs.iter().map(|t| (classify_run(&t.distances), t.failed)).collect();
    let diverged = outcomes.iter().filter(|(o, _)| o.diverged).count();
    let bounded = runs.iter().zip(&outcomes).filter(|(t, (o, f))| !o.diverged && !*f && !t.touched_box).count();
    let finals = outcomes.iter().map(|(o, _)| o.last);
    Ok(SummaryRow {
        runs: runs.len(),
        failed: outcomes.iter().filter(|(_, f)| *f).count(),
        diverged,
        frac_diverged: diverged as f64 / runs.len() as f64,
        bounded,
        median_rate: median(outcomes.iter().filter_map(|(o, _)| o.fit.map(|f| f.rate)).collect()),
        min_final: finals.clone().fold(f64::INFINITY, f64::min),
        max_final: finals.fold(f64::NEG_INFINITY, f64::max),
        max_dist: outcomes.iter().map(|(o, _)| o.max).fold(f64::NEG_INFINITY, f64::max),
        model: g.model,
        method: g.method,
        k: g.k,
        rate: g.rate,
        init_radius: g.init_radius,
    })
}

/// Per-cell summary in order of first appearance.
pub fn summarize(rows: &[TrajectoryRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no trajectory rows to summarize".into()));
    }
    let mut index: HashMap<(String, String, String, u64, u64), usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut run_index: Vec<HashMap<usize, usize>> = Vec::new();
    for row in rows {
        let key = (row.model.clone(), row.method.clone(), row.k.clone(), row.rate.to_bits(), row.init_radius.to_bits());
        let gi = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                model: row.model.clone(),
                method: row.method.clone(),
                k: row.k.clone(),
                rate: row.rate,
                init_radius: row.init_radius,
                runs: Vec::new(),
            });
            run_index.push(HashMap::new());
            groups.len() - 1
        });
        let g = &mut groups[gi];
        let ri = *run_index[gi].entry(row.run).or_insert_with(|| {
            g.runs.push(Trace { distances: Vec::new(), touched_box: false, failed: false });
            g.runs.len() - 1
        });
        let run = &mut g.runs[ri];
        if row.dist_ref.is_nan() {
            run.failed = true;
        } else {
            if row.iter != run.distances.len() {
                return Err(Error::InvalidArgument(format!(
                    "run {} of {} out of order at iteration {}",
                    row.run, row.model, row.iter
                )));
            }
            run.distances.push(row.dist_ref);
            run.touched_box |= row.on_box;
        }
    }
    groups.into_iter().map(summarize_group).collect()
}

/// Summary straight from in-memory results.
pub fn summarize_results(results: &[CellResult]) -> Result<Vec<SummaryRow>> {
    results
        .iter()
        .map(|res| {
            summarize_group(Group {
                model: res.cell.model_key(),
                method: res.cell.method(),
                k: res.cell.k.to_string(),
                rate: res.cell.rate,
                init_radius: res.cell.init_radius,
                runs: res
                    .records
                    .iter()
                    .map(|r| Trace {
                        distances: r.distances.clone(),
                        touched_box: r.on_box.iter().any(|&b| b),
                        failed: r.failure.is_some(),
                    })
                    .collect(),
            })
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, rows)?;
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// One file per cell with `iter` and `log10` distances of every run as
/// columns, the axes of a log-distance trajectory plot.
pub fn write_figure_files(rows: &[TrajectoryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut order: Vec<(String, Vec<&TrajectoryRow>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rows.iter().filter(|r| !r.dist_ref.is_nan()) {
        let name = format!("{}_{}_rate{:e}_r{:e}", slug(&row.model), slug(&row.method), row.rate, row.init_radius);
        let i = *index.entry(name.clone()).or_insert_with(|| {
            order.push((name, Vec::new()));
            order.len() - 1
        });
        order[i].1.push(row);
    }
    let mut paths = Vec::new();
    for (name, cell_rows) in order {
        let mut runs: Vec<usize> = cell_rows.iter().map(|r| r.run).collect();
        runs.sort_unstable();
        runs.dedup();
        let iters = cell_rows.iter().map(|r| r.iter).max().unwrap_or(0) + 1;
        let mut grid = vec![vec![f64::NAN; runs.len()]; iters];
        for r in &cell_rows {
            let col = runs.binary_search(&r.run).expect("run listed");
            grid[r.iter][col] = r.dist_ref.log10();
        }
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(runs.iter().map(|r| format!("run_{r}")));
        w.write_record(&header)?;
        for (n, vals) in grid.iter().enumerate() {
            let mut rec = vec![n.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(cell: &str, runs: &[Vec<f64>]) -> Vec<TrajectoryRow> {
        let mut out = Vec::new();
        for (run, d) in runs.iter().enumerate() {
            for (iter, &dist) in d.iter().enumerate() {
                out.push(TrajectoryRow {
                    model: cell.into(),
                    method: "gd".into(),
                    k: "inf".into(),
                    rate: 1.1,
                    init_radius: 1.0,
                    run,
                    iter,
                    dist_ref: dist,
                    dist_alt: None,
                    on_box: false,
                });
            }
        }
        out
    }

    #[test]
    fn gradient_descent_on_x_squared_rate() {
        // x ← x − 1.1·2x from x0 = −1
        let d: Vec<f64> = (0..20).map(|n| 1.2f64.powi(n)).collect();
        let s = summarize(&rows("x2", &[d.clone(), d])).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].median_rate - 1.2).abs() < 1e-9);
        assert_eq!(s[0].frac_diverged, 1.0);
    }

    #[test]
    fn contracting_cell_never_diverges() {
        let d: Vec<f64> = (0..20).map(|n| 0.5f64.powi(n)).collect();
        let s = summarize(&rows("c", &[d])).unwrap();
        assert_eq!(s[0].diverged, 0);
        assert_eq!(s[0].max_dist, 1.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_missing_alt() {
        let r = rows("m", &[vec![1.0, 2.0]]);
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for row in &r {
                w.serialize(row).unwrap();
            }
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,method,k,rate,init_radius,run,iter,dist_ref,dist_alt,on_box\n"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), r);
    }
}
