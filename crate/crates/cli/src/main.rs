use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sgdk::experiments::{
    read_trajectory_csv, run_plan, summarize, threshold_table, write_figure_files, write_summary_csv,
    write_summary_json, write_trajectory_csv, ExperimentPlan,
};
use sgdk::mechanism::{GeometryOptions, DEFAULT_EPSILON, DEFAULT_SAMPLES};
use sgdk::problems::{generate_models, Family, Model};
use sgdk::thresholds::{write_threshold_csv, BatchSize};
use sgdk::verify::{run_criterion, VerifyOptions, CRITERIA};

#[derive(Parser)]
#[command(name = "sgdk", version, about = "SGD-k thresholds and desk-scale experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded QC or ST models as JSON files.
    GenModels {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate mechanism thresholds at both minimizers of each model.
    Thresholds {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Comma-separated batch sizes; `inf` for gradient descent.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<BatchSize>>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        geometry_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the default experiment plan for a family.
    Plan {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 2024)]
        model_seed: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a plan and write the per-iteration trajectories.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cell divergence summary of a trajectory CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also write one log-distance file per cell into this directory.
        #[arg(long)]
        figures: Option<PathBuf>,
    },
    /// Run the acceptance checks; exits nonzero if any fails.
    Verify {
        /// Comma-separated criterion numbers; all of them by default.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u8>>,
        #[arg(long, default_value_t = VerifyOptions::default().model_seed)]
        model_seed: u64,
        #[arg(long, default_value_t = VerifyOptions::default().seed)]
        seed: u64,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn gen_models(family: Family, seed: u64, out: &Path) -> Result<bool> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for model in generate_models(family, seed)? {
        let path = out.join(format!("{}.json", model.name()));
        model.save(seed, &path)?;
        println!("{}", path.display());
    }
    Ok(true)
}

fn thresholds(paths: &[PathBuf], ks: Option<&[BatchSize]>, opts: GeometryOptions, out: &Path) -> Result<bool> {
    let models = paths
        .iter()
        .map(|p| Model::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let (rows, failures) = threshold_table(&models, &opts, ks);
    write_threshold_csv(&rows, create(out)?)?;
    for (cell, err) in &failures {
        eprintln!("{cell}: {err}");
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(failures.is_empty())
}

fn write_plan(family: Family, model_seed: u64, seed: u64, out: &Path) -> Result<bool> {
    let plan = match family {
        Family::Qc => ExperimentPlan::default_qc(model_seed, seed),
        Family::St => ExperimentPlan::default_st(model_seed, seed),
    };
    serde_json::to_writer_pretty(create(out)?, &plan)?;
    Ok(true)
}

fn run(plan_path: &Path, out: &Path) -> Result<bool> {
    let file = File::open(plan_path).with_context(|| format!("opening {}", plan_path.display()))?;
    let mut plan: ExperimentPlan = serde_json::from_reader(BufReader::new(file))?;
    let base = plan_path.parent().unwrap_or(Path::new("."));
    for f in &mut plan.model_files {
        if f.is_relative() {
            *f = base.join(&*f);
        }
    }
    let models = plan.load_models()?;
    let results = run_plan(&plan, &models)?;
    write_trajectory_csv(&results, create(out)?)?;
    let failed: usize = results.iter().flat_map(|r| &r.records).filter(|r| r.failure.is_some()).count();
    let runs: usize = results.iter().map(|r| r.records.len()).sum();
    println!("{} cells, {runs} runs written to {}", results.len(), out.display());
    if failed > 0 {
        eprintln!("{failed} runs stopped early");
    }
    Ok(failed == 0)
}

fn summarize_cmd(input: &Path, out: &Path, json: Option<&Path>, figures: Option<&Path>) -> Result<bool> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rows = read_trajectory_csv(BufReader::new(file))?;
    let summary = summarize(&rows)?;
    write_summary_csv(&summary, create(out)?)?;
    if let Some(path) = json {
        write_summary_json(&summary, create(path)?)?;
    }
    if let Some(dir) = figures {
        let paths = write_figure_files(&rows, dir)?;
        println!("{} figure files in {}", paths.len(), dir.display());
    }
    println!("{} cells summarized to {}", summary.len(), out.display());
    Ok(true)
}

fn verify(only: Option<&[u8]>, opts: VerifyOptions) -> Result<bool> {
    let ids: Vec<u8> = match only {
        Some(ids) => ids.to_vec(),
        None => CRITERIA.collect(),
    };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.contains(id)) {
        bail!("no criterion {bad}; expected 1 to 10");
    }
    let mut all = true;
    for id in ids {
        let result = run_criterion(id, &opts)?;
        println!("{result}");
        all &= result.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenModels { family, seed, out } => gen_models(family, seed, &out),
        Command::Thresholds { models, k, epsilon, samples, geometry_seed, out } => thresholds(
            &models,
            k.as_deref(),
            GeometryOptions { epsilon, n_samples: samples, seed: geometry_seed, ..Default::default() },
            &out,
        ),
        Command::Plan { family, model_seed, seed, out } => write_plan(family, model_seed, seed, &out),
        Command::Run { plan, out } => run(&plan, &out),
        Command::Summarize { input, out, json, figures } => {
            summarize_cmd(&input, &out, json.as_deref(), figures.as_deref())
        }
        Command::Verify { only, model_seed, seed } => verify(only.as_deref(), VerifyOptions { model_seed, seed }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
