//! Experiment sweeps: a TOML config in, CSV tables out.
//!
//! Every replicate runs with seed `base_seed + replicate`. Replicates run in
//! parallel but are merged in a fixed order (problem, variant, replicate), so
//! the CSV files of two runs with the same config are byte-identical. A
//! replicate that fails is logged to `errors.csv` and the sweep continues.
//!
//! Files written to `output_dir`:
//!
//! | File | Contents |
//! |------|----------|
//! | `results.csv` | one metric of one replicate per row |
//! | `summary.csv` | mean and standard error per metric and problem |
//! | `errors.csv` | failed replicates |
//! | `normalized.csv` | `normalized_barrier` only |
//! | `slope.csv` | `decay_slope` only |
//! | `manifest.toml` | config echo, versions, wall time |
//! | `plot.py` | plotting stub |

pub mod config;
pub mod output;

use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;

pub use config::{Experiment, ExperimentConfig, Grid, SolutionSource};
pub use output::{
    decay_slope, normalized_barrier_summary, summarize, Manifest, NormalizedRow, ReplicateError, ResultRow, SlopeFit,
    SummaryRow, CSV_SCHEMA_VERSION,
};

use crate::align::{barrier, dominant_labels, expected_overlap_exact, match_labelled, overlap, EXACT_OVERLAP_LIMIT};
use crate::error::{Error, Result};
use crate::kernel::{population_loss, ProblemConfig};
use crate::manifold::{classify, is_global_min, project, sample_uniform, ClassifiedSolution, TypeVector, CLASSIFY_TOL};
use crate::sparsity::{pq_by_row, pq_flat, zero_rows, PQParams};
use crate::{rng, WeightMatrix};

/// Tolerance for the manifold check on projected trained solutions.
pub const PROJECTED_MEMBERSHIP_TOL: f64 = 1e-6;

/// Everything a sweep produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub errors: Vec<ReplicateError>,
    pub summary: Vec<SummaryRow>,
    pub normalized: Vec<NormalizedRow>,
    pub slopes: Vec<SlopeFit>,
}

#[derive(Debug, Clone)]
struct Variant {
    label: String,
    source: SolutionSource,
    lr0: Option<f64>,
}

#[derive(Debug, Clone)]
struct Task {
    problem: ProblemConfig,
    variant: usize,
    replicate: usize,
}

/// Seed for the `k`-th solution drawn within one replicate.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    rng::stream(seed, 1 + k).next_u64()
}

fn source_label(source: SolutionSource) -> &'static str {
    match source {
        SolutionSource::Gd => "gd",
        SolutionSource::Sgd => "sgd",
        SolutionSource::Uniform => "uniform",
    }
}

fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let pq = matches!(cfg.experiment, Experiment::PqiVsWidth | Experiment::PqiVsLr);
    let trained = cfg.solution_source != SolutionSource::Uniform;
    let base = source_label(cfg.solution_source);
    let mut out = Vec::new();
    if pq && trained && !cfg.lrs.is_empty() {
        for &lr in &cfg.lrs {
            out.push(Variant { label: format!("{base} lr0={lr}"), source: cfg.solution_source, lr0: Some(lr) });
        }
    } else {
        out.push(Variant { label: base.to_string(), source: cfg.solution_source, lr0: None });
    }
    if pq && cfg.include_uniform && trained {
        out.push(Variant { label: "uniform".into(), source: SolutionSource::Uniform, lr0: None });
    }
    out
}

struct Solution {
    weights: WeightMatrix,
    loss: f64,
    /// `Some((iterations, converged, restarts))` for trained solutions.
    training: Option<(usize, bool, usize)>,
}

/// The `k`-th solution of a replicate. Attempt `a` of a trained solution
/// uses `sub_seed(seed, k + 2a)`; a replicate draws at most two solutions, so
/// seeds never collide.
fn solution(cfg: &ExperimentConfig, variant: &Variant, problem: &ProblemConfig, seed: u64, k: u64) -> Result<Solution> {
    match variant.source {
        SolutionSource::Uniform => {
            let weights = sample_uniform(problem, sub_seed(seed, k))?;
            let loss = population_loss(&weights, problem)?.get();
            Ok(Solution { weights, loss, training: None })
        }
        SolutionSource::Gd | SolutionSource::Sgd => {
            let mut t = cfg.train.clone().ok_or_else(|| Error::Config("missing [train] table".into()))?;
            if let Some(lr) = variant.lr0 {
                t.lr0 = lr;
            }
            let attempts = if problem.is_realizable() { cfg.restarts + 1 } else { 1 };
            let mut attempt = 0;
            loop {
                t.seed = sub_seed(seed, k + 2 * attempt as u64);
                let res = crate::train::train(problem, &t)?;
                attempt += 1;
                if res.converged || attempt == attempts {
                    return Ok(Solution {
                        weights: res.weights,
                        loss: res.final_loss.get(),
                        training: Some((res.iterations, res.converged, attempt - 1)),
                    });
                }
            }
        }
    }
}

/// Strict classification when it succeeds and covers every type, otherwise
/// labels by dominant coordinate. The flag reports which one was used.
pub fn label_solution(w: &WeightMatrix, problem: &ProblemConfig, zero_tol: f64) -> Result<(ClassifiedSolution, bool)> {
    if problem.is_realizable() {
        if let Ok(c) = classify(w, problem, CLASSIFY_TOL) {
            if c.covers_all_types() {
                return Ok((c, true));
            }
        }
    }
    Ok((dominant_labels(w, problem, zero_tol)?, false))
}

type Metrics = Vec<(String, f64)>;

fn push(metrics: &mut Metrics, name: &str, value: f64) {
    metrics.push((name.to_string(), value));
}

fn push_training(metrics: &mut Metrics, suffix: &str, s: &Solution) {
    push(metrics, &format!("loss{suffix}"), s.loss);
    if let Some((iters, converged, restarts)) = s.training {
        push(metrics, &format!("iterations{suffix}"), iters as f64);
        push(metrics, &format!("converged{suffix}"), f64::from(u8::from(converged)));
        push(metrics, &format!("restarts{suffix}"), restarts as f64);
    }
}

fn overlap_metrics(problem: &ProblemConfig, seed: u64) -> Result<Metrics> {
    let mut r = rng::stream(seed, 0);
    let a1 = TypeVector::sample(problem.width, problem.teachers, &mut r)?;
    let a2 = TypeVector::sample(problem.width, problem.teachers, &mut r)?;
    let c = overlap(&a1, &a2)?;
    Ok(vec![("overlap_p".into(), c as f64 / problem.width as f64)])
}

fn pair_metrics(cfg: &ExperimentConfig, variant: &Variant, problem: &ProblemConfig, seed: u64) -> Result<Metrics> {
    let s1 = solution(cfg, variant, problem, seed, 0)?;
    let s2 = solution(cfg, variant, problem, seed, 1)?;
    let (c1, strict1) = label_solution(&s1.weights, problem, cfg.label_zero_tol)?;
    let (c2, strict2) = label_solution(&s2.weights, problem, cfg.label_zero_tol)?;
    let (perm, report) = match_labelled(&c1, &c2)?;
    let direct = barrier(&s1.weights, &s2.weights, problem, cfg.grid_points)?;
    let permuted = barrier(&s1.weights, &perm.apply(&s2.weights)?, problem, cfg.grid_points)?;
    let mut m = Vec::new();
    push(&mut m, "barrier_direct", direct.barrier);
    push(&mut m, "barrier_permuted", permuted.barrier);
    push(&mut m, "overlap_p", report.proportion_p);
    let matched: f64 = report.matched_mass.iter().map(|g| g.0).sum();
    push(&mut m, "unmatched_mass", 1.0 - matched / problem.teachers as f64);
    push(&mut m, "labels_strict", f64::from(u8::from(strict1 && strict2)));
    push_training(&mut m, "_1", &s1);
    push_training(&mut m, "_2", &s2);
    Ok(m)
}

fn sparsity_metrics(cfg: &ExperimentConfig, variant: &Variant, problem: &ProblemConfig, seed: u64) -> Result<Metrics> {
    let s = solution(cfg, variant, problem, seed, 0)?;
    let params = PQParams::new(cfg.pq_p, cfg.pq_q)?;
    let mut m = Vec::new();
    push(&mut m, "pq_by_row", pq_by_row(&s.weights, params)?);
    push(&mut m, "pq_flat", pq_flat(&s.weights, params)?);
    push(&mut m, "zero_rows", zero_rows(&s.weights, cfg.zero_tol) as f64);
    push_training(&mut m, "", &s);
    Ok(m)
}

fn validation_metrics(
    cfg: &ExperimentConfig,
    variant: &Variant,
    problem: &ProblemConfig,
    seed: u64,
) -> Result<Metrics> {
    let s = solution(cfg, variant, problem, seed, 0)?;
    let (c, strict) = label_solution(&s.weights, problem, cfg.label_zero_tol)?;
    let mut m = Vec::new();
    push(&mut m, "classified_strict", f64::from(u8::from(strict)));
    if problem.is_realizable() {
        let on = c.covers_all_types() && is_global_min(&project(&s.weights, &c)?, problem, PROJECTED_MEMBERSHIP_TOL)?;
        push(&mut m, "on_manifold", f64::from(u8::from(on)));
    }
    for (j, &count) in c.counts.iter().enumerate() {
        push(&mut m, &format!("alpha_{}", j + 1), count as f64 - 1.0);
    }
    if problem.teachers == 1 {
        let mut values = c.values.clone();
        values.sort_by(|a, b| b.total_cmp(a));
        for (k, v) in values.iter().enumerate() {
            push(&mut m, &format!("value_rank_{}", k + 1), *v);
        }
    }
    push_training(&mut m, "", &s);
    Ok(m)
}

fn run_task(cfg: &ExperimentConfig, variants: &[Variant], task: &Task) -> Result<Metrics> {
    let seed = cfg.base_seed + task.replicate as u64;
    let variant = &variants[task.variant];
    match cfg.experiment {
        Experiment::OverlapCurve => overlap_metrics(&task.problem, seed),
        Experiment::BarrierCurve
        | Experiment::NormalizedBarrier
        | Experiment::DecaySlope
        | Experiment::DoubleDescent => pair_metrics(cfg, variant, &task.problem, seed),
        Experiment::PqiVsWidth | Experiment::PqiVsLr => sparsity_metrics(cfg, variant, &task.problem, seed),
        Experiment::UniformValidation => validation_metrics(cfg, variant, &task.problem, seed),
    }
}

/// Runs the sweep in memory without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let problems = cfg.grid.problems()?;
    let variants = variants(cfg);
    let mut tasks = Vec::new();
    for problem in &problems {
        for v in 0..variants.len() {
            for replicate in 0..cfg.replicates {
                tasks.push(Task { problem: *problem, variant: v, replicate });
            }
        }
    }
    let outcomes: Vec<Result<Metrics>> = tasks.par_iter().map(|t| run_task(cfg, &variants, t)).collect();

    let id = cfg.experiment.id();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (task, outcome) in tasks.iter().zip(outcomes) {
        let seed = cfg.base_seed + task.replicate as u64;
        let variant = variants[task.variant].label.clone();
        let p = task.problem;
        match outcome {
            Ok(metrics) => rows.extend(metrics.into_iter().map(|(metric, value)| ResultRow {
                experiment: id.to_string(),
                variant: variant.clone(),
                m: p.width,
                teachers: p.teachers,
                d: p.dim,
                replicate: task.replicate,
                seed,
                metric,
                value,
            })),
            Err(e) => errors.push(ReplicateError {
                experiment: id.to_string(),
                variant,
                m: p.width,
                teachers: p.teachers,
                d: p.dim,
                replicate: task.replicate,
                seed,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }

    let mut summary = summarize(&rows);
    if cfg.experiment == Experiment::OverlapCurve {
        for p in &problems {
            if p.width >= p.teachers && p.width <= EXACT_OVERLAP_LIMIT {
                summary.push(SummaryRow {
                    experiment: id.to_string(),
                    variant: "exact".into(),
                    m: p.width,
                    teachers: p.teachers,
                    d: p.dim,
                    metric: "overlap_p".into(),
                    n: 0,
                    mean: expected_overlap_exact(p.width, p.teachers)?,
                    stderr: 0.0,
                });
            }
        }
    }
    let normalized =
        if cfg.experiment == Experiment::NormalizedBarrier { normalized_barrier_summary(&rows) } else { Vec::new() };
    let slopes = if cfg.experiment == Experiment::DecaySlope { decay_slope(&rows) } else { Vec::new() };
    Ok(RunOutput { rows, errors, summary, normalized, slopes })
}

impl RunOutput {
    /// Writes every table plus the manifest and plotting stub into `dir`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path, wall_time_seconds: f64) -> Result<()> {
        use output::*;
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| std::fs::File::create(dir.join(name));
        let mut files = vec!["results.csv", "summary.csv", "errors.csv"];
        write_rows(&self.rows, RESULT_COLUMNS, create("results.csv")?)?;
        write_rows(&self.summary, SUMMARY_COLUMNS, create("summary.csv")?)?;
        write_rows(&self.errors, ERROR_COLUMNS, create("errors.csv")?)?;
        if cfg.experiment == Experiment::NormalizedBarrier {
            write_rows(&self.normalized, NORMALIZED_COLUMNS, create("normalized.csv")?)?;
            files.push("normalized.csv");
        }
        if cfg.experiment == Experiment::DecaySlope {
            write_rows(&self.slopes, SLOPE_COLUMNS, create("slope.csv")?)?;
            files.push("slope.csv");
        }
        std::fs::write(dir.join("plot.py"), plot_stub(cfg.experiment))?;
        files.push("plot.py");
        let manifest = Manifest {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            csv_schema_version: CSV_SCHEMA_VERSION,
            wall_time_seconds,
            result_rows: self.rows.len(),
            replicate_errors: self.errors.len(),
            files: files.iter().map(|f| f.to_string()).collect(),
            config: cfg.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }
}

/// Executes the sweep and, when `output_dir` is set, writes its files.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let out = execute(cfg)?;
    if let Some(dir) = &cfg.output_dir {
        out.write(cfg, dir, start.elapsed().as_secs_f64())?;
    }
    Ok(out)
}

/// A `double_descent` sweep whose width grid must reach below `M` and
/// beyond `2M` for every teacher count.
pub fn double_descent_run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    if cfg.experiment != Experiment::DoubleDescent || cfg.solution_source != SolutionSource::Gd {
        return Err(Error::Config("double_descent_run needs experiment = double_descent with gd".into()));
    }
    let problems = cfg.grid.problems()?;
    for &teachers in &cfg.grid.teachers {
        let widths: Vec<usize> = problems.iter().filter(|p| p.teachers == teachers).map(|p| p.width).collect();
        let below = widths.iter().any(|&m| m < teachers);
        let beyond = widths.iter().any(|&m| m > 2 * teachers);
        if !(below && beyond) {
            return Err(Error::Config(format!("width grid for M = {teachers} must include m < M and m > 2M")));
        }
    }
    run(cfg)
}
