//! Command-line front end.
//!
//! Exit codes: `0` success, `1` usage or input error, `2` numerical failure
//! (divergence, domain error, unclassifiable weights).

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lmclab::align::{
    barrier, best_permutation, expected_overlap_exact, expected_overlap_mc, limit_overlap, overlap,
    proportional_limit_overlap, DEFAULT_GRID,
};
use lmclab::harness::{self, ExperimentConfig};
use lmclab::kernel::{kappa, mc_loss, population_loss_and_grad};
use lmclab::manifold::{classify, is_global_min, project, sample_uniform, TypeVector, CLASSIFY_TOL, MEMBERSHIP_TOL};
use lmclab::sparsity::{pq_by_row, pq_flat, zero_rows, PQParams, ZERO_ROW_TOL};
use lmclab::train::{train, LrSchedule, TrainConfig};
use lmclab::{Error, ProblemConfig, Result, WeightMatrix};

#[derive(Parser)]
#[command(name = "lmclab", version, about = "Linear mode connectivity lab for two-layer ReLU teacher-student networks")]
struct Cli {
    /// Output format for tables printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the arc-cosine kernel at a cosine.
    Kappa {
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        #[arg(long)]
        dim: usize,
    },
    /// Population loss of a weight matrix, optionally with a Monte-Carlo check.
    Loss {
        #[command(flatten)]
        w: WeightsArg,
        /// Also estimate the loss from this many random inputs.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the gradient as CSV to this file.
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Train a student with population GD or online SGD.
    Train(TrainArgs),
    /// Draw a uniform sample from the global-minima manifold.
    Sample {
        #[command(flatten)]
        size: SizeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign each neuron to a teacher type.
    Classify {
        #[command(flatten)]
        w: WeightsArg,
        #[arg(long, default_value_t = CLASSIFY_TOL)]
        tol: f64,
        /// Write the labelled weights with off-type entries zeroed.
        #[arg(long)]
        project: Option<PathBuf>,
    },
    /// Permute the second solution's neurons to align with the first.
    Permute {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-type matching report as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Loss barrier along the straight path between two solutions.
    Barrier {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        /// Align the second solution before interpolating.
        #[arg(long)]
        permute: bool,
        /// Loss profile as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlap of two type vectors, or its expectation over random ones.
    Overlap {
        #[arg(long, requires = "teachers")]
        width: Option<usize>,
        #[arg(long)]
        teachers: Option<usize>,
        /// Monte-Carlo estimate from this many pairs instead of the exact value.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated type vector, e.g. `2,0,1`.
        #[arg(long, requires = "alpha2", conflicts_with_all = ["width", "mc"])]
        alpha1: Option<String>,
        #[arg(long)]
        alpha2: Option<String>,
    },
    /// PQ sparsity index of a weight matrix.
    Pqi {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = ZERO_ROW_TOL)]
        tol: f64,
    },
    /// Experiment sweeps.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run a sweep described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct WeightsArg {
    /// Headerless CSV with one neuron per row.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    teachers: usize,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    w1: PathBuf,
    #[arg(long)]
    w2: PathBuf,
    #[arg(long)]
    teachers: usize,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    teachers: usize,
    #[arg(long)]
    dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gd,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    WidthDecayed,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    size: SizeArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Gd)]
    mode: ModeArg,
    #[arg(long)]
    lr0: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::WidthDecayed)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long)]
    loss_tol: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn read_weights(path: &Path) -> Result<WeightMatrix> {
    WeightMatrix::read_csv(BufReader::new(File::open(path)?))
}

fn problem_for(w: &WeightMatrix, teachers: usize) -> Result<ProblemConfig> {
    ProblemConfig::new(w.rows(), teachers, w.cols())
}

fn parse_alpha(s: &str) -> Result<TypeVector> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| Error::Config(format!("bad type vector {s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    TypeVector::new(parts)
}

/// Shortest round-trip form, in scientific notation for tiny magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Prints `metric,value` rows.
fn print_table(rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let Format::Csv = cli.format;
    match cli.command {
        Command::Kappa { t, dim } => print_table(&[("kappa", num(kappa(t, dim)?))]),
        Command::Loss { w, mc, seed, grad } => {
            let weights = read_weights(&w.weights)?;
            let cfg = problem_for(&weights, w.teachers)?;
            let (loss, g) = population_loss_and_grad(&weights, &cfg)?;
            let mut rows = vec![("loss", num(loss.get()))];
            if let Some(n) = mc {
                let est = mc_loss(&weights, &cfg, n, seed)?;
                rows.push(("mc_mean", num(est.mean)));
                rows.push(("mc_stderr", num(est.stderr)));
            }
            if let Some(path) = grad {
                WeightMatrix::new(g)?.write_csv(File::create(path)?)?;
            }
            print_table(&rows)
        }
        Command::Train(a) => {
            let cfg = ProblemConfig::new(a.size.width, a.size.teachers, a.size.dim)?;
            let mut t = match a.mode {
                ModeArg::Gd => TrainConfig::gd(a.lr0, a.seed),
                ModeArg::Sgd => TrainConfig::sgd(a.lr0, a.batch, a.seed),
            };
            t.lr_schedule = match a.schedule {
                ScheduleArg::Constant => LrSchedule::Constant,
                ScheduleArg::WidthDecayed => LrSchedule::WidthDecayed,
            };
            t.max_iters = a.max_iters;
            t.grad_tol = a.grad_tol;
            if let Some(tol) = a.loss_tol {
                t.loss_tol = tol;
            }
            let res = train(&cfg, &t)?;
            res.weights.write_csv(File::create(&a.out)?)?;
            if let Some(path) = a.trace {
                res.write_trace_csv(File::create(path)?)?;
            }
            print_table(&[
                ("final_loss", num(res.final_loss.get())),
                ("iterations", res.iterations.to_string()),
                ("converged", res.converged.to_string()),
            ])
        }
        Command::Sample { size, seed, out } => {
            let cfg = ProblemConfig::new(size.width, size.teachers, size.dim)?;
            sample_uniform(&cfg, seed)?.write_csv(File::create(out)?)
        }
        Command::Classify { w, tol, project: proj } => {
            let weights = read_weights(&w.weights)?;
            let cfg = problem_for(&weights, w.teachers)?;
            let c = classify(&weights, &cfg, tol)?;
            let labels: Vec<String> = c.labels.iter().map(usize::to_string).collect();
            let alpha = c
                .alpha
                .as_ref()
                .map(|a| a.as_slice().iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            let mut rows = vec![
                ("labels", labels.join(" ")),
                ("alpha", alpha),
                ("zero_rows", c.zero_rows().to_string()),
                ("residual", num(c.residual)),
            ];
            if cfg.is_realizable() {
                rows.push(("global_min", is_global_min(&weights, &cfg, MEMBERSHIP_TOL)?.to_string()));
            }
            if let Some(path) = proj {
                project(&weights, &c)?.write_csv(File::create(path)?)?;
            }
            print_table(&rows)
        }
        Command::Permute { pair, out, report } => {
            let (w1, w2) = (read_weights(&pair.w1)?, read_weights(&pair.w2)?);
            let cfg = problem_for(&w1, pair.teachers)?;
            let (perm, rep) = best_permutation(&w1, &w2, &cfg)?;
            perm.apply(&w2)?.write_csv(File::create(out)?)?;
            if let Some(path) = report {
                rep.write_csv(File::create(path)?)?;
            }
            let source: Vec<String> = perm.source().iter().map(usize::to_string).collect();
            print_table(&[
                ("source", source.join(" ")),
                ("overlap_c", rep.overlap_c.to_string()),
                ("proportion_p", num(rep.proportion_p)),
            ])
        }
        Command::Barrier { pair, grid, permute, out } => {
            let (w1, w2) = (read_weights(&pair.w1)?, read_weights(&pair.w2)?);
            let cfg = problem_for(&w1, pair.teachers)?;
            let w2 = if permute { best_permutation(&w1, &w2, &cfg)?.0.apply(&w2)? } else { w2 };
            let profile = barrier(&w1, &w2, &cfg, grid)?;
            if let Some(path) = out {
                profile.write_csv(File::create(path)?)?;
            }
            print_table(&[("barrier", num(profile.barrier))])
        }
        Command::Overlap { width, teachers, mc, seed, alpha1, alpha2 } => {
            if let (Some(a1), Some(a2)) = (alpha1, alpha2) {
                let (a1, a2) = (parse_alpha(&a1)?, parse_alpha(&a2)?);
                let c = overlap(&a1, &a2)?;
                return print_table(&[
                    ("overlap_c", c.to_string()),
                    ("proportion_p", num(c as f64 / a1.width() as f64)),
                ]);
            }
            let (Some(m), Some(teachers)) = (width, teachers) else {
                return Err(Error::Config("give --width and --teachers, or --alpha1 and --alpha2".into()));
            };
            let mut rows = match mc {
                Some(n) => {
                    let est = expected_overlap_mc(m, teachers, n, seed)?;
                    vec![("mean_p", num(est.mean)), ("stderr", num(est.stderr))]
                }
                None => vec![("mean_p", num(expected_overlap_exact(m, teachers)?))],
            };
            let t = teachers as f64 / m as f64;
            rows.push(("gaussian_limit", num(limit_overlap(t)?)));
            rows.push(("proportional_limit", num(proportional_limit_overlap(t)?)));
            print_table(&rows)
        }
        Command::Pqi { weights, p, q, tol } => {
            let w = read_weights(&weights)?;
            let params = PQParams::new(p, q)?;
            print_table(&[
                ("pq_flat", num(pq_flat(&w, params)?)),
                ("pq_by_row", num(pq_by_row(&w, params)?)),
                ("zero_rows", zero_rows(&w, tol).to_string()),
                ("max_index", num(params.max_index(w.rows() * w.cols()))),
            ])
        }
        Command::Experiment { action: ExperimentAction::Run { config, out } } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let output = harness::run(&cfg)?;
            print_table(&[
                ("experiment", cfg.experiment.id().to_string()),
                ("result_rows", output.rows.len().to_string()),
                ("replicate_errors", output.errors.len().to_string()),
            ])
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
