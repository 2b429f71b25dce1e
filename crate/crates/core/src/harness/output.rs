//! Result rows, summaries and the files written next to them.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentConfig};
use crate::error::Result;

/// Bumped whenever a CSV column changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Below this mean direct barrier the normalized barrier is reported as null.
pub const NORMALIZE_FLOOR: f64 = 1e-12;

/// One metric of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    /// Solution source and any swept setting, e.g. `gd lr0=0.5`.
    pub variant: String,
    pub m: usize,
    #[serde(rename = "M")]
    pub teachers: usize,
    pub d: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// A replicate that raised an error instead of producing metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateError {
    pub experiment: String,
    pub variant: String,
    pub m: usize,
    #[serde(rename = "M")]
    pub teachers: usize,
    pub d: usize,
    pub replicate: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

/// Mean and standard error of one metric over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub variant: String,
    pub m: usize,
    #[serde(rename = "M")]
    pub teachers: usize,
    pub d: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Permuted over direct barrier, averaged separately, at one `(m, M, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub variant: String,
    pub m: usize,
    #[serde(rename = "M")]
    pub teachers: usize,
    pub d: usize,
    #[serde(rename = "m_over_M")]
    pub m_over_teachers: f64,
    pub mean_permuted: f64,
    pub mean_direct: f64,
    /// `None` when the mean direct barrier is below [`NORMALIZE_FLOOR`].
    pub normalized: Option<f64>,
    pub null: bool,
}

/// Least-squares fit of `ln(mean permuted barrier)` against `ln m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub variant: String,
    #[serde(rename = "M")]
    pub teachers: usize,
    pub d: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Widths with a positive mean barrier, i.e. those used in the fit.
    pub points: usize,
}

/// Groups rows by `(experiment, variant, m, M, d, metric)` in order of first
/// appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, String, usize, usize, usize, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<f64>> = HashMap::new();
    for r in rows {
        let key = (r.experiment.clone(), r.variant.clone(), r.m, r.teachers, r.d, r.metric.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let (mean, stderr) = mean_stderr(&groups[&key]);
            let n = groups[&key].len();
            let (experiment, variant, m, teachers, d, metric) = key;
            SummaryRow { experiment, variant, m, teachers, d, metric, n, mean, stderr }
        })
        .collect()
}

/// Sample mean and standard error; the error is `0` for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn mean_of(summary: &[SummaryRow], s: &SummaryRow, metric: &str) -> Option<f64> {
    summary
        .iter()
        .find(|o| {
            o.metric == metric
                && o.variant == s.variant
                && (o.m, o.teachers, o.d) == (s.m, s.teachers, s.d)
                && o.experiment == s.experiment
        })
        .map(|o| o.mean)
}

/// Mean permuted barrier divided by mean direct barrier per `(m, M, d)`.
pub fn normalized_barrier_summary(rows: &[ResultRow]) -> Vec<NormalizedRow> {
    let summary = summarize(rows);
    summary
        .iter()
        .filter(|s| s.metric == "barrier_direct")
        .filter_map(|s| {
            let permuted = mean_of(&summary, s, "barrier_permuted")?;
            let null = s.mean < NORMALIZE_FLOOR;
            Some(NormalizedRow {
                variant: s.variant.clone(),
                m: s.m,
                teachers: s.teachers,
                d: s.d,
                m_over_teachers: s.m as f64 / s.teachers as f64,
                mean_permuted: permuted,
                mean_direct: s.mean,
                normalized: (!null).then(|| permuted / s.mean),
                null,
            })
        })
        .collect()
}

/// Power-law decay of the mean permuted barrier in the width, one fit per
/// `(variant, M, d)`.
pub fn decay_slope(rows: &[ResultRow]) -> Vec<SlopeFit> {
    let summary = summarize(rows);
    let mut order: Vec<(String, usize, usize)> = Vec::new();
    let mut points: HashMap<(String, usize, usize), Vec<(f64, f64)>> = HashMap::new();
    for s in summary.iter().filter(|s| s.metric == "barrier_permuted") {
        let key = (s.variant.clone(), s.teachers, s.d);
        let entry = points.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if s.mean > 0.0 {
            entry.push(((s.m as f64).ln(), s.mean.ln()));
        }
    }
    order
        .into_iter()
        .map(|key| {
            let pts = &points[&key];
            let (slope, intercept) = least_squares(pts);
            SlopeFit { variant: key.0, teachers: key.1, d: key.2, slope, intercept, points: pts.len() }
        })
        .collect()
}

/// Ordinary least squares `y = slope·x + intercept`; NaN with fewer than two
/// distinct abscissae.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub const RESULT_COLUMNS: &[&str] = &["experiment", "variant", "m", "M", "d", "replicate", "seed", "metric", "value"];
pub const ERROR_COLUMNS: &[&str] = &["experiment", "variant", "m", "M", "d", "replicate", "seed", "kind", "message"];
pub const SUMMARY_COLUMNS: &[&str] = &["experiment", "variant", "m", "M", "d", "metric", "n", "mean", "stderr"];
pub const NORMALIZED_COLUMNS: &[&str] =
    &["variant", "m", "M", "d", "m_over_M", "mean_permuted", "mean_direct", "normalized", "null"];
pub const SLOPE_COLUMNS: &[&str] = &["variant", "M", "d", "slope", "intercept", "points"];

/// Writes `header` followed by one record per row, so that an empty table
/// still carries its columns.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Written as `manifest.toml`. The only file of a run that is not
/// reproducible byte for byte, because of the wall time.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub crate_version: String,
    pub csv_schema_version: u32,
    pub wall_time_seconds: f64,
    pub result_rows: usize,
    pub replicate_errors: usize,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

/// A matplotlib script that reads `summary.csv` from its own directory.
pub fn plot_stub(experiment: Experiment) -> String {
    let (metrics, ylabel, logx) = match experiment {
        Experiment::OverlapCurve => ("['overlap_p']", "mean proportion P", false),
        Experiment::BarrierCurve | Experiment::DoubleDescent => {
            ("['barrier_direct', 'barrier_permuted']", "barrier", false)
        }
        Experiment::NormalizedBarrier => ("['barrier_permuted']", "barrier", false),
        Experiment::DecaySlope => ("['barrier_permuted']", "barrier", true),
        Experiment::PqiVsWidth | Experiment::PqiVsLr => ("['pq_by_row', 'pq_flat']", "PQ index", false),
        Experiment::UniformValidation => ("['classified_strict']", "fraction", false),
    };
    let special = match experiment {
        Experiment::NormalizedBarrier => {
            "\nnorm = pd.read_csv(os.path.join(here, 'normalized.csv'))\n\
             for M, g in norm.groupby('M'):\n    \
             plt.figure(2)\n    \
             plt.plot(g['m_over_M'], g['normalized'], marker='o', label=f'M={M}')\n\
             plt.xlabel('m / M')\nplt.ylabel('permuted / direct')\nplt.legend()\n\
             plt.savefig(os.path.join(here, 'normalized.png'))\n"
        }
        _ => "",
    };
    format!(
        "# {id}: plots summary means against the width.\n\
         import os\n\
         import matplotlib.pyplot as plt\n\
         import pandas as pd\n\n\
         here = os.path.dirname(os.path.abspath(__file__))\n\
         s = pd.read_csv(os.path.join(here, 'summary.csv'))\n\
         for metric in {metrics}:\n    \
         for (variant, M, d), g in s[s.metric == metric].groupby(['variant', 'M', 'd']):\n        \
         plt.errorbar(g['m'], g['mean'], yerr=g['stderr'], marker='o', label=f'{{metric}} {{variant}} M={{M}} d={{d}}')\n\
         {xscale}\
         plt.xlabel('m')\n\
         plt.ylabel('{ylabel}')\n\
         plt.legend()\n\
         plt.savefig(os.path.join(here, '{id}.png'))\n{special}",
        id = experiment.id(),
        xscale = if logx { "plt.xscale('log')\nplt.yscale('log')\n" } else { "" },
    )
}
