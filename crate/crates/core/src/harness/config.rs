//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "barrier_curve"
//! solution_source = "uniform"      # gd | sgd | uniform
//! replicates = 20
//! base_seed = 0
//! output_dir = "out/barrier"
//!
//! [grid]
//! m = [7, 8, 9]                    # or: m_range = [7, 36], or m_over_M = [1.5, 2.0]
//! teachers = [6]
//! dim = [8]                        # or: dim_extra = [2]  (d = M + extra)
//!
//! [train]                          # required for gd / sgd sources
//! mode = "gd"
//! lr0 = 8.0
//! max_iters = 200000
//! loss_tol = 1e-10
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ProblemConfig;
use crate::sparsity::ZERO_ROW_TOL;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    OverlapCurve,
    BarrierCurve,
    NormalizedBarrier,
    DoubleDescent,
    PqiVsWidth,
    PqiVsLr,
    UniformValidation,
    DecaySlope,
}

impl Experiment {
    pub fn id(&self) -> &'static str {
        match self {
            Experiment::OverlapCurve => "overlap_curve",
            Experiment::BarrierCurve => "barrier_curve",
            Experiment::NormalizedBarrier => "normalized_barrier",
            Experiment::DoubleDescent => "double_descent",
            Experiment::PqiVsWidth => "pqi_vs_width",
            Experiment::PqiVsLr => "pqi_vs_lr",
            Experiment::UniformValidation => "uniform_validation",
            Experiment::DecaySlope => "decay_slope",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionSource {
    Gd,
    Sgd,
    Uniform,
}

/// Problem sizes as a Cartesian product; combinations with `d < M` are
/// skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    /// Inclusive `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_range: Option<[usize; 2]>,
    /// Widths as multiples of `M`, rounded to the nearest integer.
    #[serde(default, rename = "m_over_M", skip_serializing_if = "Option::is_none")]
    pub m_over_teachers: Option<Vec<f64>>,
    pub teachers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_extra: Option<Vec<usize>>,
}

impl Grid {
    pub fn problems(&self) -> Result<Vec<ProblemConfig>> {
        let width_specs = [self.m.is_some(), self.m_range.is_some(), self.m_over_teachers.is_some()];
        if width_specs.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::Config("grid needs exactly one of m, m_range, m_over_M".into()));
        }
        if self.dim.is_some() == self.dim_extra.is_some() {
            return Err(Error::Config("grid needs exactly one of dim, dim_extra".into()));
        }
        if self.teachers.is_empty() {
            return Err(Error::Config("grid.teachers is empty".into()));
        }
        let mut out = Vec::new();
        for &teachers in &self.teachers {
            let widths: Vec<usize> = if let Some(ms) = &self.m {
                ms.clone()
            } else if let Some([lo, hi]) = self.m_range {
                (lo..=hi).collect()
            } else {
                let ratios = self.m_over_teachers.as_ref().expect("checked above");
                ratios.iter().map(|r| (r * teachers as f64).round() as usize).collect()
            };
            let dims: Vec<usize> = match (&self.dim, &self.dim_extra) {
                (Some(ds), _) => ds.clone(),
                (_, Some(extra)) => extra.iter().map(|e| teachers + e).collect(),
                _ => unreachable!(),
            };
            for &dim in &dims {
                for &width in &widths {
                    if dim >= teachers {
                        out.push(ProblemConfig::new(width, teachers, dim)?);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("grid produces no valid (m, M, d) combination".into()));
        }
        Ok(out)
    }
}

fn default_grid_points() -> usize {
    crate::align::DEFAULT_GRID
}
fn default_zero_tol() -> f64 {
    ZERO_ROW_TOL
}
fn default_p() -> f64 {
    0.5
}
fn default_q() -> f64 {
    1.0
}
fn default_dominant_zero_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub solution_source: SolutionSource,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    /// Zero-row threshold when labelling trained solutions by dominant
    /// coordinate.
    #[serde(default = "default_dominant_zero_tol")]
    pub label_zero_tol: f64,
    #[serde(default = "default_p")]
    pub pq_p: f64,
    #[serde(default = "default_q")]
    pub pq_q: f64,
    /// Learning rates swept by `pqi_vs_lr` and `pqi_vs_width`; each
    /// overrides `train.lr0`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lrs: Vec<f64>,
    /// Extra training attempts, each from a fresh seed, for runs that end
    /// above `train.loss_tol` although `m ≥ M`. Such runs sit at spurious
    /// stationary points rather than on the manifold.
    #[serde(default)]
    pub restarts: usize,
    /// Also evaluate uniform manifold samples in the PQ experiments.
    #[serde(default)]
    pub include_uniform: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub grid: Grid,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be >= 2".into()));
        }
        self.grid.problems()?;
        crate::sparsity::PQParams::new(self.pq_p, self.pq_q)?;
        let trained = matches!(self.solution_source, SolutionSource::Gd | SolutionSource::Sgd);
        match (&self.train, trained) {
            (None, true) => {
                return Err(Error::Config("gd/sgd sources need a [train] table".into()));
            }
            (Some(t), true) => {
                t.validate()?;
                let expected = match self.solution_source {
                    SolutionSource::Gd => crate::train::TrainMode::Gd,
                    _ => crate::train::TrainMode::Sgd,
                };
                if t.mode != expected {
                    return Err(Error::Config("train.mode disagrees with solution_source".into()));
                }
            }
            _ => {}
        }
        match self.experiment {
            Experiment::DoubleDescent | Experiment::UniformValidation | Experiment::PqiVsLr if !trained => {
                return Err(Error::Config(format!("{} needs a gd or sgd solution source", self.experiment.id())));
            }
            Experiment::PqiVsLr if self.lrs.is_empty() => {
                return Err(Error::Config("pqi_vs_lr needs a non-empty lrs list".into()));
            }
            _ => {}
        }
        if self.lrs.iter().any(|&lr| lr.is_nan() || lr <= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}
