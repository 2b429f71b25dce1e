//! The zero-loss set for `m ≥ M`: every neuron is either zero or a positive
//! multiple of one teacher direction `e_j`, and for each teacher direction
//! the student weights on it sum to one.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ProblemConfig;
use crate::{rng, WeightMatrix};

pub const MEMBERSHIP_TOL: f64 = 1e-8;
pub const CLASSIFY_TOL: f64 = 1e-4;

/// Extra neurons per teacher type: type `j` holds `alpha[j] + 1` neurons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeVector(Vec<usize>);

impl TypeVector {
    pub fn new(alpha: Vec<usize>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("type vector needs M >= 1 entries".into()));
        }
        Ok(Self(alpha))
    }

    /// Type vector of a labelling where `counts[j]` neurons have type `j + 1`.
    /// `None` when some type is empty.
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return None;
        }
        Some(Self(counts.iter().map(|c| c - 1).collect()))
    }

    pub fn teachers(&self) -> usize {
        self.0.len()
    }

    /// Implied student width `Σα + M`.
    pub fn width(&self) -> usize {
        self.0.iter().sum::<usize>() + self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Draw from `Multinomial(m − M; 1/M, …, 1/M)` by sequential binomial
    /// conditioning.
    pub fn sample<R: Rng + ?Sized>(width: usize, teachers: usize, rng: &mut R) -> Result<Self> {
        if teachers == 0 || width < teachers {
            return Err(Error::UnsupportedRegime(format!(
                "type vectors need m >= M >= 1, got m = {width}, M = {teachers}"
            )));
        }
        let mut left = (width - teachers) as u64;
        let mut alpha = Vec::with_capacity(teachers);
        for j in 0..teachers {
            let rest = teachers - j;
            let a = if rest == 1 || left == 0 {
                left
            } else {
                Binomial::new(left, 1.0 / rest as f64).expect("valid binomial parameters").sample(rng)
            };
            alpha.push(a as usize);
            left -= a;
        }
        Ok(Self(alpha))
    }
}

/// Result of mapping each neuron onto a teacher type.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedSolution {
    /// `0` for a zero row, `j ∈ 1..=M` for type `j`.
    pub labels: Vec<usize>,
    /// The type's coordinate of each neuron (`0` for zero rows).
    pub values: Vec<f64>,
    /// Neurons per type, indexed `0..M` for types `1..=M`.
    pub counts: Vec<usize>,
    /// `None` when some type has no neuron, i.e. off the manifold.
    pub alpha: Option<TypeVector>,
    /// Largest second-largest entry magnitude over all rows.
    pub residual: f64,
}

impl ClassifiedSolution {
    pub fn covers_all_types(&self) -> bool {
        self.alpha.is_some()
    }

    pub fn zero_rows(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }

    pub(crate) fn from_labels(labels: Vec<usize>, values: Vec<f64>, teachers: usize, residual: f64) -> Self {
        let mut counts = vec![0; teachers];
        for &l in &labels {
            if l > 0 {
                counts[l - 1] += 1;
            }
        }
        let alpha = TypeVector::from_counts(&counts);
        Self { labels, values, counts, alpha, residual }
    }
}

fn require_realizable(config: &ProblemConfig) -> Result<()> {
    if !config.is_realizable() {
        return Err(Error::UnsupportedRegime(format!(
            "global-minima manifold is undefined for m = {} < M = {}",
            config.width, config.teachers
        )));
    }
    Ok(())
}

/// Exact manifold membership up to `tol`.
pub fn is_global_min(w: &WeightMatrix, config: &ProblemConfig, tol: f64) -> Result<bool> {
    config.check_shape(w)?;
    require_realizable(config)?;
    let teachers = config.teachers;
    let mut counts = vec![0usize; teachers];
    let mut sums = vec![0.0f64; teachers];
    for i in 0..w.rows() {
        let row = w.row(i);
        let mut big = None;
        for (k, &v) in row.iter().enumerate() {
            if k < teachers {
                sums[k] += v;
            }
            if v.abs() > tol {
                if k >= teachers || v < 0.0 || big.is_some() {
                    return Ok(false);
                }
                big = Some(k);
            }
        }
        if let Some(k) = big {
            counts[k] += 1;
        }
    }
    Ok(counts.iter().all(|&c| c >= 1) && sums.iter().all(|s| (s - 1.0).abs() <= tol))
}

/// Label each neuron by the single teacher coordinate above `tol`.
pub fn classify(w: &WeightMatrix, config: &ProblemConfig, tol: f64) -> Result<ClassifiedSolution> {
    config.check_shape(w)?;
    let teachers = config.teachers;
    let mut labels = Vec::with_capacity(w.rows());
    let mut values = Vec::with_capacity(w.rows());
    let mut residual = 0.0f64;
    for i in 0..w.rows() {
        let row = w.row(i);
        let mut big: Option<usize> = None;
        let (mut first, mut second) = (0.0f64, 0.0f64);
        for (k, &v) in row.iter().enumerate() {
            let a = v.abs();
            if a > first {
                second = first;
                first = a;
            } else if a > second {
                second = a;
            }
            if a > tol {
                if let Some(prev) = big {
                    return Err(Error::Classification {
                        row: i,
                        reason: format!("entries in columns {prev} and {k} both exceed {tol}"),
                    });
                }
                if v < 0.0 {
                    return Err(Error::Classification { row: i, reason: format!("negative entry {v} in column {k}") });
                }
                if k >= teachers {
                    return Err(Error::Classification {
                        row: i,
                        reason: format!("entry {v} in non-teacher column {k}"),
                    });
                }
                big = Some(k);
            }
        }
        residual = residual.max(second);
        match big {
            Some(k) => {
                labels.push(k + 1);
                values.push(row[k]);
            }
            None => {
                labels.push(0);
                values.push(0.0);
            }
        }
    }
    Ok(ClassifiedSolution::from_labels(labels, values, teachers, residual))
}

/// Keeps only each neuron's type coordinate and zeroes everything else.
///
/// Gradient descent stops at a small but positive loss, where off-type
/// entries are still of order `sqrt(loss)`; projecting with the labels of
/// [`classify`] or [`crate::align::dominant_labels`] yields the nearby
/// manifold point.
pub fn project(w: &WeightMatrix, labels: &ClassifiedSolution) -> Result<WeightMatrix> {
    if labels.labels.len() != w.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", w.rows()),
            got: format!("{} labels", labels.labels.len()),
        });
    }
    let mut out = WeightMatrix::zeros(w.rows(), w.cols());
    let a = out.as_array_mut();
    for (i, &l) in labels.labels.iter().enumerate() {
        if l > 0 {
            a[[i, l - 1]] = labels.values[i];
        }
    }
    Ok(out)
}

/// Uniformly random point of the manifold in the sense of a multinomial
/// type vector and uniform simplex weights within each type.
pub fn sample_uniform(config: &ProblemConfig, seed: u64) -> Result<WeightMatrix> {
    let mut rng = rng::seeded(seed);
    sample_uniform_with(config, &mut rng)
}

pub fn sample_uniform_with<R: Rng + ?Sized>(config: &ProblemConfig, rng: &mut R) -> Result<WeightMatrix> {
    config.validate()?;
    require_realizable(config)?;
    let alpha = TypeVector::sample(config.width, config.teachers, rng)?;
    let mut labels: Vec<usize> =
        alpha.as_slice().iter().enumerate().flat_map(|(j, &a)| std::iter::repeat_n(j + 1, a + 1)).collect();
    labels.shuffle(rng);
    sample_on_labels(config, &labels, rng)
}

/// Manifold point with a fixed type label per row (`1..=M`; every type must
/// appear). Weights within each type are uniform on the simplex, drawn as
/// normalized `Exp(1)` variables.
pub fn sample_on_labels<R: Rng + ?Sized>(
    config: &ProblemConfig,
    labels: &[usize],
    rng: &mut R,
) -> Result<WeightMatrix> {
    config.validate()?;
    if labels.len() != config.width {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", config.width),
            got: format!("{} labels", labels.len()),
        });
    }
    let teachers = config.teachers;
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > teachers) {
        return Err(Error::Config(format!("label {bad} outside 1..={teachers}")));
    }
    let draws: Vec<f64> = labels.iter().map(|_| Exp1.sample(rng)).collect();
    let mut totals = vec![0.0; teachers];
    for (&l, &z) in labels.iter().zip(&draws) {
        totals[l - 1] += z;
    }
    if totals.contains(&0.0) {
        return Err(Error::UnsupportedRegime("every teacher type needs a neuron".into()));
    }
    let mut w = WeightMatrix::zeros(config.width, config.dim);
    for (i, (&l, &z)) in labels.iter().zip(&draws).enumerate() {
        w.as_array_mut()[[i, l - 1]] = z / totals[l - 1];
    }
    Ok(w)
}
