//! Matching two solutions neuron-by-neuron, overlap statistics of type
//! vectors, and loss barriers along linear paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete, Poisson};

use crate::error::{Error, Result};
use crate::kernel::{population_loss, ProblemConfig, EPS_ZERO};
use crate::manifold::{classify, ClassifiedSolution, TypeVector, CLASSIFY_TOL};
use crate::{rng, WeightMatrix};

/// Largest `m − M` accepted by the exact overlap computation.
pub const EXACT_OVERLAP_LIMIT: usize = 4096;
/// `λ = 0.0, 0.1, …, 1.0`.
pub const DEFAULT_GRID: usize = 11;

const OVERLAP_MC_CHUNK: usize = 1024;

/// Row reordering of the second solution: slot `k` of the permuted matrix
/// receives row `source[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    source: Vec<usize>,
}

impl Permutation {
    pub fn new(source: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; source.len()];
        for &s in &source {
            if s >= source.len() || std::mem::replace(&mut seen[s], true) {
                return Err(Error::Domain(format!("{source:?} is not a bijection")));
            }
        }
        Ok(Self { source })
    }

    pub fn identity(m: usize) -> Self {
        Self { source: (0..m).collect() }
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn apply(&self, w: &WeightMatrix) -> Result<WeightMatrix> {
        if w.rows() != self.source.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows", self.source.len()),
                got: format!("{} rows", w.rows()),
            });
        }
        Ok(w.select_rows(&self.source))
    }
}

/// Bookkeeping of a type-respecting matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// Per type, slots holding a type-`j` neuron in both solutions.
    pub matched_sets: Vec<Vec<usize>>,
    /// Slots where both solutions have a zero row.
    pub zero_pairs: Vec<usize>,
    /// Slots of the first solution left without a same-type partner.
    pub unmatched_1: Vec<usize>,
    /// Rows of the second solution (original indices) placed as leftovers.
    pub unmatched_2: Vec<usize>,
    /// Neurons per type in each solution.
    pub counts_1: Vec<usize>,
    pub counts_2: Vec<usize>,
    pub overlap_c: usize,
    pub proportion_p: f64,
    /// Per type, summed type coordinate of matched neurons in each solution.
    pub matched_mass: Vec<(f64, f64)>,
}

impl MatchReport {
    /// CSV columns `type, alpha1, alpha2, matched, gamma1, gamma2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["type", "alpha1", "alpha2", "matched", "gamma1", "gamma2"])?;
        for (j, set) in self.matched_sets.iter().enumerate() {
            let (g1, g2) = self.matched_mass[j];
            w.write_record([
                (j + 1).to_string(),
                (self.counts_1[j] as i64 - 1).to_string(),
                (self.counts_2[j] as i64 - 1).to_string(),
                set.len().to_string(),
                format!("{g1:.16e}"),
                format!("{g2:.16e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Losses along `λ·W1 + (1 − λ)·W2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierProfile {
    pub lambdas: Vec<f64>,
    pub losses: Vec<f64>,
    /// `(L(W1), L(W2))`.
    pub endpoint_losses: (f64, f64),
    pub barrier: f64,
}

impl BarrierProfile {
    /// Loss above the chord between the endpoint losses, per grid point.
    pub fn excess(&self) -> Vec<f64> {
        let (l1, l2) = self.endpoint_losses;
        self.lambdas.iter().zip(&self.losses).map(|(&lam, &l)| l - (lam * l1 + (1.0 - lam) * l2)).collect()
    }

    /// CSV columns `lambda, loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "loss"])?;
        for (l, v) in self.lambdas.iter().zip(&self.losses) {
            w.write_record([format!("{l:.16e}"), format!("{v:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Overlap `C = Σ_j min(α1_j, α2_j) + M`.
pub fn overlap(a1: &TypeVector, a2: &TypeVector) -> Result<usize> {
    if a1.teachers() != a2.teachers() || a1.width() != a2.width() {
        return Err(Error::ShapeMismatch {
            expected: format!("M = {}, m = {}", a1.teachers(), a1.width()),
            got: format!("M = {}, m = {}", a2.teachers(), a2.width()),
        });
    }
    let shared: usize = a1.as_slice().iter().zip(a2.as_slice()).map(|(&x, &y)| x.min(y)).sum();
    Ok(shared + a1.teachers())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapMethod {
    Exact,
    MonteCarlo { n: usize, seed: u64 },
}

/// Mean and standard error of a Monte-Carlo overlap proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

fn check_overlap_sizes(width: usize, teachers: usize) -> Result<()> {
    if teachers == 0 || width < teachers {
        return Err(Error::UnsupportedRegime(format!(
            "expected overlap needs m >= M >= 1, got m = {width}, M = {teachers}"
        )));
    }
    Ok(())
}

/// `T(m, M) = E[C]/m` under multinomial type vectors.
pub fn expected_overlap(width: usize, teachers: usize, method: OverlapMethod) -> Result<f64> {
    match method {
        OverlapMethod::Exact => expected_overlap_exact(width, teachers),
        OverlapMethod::MonteCarlo { n, seed } => Ok(expected_overlap_mc(width, teachers, n, seed)?.mean),
    }
}

/// `1 − (M/2m)·E|X − Y|` with `X, Y ~ Binomial(m − M, 1/M)` i.i.d.
pub fn expected_overlap_exact(width: usize, teachers: usize) -> Result<f64> {
    check_overlap_sizes(width, teachers)?;
    let n = width - teachers;
    if n > EXACT_OVERLAP_LIMIT {
        return Err(Error::Size(format!("m − M = {n} exceeds {EXACT_OVERLAP_LIMIT}; use the Monte-Carlo method")));
    }
    if n == 0 || teachers == 1 {
        return Ok(1.0);
    }
    let dist = Binomial::new(1.0 / teachers as f64, n as u64).map_err(|e| Error::Domain(e.to_string()))?;
    let pmf: Vec<f64> = (0..=n as u64).map(|k| dist.pmf(k)).collect();
    Ok(1.0 - teachers as f64 / (2.0 * width as f64) * mean_abs_difference(&pmf))
}

/// `E|X − Y|` for `X, Y` i.i.d. with the given pmf on `0, 1, 2, …`.
fn mean_abs_difference(pmf: &[f64]) -> f64 {
    // E|X − Y| = 2 Σ_x p_x Σ_{y<x} p_y (x − y), with running sums of p_y and y·p_y.
    let (mut cdf, mut first_moment, mut mean_abs) = (0.0, 0.0, 0.0);
    for (x, &px) in pmf.iter().enumerate() {
        mean_abs += 2.0 * px * (x as f64 * cdf - first_moment);
        cdf += px;
        first_moment += x as f64 * px;
    }
    mean_abs
}

pub fn expected_overlap_mc(width: usize, teachers: usize, n: usize, seed: u64) -> Result<OverlapEstimate> {
    check_overlap_sizes(width, teachers)?;
    if n == 0 {
        return Err(Error::Domain("Monte-Carlo overlap needs n >= 1".into()));
    }
    let chunks = n.div_ceil(OVERLAP_MC_CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let mut r = rng::stream(seed, c as u64);
            let len = OVERLAP_MC_CHUNK.min(n - c * OVERLAP_MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let a1 = TypeVector::sample(width, teachers, &mut r)?;
                let a2 = TypeVector::sample(width, teachers, &mut r)?;
                let p = overlap(&a1, &a2)? as f64 / width as f64;
                s += p;
                s2 += p * p;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sum, sumsq) = partial.into_iter().fold((0.0, 0.0), |(a, b), (s, s2)| (a + s, b + s2));
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    Ok(OverlapEstimate { mean, stderr: (var / nf).sqrt(), n })
}

/// Gaussian approximation `1 − √(t(1 − t)/π)` of `T(m, M)` at `t = M/m`.
///
/// It treats the per-type counts as normal, which needs their mean
/// `(m − M)/M = 1/t − 1` to grow. With `t` held fixed the counts stay
/// Poisson instead, and the actual limit is
/// [`proportional_limit_overlap`]; at `t = 1/2` the two differ by about 0.02.
pub fn limit_overlap(t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 1]")));
    }
    Ok(1.0 - (t * (1.0 - t) / std::f64::consts::PI).sqrt())
}

/// Limit of `T(m, M)` as `m, M → ∞` with `M/m → t`: per-type counts become
/// i.i.d. Poisson with mean `1/t − 1`, so the limit is
/// `1 − (t/2)·E|X − Y|` with `X, Y ~ Poisson(1/t − 1)`.
pub fn proportional_limit_overlap(t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 1]")));
    }
    let lambda = 1.0 / t - 1.0;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?;
    let last = (lambda + 20.0 * lambda.sqrt() + 30.0).ceil() as u64;
    let pmf: Vec<f64> = (0..=last).map(|k| dist.pmf(k)).collect();
    Ok(1.0 - t / 2.0 * mean_abs_difference(&pmf))
}

/// Rows of one type sorted by value, largest first; ties keep index order.
fn ranked(c: &ClassifiedSolution, label: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..c.labels.len()).filter(|&i| c.labels[i] == label).collect();
    rows.sort_by(|&a, &b| c.values[b].total_cmp(&c.values[a]));
    rows
}

/// Sorted type matching on already-labelled solutions.
///
/// Within each type the k-th largest neuron of the second solution takes the
/// slot of the k-th largest neuron of the first. Zero rows pair with zero
/// rows. Everything left over fills the free slots in index order.
pub fn match_labelled(c1: &ClassifiedSolution, c2: &ClassifiedSolution) -> Result<(Permutation, MatchReport)> {
    let m = c1.labels.len();
    if c2.labels.len() != m || c1.counts.len() != c2.counts.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("m = {m}, M = {}", c1.counts.len()),
            got: format!("m = {}, M = {}", c2.labels.len(), c2.counts.len()),
        });
    }
    let teachers = c1.counts.len();
    let mut slot: Vec<Option<usize>> = vec![None; m];
    let mut used = vec![false; m];
    let mut matched_sets = Vec::with_capacity(teachers);
    let mut matched_mass = Vec::with_capacity(teachers);

    for j in 1..=teachers {
        let (s1, s2) = (ranked(c1, j), ranked(c2, j));
        let mut set = Vec::new();
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&a, &b) in s1.iter().zip(&s2) {
            slot[a] = Some(b);
            used[b] = true;
            set.push(a);
            g1 += c1.values[a];
            g2 += c2.values[b];
        }
        set.sort_unstable();
        matched_sets.push(set);
        matched_mass.push((g1, g2));
    }

    let z1: Vec<usize> = (0..m).filter(|&i| c1.labels[i] == 0).collect();
    let z2: Vec<usize> = (0..m).filter(|&i| c2.labels[i] == 0).collect();
    let mut zero_pairs = Vec::new();
    for (&a, &b) in z1.iter().zip(&z2) {
        slot[a] = Some(b);
        used[b] = true;
        zero_pairs.push(a);
    }

    let unmatched_1: Vec<usize> = (0..m).filter(|&i| slot[i].is_none()).collect();
    let unmatched_2: Vec<usize> = (0..m).filter(|&i| !used[i]).collect();
    for (&a, &b) in unmatched_1.iter().zip(&unmatched_2) {
        slot[a] = Some(b);
    }
    let source: Vec<usize> = slot.into_iter().map(|s| s.expect("every slot filled")).collect();
    let overlap_c: usize = matched_sets.iter().map(Vec::len).sum();

    let report = MatchReport {
        matched_sets,
        zero_pairs,
        unmatched_1,
        unmatched_2,
        counts_1: c1.counts.clone(),
        counts_2: c2.counts.clone(),
        overlap_c,
        proportion_p: overlap_c as f64 / m as f64,
        matched_mass,
    };
    Ok((Permutation::new(source)?, report))
}

/// Sorted type matching of two manifold solutions.
pub fn best_permutation(
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    config: &ProblemConfig,
) -> Result<(Permutation, MatchReport)> {
    let c1 = classify(w1, config, CLASSIFY_TOL)?;
    let c2 = classify(w2, config, CLASSIFY_TOL)?;
    match_labelled(&c1, &c2)
}

/// Labels each row by its largest positive teacher coordinate, for weights
/// that are not (yet) on the manifold, e.g. under-realized or unconverged
/// solutions. Rows with norm at most `zero_tol`, or with no positive teacher
/// coordinate, are labelled zero.
pub fn dominant_labels(w: &WeightMatrix, config: &ProblemConfig, zero_tol: f64) -> Result<ClassifiedSolution> {
    config.check_shape(w)?;
    let teachers = config.teachers;
    let norms = w.row_norms();
    let mut labels = Vec::with_capacity(w.rows());
    let mut values = Vec::with_capacity(w.rows());
    let mut residual = 0.0f64;
    for (i, &norm) in norms.iter().enumerate() {
        let row = w.row(i);
        let best = (0..teachers).filter(|&k| row[k] > 0.0).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)));
        match best {
            Some(k) if norm > zero_tol.max(EPS_ZERO) => {
                let off = (norm * norm - row[k] * row[k]).max(0.0).sqrt();
                residual = residual.max(off);
                labels.push(k + 1);
                values.push(row[k]);
            }
            _ => {
                residual = residual.max(norm);
                labels.push(0);
                values.push(0.0);
            }
        }
    }
    Ok(ClassifiedSolution::from_labels(labels, values, teachers, residual))
}

/// Losses on `grid_points` evenly spaced `λ ∈ [0, 1]` and the maximum
/// excess over the endpoint chord. No permutation is applied.
pub fn barrier(
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    config: &ProblemConfig,
    grid_points: usize,
) -> Result<BarrierProfile> {
    config.check_shape(w1)?;
    config.check_shape(w2)?;
    if grid_points < 2 {
        return Err(Error::Config("barrier grid needs at least 2 points".into()));
    }
    let last = (grid_points - 1) as f64;
    let lambdas: Vec<f64> = (0..grid_points).map(|k| k as f64 / last).collect();
    let losses = lambdas
        .iter()
        .map(|&lam| {
            let w = WeightMatrix::lerp(w1, w2, lam)?;
            Ok(population_loss(&w, config)?.get())
        })
        .collect::<Result<Vec<f64>>>()?;
    let endpoint_losses = (losses[grid_points - 1], losses[0]);
    let mut profile = BarrierProfile { lambdas, losses, endpoint_losses, barrier: 0.0 };
    profile.barrier = profile.excess().into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(profile)
}

/// [`best_permutation`] followed by [`barrier`] against the permuted `W2`.
pub fn barrier_modulo_permutation(
    w1: &WeightMatrix,
    w2: &WeightMatrix,
    config: &ProblemConfig,
    grid_points: usize,
) -> Result<(BarrierProfile, MatchReport)> {
    let (perm, report) = best_permutation(w1, w2, config)?;
    let profile = barrier(w1, &perm.apply(w2)?, config, grid_points)?;
    Ok((profile, report))
}
