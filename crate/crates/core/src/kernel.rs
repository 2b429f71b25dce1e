//! Exact population loss of the teacher-student objective.
//!
//! For `x` uniform on the sphere `S^{d-1}` and unit vectors `u`, `v`,
//! `E[σ(u·x) σ(v·x)] = κ(u·v)` with
//!
//! ```text
//! κ(t) = ((π − arccos t)·t + √(1 − t²)) / (2πd)
//! ```
//!
//! Expanding the square in the loss gives a sum of `κ` terms over student
//! pairs, teacher pairs and student-teacher pairs, so the loss and its
//! gradient cost `O(m²d)` with no sampling. [`mc_loss`] is the sampling
//! estimator used to validate that claim.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::WeightMatrix;

/// Round-off allowance for loss values and `|t| ≤ 1` checks.
pub const EPS_FP: f64 = 1e-12;
/// Rows with smaller Euclidean norm are treated as exactly zero.
pub const EPS_ZERO: f64 = 1e-12;

/// Samples per Monte-Carlo chunk; each chunk owns one RNG stream.
const MC_CHUNK: usize = 8192;
/// Below this many live rows the pair sums run on the calling thread.
const PAR_MIN_ROWS: usize = 96;

/// Sizes of one teacher-student problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// Student width `m`.
    pub width: usize,
    /// Teacher width `M`.
    pub teachers: usize,
    /// Input dimension `d`.
    pub dim: usize,
}

impl ProblemConfig {
    pub fn new(width: usize, teachers: usize, dim: usize) -> Result<Self> {
        let c = Self { width, teachers, dim };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.teachers < 1 || self.dim < self.teachers {
            return Err(Error::Config(format!("need d >= M >= 1, got M = {}, d = {}", self.teachers, self.dim)));
        }
        if self.width < 1 {
            return Err(Error::Config("student width must be >= 1".into()));
        }
        Ok(())
    }

    /// Over-realized (or exactly realized) regime, `m ≥ M`.
    pub fn is_realizable(&self) -> bool {
        self.width >= self.teachers
    }

    pub fn with_width(&self, width: usize) -> Self {
        Self { width, ..*self }
    }

    pub(crate) fn check_shape(&self, w: &WeightMatrix) -> Result<()> {
        self.validate()?;
        if w.rows() != self.width || w.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.dim),
                got: format!("{}x{}", w.rows(), w.cols()),
            });
        }
        Ok(())
    }
}

/// A population loss value, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LossValue(f64);

impl LossValue {
    /// Clamps round-off below zero. Values under `-EPS_FP` indicate a bug
    /// upstream and are clamped as well, but trip a debug assertion.
    pub fn new(raw: f64) -> Self {
        debug_assert!(raw >= -EPS_FP * 1e3 || !raw.is_finite(), "loss {raw} far below zero");
        Self(if raw < 0.0 { 0.0 } else { raw })
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<LossValue> for f64 {
    fn from(l: LossValue) -> f64 {
        l.0
    }
}

/// Monte-Carlo estimate of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

fn clamp_unit(t: f64) -> Result<f64> {
    if t.is_nan() || t.abs() > 1.0 + EPS_FP {
        return Err(Error::Domain(format!("kernel argument {t} outside [-1, 1]")));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// ReLU arc-cosine kernel on `S^{d-1}`.
pub fn kappa(t: f64, d: usize) -> Result<f64> {
    let t = clamp_unit(t)?;
    Ok(kappa_unchecked(t, d as f64))
}

/// Derivative of [`kappa`] in `t`.
pub fn kappa_prime(t: f64, d: usize) -> Result<f64> {
    let t = clamp_unit(t)?;
    Ok(kappa_prime_unchecked(t, d as f64))
}

#[inline]
fn kappa_unchecked(t: f64, d: f64) -> f64 {
    ((PI - t.acos()) * t + (1.0 - t * t).max(0.0).sqrt()) / (2.0 * PI * d)
}

#[inline]
fn kappa_prime_unchecked(t: f64, d: f64) -> f64 {
    (PI - t.acos()) / (2.0 * PI * d)
}

/// Row norms and unit directions; zero rows get a zero direction.
fn polar(w: &WeightMatrix) -> (Vec<f64>, Array2<f64>) {
    let norms = w.row_norms();
    let mut dirs = w.as_array().clone();
    for (mut row, &r) in dirs.axis_iter_mut(Axis(0)).zip(&norms) {
        if r > EPS_ZERO {
            row /= r;
        } else {
            row.fill(0.0);
        }
    }
    (norms, dirs)
}

#[inline]
fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b).clamp(-1.0, 1.0)
}

/// Exact population loss via the kernel expansion.
pub fn population_loss(w: &WeightMatrix, config: &ProblemConfig) -> Result<LossValue> {
    config.check_shape(w)?;
    let d = config.dim as f64;
    let teachers = config.teachers;
    let (norms, dirs) = polar(w);
    let live: Vec<usize> = (0..w.rows()).filter(|&i| norms[i] > EPS_ZERO).collect();

    let k1 = kappa_unchecked(1.0, d);
    let k0 = kappa_unchecked(0.0, d);

    let pair_sum = |(a, &i): (usize, &usize)| {
        let ui = dirs.row(i);
        let mut acc = norms[i] * norms[i] * k1;
        for &ip in &live[a + 1..] {
            let t = cosine(ui, dirs.row(ip));
            acc += 2.0 * norms[i] * norms[ip] * kappa_unchecked(t, d);
        }
        acc
    };
    // Collect before summing so the addition order is fixed.
    let per_row: Vec<f64> = if live.len() >= PAR_MIN_ROWS {
        live.par_iter().enumerate().map(pair_sum).collect()
    } else {
        live.iter().enumerate().map(pair_sum).collect()
    };
    let student: f64 = per_row.into_iter().sum();

    let cross: f64 = live
        .iter()
        .map(|&i| {
            let ui = dirs.row(i);
            norms[i] * (0..teachers).map(|j| kappa_unchecked(ui[j].clamp(-1.0, 1.0), d)).sum::<f64>()
        })
        .sum();

    let teacher = teachers as f64 * k1 + (teachers * (teachers - 1)) as f64 * k0;
    Ok(LossValue::new(student + teacher - 2.0 * cross))
}

/// Gradient of [`population_loss`] with respect to every entry of `W`.
///
/// Zero rows (norm below [`EPS_ZERO`]) get a zero gradient.
pub fn population_grad(w: &WeightMatrix, config: &ProblemConfig) -> Result<Array2<f64>> {
    Ok(population_loss_and_grad(w, config)?.1)
}

/// Loss and gradient from one pass over the neuron pairs.
pub fn population_loss_and_grad(w: &WeightMatrix, config: &ProblemConfig) -> Result<(LossValue, Array2<f64>)> {
    config.check_shape(w)?;
    let d = config.dim as f64;
    let (norms, dirs) = polar(w);
    let m = w.rows();
    let live: Vec<usize> = (0..m).filter(|&i| norms[i] > EPS_ZERO).collect();

    // ∂/∂w [|w||v| κ(t)] = |v| (κ(t) − t κ'(t)) ŵ + |v| κ'(t) v̂
    let per_row = |&i: &usize| {
        let ui = dirs.row(i);
        let mut g = Array1::<f64>::zeros(config.dim);
        let mut along = 0.0;
        let mut loss = 0.0;
        for &ip in &live {
            let t = cosine(ui, dirs.row(ip));
            let k = kappa_unchecked(t, d);
            let kp = kappa_prime_unchecked(t, d);
            loss += norms[i] * norms[ip] * k;
            along += norms[ip] * (k - t * kp);
            g.scaled_add(norms[ip] * kp, &dirs.row(ip));
        }
        g *= 2.0;
        along *= 2.0;
        for j in 0..config.teachers {
            let t = ui[j].clamp(-1.0, 1.0);
            let k = kappa_unchecked(t, d);
            let kp = kappa_prime_unchecked(t, d);
            loss -= 2.0 * norms[i] * k;
            along -= 2.0 * (k - t * kp);
            g[j] -= 2.0 * kp;
        }
        g.scaled_add(along, &ui);
        (i, loss, g)
    };
    let rows: Vec<(usize, f64, Array1<f64>)> = if live.len() >= PAR_MIN_ROWS {
        live.par_iter().map(per_row).collect()
    } else {
        live.iter().map(per_row).collect()
    };

    let teachers = config.teachers;
    let mut loss =
        teachers as f64 * kappa_unchecked(1.0, d) + (teachers * (teachers - 1)) as f64 * kappa_unchecked(0.0, d);
    let mut grad = Array2::zeros((m, config.dim));
    for (i, l, g) in rows {
        loss += l;
        grad.row_mut(i).assign(&g);
    }
    Ok((LossValue::new(loss), grad))
}

/// Point drawn uniformly from `S^{d-1}` (normalized Gaussian).
pub fn sample_sphere<R: rand::Rng + ?Sized>(rng: &mut R, d: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), d);
    loop {
        let mut sq = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            sq += *v * *v;
        }
        if sq > 0.0 {
            let inv = sq.sqrt().recip();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Student output minus teacher output at a single input.
pub(crate) fn residual(w: &WeightMatrix, teachers: usize, x: &[f64]) -> f64 {
    let xv = ndarray::ArrayView1::from(x);
    let student: f64 = w.as_array().axis_iter(Axis(0)).map(|row| row.dot(&xv).max(0.0)).sum();
    let teacher: f64 = x[..teachers].iter().map(|v| v.max(0.0)).sum();
    student - teacher
}

/// Monte-Carlo estimate of the population loss from `n` sphere samples.
///
/// Samples are split into fixed chunks, each with its own stream of the
/// seeded generator, so the result does not depend on the thread count.
pub fn mc_loss(w: &WeightMatrix, config: &ProblemConfig, n: usize, seed: u64) -> Result<McEstimate> {
    config.check_shape(w)?;
    if n == 0 {
        return Err(Error::Domain("mc_loss needs n >= 1".into()));
    }
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, c as u64);
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut x = vec![0.0; config.dim];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                sample_sphere(&mut rng, config.dim, &mut x);
                let r = residual(w, config.teachers, &x);
                let sq = r * r;
                s += sq;
                s2 += sq * sq;
            }
            (s, s2)
        })
        .collect();
    let (sum, sumsq) = partial.into_iter().fold((0.0, 0.0), |(a, b), (s, s2)| (a + s, b + s2));
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    Ok(McEstimate { mean, stderr: (var / nf).sqrt(), n_samples: n, seed })
}

/// The teacher embedded as a student of width `M`: the first `M` rows of
/// the `d × d` identity.
pub fn teacher_weights(config: &ProblemConfig) -> WeightMatrix {
    let mut w = WeightMatrix::zeros(config.teachers, config.dim);
    for j in 0..config.teachers {
        w.as_array_mut()[[j, j]] = 1.0;
    }
    w
}
