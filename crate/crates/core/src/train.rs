//! Gradient descent on the exact population loss and online SGD on fresh
//! sphere samples.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{population_loss, population_loss_and_grad, sample_sphere, LossValue, ProblemConfig};
use crate::{rng, WeightMatrix};

/// Losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Gd,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr0` at every width.
    Constant,
    /// `lr0 / m`.
    WidthDecayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Standard deviation `1/(m·d)`.
    WidthDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitStd {
    Rule(InitRule),
    Explicit(f64),
}

impl InitStd {
    pub fn resolve(&self, config: &ProblemConfig) -> f64 {
        match *self {
            InitStd::Rule(InitRule::WidthDim) => 1.0 / (config.width * config.dim) as f64,
            InitStd::Explicit(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr0: f64,
    #[serde(default = "default_schedule")]
    pub lr_schedule: LrSchedule,
    /// Mini-batch size, SGD only.
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub max_iters: usize,
    pub loss_tol: f64,
    /// Stop once the gradient norm falls to this value; `0` disables the
    /// check. Useful for `m < M`, where no zero-loss point exists.
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "default_init")]
    pub init_std: InitStd,
    /// Loss recording stride for GD; evaluation stride for SGD.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> LrSchedule {
    LrSchedule::WidthDecayed
}
fn default_batch() -> usize {
    64
}
fn default_init() -> InitStd {
    InitStd::Rule(InitRule::WidthDim)
}
fn default_stride() -> usize {
    100
}

impl TrainConfig {
    pub fn gd(lr0: f64, seed: u64) -> Self {
        Self {
            mode: TrainMode::Gd,
            lr0,
            lr_schedule: LrSchedule::WidthDecayed,
            batch: default_batch(),
            max_iters: 200_000,
            loss_tol: 1e-10,
            grad_tol: 0.0,
            init_std: default_init(),
            stride: default_stride(),
            seed,
        }
    }

    pub fn sgd(lr0: f64, batch: usize, seed: u64) -> Self {
        Self { mode: TrainMode::Sgd, batch, loss_tol: 1e-6, ..Self::gd(lr0, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if [self.loss_tol, self.grad_tol].iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.mode == TrainMode::Sgd && self.batch < 1 {
            return Err(Error::Config("SGD batch must be >= 1".into()));
        }
        if let InitStd::Explicit(s) = self.init_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init std must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, config: &ProblemConfig) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr0,
            LrSchedule::WidthDecayed => self.lr0 / config.width as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossTol,
    GradTol,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub weights: WeightMatrix,
    pub final_loss: LossValue,
    /// Parameter updates taken.
    pub iterations: usize,
    /// `final_loss ≤ loss_tol`.
    pub converged: bool,
    pub stop: StopReason,
    /// `(iteration, population loss)` as observed.
    pub loss_trace: Vec<(usize, f64)>,
}

impl TrainResult {
    /// CSV columns `iteration, loss`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss"])?;
        for (it, l) in &self.loss_trace {
            w.write_record([it.to_string(), format!("{l:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// I.i.d. centred Gaussian entries with the configured standard deviation.
pub fn init_weights(config: &ProblemConfig, train: &TrainConfig) -> Result<WeightMatrix> {
    config.validate()?;
    train.validate()?;
    let std = train.init_std.resolve(config);
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::stream(train.seed, 0);
    let entries = Array2::from_shape_simple_fn((config.width, config.dim), || normal.sample(&mut r));
    WeightMatrix::new(entries)
}

pub fn train(config: &ProblemConfig, train: &TrainConfig) -> Result<TrainResult> {
    match train.mode {
        TrainMode::Gd => train_gd(config, train),
        TrainMode::Sgd => train_sgd(config, train),
    }
}

fn check_loss(loss: f64, iteration: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { iteration, loss });
    }
    Ok(())
}

/// Plain full-batch gradient descent on the population loss.
pub fn train_gd(config: &ProblemConfig, train: &TrainConfig) -> Result<TrainResult> {
    if train.mode != TrainMode::Gd {
        return Err(Error::Config("train_gd called with an SGD config".into()));
    }
    let mut w = init_weights(config, train)?;
    let lr = train.learning_rate(config);
    let mut trace = Vec::new();
    let mut it = 0;
    let (final_loss, stop) = loop {
        let (loss, grad) = population_loss_and_grad(&w, config)?;
        let l = loss.get();
        check_loss(l, it)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let stop = if l <= train.loss_tol {
            Some(StopReason::LossTol)
        } else if train.grad_tol > 0.0 && grad_norm <= train.grad_tol {
            Some(StopReason::GradTol)
        } else if it >= train.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if it % train.stride == 0 || stop.is_some() {
            trace.push((it, l));
        }
        if let Some(s) = stop {
            break (loss, s);
        }
        w.as_array_mut().scaled_add(-lr, &grad);
        it += 1;
    };
    Ok(TrainResult {
        weights: w,
        final_loss,
        iterations: it,
        converged: stop == StopReason::LossTol,
        stop,
        loss_trace: trace,
    })
}

/// Empirical squared-error gradient on `batch` fresh sphere points.
/// ReLU derivative at zero is taken as zero.
pub fn minibatch_grad<R: rand::Rng + ?Sized>(
    w: &WeightMatrix,
    config: &ProblemConfig,
    batch: usize,
    rng: &mut R,
) -> (f64, Array2<f64>) {
    let mut grad = Array2::<f64>::zeros((config.width, config.dim));
    let mut x = vec![0.0; config.dim];
    let mut pre = vec![0.0; config.width];
    let mut loss = 0.0;
    for _ in 0..batch {
        sample_sphere(rng, config.dim, &mut x);
        let xv = ndarray::ArrayView1::from(&x[..]);
        let mut out = 0.0;
        for (p, row) in pre.iter_mut().zip(w.as_array().axis_iter(Axis(0))) {
            *p = row.dot(&xv);
            out += p.max(0.0);
        }
        let r = out - x[..config.teachers].iter().map(|v| v.max(0.0)).sum::<f64>();
        loss += r * r;
        for (i, &p) in pre.iter().enumerate() {
            if p > 0.0 {
                grad.row_mut(i).scaled_add(2.0 * r, &xv);
            }
        }
    }
    let b = batch as f64;
    grad /= b;
    (loss / b, grad)
}

/// Online SGD: every step uses a fresh mini-batch; the stopping rule is
/// judged on the exact population loss every `stride` steps.
pub fn train_sgd(config: &ProblemConfig, train: &TrainConfig) -> Result<TrainResult> {
    if train.mode != TrainMode::Sgd {
        return Err(Error::Config("train_sgd called with a GD config".into()));
    }
    let mut w = init_weights(config, train)?;
    let lr = train.learning_rate(config);
    let mut r = rng::stream(train.seed, 1);
    let mut trace = Vec::new();
    let mut it = 0;
    let (final_loss, stop) = loop {
        if it % train.stride == 0 || it >= train.max_iters {
            let loss = population_loss(&w, config)?;
            check_loss(loss.get(), it)?;
            trace.push((it, loss.get()));
            if loss.get() <= train.loss_tol {
                break (loss, StopReason::LossTol);
            }
            if it >= train.max_iters {
                break (loss, StopReason::MaxIters);
            }
        }
        let (batch_loss, grad) = minibatch_grad(&w, config, train.batch, &mut r);
        check_loss(batch_loss, it)?;
        if train.grad_tol > 0.0 && grad.iter().map(|g| g * g).sum::<f64>().sqrt() <= train.grad_tol {
            let loss = population_loss(&w, config)?;
            trace.push((it, loss.get()));
            break (loss, StopReason::GradTol);
        }
        w.as_array_mut().scaled_add(-lr, &grad);
        it += 1;
    };
    Ok(TrainResult {
        weights: w,
        final_loss,
        iterations: it,
        converged: stop == StopReason::LossTol,
        stop,
        loss_trace: trace,
    })
}
