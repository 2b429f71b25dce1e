//! PQ-index sparsity of weight vectors and matrices.
//!
//! `I_{p,q}(v) = 1 − n^{1/q − 1/p} · ‖v‖_p / ‖v‖_q` is `0` for a constant
//! vector and reaches its maximum `1 − n^{1/q − 1/p}` on one-hot vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::WeightMatrix;

pub const ZERO_ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PQParams {
    p: f64,
    q: f64,
}

impl PQParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 0.0 && q > p && q.is_finite()) {
            return Err(Error::Config(format!("PQ index needs 0 < p < q, got p = {p}, q = {q}")));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Largest attainable index for vectors of length `n`.
    pub fn max_index(&self, n: usize) -> f64 {
        1.0 - (n as f64).powf(1.0 / self.q - 1.0 / self.p)
    }
}

impl Default for PQParams {
    fn default() -> Self {
        Self { p: 0.5, q: 1.0 }
    }
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(p.recip())
}

pub fn pq_index(v: &[f64], params: PQParams) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::UndefinedInput("PQ index of an empty vector".into()));
    }
    // Rescale first so fractional powers of tiny or huge entries stay finite.
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::UndefinedInput("PQ index of the zero vector".into()));
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let ratio = lp_norm(&scaled, params.p) / lp_norm(&scaled, params.q);
    let n = v.len() as f64;
    Ok(1.0 - n.powf(1.0 / params.q - 1.0 / params.p) * ratio)
}

/// PQ index of all `m·d` entries.
pub fn pq_flat(w: &WeightMatrix, params: PQParams) -> Result<f64> {
    let flat: Vec<f64> = w.as_array().iter().copied().collect();
    pq_index(&flat, params)
}

/// PQ index of the vector of row Euclidean norms.
pub fn pq_by_row(w: &WeightMatrix, params: PQParams) -> Result<f64> {
    pq_index(&w.row_norms(), params)
}

pub fn zero_rows(w: &WeightMatrix, tol: f64) -> usize {
    w.row_norms().into_iter().filter(|&r| r <= tol).count()
}
