use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Student parameters: an `m × d` matrix whose rows are neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = entries.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry {v} at ({i}, {j})")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self(Array2::zeros((m, d)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} columns"),
                got: format!("{} columns in row {i}", r.len()),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Domain(e.to_string()))?;
        Self::new(arr)
    }

    /// Number of neurons `m`.
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// Input dimension `d`.
    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.0.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect()
    }

    /// `lambda · a + (1 − lambda) · b`.
    pub fn lerp(a: &Self, b: &Self, lambda: f64) -> Result<Self> {
        if a.0.dim() != b.0.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{:?}", a.0.dim()), got: format!("{:?}", b.0.dim()) });
        }
        Ok(Self(&a.0 * lambda + &b.0 * (1.0 - lambda)))
    }

    /// New matrix whose row `k` is row `order[k]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        Self(self.0.select(Axis(0), order))
    }

    /// Append `extra` all-zero columns.
    pub fn pad_columns(&self, extra: usize) -> Self {
        let (m, d) = self.0.dim();
        let mut out = Array2::zeros((m, d + extra));
        out.slice_mut(ndarray::s![.., ..d]).assign(&self.0);
        Self(out)
    }

    /// CSV with one row per neuron and 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.0.axis_iter(Axis(0)) {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

impl From<WeightMatrix> for Array2<f64> {
    fn from(w: WeightMatrix) -> Self {
        w.0
    }
}
