use std::ops::Range;

use crate::error::{ensure_dim, Error, Result};
use crate::measures::EmpiricalMeasure;

/// `n` samples of a fixed per-sample shape, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        ensure_dim("batch buffer", n * len, data.len())?;
        Ok(Self { n, shape, data })
    }

    pub fn zeros(n: usize, shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        Self {
            n,
            shape,
            data: vec![0.0; n * len],
        }
    }

    /// Vector-valued samples from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().ok_or(Error::Empty("batch rows"))?.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            ensure_dim("row length", d, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), vec![d], data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.sample_len().max(1)).take(self.n)
    }

    /// The `i`-th sample as a batch of one.
    pub fn single(&self, i: usize) -> Result<Batch> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        Batch::new(1, self.shape.clone(), self.sample(i).to_vec())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { index: i, len: self.n });
            }
            data.extend_from_slice(self.sample(i));
        }
        Batch::new(indices.len(), self.shape.clone(), data)
    }

    /// First sample repeated `times` times.
    pub fn repeat_first(&self, times: usize) -> Result<Batch> {
        let first = self.single(0)?;
        let mut data = Vec::with_capacity(times * self.sample_len());
        for _ in 0..times {
            data.extend_from_slice(first.data());
        }
        Batch::new(times, self.shape.clone(), data)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Batch> {
        let len: usize = shape.iter().product();
        ensure_dim("reshape", self.sample_len(), len)?;
        Ok(Batch {
            n: self.n,
            shape,
            data: self.data,
        })
    }

    /// Columns `range` of each flattened sample.
    pub fn columns(&self, range: Range<usize>) -> Result<Batch> {
        if range.end > self.sample_len() {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.sample_len(),
            });
        }
        let w = range.len();
        let mut data = Vec::with_capacity(self.n * w);
        for row in self.rows() {
            data.extend_from_slice(&row[range.clone()]);
        }
        Batch::new(self.n, vec![w], data)
    }

    /// Side-by-side concatenation of flattened samples.
    pub fn hconcat(parts: &[&Batch]) -> Result<Batch> {
        let n = parts.first().ok_or(Error::Empty("hconcat parts"))?.n;
        let width: usize = parts.iter().map(|p| p.sample_len()).sum();
        let mut data = Vec::with_capacity(n * width);
        for p in parts {
            ensure_dim("hconcat batch size", n, p.n)?;
        }
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Batch::new(n, vec![width], data)
    }

    pub fn to_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_flat(self.sample_len(), self.data.clone())
    }

    pub fn same_layout(&self, other: &Batch) -> Result<()> {
        ensure_dim("batch size", self.n, other.n)?;
        ensure_dim("sample size", self.sample_len(), other.sample_len())
    }
}
