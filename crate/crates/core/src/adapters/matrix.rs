use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Entries must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::from_vec_unchecked(rows, cols, data)?;
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(m)
    }

    /// Like [`WeightMatrix::from_vec`] but only checks the length, so untrusted
    /// payloads can be represented and rejected later by validation.
    pub fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matmul(&self, other: &WeightMatrix) -> Result<WeightMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = WeightMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &WeightMatrix) -> Result<WeightMatrix> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(WeightMatrix { data, ..*self })
    }

    pub fn sub(&self, other: &WeightMatrix) -> Result<WeightMatrix> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(WeightMatrix { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> WeightMatrix {
        WeightMatrix {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }

    /// `self += s * other`, accumulated in place.
    pub fn add_scaled(&mut self, other: &WeightMatrix, s: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> WeightMatrix {
        let mut out = WeightMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &WeightMatrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Side-by-side concatenation `[M1 | M2 | ...]`; all blocks share a row count.
    pub fn hstack(blocks: &[WeightMatrix]) -> Result<WeightMatrix> {
        let rows = blocks
            .first()
            .ok_or_else(|| Error::Argument("hstack of zero blocks".into()))?
            .rows;
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Dimension("hstack blocks differ in row count".into()));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(WeightMatrix { rows, cols, data })
    }

    /// Top-to-bottom concatenation; all blocks share a column count.
    pub fn vstack(blocks: &[WeightMatrix]) -> Result<WeightMatrix> {
        let cols = blocks
            .first()
            .ok_or_else(|| Error::Argument("vstack of zero blocks".into()))?
            .cols;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Dimension(
                "vstack blocks differ in column count".into(),
            ));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(WeightMatrix { rows, cols, data })
    }

    fn check_same_shape(&self, other: &WeightMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = WeightMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = WeightMatrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn stacking_shapes() {
        let a = WeightMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = WeightMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let h = WeightMatrix::hstack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(h.shape(), (2, 2));
        assert_eq!(h.data(), &[1.0, 0.0, 2.0, 1.0]);
        let v = WeightMatrix::vstack(&[a, b]).unwrap();
        assert_eq!(v.shape(), (4, 1));
        assert_eq!(v.data(), &[1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(WeightMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(WeightMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(WeightMatrix::from_vec_unchecked(1, 2, vec![1.0, f64::NAN]).is_ok());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = WeightMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.transpose().get(2, 1), 6.0);
        assert_eq!(a.transpose().transpose(), a);
    }
}
