//! Small dense row-major matrix and the handful of kernels the encoder,
//! decoder and trainer need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn scale(&self, a: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Mat, b: f64) -> Mat {
        assert_eq!(self.shape(), other.shape());
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Dense product `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), orow);
                }
            }
        }
        out
    }

    /// Sum over all entries of `self ⊙ other`.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        dot(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[m×o] += a[m×k] · wᵀ` where `w` is `o×k`.
pub fn gemm_nt_acc(a: &[f64], m: usize, w: &Mat, out: &mut [f64]) {
    let (o, k) = (w.rows, w.cols);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(out.len(), m * o);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * o..(i + 1) * o];
        for (j, oj) in orow.iter_mut().enumerate() {
            *oj += dot(arow, w.row(j));
        }
    }
}

/// `out[m×k] += d[m×o] · w` where `w` is `o×k`.
pub fn gemm_nn_acc(d: &[f64], m: usize, w: &Mat, out: &mut [f64]) {
    let (o, k) = (w.rows, w.cols);
    debug_assert_eq!(d.len(), m * o);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let drow = &d[i * o..(i + 1) * o];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, &dj) in drow.iter().enumerate() {
            if dj != 0.0 {
                axpy(dj, w.row(j), orow);
            }
        }
    }
}

/// `grad[o×k] += d[m×o]ᵀ · a[m×k]`.
pub fn gemm_tn_acc(d: &[f64], a: &[f64], m: usize, grad: &mut Mat) {
    let (o, k) = (grad.rows, grad.cols);
    debug_assert_eq!(d.len(), m * o);
    debug_assert_eq!(a.len(), m * k);
    for i in 0..m {
        let drow = &d[i * o..(i + 1) * o];
        let arow = &a[i * k..(i + 1) * k];
        for (j, &dj) in drow.iter().enumerate() {
            if dj != 0.0 {
                axpy(dj, arow, grad.row_mut(j));
            }
        }
    }
}

/// `bias[o] += Σ_rows d[m×o]`.
pub fn sum_rows_acc(d: &[f64], m: usize, bias: &mut [f64]) {
    let o = bias.len();
    for i in 0..m {
        axpy(1.0, &d[i * o..(i + 1) * o], bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_kernels_agree_with_matmul() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 1.0]]).unwrap();
        let w = Mat::from_rows(&[vec![0.5, -2.0], vec![1.0, 1.0], vec![0.0, 4.0]]).unwrap();
        let mut out = vec![0.0; 9];
        gemm_nt_acc(&a.data, 3, &w, &mut out);
        assert_eq!(out, a.matmul(&w.transpose()).data);

        let mut back = vec![0.0; 6];
        gemm_nn_acc(&out, 3, &w, &mut back);
        let expect = Mat::from_vec(3, 3, out.clone()).unwrap().matmul(&w);
        assert_eq!(back, expect.data);

        let mut g = Mat::zeros(3, 2);
        gemm_tn_acc(&out, &a.data, 3, &mut g);
        let expect = Mat::from_vec(3, 3, out).unwrap().transpose().matmul(&a);
        assert_eq!(g, expect);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Mat::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
