//! Dense row-major matrices and the attention kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { op: "from_vec", left: (rows, cols), right: (data.len(), 1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape { op: "from_rows", left: (rows.len(), cols), right: (1, r.len()) });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_matrix(&self, i: usize) -> Self {
        Self { rows: 1, cols: self.cols, data: self.row(i).to_vec() }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape { op: "matmul", left: self.shape(), right: other.shape() });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape { op: "add", left: self.shape(), right: other.shape() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Adds a `1 × cols` bias to every row.
    pub fn add_row_bias(&self, bias: &Self) -> Result<Self> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::Shape { op: "add_row_bias", left: self.shape(), right: bias.shape() });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (d, &b) in out.data[i * self.cols..(i + 1) * self.cols].iter_mut().zip(&bias.data) {
                *d += b;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Shape { op: "concat_cols", left: parts[0].shape(), right: bad.shape() });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            for i in 0..rows {
                for j in 0..p.cols {
                    out[(i, off + j)] = p[(i, j)];
                }
            }
            off += p.cols;
        }
        Ok(out)
    }

    pub fn concat_rows(parts: &[Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::Shape { op: "concat_rows", left: parts[0].shape(), right: bad.shape() });
        }
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect::<Vec<_>>();
        Ok(Self { rows: data.len() / cols.max(1), cols, data })
    }

    /// Numerically stable softmax along each row.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        out
    }

    /// Zero-mean, unit-variance rows (no learned gain).
    pub fn layer_norm_rows(&self) -> Self {
        let eps = T::lit(1e-5);
        let n = T::from_usize(self.cols).unwrap();
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `softmax(Q Kᵀ / √d_h) V`.
pub fn attention<T: Real>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, d_h: usize) -> Result<Matrix<T>> {
    if d_h == 0 {
        return Err(Error::Shape { op: "attention(d_h)", left: q.shape(), right: (0, 0) });
    }
    if q.cols() != k.cols() {
        return Err(Error::Shape { op: "attention(QK^T)", left: q.shape(), right: k.shape() });
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape { op: "attention(KV)", left: k.shape(), right: v.shape() });
    }
    let scale = T::one() / T::from_usize(d_h).unwrap().sqrt();
    let logits = q.matmul(&k.transpose())?.scale(scale);
    logits.softmax_rows().matmul(v)
}

/// Projection set of one multi-head attention block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadWeights<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub b_o: Matrix<T>,
}

impl<T: Real> MultiHeadWeights<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            w_q: Matrix::identity(dim),
            w_k: Matrix::identity(dim),
            w_v: Matrix::identity(dim),
            w_o: Matrix::identity(dim),
            b_o: Matrix::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix<T>); 5] {
        [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o), ("b_o", &self.b_o)]
    }
}

/// Attention on `heads` column slices of the projected inputs, concatenated and output-projected.
pub fn multi_head<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    w: &MultiHeadWeights<T>,
    heads: usize,
) -> Result<Matrix<T>> {
    let dim = w.dim();
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Shape { op: "multi_head(heads)", left: (dim, dim), right: (heads, 1) });
    }
    let (pq, pk, pv) = (q.matmul(&w.w_q)?, k.matmul(&w.w_k)?, v.matmul(&w.w_v)?);
    let d_h = dim / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * d_h, (h + 1) * d_h);
        outs.push(attention(&pq.slice_cols(a, b), &pk.slice_cols(a, b), &pv.slice_cols(a, b), d_h)?);
    }
    Matrix::concat_cols(&outs)?.matmul(&w.w_o)?.add_row_bias(&w.b_o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_attention_is_identity() {
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(attention(&one, &one, &one, 1).unwrap(), one);
    }

    #[test]
    fn identical_keys_average_values() {
        let q: Matrix<f64> = Matrix::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![2.0, 0.0], vec![4.0, 6.0]]).unwrap();
        let out = attention(&q, &k, &v, 2).unwrap();
        assert!((out[(0, 0)] - 3.0).abs() < 1e-12 && (out[(0, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 4);
        match attention(&a, &b, &b, 3) {
            Err(Error::Shape { left, right, .. }) => assert_eq!((left, right), ((2, 3), (2, 4))),
            other => panic!("{other:?}"),
        }
        assert!(attention(&a, &a, &a, 0).is_err());
    }

    #[test]
    fn single_head_identity_projection_is_attention() {
        let q = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.5);
        let k = Matrix::from_fn(5, 4, |i, j| ((i + 2 * j) % 7) as f64 * 0.2 - 0.6);
        let v = Matrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let a = attention(&q, &k, &v, 4).unwrap();
        let m = multi_head(&q, &k, &v, &MultiHeadWeights::identity(4), 1).unwrap();
        assert!(a.max_abs_diff(&m) < 1e-15);
    }

    #[test]
    fn zero_values_give_bias_only() {
        let q = Matrix::from_fn(2, 4, |i, j| (i + j) as f64);
        let v = Matrix::<f64>::zeros(2, 4);
        let mut w = MultiHeadWeights::identity(4);
        w.b_o = Matrix::from_rows(&[vec![0.5, -0.5, 1.0, 0.0]]).unwrap();
        let out = multi_head(&q, &q, &v, &w, 2).unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i), w.b_o.row(0));
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let x = Matrix::<f64>::zeros(2, 4);
        assert!(multi_head(&x, &x, &x, &MultiHeadWeights::identity(4), 3).is_err());
    }

    #[test]
    fn f32_kernel_tracks_f64() {
        let q = Matrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.25 - 0.5);
        let a64 = attention(&q, &q, &q, 4).unwrap();
        let a32 = attention(&q.cast::<f32>(), &q.cast::<f32>(), &q.cast::<f32>(), 4).unwrap();
        assert!(a64.cast::<f32>().max_abs_diff(&a32) < 1e-5);
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = Matrix::from_fn(3, 8, |i, j| (i * j) as f64 + 1.0);
        let y = x.layer_norm_rows();
        for i in 0..3 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
