//! Small dense row-major matrix type plus the Cholesky and triangular
//! routines the sparse-GP code needs. Nothing here allocates beyond the
//! matrices themselves.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[allow(unused_imports)]
use num_traits::Float;

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps a row-major buffer. Panics when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match {rows}x{cols}");
        Mat { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "row counts differ");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, b_row, out.row_mut(i));
            }
        }
        out
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "column counts differ");
        Mat::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Zeroes the strict upper triangle.
    pub fn make_lower(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                self[(i, j)] = 0.0;
            }
        }
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place lower Cholesky factorization. On failure returns the index of
/// the first non-positive pivot; the matrix contents are then unspecified.
pub fn cholesky_in_place(a: &mut Mat) -> Result<(), usize> {
    let n = a.rows;
    assert_eq!(n, a.cols, "cholesky needs a square matrix");
    for j in 0..n {
        let (head, tail) = a.data.split_at_mut(j * n);
        let row_j = &mut tail[..n];
        // row_j[k] for k < j becomes L[j,k]
        for k in 0..j {
            let row_k = &head[k * n..k * n + k];
            let s = row_j[k] - dot(&row_j[..k], row_k);
            row_j[k] = s / head[k * n + k];
        }
        let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        row_j[j] = d.sqrt();
        for v in row_j[j + 1..].iter_mut() {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Solves `L X = B` in place (`B` overwritten with `X`), `L` lower triangular.
pub fn solve_lower_in_place(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    assert_eq!(n, b.rows);
    let k = b.cols;
    for i in 0..n {
        let (done, rest) = b.data.split_at_mut(i * k);
        let row_i = &mut rest[..k];
        let l_row = l.row(i);
        for (j, &lij) in l_row[..i].iter().enumerate() {
            if lij != 0.0 {
                axpy(-lij, &done[j * k..(j + 1) * k], row_i);
            }
        }
        let inv = 1.0 / l_row[i];
        row_i.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Solves `Lᵀ X = B` in place, `L` lower triangular.
pub fn solve_lower_transpose_in_place(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    assert_eq!(n, b.rows);
    let k = b.cols;
    for i in (0..n).rev() {
        let (head, done) = b.data.split_at_mut((i + 1) * k);
        let row_i = &mut head[i * k..];
        for j in (i + 1)..n {
            let lji = l[(j, i)];
            if lji != 0.0 {
                axpy(-lji, &done[(j - i - 1) * k..(j - i) * k], row_i);
            }
        }
        let inv = 1.0 / l[(i, i)];
        row_i.iter_mut().for_each(|v| *v *= inv);
    }
}

pub fn solve_lower_vec(l: &Mat, b: &[f64]) -> Vec<f64> {
    let mut m = Mat::from_vec(b.len(), 1, b.to_vec());
    solve_lower_in_place(l, &mut m);
    m.into_vec()
}

pub fn solve_lower_transpose_vec(l: &Mat, b: &[f64]) -> Vec<f64> {
    let mut m = Mat::from_vec(b.len(), 1, b.to_vec());
    solve_lower_transpose_in_place(l, &mut m);
    m.into_vec()
}

/// `(L Lᵀ)⁻¹` from a lower Cholesky factor.
pub fn cholesky_inverse(l: &Mat) -> Mat {
    let mut inv = Mat::identity(l.rows);
    solve_lower_in_place(l, &mut inv);
    solve_lower_transpose_in_place(l, &mut inv);
    inv
}

/// `log det(L Lᵀ)`.
pub fn cholesky_logdet(l: &Mat) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Reverse-mode rule for `K = L Lᵀ`: maps the adjoint of the lower factor to
/// the symmetric adjoint of `K`.
pub fn cholesky_backward(l: &Mat, l_bar: &Mat) -> Mat {
    let n = l.rows;
    // P = Φ(Lᵀ L̄): lower triangle with halved diagonal
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += l[(k, i)] * l_bar[(k, j)];
            }
            p[(i, j)] = if i == j { 0.5 * s } else { s };
        }
    }
    // S = L⁻ᵀ P L⁻¹
    solve_lower_transpose_in_place(l, &mut p);
    let mut st = p.transpose();
    solve_lower_transpose_in_place(l, &mut st);
    // st now holds Sᵀ
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (st[(i, j)] + st[(j, i)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 0.5 } else { 0.0 });
        let mut k = a.matmul_t(&a);
        k.add_diagonal(1.0);
        k
    }

    #[test]
    fn cholesky_reconstructs() {
        let k = spd(6);
        let mut l = k.clone();
        cholesky_in_place(&mut l).unwrap();
        let r = l.matmul_t(&l);
        assert!(r.max_abs_diff(&k) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut k = Mat::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(cholesky_in_place(&mut k), Err(1));
    }

    #[test]
    fn triangular_solves_invert() {
        let k = spd(5);
        let mut l = k.clone();
        cholesky_in_place(&mut l).unwrap();
        let b = Mat::from_fn(5, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        let mut x = b.clone();
        solve_lower_in_place(&l, &mut x);
        assert!(l.matmul(&x).max_abs_diff(&b) < 1e-12);
        let mut y = b.clone();
        solve_lower_transpose_in_place(&l, &mut y);
        assert!(l.transpose().matmul(&y).max_abs_diff(&b) < 1e-12);
        let inv = cholesky_inverse(&l);
        assert!(inv.matmul(&k).max_abs_diff(&Mat::identity(5)) < 1e-10);
    }

    #[test]
    fn products_agree() {
        let a = Mat::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.3 - 1.0);
        let b = Mat::from_fn(3, 2, |i, j| (i * j) as f64 + 0.1);
        let c = Mat::from_fn(5, 4, |i, j| i as f64 - j as f64);
        assert!(a.t_matmul(&b).max_abs_diff(&a.transpose().matmul(&b)) < 1e-14);
        assert!(a.matmul_t(&c).max_abs_diff(&a.matmul(&c.transpose())) < 1e-14);
        let v = [1.0, -2.0, 0.5];
        assert_eq!(a.t_matvec(&v), a.transpose().matvec(&v));
    }

    #[test]
    fn cholesky_backward_matches_finite_differences() {
        // f(K) = Σ W ∘ chol(K) for a fixed lower W
        let k = spd(4);
        let w = Mat::from_fn(4, 4, |i, j| if j <= i { 0.3 * i as f64 - 0.7 * j as f64 + 0.2 } else { 0.0 });
        let f = |k: &Mat| {
            let mut l = k.clone();
            cholesky_in_place(&mut l).unwrap();
            l.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut l = k.clone();
        cholesky_in_place(&mut l).unwrap();
        let kbar = cholesky_backward(&l, &w);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..=i {
                let mut kp = k.clone();
                let mut km = k.clone();
                kp[(i, j)] += h;
                km[(i, j)] -= h;
                if i != j {
                    kp[(j, i)] += h;
                    km[(j, i)] -= h;
                }
                let fd = (f(&kp) - f(&km)) / (2.0 * h);
                let an = if i == j { kbar[(i, i)] } else { kbar[(i, j)] + kbar[(j, i)] };
                assert!((fd - an).abs() < 1e-6, "({i},{j}) fd {fd} analytic {an}");
            }
        }
    }
}
