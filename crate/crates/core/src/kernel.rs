//! RBF covariance with one lengthscale per input dimension (ARD).
//!
//! `k(x, x') = a² exp(-½ Σ_i ((x_i - x'_i) / λ_i)²)`, with `λ` and `a²`
//! stored in the log domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_in_place, Mat};

/// Relative jitter ladder; each rung is multiplied by the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Kernel hyper-parameters in log domain.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelHyper {
    pub log_lengthscales: Vec<f64>,
    pub log_variance: f64,
}

impl KernelHyper {
    pub fn new(lengthscales: &[f64], variance: f64) -> Self {
        KernelHyper {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_variance: variance.ln(),
        }
    }

    pub fn isotropic(dim: usize, lengthscale: f64, variance: f64) -> Self {
        KernelHyper::new(&vec![lengthscale; dim], variance)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// `1/λ_i²` per dimension.
    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_lengthscales.is_empty() {
            return Err(invalid("kernel needs at least one input dimension"));
        }
        if !self.log_variance.is_finite() || self.log_lengthscales.iter().any(|l| !l.is_finite()) {
            return Err(invalid("kernel hyper-parameters must be finite"));
        }
        Ok(())
    }
}

/// Scalar kernel evaluation.
pub fn kernel_eval(x: &[f64], x2: &[f64], h: &KernelHyper) -> Result<f64> {
    if x.len() != h.dim() || x2.len() != h.dim() {
        return Err(invalid(format!(
            "kernel dimension mismatch: inputs {} and {}, lengthscales {}",
            x.len(),
            x2.len(),
            h.dim()
        )));
    }
    let mut r2 = 0.0;
    for ((a, b), l) in x.iter().zip(x2).zip(&h.log_lengthscales) {
        let d = (a - b) / l.exp();
        r2 += d * d;
    }
    Ok(h.variance() * (-0.5 * r2).exp())
}

#[inline]
fn sq_dist_scaled(a: &[f64], b: &[f64], inv_sq: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(inv_sq) {
        let d = x - y;
        r2 += d * d * w;
    }
    r2
}

/// Cross-covariance `K(A, B)`, `A` is N×D and `B` is M×D.
pub fn gram(a: &Mat, b: &Mat, h: &KernelHyper) -> Result<Mat> {
    if a.cols() != h.dim() || b.cols() != h.dim() {
        return Err(invalid(format!(
            "gram dimension mismatch: {} and {} columns for {} lengthscales",
            a.cols(),
            b.cols(),
            h.dim()
        )));
    }
    let inv_sq = h.inv_sq_lengthscales();
    let var = h.variance();
    let mut k = Mat::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        let out = k.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = var * (-0.5 * sq_dist_scaled(ai, b.row(j), &inv_sq)).exp();
        }
    }
    Ok(k)
}

/// Symmetric covariance of a point set with a record of the jitter on its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Mat,
    pub jitter_applied: f64,
}

impl GramMatrix {
    /// `K(A, A)` computed on the upper triangle and mirrored, so symmetry is exact.
    pub fn of_points(a: &Mat, h: &KernelHyper) -> Result<Self> {
        if a.cols() != h.dim() {
            return Err(invalid("gram dimension mismatch"));
        }
        let inv_sq = h.inv_sq_lengthscales();
        let var = h.variance();
        let n = a.rows();
        let mut k = Mat::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = var;
            for j in (i + 1)..n {
                let v = var * (-0.5 * sq_dist_scaled(a.row(i), a.row(j), &inv_sq)).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(GramMatrix { values: k, jitter_applied: 0.0 })
    }

    pub fn from_matrix(values: Mat) -> Self {
        GramMatrix { values, jitter_applied: 0.0 }
    }
}

/// Lower Cholesky factor of `K + jitter·I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor {
    pub factor: Mat,
    /// Absolute jitter that was added to the diagonal.
    pub jitter: f64,
    /// The ladder rung (jitter relative to the mean diagonal).
    pub relative_jitter: f64,
}

/// Cholesky with an escalating diagonal jitter, relative to the mean diagonal.
pub fn chol_jitter(k: &GramMatrix) -> Result<CholeskyFactor> {
    let m = &k.values;
    if m.rows() != m.cols() {
        return Err(invalid("cholesky needs a square matrix"));
    }
    if !m.is_finite() {
        return Err(invalid("matrix contains non-finite entries"));
    }
    let n = m.rows();
    if n == 0 {
        return Err(invalid("empty matrix"));
    }
    let mean_diag = m.diagonal().iter().sum::<f64>() / n as f64;
    let mut last = 0.0;
    for rung in JITTER_LADDER {
        let jitter = rung * mean_diag;
        let mut l = m.clone();
        if jitter > 0.0 {
            l.add_diagonal(jitter);
        }
        if cholesky_in_place(&mut l).is_ok() {
            return Ok(CholeskyFactor { factor: l, jitter, relative_jitter: rung });
        }
        last = jitter;
    }
    Err(Error::SingularMatrix { jitter: last })
}

/// Gradient accumulator for kernel hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelHyperGrad {
    pub d_log_lengthscales: Vec<f64>,
    pub d_log_variance: f64,
}

impl KernelHyperGrad {
    pub fn zeros(dim: usize) -> Self {
        KernelHyperGrad { d_log_lengthscales: vec![0.0; dim], d_log_variance: 0.0 }
    }
}

/// Pulls the adjoint `k_bar` of `K(A, B)` back onto the hyper-parameters and,
/// optionally, onto the rows of `A` and `B`.
pub(crate) fn gram_backward(
    a: &Mat,
    b: &Mat,
    h: &KernelHyper,
    k: &Mat,
    k_bar: &Mat,
    grad: &mut KernelHyperGrad,
    mut da: Option<&mut Mat>,
    mut db: Option<&mut Mat>,
) {
    let inv_sq = h.inv_sq_lengthscales();
    let d = h.dim();
    let mut row_acc = vec![0.0; d];
    for i in 0..a.rows() {
        let ai = a.row(i);
        row_acc.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..b.rows() {
            let w = k_bar[(i, j)] * k[(i, j)];
            if w == 0.0 {
                continue;
            }
            grad.d_log_variance += w;
            let bj = b.row(j);
            for t in 0..d {
                let diff = ai[t] - bj[t];
                let s = diff * inv_sq[t];
                grad.d_log_lengthscales[t] += w * diff * s;
                row_acc[t] -= w * s;
            }
            if let Some(db) = db.as_deref_mut() {
                let dbj = db.row_mut(j);
                for t in 0..d {
                    dbj[t] += w * (ai[t] - bj[t]) * inv_sq[t];
                }
            }
        }
        if let Some(da) = da.as_deref_mut() {
            crate::linalg::axpy(1.0, &row_acc, da.row_mut(i));
        }
    }
}

/// Same as [`gram_backward`] for a symmetric `K(A, A) + jitter·I` with a
/// symmetric adjoint. The jitter is proportional to the variance, so the
/// diagonal (jitter included) feeds the log-variance gradient.
pub(crate) fn gram_sym_backward(
    a: &Mat,
    h: &KernelHyper,
    k_jittered: &Mat,
    k_bar: &Mat,
    grad: &mut KernelHyperGrad,
    mut da: Option<&mut Mat>,
) {
    let inv_sq = h.inv_sq_lengthscales();
    let d = h.dim();
    let n = a.rows();
    for i in 0..n {
        grad.d_log_variance += k_bar[(i, i)] * k_jittered[(i, i)];
        for j in (i + 1)..n {
            // both (i,j) and (j,i)
            let w = 2.0 * k_bar[(i, j)] * k_jittered[(i, j)];
            if w == 0.0 {
                continue;
            }
            grad.d_log_variance += w;
            for t in 0..d {
                let diff = a[(i, t)] - a[(j, t)];
                let s = diff * inv_sq[t];
                grad.d_log_lengthscales[t] += w * diff * s;
                if let Some(da) = da.as_deref_mut() {
                    da[(i, t)] -= w * s;
                    da[(j, t)] += w * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_gives_variance() {
        let h = KernelHyper::new(&[0.7, 2.0], 1.7);
        let v = kernel_eval(&[0.3, -1.0], &[0.3, -1.0], &h).unwrap();
        assert!((v - 1.7).abs() < 1e-14);
    }

    #[test]
    fn direct_formula_values() {
        let h = KernelHyper::new(&[1.0], 1.0);
        let v = kernel_eval(&[0.0], &[2.0], &h).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135335).abs() < 1e-6);

        let h = KernelHyper::new(&[1.0, 2.0], 3.0);
        let v = kernel_eval(&[0.0, 0.0], &[1.0, 2.0], &h).unwrap();
        assert!((v - 3.0 * (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let h = KernelHyper::new(&[1.0, 1.0], 1.0);
        assert!(matches!(kernel_eval(&[0.0], &[0.0, 1.0], &h), Err(Error::InvalidArgument(_))));
        let a = Mat::zeros(2, 3);
        assert!(gram(&a, &a, &h).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let h = KernelHyper::new(&[1.0, 1.0], 2.5);
        let a = Mat::from_rows(&[[0.1, 0.2]]);
        let k = gram(&a, &a, &h).unwrap();
        assert_eq!(k.as_slice(), &[2.5]);

        let h = KernelHyper::new(&[1.0, 1.0], 1.0);
        let a = Mat::from_rows(&[[0.4, -0.2], [0.4, -0.2]]);
        let k = GramMatrix::of_points(&a, &h).unwrap();
        assert_eq!(k.values.as_slice(), &[1.0; 4]);
    }

    #[test]
    fn chol_identity_needs_no_jitter() {
        let k = GramMatrix::from_matrix(Mat::identity(3));
        let c = chol_jitter(&k).unwrap();
        assert_eq!(c.jitter, 0.0);
        assert_eq!(c.factor, Mat::identity(3));
    }

    #[test]
    fn chol_rank_one_escalates() {
        let k = GramMatrix::from_matrix(Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]]));
        let c = chol_jitter(&k).unwrap();
        assert!(c.jitter > 0.0);
        let rec = c.factor.matmul_t(&c.factor);
        let err = rec.max_abs_diff(&k.values);
        assert!((err - c.jitter).abs() < 1e-12, "err {err} jitter {}", c.jitter);
    }

    #[test]
    fn chol_rejects_nan() {
        let k = GramMatrix::from_matrix(Mat::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]));
        assert!(matches!(chol_jitter(&k), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn chol_reports_singular_with_last_jitter() {
        let k = GramMatrix::from_matrix(Mat::from_rows(&[[1.0, 0.0], [0.0, -5.0]]));
        match chol_jitter(&k) {
            Err(Error::SingularMatrix { jitter }) => assert!((jitter - 1e-4 * -2.0).abs() < 1e-18),
            other => panic!("unexpected {other:?}"),
        }
    }
}
