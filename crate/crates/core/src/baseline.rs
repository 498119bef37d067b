//! Closed-form sparse-GP baselines, a dense exact GP used as an oracle, a
//! small SVGP trainer and Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::kernel::{chol_jitter, gram, GramMatrix, KernelHyper};
use crate::likelihood::{LikelihoodKind, LikelihoodParams, MarginalMoments};
use crate::linalg::{cholesky_logdet, dot, solve_lower_in_place, solve_lower_transpose_in_place, solve_lower_vec, Mat};
use crate::model::{layer_backward_extra, likelihood_sum, quadrature_for, LayerGrad, LayerPass, LayerState, Objective};
use crate::sampler::Potential;
use crate::special::LN_2PI;

/// Gaussian over inducing values `u`: mean `m` and lower Cholesky factor of `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianQ {
    pub m: Vec<f64>,
    pub chol_s: Mat,
}

impl GaussianQ {
    pub fn covariance(&self) -> Mat {
        self.chol_s.matmul_t(&self.chol_s)
    }
}

fn check_regression(x: &Mat, y: &[f64], h: &KernelHyper, noise_var: f64) -> Result<()> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(invalid("need one target per training row"));
    }
    if x.cols() != h.dim() {
        return Err(invalid("training inputs do not match the kernel dimension"));
    }
    if !(noise_var > 0.0) {
        return Err(invalid("noise variance must be positive"));
    }
    Ok(())
}

/// Shared pieces: `L = chol(K_zz)`, `A = L⁻¹ K_zx`.
struct Projection {
    l: Mat,
    a: Mat,
}

fn projection(x: &Mat, z: &Mat, h: &KernelHyper) -> Result<Projection> {
    let kzz = GramMatrix::of_points(z, h)?;
    let l = chol_jitter(&kzz)?.factor;
    let mut a = gram(z, x, h)?;
    solve_lower_in_place(&l, &mut a);
    Ok(Projection { l, a })
}

/// `I + A W Aᵀ` for a diagonal weight `W`, factorized.
fn weighted_b(a: &Mat, w: &[f64]) -> Result<Mat> {
    let m = a.rows();
    let mut b = Mat::identity(m);
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = a.row(i).iter().zip(a.row(j)).zip(w).map(|((p, q), w)| p * q * w).sum();
            b[(i, j)] += s;
            if i != j {
                b[(j, i)] += s;
            }
        }
    }
    Ok(chol_jitter(&GramMatrix::from_matrix(b))?.factor)
}

/// Optimal Gaussian `q(u)` for Gaussian regression:
/// `Σ = (K_zz + σ⁻² K_zx K_xz)⁻¹`, `m = σ⁻² K_zz Σ K_zx y`, `S = K_zz Σ K_zz`.
pub fn optimal_q(x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise_var: f64) -> Result<GaussianQ> {
    check_regression(x, y, h, noise_var)?;
    let p = projection(x, z, h)?;
    let n = y.len();
    let lb = weighted_b(&p.a, &vec![1.0 / noise_var; n])?;
    // K_zz Σ K_zx = L B⁻¹ A
    let ay = p.a.matvec(y);
    let mut t = Mat::from_vec(ay.len(), 1, ay);
    solve_lower_in_place(&lb, &mut t);
    solve_lower_transpose_in_place(&lb, &mut t);
    let mut m = p.l.matvec(t.as_slice());
    m.iter_mut().for_each(|v| *v /= noise_var);
    // S = L B⁻¹ Lᵀ = Wᵀ W with W = L_B⁻¹ Lᵀ
    let mut w = p.l.transpose();
    solve_lower_in_place(&lb, &mut w);
    let s = w.t_matmul(&w);
    let chol_s = chol_jitter(&GramMatrix::from_matrix(s))?.factor;
    Ok(GaussianQ { m, chol_s })
}

/// Latent predictive of a sparse GP with `q(u) = N(m, S)`:
/// mean `K_*z K_zz⁻¹ m`, variance `k_** − Q_** + K_*z K_zz⁻¹ S K_zz⁻¹ K_z*`.
pub fn q_predict(xs: &Mat, z: &Mat, h: &KernelHyper, q: &GaussianQ) -> Result<MarginalMoments> {
    let p = projection(xs, z, h)?;
    let mut alpha = Mat::from_vec(q.m.len(), 1, q.m.clone());
    solve_lower_in_place(&p.l, &mut alpha);
    let mean = p.a.t_matvec(alpha.as_slice());
    // K_zz⁻¹ K_z* = L⁻ᵀ A;  then chol(S)ᵀ times it
    let mut kinv_kzs = p.a.clone();
    solve_lower_transpose_in_place(&p.l, &mut kinv_kzs);
    let proj = q.chol_s.t_matmul(&kinv_kzs);
    let sig2 = h.variance();
    let var = (0..xs.rows())
        .map(|j| {
            let mut v = sig2;
            for i in 0..p.a.rows() {
                v -= p.a[(i, j)] * p.a[(i, j)];
                v += proj[(i, j)] * proj[(i, j)];
            }
            v.max(0.0)
        })
        .collect();
    Ok(MarginalMoments { mean, var })
}

/// DTC / projected-process latent predictive.
pub fn dtc_predict(xs: &Mat, x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise_var: f64) -> Result<MarginalMoments> {
    check_regression(x, y, h, noise_var)?;
    let w = vec![1.0 / noise_var; y.len()];
    let yw: Vec<f64> = y.iter().map(|v| v / noise_var).collect();
    projected_predict(xs, x, &yw, z, h, &w)
}

/// FITC latent predictive, `Λ = diag(K_xx − Q_xx) + σ² I`.
pub fn fitc_predict(xs: &Mat, x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise_var: f64) -> Result<MarginalMoments> {
    check_regression(x, y, h, noise_var)?;
    let p = projection(x, z, h)?;
    let sig2 = h.variance();
    let lambda: Vec<f64> = (0..y.len())
        .map(|n| {
            let q: f64 = (0..p.a.rows()).map(|i| p.a[(i, n)] * p.a[(i, n)]).sum();
            (sig2 - q).max(0.0) + noise_var
        })
        .collect();
    let w: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
    let yw: Vec<f64> = y.iter().zip(&lambda).map(|(v, l)| v / l).collect();
    projected_predict(xs, x, &yw, z, h, &w)
}

/// `mean = A_*ᵀ B⁻¹ A (W y)`, `var = k_** − ‖A_*‖² + ‖L_B⁻¹ A_*‖²` with `B = I + A W Aᵀ`.
fn projected_predict(xs: &Mat, x: &Mat, wy: &[f64], z: &Mat, h: &KernelHyper, w: &[f64]) -> Result<MarginalMoments> {
    let p = projection(x, z, h)?;
    let lb = weighted_b(&p.a, w)?;
    let mut c = Mat::from_vec(p.a.rows(), 1, p.a.matvec(wy));
    solve_lower_in_place(&lb, &mut c);
    solve_lower_transpose_in_place(&lb, &mut c);
    let mut a_s = gram(z, xs, h)?;
    solve_lower_in_place(&p.l, &mut a_s);
    let mean = a_s.t_matvec(c.as_slice());
    let mut b_s = a_s.clone();
    solve_lower_in_place(&lb, &mut b_s);
    let sig2 = h.variance();
    let var = (0..xs.rows())
        .map(|j| {
            let mut v = sig2;
            for i in 0..a_s.rows() {
                v += b_s[(i, j)] * b_s[(i, j)] - a_s[(i, j)] * a_s[(i, j)];
            }
            v.max(0.0)
        })
        .collect();
    Ok(MarginalMoments { mean, var })
}

fn exact_factor(x: &Mat, h: &KernelHyper, noise_var: f64) -> Result<Mat> {
    let mut k = GramMatrix::of_points(x, h)?.values;
    k.add_diagonal(noise_var);
    Ok(chol_jitter(&GramMatrix::from_matrix(k))?.factor)
}

/// `log N(y; 0, K + σ² I)`.
pub fn exact_log_evidence(x: &Mat, y: &[f64], h: &KernelHyper, noise_var: f64) -> Result<f64> {
    check_regression(x, y, h, noise_var)?;
    let l = exact_factor(x, h, noise_var)?;
    let alpha = solve_lower_vec(&l, y);
    Ok(-0.5 * (dot(&alpha, &alpha) + cholesky_logdet(&l) + y.len() as f64 * LN_2PI))
}

/// Dense GP regression latent predictive.
pub fn exact_gp_predict(xs: &Mat, x: &Mat, y: &[f64], h: &KernelHyper, noise_var: f64) -> Result<MarginalMoments> {
    check_regression(x, y, h, noise_var)?;
    let l = exact_factor(x, h, noise_var)?;
    let alpha = solve_lower_vec(&l, y);
    let mut v = gram(x, xs, h)?;
    solve_lower_in_place(&l, &mut v);
    let mean = v.t_matvec(&alpha);
    let sig2 = h.variance();
    let var = (0..xs.rows())
        .map(|j| (sig2 - (0..v.rows()).map(|i| v[(i, j)] * v[(i, j)]).sum::<f64>()).max(0.0))
        .collect();
    Ok(MarginalMoments { mean, var })
}

/// Collapsed VFE bound `log N(y; 0, Q + σ²I) − tr(K − Q) / 2σ²`.
pub fn collapsed_bound(x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise_var: f64) -> Result<f64> {
    check_regression(x, y, h, noise_var)?;
    let p = projection(x, z, h)?;
    let n = y.len() as f64;
    let lb = weighted_b(&p.a, &vec![1.0 / noise_var; y.len()])?;
    let c = solve_lower_vec(&lb, &p.a.matvec(y));
    let quad = dot(y, y) / noise_var - dot(&c, &c) / (noise_var * noise_var);
    let log_det = cholesky_logdet(&lb) + n * noise_var.ln();
    let trace = h.variance() * n - p.a.frobenius_sq();
    Ok(-0.5 * (n * LN_2PI + log_det + quad) - 0.5 * trace / noise_var)
}

/// Gaussian-likelihood ELBO for an explicit `q(u) = N(m, S)` in `u` space:
/// `Σ_n E_q log N(y_n; f_n, σ²) − KL(q ‖ p(u))`.
pub fn elbo_gaussian(x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise_var: f64, m: &[f64], s: &Mat) -> Result<f64> {
    check_regression(x, y, h, noise_var)?;
    let mm = z.rows();
    if m.len() != mm || s.rows() != mm || s.cols() != mm {
        return Err(invalid("q dimensions do not match the inducing set"));
    }
    let kzz = GramMatrix::of_points(z, h)?;
    let l = chol_jitter(&kzz)?.factor;
    let kzx = gram(z, x, h)?;
    // K_zz⁻¹ K_zx
    let mut kinv_kzx = kzx.clone();
    solve_lower_in_place(&l, &mut kinv_kzx);
    solve_lower_transpose_in_place(&l, &mut kinv_kzx);
    let s_kinv_kzx = s.matmul(&kinv_kzx);
    let sig2 = h.variance();
    let mut ell = 0.0;
    for n in 0..y.len() {
        let mut mu = 0.0;
        let mut q = 0.0;
        let mut extra = 0.0;
        for i in 0..mm {
            mu += kinv_kzx[(i, n)] * m[i];
            q += kzx[(i, n)] * kinv_kzx[(i, n)];
            extra += kinv_kzx[(i, n)] * s_kinv_kzx[(i, n)];
        }
        let v = sig2 - q + extra;
        let r = y[n] - mu;
        ell += -0.5 * (LN_2PI + noise_var.ln() + (r * r + v) / noise_var);
    }
    let ls = chol_jitter(&GramMatrix::from_matrix(s.clone()))?.factor;
    let mut kinv_s = s.clone();
    solve_lower_in_place(&l, &mut kinv_s);
    solve_lower_transpose_in_place(&l, &mut kinv_s);
    let trace: f64 = kinv_s.diagonal().iter().sum();
    let alpha = solve_lower_vec(&l, m);
    let kl = 0.5 * (trace + dot(&alpha, &alpha) - mm as f64 + cholesky_logdet(&l) - cholesky_logdet(&ls));
    Ok(ell - kl)
}

/// Adam state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One bias-corrected descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        adam_step(params, grads, &mut self.m, &mut self.v, self.t, self.lr, self.beta1, self.beta2, self.eps);
    }
}

/// Bias-corrected Adam update (descent) at iteration `t ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Minimizes a potential with Adam, e.g. as a warm start before sampling.
pub fn adam_minimize<P: Potential, R: Rng + ?Sized>(
    potential: &mut P,
    position: &mut [f64],
    steps: usize,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    let mut adam = Adam::new(position.len(), lr);
    let mut grad = vec![0.0; position.len()];
    for it in 0..steps {
        potential.gradient(position, &mut grad, rng)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        adam.step(position, &grad);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgpConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_inducing: bool,
    pub train_hyper: bool,
    pub train_noise: bool,
    /// For Gaussian likelihoods, replace the trained `q` by the optimal one at the end.
    pub refresh_gaussian_q: bool,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        SvgpConfig {
            iterations: 10_000,
            batch_size: 1000,
            learning_rate: 0.01,
            train_inducing: true,
            train_hyper: true,
            train_noise: true,
            refresh_gaussian_q: true,
        }
    }
}

/// SVGP with whitened `q(ν) = N(m_w, L_S L_Sᵀ)`; `layer.nu` holds `m_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgpModel {
    pub layer: LayerState,
    /// Lower triangular; diagonal entries may carry either sign.
    pub l_s: Mat,
    pub lik: LikelihoodParams,
}

impl SvgpModel {
    pub fn new(layer: LayerState, lik: LikelihoodParams) -> Result<Self> {
        layer.validate()?;
        if layer.output_dim() != 1 {
            return Err(invalid("SVGP supports a single output"));
        }
        let m = layer.num_inducing();
        Ok(SvgpModel { layer, l_s: Mat::identity(m), lik })
    }

    fn flat_len(&self) -> usize {
        let m = self.layer.num_inducing();
        self.layer.flat_len() + m * (m + 1) / 2 + usize::from(self.lik.kind.has_noise())
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.layer.hyper.log_lengthscales);
        out.push(self.layer.hyper.log_variance);
        out.extend_from_slice(self.layer.z.as_slice());
        out.extend_from_slice(self.layer.nu.as_slice());
        for i in 0..self.l_s.rows() {
            out.extend_from_slice(&self.l_s.row(i)[..=i]);
        }
        if self.lik.kind.has_noise() {
            out.push(self.lik.log_noise_variance);
        }
        out
    }

    fn set_flat(&mut self, f: &[f64]) {
        let mut k = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&f[k..k + dst.len()]);
            k += dst.len();
        };
        take(&mut self.layer.hyper.log_lengthscales);
        take(core::slice::from_mut(&mut self.layer.hyper.log_variance));
        take(self.layer.z.as_mut_slice());
        take(self.layer.nu.as_mut_slice());
        for i in 0..self.l_s.rows() {
            take(&mut self.l_s.row_mut(i)[..=i]);
        }
        if self.lik.kind.has_noise() {
            take(core::slice::from_mut(&mut self.lik.log_noise_variance));
        }
    }

    /// Which flat coordinates the configuration trains.
    fn train_mask(&self, cfg: &SvgpConfig) -> Vec<bool> {
        let d = self.layer.hyper.dim();
        let m = self.layer.num_inducing();
        let mut mask = Vec::with_capacity(self.flat_len());
        mask.extend(core::iter::repeat(cfg.train_hyper).take(d + 1));
        mask.extend(core::iter::repeat(cfg.train_inducing).take(m * d));
        mask.extend(core::iter::repeat(true).take(m + m * (m + 1) / 2));
        if self.lik.kind.has_noise() {
            mask.push(cfg.train_noise);
        }
        mask
    }

    /// `KL(q(ν) ‖ N(0, I))`.
    pub fn kl(&self) -> f64 {
        let m = self.layer.num_inducing() as f64;
        let log_diag: f64 = self.l_s.diagonal().iter().map(|d| d.abs().ln()).sum();
        0.5 * (self.l_s.frobenius_sq() + self.layer.nu.frobenius_sq() - m - 2.0 * log_diag)
    }

    /// `q(u)` obtained by pushing `q(ν)` through `u = L ν`.
    pub fn q(&self) -> Result<GaussianQ> {
        let kzz = GramMatrix::of_points(&self.layer.z, &self.layer.hyper)?;
        let l = chol_jitter(&kzz)?.factor;
        let m = l.matvec(self.layer.nu.as_slice());
        let mut chol_s = l.matmul(&self.l_s);
        for j in 0..chol_s.cols() {
            if self.l_s[(j, j)] < 0.0 {
                for i in 0..chol_s.rows() {
                    chol_s[(i, j)] = -chol_s[(i, j)];
                }
            }
        }
        Ok(GaussianQ { m, chol_s })
    }

    /// Sets `q(ν)` from a `q(u)`.
    pub fn set_q(&mut self, q: &GaussianQ) -> Result<()> {
        let kzz = GramMatrix::of_points(&self.layer.z, &self.layer.hyper)?;
        let l = chol_jitter(&kzz)?.factor;
        let mw = solve_lower_vec(&l, &q.m);
        self.layer.nu = Mat::from_vec(mw.len(), 1, mw);
        let mut ls = q.chol_s.clone();
        solve_lower_in_place(&l, &mut ls);
        ls.make_lower();
        self.l_s = ls;
        Ok(())
    }

    /// Latent predictive moments at `x`.
    pub fn predict_latent(&self, x: &Mat) -> Result<MarginalMoments> {
        let pass = LayerPass::new(&self.layer, x)?;
        let mut mom = pass.moments(0);
        let proj = self.l_s.t_matmul(&pass.a);
        for (n, v) in mom.var.iter_mut().enumerate() {
            for i in 0..proj.rows() {
                *v += proj[(i, n)] * proj[(i, n)];
            }
        }
        Ok(mom)
    }

    /// Minibatch ELBO estimate `(N/B) Σ E_q log p(y_n|f_n) − KL` and its gradient in flat layout.
    fn elbo_and_grad(&self, x: &Mat, y: &[f64], n_total: usize) -> Result<(f64, Vec<f64>)> {
        let pass = LayerPass::new(&self.layer, x)?;
        let b = y.len();
        let proj = self.l_s.t_matmul(&pass.a);
        let mut var = pass.var.clone();
        for (n, v) in var.iter_mut().enumerate() {
            for i in 0..proj.rows() {
                *v += proj[(i, n)] * proj[(i, n)];
            }
        }
        let gh = quadrature_for(self.lik.kind, Objective::Vfe)?;
        let mut lik = likelihood_sum(pass.mean.as_slice(), &var, y, &self.lik, Objective::Vfe, &gh);
        let scale = n_total as f64 / b as f64;
        lik.d_mean.iter_mut().for_each(|v| *v *= scale);
        lik.d_var.iter_mut().for_each(|v| *v *= scale);

        // A diag(var̄)
        let mm = self.layer.num_inducing();
        let mut a_dv = pass.a.clone();
        for i in 0..mm {
            for (v, d) in a_dv.row_mut(i).iter_mut().zip(&lik.d_var) {
                *v *= d;
            }
        }
        // extra Ā = 2 S_w A diag(var̄)
        let s_w = self.l_s.matmul_t(&self.l_s);
        let mut extra = s_w.matmul(&a_dv);
        extra.scale(2.0);
        let mut g = LayerGrad::zeros(&self.layer);
        let d_mean = Mat::from_vec(b, 1, lik.d_mean.clone());
        layer_backward_extra(&self.layer, x, &pass, &d_mean, &lik.d_var, Some(&extra), &mut g, None);
        // L̄_S = 2 A diag(var̄) Aᵀ L_S, lower part
        let mut d_ls = a_dv.matmul_t(&pass.a).matmul(&self.l_s);
        d_ls.scale(2.0);
        // KL terms
        for (d, v) in g.nu.as_mut_slice().iter_mut().zip(self.layer.nu.as_slice()) {
            *d -= v;
        }
        for i in 0..mm {
            for j in 0..=i {
                d_ls[(i, j)] -= self.l_s[(i, j)];
            }
            d_ls[(i, i)] += 1.0 / self.l_s[(i, i)];
        }
        let elbo = scale * lik.value - self.kl();
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&g.hyper.d_log_lengthscales);
        out.push(g.hyper.d_log_variance);
        out.extend_from_slice(g.z.as_slice());
        out.extend_from_slice(g.nu.as_slice());
        for i in 0..mm {
            out.extend_from_slice(&d_ls.row(i)[..=i]);
        }
        if self.lik.kind.has_noise() {
            out.push(scale * lik.d_log_noise);
        }
        Ok((elbo, out))
    }

    /// Full-data ELBO.
    pub fn elbo(&self, x: &Mat, y: &[f64]) -> Result<f64> {
        self.elbo_and_grad(x, y, y.len()).map(|r| r.0)
    }
}

/// Result of [`svgp_train`]: the fitted model and the minibatch ELBO at each iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgpFit {
    pub model: SvgpModel,
    pub elbo_trace: Vec<f64>,
}

/// Maximizes the ELBO jointly over `q`, `Z`, `θ` and noise with Adam.
pub fn svgp_train<R: Rng + ?Sized>(
    init: SvgpModel,
    x: &Mat,
    y: &[f64],
    cfg: &SvgpConfig,
    rng: &mut R,
) -> Result<SvgpFit> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(invalid("need one target per training row"));
    }
    if x.cols() != init.layer.input_dim() {
        return Err(invalid(format!("data has {} columns, model expects {}", x.cols(), init.layer.input_dim())));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    crate::likelihood::check_inputs(
        &MarginalMoments { mean: vec![0.0; y.len()], var: vec![0.0; y.len()] },
        y,
        &init.lik,
    )?;
    let mut model = init;
    if cfg.iterations == 0 {
        return Ok(SvgpFit { model, elbo_trace: Vec::new() });
    }
    let n = y.len();
    let bsz = cfg.batch_size.min(n);
    let mask = model.train_mask(cfg);
    let mut params = model.to_flat();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (elbo, mut g) = if bsz == n {
            model.elbo_and_grad(x, y, n)?
        } else {
            let idx = rand::seq::index::sample(rng, n, bsz).into_vec();
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            model.elbo_and_grad(&x.select_rows(&idx), &yb, n)?
        };
        if !elbo.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        trace.push(elbo);
        for (gi, &keep) in g.iter_mut().zip(&mask) {
            // descend on −ELBO
            *gi = if keep { -*gi } else { 0.0 };
        }
        adam.step(&mut params, &g);
        model.set_flat(&params);
    }
    if cfg.refresh_gaussian_q && model.lik.kind == LikelihoodKind::Gaussian {
        let q = optimal_q(x, y, &model.layer.z, &model.layer.hyper, model.lik.noise_variance())?;
        model.set_q(&q)?;
    }
    Ok(SvgpFit { model, elbo_trace: trace })
}
