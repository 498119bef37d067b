//! Priors over inducing inputs and lognormal hyper-priors.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::kernel::{chol_jitter, gram_sym_backward, GramMatrix, KernelHyper, KernelHyperGrad};
use crate::linalg::{cholesky_inverse, cholesky_logdet, Mat};
use crate::special::LN_2PI;

/// Value returned by the DPP prior when `K_zz` cannot be factorized.
pub const DPP_SINGULAR_LOG_PRIOR: f64 = -1e10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StraussParams {
    /// λ > 0
    pub intensity: f64,
    /// γ in (0, 1]
    pub repulsion: f64,
    /// r > 0
    pub radius: f64,
}

impl Default for StraussParams {
    fn default() -> Self {
        StraussParams { intensity: 1.0, repulsion: 0.5, radius: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InducingPriorKind {
    Normal,
    Uniform,
    Dpp,
    Strauss,
}

impl InducingPriorKind {
    pub fn name(self) -> &'static str {
        match self {
            InducingPriorKind::Normal => "normal",
            InducingPriorKind::Uniform => "uniform",
            InducingPriorKind::Dpp => "dpp",
            InducingPriorKind::Strauss => "strauss",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(InducingPriorKind::Normal),
            "uniform" => Some(InducingPriorKind::Uniform),
            "dpp" => Some(InducingPriorKind::Dpp),
            "strauss" => Some(InducingPriorKind::Strauss),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InducingPriorConfig {
    /// Independent standard normals on every inducing input.
    Normal,
    /// Improper flat prior.
    Uniform,
    /// `log det K_zz` under the current kernel.
    Dpp,
    Strauss(StraussParams),
}

impl InducingPriorConfig {
    pub fn kind(&self) -> InducingPriorKind {
        match self {
            InducingPriorConfig::Normal => InducingPriorKind::Normal,
            InducingPriorConfig::Uniform => InducingPriorKind::Uniform,
            InducingPriorConfig::Dpp => InducingPriorKind::Dpp,
            InducingPriorConfig::Strauss(_) => InducingPriorKind::Strauss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InducingPriorConfig::Strauss(p) = self {
            if !(p.intensity > 0.0) || !(p.radius > 0.0) || !(p.repulsion > 0.0 && p.repulsion <= 1.0) {
                return Err(invalid("strauss prior needs intensity > 0, radius > 0 and repulsion in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Lognormal hyper-priors, parameterized by the location and scale of the log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperPriorConfig {
    pub lengthscale_log_mean: f64,
    pub variance_log_mean: f64,
    pub noise_log_mean: f64,
    pub log_std: f64,
}

impl Default for HyperPriorConfig {
    fn default() -> Self {
        let ln_005 = 0.05f64.ln();
        HyperPriorConfig {
            lengthscale_log_mean: 0.0,
            variance_log_mean: ln_005,
            noise_log_mean: ln_005,
            log_std: 1.0,
        }
    }
}

impl HyperPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_std > 0.0) {
            return Err(invalid("hyper-prior log_std must be positive"));
        }
        Ok(())
    }
}

/// Log-density of a lognormal evaluated at `exp(phi)`, and its derivative in `phi`.
#[inline]
pub(crate) fn lognormal_at_log(phi: f64, mu: f64, s: f64) -> (f64, f64) {
    let z = (phi - mu) / s;
    (-phi - 0.5 * LN_2PI - s.ln() - 0.5 * z * z, -1.0 - z / s)
}

fn check_z(z: &Mat) -> Result<()> {
    if !z.is_finite() {
        return Err(invalid("inducing inputs must be finite"));
    }
    Ok(())
}

/// Unnormalized `log p(Z)`.
pub fn log_prior_z(z: &Mat, h: &KernelHyper, cfg: &InducingPriorConfig) -> Result<f64> {
    check_z(z)?;
    match cfg {
        InducingPriorConfig::Uniform => Ok(0.0),
        InducingPriorConfig::Normal => {
            let n = z.as_slice().len() as f64;
            Ok(-0.5 * z.frobenius_sq() - 0.5 * n * LN_2PI)
        }
        InducingPriorConfig::Dpp => {
            let k = GramMatrix::of_points(z, h)?;
            match chol_jitter(&k) {
                Ok(c) => Ok(cholesky_logdet(&c.factor)),
                Err(Error::SingularMatrix { .. }) => Ok(DPP_SINGULAR_LOG_PRIOR),
                Err(e) => Err(e),
            }
        }
        InducingPriorConfig::Strauss(p) => {
            let pairs = strauss_pairs(z, p.radius);
            Ok(z.rows() as f64 * p.intensity.ln() + pairs as f64 * p.repulsion.ln())
        }
    }
}

/// Number of unordered pairs of rows closer than `radius`.
pub fn strauss_pairs(z: &Mat, radius: f64) -> usize {
    let r2 = radius * radius;
    let mut count = 0;
    for i in 0..z.rows() {
        for j in (i + 1)..z.rows() {
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < r2 {
                count += 1;
            }
        }
    }
    count
}

/// Adds `∂ log p(Z) / ∂Z` to `dz` and the kernel part to `dh`; returns `log p(Z)`.
pub(crate) fn log_prior_z_grad(
    z: &Mat,
    h: &KernelHyper,
    cfg: &InducingPriorConfig,
    dz: &mut Mat,
    dh: &mut KernelHyperGrad,
) -> Result<f64> {
    match cfg {
        InducingPriorConfig::Normal => {
            for (g, v) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *g -= v;
            }
            log_prior_z(z, h, cfg)
        }
        InducingPriorConfig::Dpp => {
            check_z(z)?;
            let k = GramMatrix::of_points(z, h)?;
            let c = match chol_jitter(&k) {
                Ok(c) => c,
                Err(Error::SingularMatrix { .. }) => return Ok(DPP_SINGULAR_LOG_PRIOR),
                Err(e) => return Err(e),
            };
            let mut kj = k.values;
            kj.add_diagonal(c.jitter);
            let kinv = cholesky_inverse(&c.factor);
            gram_sym_backward(z, h, &kj, &kinv, dh, Some(dz));
            Ok(cholesky_logdet(&c.factor))
        }
        // flat or piecewise constant
        InducingPriorConfig::Uniform | InducingPriorConfig::Strauss(_) => log_prior_z(z, h, cfg),
    }
}

/// Lognormal log-prior on lengthscales and marginal variance.
pub fn log_prior_hyper(h: &KernelHyper, cfg: &HyperPriorConfig) -> f64 {
    let mut lp = 0.0;
    for &l in &h.log_lengthscales {
        lp += lognormal_at_log(l, cfg.lengthscale_log_mean, cfg.log_std).0;
    }
    lp + lognormal_at_log(h.log_variance, cfg.variance_log_mean, cfg.log_std).0
}

pub(crate) fn log_prior_hyper_grad(h: &KernelHyper, cfg: &HyperPriorConfig, dh: &mut KernelHyperGrad) -> f64 {
    let mut lp = 0.0;
    for (g, &l) in dh.d_log_lengthscales.iter_mut().zip(&h.log_lengthscales) {
        let (v, d) = lognormal_at_log(l, cfg.lengthscale_log_mean, cfg.log_std);
        lp += v;
        *g += d;
    }
    let (v, d) = lognormal_at_log(h.log_variance, cfg.variance_log_mean, cfg.log_std);
    dh.d_log_variance += d;
    lp + v
}

/// Lognormal log-prior on the observation-noise variance.
pub fn log_prior_noise(log_noise_variance: f64, cfg: &HyperPriorConfig) -> f64 {
    lognormal_at_log(log_noise_variance, cfg.noise_log_mean, cfg.log_std).0
}

pub(crate) fn log_prior_noise_grad(log_noise_variance: f64, cfg: &HyperPriorConfig) -> (f64, f64) {
    lognormal_at_log(log_noise_variance, cfg.noise_log_mean, cfg.log_std)
}

/// `log p(θ)` plus, when present, `log p(σ²)`.
pub fn log_prior_theta(h: &KernelHyper, noise_log_var: Option<f64>, cfg: &HyperPriorConfig) -> f64 {
    log_prior_hyper(h, cfg) + noise_log_var.map_or(0.0, |s| log_prior_noise(s, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_normal_reference_values() {
        let h = KernelHyper::isotropic(3, 1.0, 1.0);
        let z = Mat::zeros(1, 3);
        assert_eq!(log_prior_z(&z, &h, &InducingPriorConfig::Uniform).unwrap(), 0.0);
        let v = log_prior_z(&z, &h, &InducingPriorConfig::Normal).unwrap();
        assert!((v + 1.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn strauss_counts_pairs() {
        let h = KernelHyper::isotropic(1, 1.0, 1.0);
        let p = StraussParams { intensity: 2.0, repulsion: 0.3, radius: 0.5 };
        let cfg = InducingPriorConfig::Strauss(p);
        let far = Mat::from_rows(&[[0.0], [1.0], [2.0]]);
        let v0 = log_prior_z(&far, &h, &cfg).unwrap();
        assert!((v0 - 3.0 * 2f64.ln()).abs() < 1e-14);
        let near = Mat::from_rows(&[[0.0], [0.2], [2.0]]);
        let v1 = log_prior_z(&near, &h, &cfg).unwrap();
        assert!((v1 - v0 - 0.3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn dpp_singular_gives_sentinel() {
        let h = KernelHyper::isotropic(2, 1.0, 1.0);
        let z = Mat::from_rows(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]);
        let v = log_prior_z(&z, &h, &InducingPriorConfig::Dpp).unwrap();
        // three coincident points still factorize at the largest rung; the log det is tiny
        assert!(v < -20.0);
    }

    #[test]
    fn non_finite_z_is_rejected() {
        let h = KernelHyper::isotropic(1, 1.0, 1.0);
        let z = Mat::from_rows(&[[f64::NAN]]);
        assert!(log_prior_z(&z, &h, &InducingPriorConfig::Normal).is_err());
    }

    #[test]
    fn hyper_prior_reference_values() {
        let cfg = HyperPriorConfig { variance_log_mean: 0.0, ..Default::default() };
        let h = KernelHyper::new(&[1.0], 1.0);
        let v = log_prior_hyper(&h, &cfg);
        assert!((v + LN_2PI).abs() < 1e-14);
        let h = KernelHyper { log_lengthscales: alloc::vec![1.0], log_variance: 0.0 };
        let v = log_prior_hyper(&h, &cfg) + 0.5 * LN_2PI;
        assert!((v - (-0.5 * LN_2PI - 0.5 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn hyper_prior_at_location() {
        let cfg = HyperPriorConfig::default();
        let h = KernelHyper::new(&[1.0, 1.0], 0.05);
        let noise = 0.05f64.ln();
        let v = log_prior_theta(&h, Some(noise), &cfg);
        let expected = 2.0 * (-0.5 * LN_2PI) + 2.0 * (-0.5 * LN_2PI - 0.05f64.ln());
        assert!((v - expected).abs() < 1e-13);
    }
}
