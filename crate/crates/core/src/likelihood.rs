//! Per-point likelihood terms under a Gaussian marginal `f_n ~ N(μ̃_n, σ̃_n²)`.
//!
//! `log_expectation` is `log E p(y|f)` (FITC-style) and `expectation_of_log`
//! is `E log p(y|f)` (VFE-style).

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::special::{inv_mills, log_ndtr, GaussHermite, LN_2PI};

/// Default Gauss–Hermite order for probit `E log Φ`.
pub const DEFAULT_QUADRATURE_ORDER: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LikelihoodKind {
    Gaussian,
    /// Noise variance inflated by the latent variance: `σ² + σ̃²`.
    HeteroskedasticGaussian,
    BernoulliProbit,
}

impl LikelihoodKind {
    pub fn has_noise(self) -> bool {
        !matches!(self, LikelihoodKind::BernoulliProbit)
    }

    pub fn name(self) -> &'static str {
        match self {
            LikelihoodKind::Gaussian => "gaussian",
            LikelihoodKind::HeteroskedasticGaussian => "heteroskedastic_gaussian",
            LikelihoodKind::BernoulliProbit => "bernoulli_probit",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(LikelihoodKind::Gaussian),
            "heteroskedastic_gaussian" => Some(LikelihoodKind::HeteroskedasticGaussian),
            "bernoulli_probit" => Some(LikelihoodKind::BernoulliProbit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodParams {
    pub kind: LikelihoodKind,
    /// Log observation-noise variance; ignored for probit.
    pub log_noise_variance: f64,
}

impl LikelihoodParams {
    pub fn gaussian(noise_variance: f64) -> Self {
        LikelihoodParams { kind: LikelihoodKind::Gaussian, log_noise_variance: noise_variance.ln() }
    }

    pub fn heteroskedastic(noise_variance: f64) -> Self {
        LikelihoodParams {
            kind: LikelihoodKind::HeteroskedasticGaussian,
            log_noise_variance: noise_variance.ln(),
        }
    }

    pub fn probit() -> Self {
        LikelihoodParams { kind: LikelihoodKind::BernoulliProbit, log_noise_variance: 0.0 }
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_noise() && !self.log_noise_variance.is_finite() {
            return Err(invalid("log noise variance must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarginalMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl MarginalMoments {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Value and partial derivatives of one per-point term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct PointTerm {
    pub value: f64,
    pub d_mean: f64,
    pub d_var: f64,
    /// Derivative w.r.t. the log noise variance.
    pub d_log_noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TermKind {
    LogExpectation,
    ExpectationOfLog,
}

/// Evaluates one per-point term. `gh` is only consulted for probit `E log`.
pub(crate) fn point_term(
    kind: LikelihoodKind,
    term: TermKind,
    mean: f64,
    var: f64,
    y: f64,
    noise: f64,
    gh: &GaussHermite,
) -> PointTerm {
    let r = y - mean;
    match (kind, term) {
        (LikelihoodKind::Gaussian, TermKind::LogExpectation) => {
            let t = var + noise;
            let d_var = -0.5 / t + 0.5 * r * r / (t * t);
            PointTerm {
                value: -0.5 * (LN_2PI + t.ln() + r * r / t),
                d_mean: r / t,
                d_var,
                d_log_noise: noise * d_var,
            }
        }
        (LikelihoodKind::Gaussian, TermKind::ExpectationOfLog) => {
            // same operation order as above so var = 0 gives identical floats
            let t = noise;
            let q = r * r + var;
            PointTerm {
                value: -0.5 * (LN_2PI + t.ln() + q / t),
                d_mean: r / t,
                d_var: -0.5 / t,
                d_log_noise: -0.5 + 0.5 * q / t,
            }
        }
        (LikelihoodKind::HeteroskedasticGaussian, TermKind::LogExpectation) => {
            // p(y|f) = N(y; f, σ² + σ̃²) integrated against N(f; μ̃, σ̃²)
            let t = noise + 2.0 * var;
            let dt = -0.5 / t + 0.5 * r * r / (t * t);
            PointTerm {
                value: -0.5 * (LN_2PI + t.ln() + r * r / t),
                d_mean: r / t,
                d_var: 2.0 * dt,
                d_log_noise: noise * dt,
            }
        }
        (LikelihoodKind::HeteroskedasticGaussian, TermKind::ExpectationOfLog) => {
            let t = noise + var;
            let q = r * r + var;
            let dt = -0.5 / t + 0.5 * q / (t * t);
            PointTerm {
                value: -0.5 * (LN_2PI + t.ln() + q / t),
                d_mean: r / t,
                d_var: dt - 0.5 / t,
                d_log_noise: noise * dt,
            }
        }
        (LikelihoodKind::BernoulliProbit, TermKind::LogExpectation) => {
            let s = 2.0 * y - 1.0;
            let scale = 1.0 / (1.0 + var).sqrt();
            let z = s * mean * scale;
            let lam = inv_mills(z);
            PointTerm {
                value: log_ndtr(z),
                d_mean: lam * s * scale,
                d_var: -0.5 * lam * z / (1.0 + var),
                d_log_noise: 0.0,
            }
        }
        (LikelihoodKind::BernoulliProbit, TermKind::ExpectationOfLog) => {
            let s = 2.0 * y - 1.0;
            let scale = (2.0 * var.max(0.0)).sqrt();
            let (mut value, mut d_mean, mut d_var) = (0.0, 0.0, 0.0);
            for (t, w) in gh.nodes.iter().zip(&gh.weights) {
                let a = s * (mean + scale * t);
                let lam = inv_mills(a);
                value += w * log_ndtr(a);
                d_mean += w * s * lam;
                d_var -= w * lam * (a + lam);
            }
            let norm = 1.0 / core::f64::consts::PI.sqrt();
            PointTerm {
                value: value * norm,
                d_mean: d_mean * norm,
                d_var: 0.5 * d_var * norm,
                d_log_noise: 0.0,
            }
        }
    }
}

pub(crate) fn check_inputs(mom: &MarginalMoments, y: &[f64], lp: &LikelihoodParams) -> Result<()> {
    if mom.mean.len() != mom.var.len() || mom.mean.len() != y.len() {
        return Err(invalid(format!(
            "length mismatch: {} means, {} variances, {} targets",
            mom.mean.len(),
            mom.var.len(),
            y.len()
        )));
    }
    lp.validate()?;
    if lp.kind == LikelihoodKind::BernoulliProbit {
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid(format!("probit label at index {i} is {}, expected 0 or 1", y[i])));
        }
    }
    Ok(())
}

fn evaluate(mom: &MarginalMoments, y: &[f64], lp: &LikelihoodParams, term: TermKind, order: usize) -> Result<Vec<f64>> {
    check_inputs(mom, y, lp)?;
    let gh = match (lp.kind, term) {
        (LikelihoodKind::BernoulliProbit, TermKind::ExpectationOfLog) => GaussHermite::new(order)?,
        _ => GaussHermite { nodes: Vec::new(), weights: Vec::new() },
    };
    let noise = lp.noise_variance();
    Ok((0..y.len())
        .map(|i| point_term(lp.kind, term, mom.mean[i], mom.var[i].max(0.0), y[i], noise, &gh).value)
        .collect())
}

/// Per-point `log E_{N(f; μ̃, σ̃²)} p(y_n | f)`.
pub fn log_expectation(mom: &MarginalMoments, y: &[f64], lp: &LikelihoodParams) -> Result<Vec<f64>> {
    evaluate(mom, y, lp, TermKind::LogExpectation, DEFAULT_QUADRATURE_ORDER)
}

/// Per-point `E_{N(f; μ̃, σ̃²)} log p(y_n | f)`; probit uses the default quadrature order.
pub fn expectation_of_log(mom: &MarginalMoments, y: &[f64], lp: &LikelihoodParams) -> Result<Vec<f64>> {
    evaluate(mom, y, lp, TermKind::ExpectationOfLog, DEFAULT_QUADRATURE_ORDER)
}

/// [`expectation_of_log`] with an explicit quadrature order for probit.
pub fn expectation_of_log_with_order(
    mom: &MarginalMoments,
    y: &[f64],
    lp: &LikelihoodParams,
    order: usize,
) -> Result<Vec<f64>> {
    evaluate(mom, y, lp, TermKind::ExpectationOfLog, order)
}
