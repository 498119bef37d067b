//! Posterior-averaged predictive distributions and the reported metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::likelihood::MarginalMoments;
use crate::special::{log_ndtr, ndtr, LN_2PI};

/// Per test point, one entry per posterior sample (× forward path).
#[derive(Clone, Debug, PartialEq)]
pub enum PredictiveEnsemble {
    /// Gaussian components `N(mean, var)` with `var = σ̃² + σ²`.
    Regression { mean: Vec<Vec<f64>>, var: Vec<Vec<f64>> },
    /// `log p(y = 1)` and `log p(y = 0)` per component.
    Classification { log_p1: Vec<Vec<f64>>, log_p0: Vec<Vec<f64>> },
}

impl PredictiveEnsemble {
    pub fn regression(num_points: usize) -> Self {
        PredictiveEnsemble::Regression { mean: vec![Vec::new(); num_points], var: vec![Vec::new(); num_points] }
    }

    pub fn classification(num_points: usize) -> Self {
        PredictiveEnsemble::Classification { log_p1: vec![Vec::new(); num_points], log_p0: vec![Vec::new(); num_points] }
    }

    pub fn num_points(&self) -> usize {
        match self {
            PredictiveEnsemble::Regression { mean, .. } => mean.len(),
            PredictiveEnsemble::Classification { log_p1, .. } => log_p1.len(),
        }
    }

    /// Components at point 0 (all points carry the same count).
    pub fn num_components(&self) -> usize {
        match self {
            PredictiveEnsemble::Regression { mean, .. } => mean.first().map_or(0, Vec::len),
            PredictiveEnsemble::Classification { log_p1, .. } => log_p1.first().map_or(0, Vec::len),
        }
    }

    /// Appends one latent-moment sample as a component. Regression adds
    /// `noise_var` to the latent variance; classification uses the probit
    /// closed form `Φ(μ/√(1+σ̃²))`.
    pub fn push(&mut self, latent: &MarginalMoments, noise_var: f64) -> Result<()> {
        if latent.len() != self.num_points() {
            return Err(invalid(format!(
                "sample has {} points, ensemble has {}",
                latent.len(),
                self.num_points()
            )));
        }
        match self {
            PredictiveEnsemble::Regression { mean, var } => {
                for i in 0..latent.len() {
                    mean[i].push(latent.mean[i]);
                    var[i].push(latent.var[i].max(0.0) + noise_var);
                }
            }
            PredictiveEnsemble::Classification { log_p1, log_p0 } => {
                for i in 0..latent.len() {
                    let z = latent.mean[i] / (1.0 + latent.var[i].max(0.0)).sqrt();
                    log_p1[i].push(log_ndtr(z));
                    log_p0[i].push(log_ndtr(-z));
                }
            }
        }
        Ok(())
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.num_points() {
            return Err(invalid(format!("{} targets for {} test points", y.len(), self.num_points())));
        }
        if self.num_points() == 0 {
            return Err(invalid("empty test set"));
        }
        let counts_ok = match self {
            PredictiveEnsemble::Regression { mean, var } => {
                mean.iter().zip(var).all(|(m, v)| !m.is_empty() && m.len() == v.len())
            }
            PredictiveEnsemble::Classification { log_p1, log_p0 } => {
                log_p1.iter().zip(log_p0).all(|(a, b)| !a.is_empty() && a.len() == b.len())
            }
        };
        if !counts_ok {
            return Err(invalid("ensemble has a test point with no samples"));
        }
        if let PredictiveEnsemble::Classification { .. } = self {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(invalid("classification targets must be 0 or 1"));
            }
        }
        Ok(())
    }

    /// Mixture mean per point (regression) or mean probability of class 1.
    pub fn point_predictions(&self) -> Vec<f64> {
        match self {
            PredictiveEnsemble::Regression { mean, .. } => {
                mean.iter().map(|m| m.iter().sum::<f64>() / m.len().max(1) as f64).collect()
            }
            PredictiveEnsemble::Classification { log_p1, .. } => log_p1
                .iter()
                .map(|l| l.iter().map(|v| v.exp()).sum::<f64>() / l.len().max(1) as f64)
                .collect(),
        }
    }

    /// Mixture variance per point (regression only).
    pub fn mixture_variance(&self) -> Option<Vec<f64>> {
        match self {
            PredictiveEnsemble::Regression { mean, var } => Some(
                mean.iter()
                    .zip(var)
                    .map(|(m, v)| {
                        let s = m.len() as f64;
                        let mu = m.iter().sum::<f64>() / s;
                        m.iter().zip(v).map(|(a, b)| b + (a - mu) * (a - mu)).sum::<f64>() / s
                    })
                    .collect(),
            ),
            PredictiveEnsemble::Classification { .. } => None,
        }
    }

    /// Log-density of each component at `y`, per point.
    pub fn component_log_densities(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(y)?;
        Ok(match self {
            PredictiveEnsemble::Regression { mean, var } => (0..y.len())
                .map(|i| {
                    mean[i]
                        .iter()
                        .zip(&var[i])
                        .map(|(m, v)| -0.5 * (LN_2PI + v.ln() + (y[i] - m) * (y[i] - m) / v))
                        .collect()
                })
                .collect(),
            PredictiveEnsemble::Classification { log_p1, log_p0 } => (0..y.len())
                .map(|i| if y[i] == 1.0 { log_p1[i].clone() } else { log_p0[i].clone() })
                .collect(),
        })
    }

    /// Per-point `−log((1/S) Σ_s p(y*|s))`.
    pub fn pointwise_nll(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.component_log_densities(y)?.iter().map(|l| -log_mean_exp(l)).collect())
    }
}

pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Mean negative log predictive density of the mixture.
pub fn mnll(ens: &PredictiveEnsemble, y: &[f64]) -> Result<f64> {
    let p = ens.pointwise_nll(y)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

/// Root mean squared error of the mixture mean.
pub fn rmse(ens: &PredictiveEnsemble, y: &[f64]) -> Result<f64> {
    ens.check(y)?;
    let pred = ens.point_predictions();
    Ok((pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Fraction misclassified; mean probability ≥ 0.5 predicts class 1.
pub fn error_rate(ens: &PredictiveEnsemble, y: &[f64]) -> Result<f64> {
    if !matches!(ens, PredictiveEnsemble::Classification { .. }) {
        return Err(invalid("error rate needs a classification ensemble"));
    }
    ens.check(y)?;
    let pred = ens.point_predictions();
    let wrong = pred.iter().zip(y).filter(|(p, t)| (**p >= 0.5) != (**t == 1.0)).count();
    Ok(wrong as f64 / y.len() as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve of arbitrary scores; ties count one half.
pub fn auc_scores(scores: &[f64], y: &[f64]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(invalid("scores and labels differ in length"));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::DiagnosticUndefined(String::from("AUC needs both classes present")));
    }
    let ranks = average_ranks(scores);
    let r1: f64 = ranks.iter().zip(y).filter(|(_, &t)| t == 1.0).map(|(r, _)| r).sum();
    let n1f = n1 as f64;
    Ok((r1 - n1f * (n1f + 1.0) / 2.0) / (n1f * n0 as f64))
}

/// AUC of the mean predicted probabilities.
pub fn auc(ens: &PredictiveEnsemble, y: &[f64]) -> Result<f64> {
    if !matches!(ens, PredictiveEnsemble::Classification { .. }) {
        return Err(invalid("AUC needs a classification ensemble"));
    }
    ens.check(y)?;
    auc_scores(&ens.point_predictions(), y)
}

/// Largest `n` (non-zero differences) for which the exact null distribution is used.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// One-sided Wilcoxon signed-rank test of `median(a − b) < 0`; returns the p-value.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("samples differ in length"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(invalid("differences must be finite"));
    }
    let nz: Vec<f64> = d.into_iter().filter(|&v| v != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::DiagnosticUndefined(String::from("all differences are zero")));
    }
    let n = nz.len();
    if n < 5 {
        return Err(invalid(format!("need at least 5 non-zero differences, got {n}")));
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let t_plus: f64 = ranks.iter().zip(&nz).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
    if n <= WILCOXON_EXACT_MAX {
        // doubled ranks are integers even with ties
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let obs = (2.0 * t_plus).round() as usize;
        let hits: f64 = counts[..=obs].iter().sum();
        Ok(hits / 2f64.powi(n as i32))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie += t * t * t - t;
            i = j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
        let z = (t_plus - mean + 0.5) / var.sqrt();
        Ok(ndtr(z))
    }
}
