//! Normal CDF in log space, the inverse Mills ratio and Gauss–Hermite rules.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `Φ(z)`.
pub fn ndtr(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log Φ(z)`, accurate in both tails.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 6.0 {
        // Φ(z) = 1 - ½erfc(z/√2), erfc tiny here
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z >= -30.0 {
        (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// `log φ(z)` for the standard normal density.
#[inline]
pub fn log_npdf(z: f64) -> f64 {
    -0.5 * (z * z + LN_2PI)
}

/// `φ(z) / Φ(z)`.
pub fn inv_mills(z: f64) -> f64 {
    if z >= -30.0 {
        (log_npdf(z) - log_ndtr(z)).exp()
    } else {
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -z / series
    }
}

/// Physicists' Gauss–Hermite rule: `∫ e^{-t²} g(t) dt ≈ Σ w_i g(t_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("Gauss-Hermite order must be at least 1"));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = 0.751_125_544_464_942_5; // π^(-1/4)
        let m = (n + 1) / 2;
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..m {
            // standard initial guesses, largest root first
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(GaussHermite { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `∫ N(f; mean, var) g(f) df`.
    pub fn expect(&self, mean: f64, var: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var.max(0.0)).sqrt();
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(mean + scale * t);
        }
        acc / SQRT_PI
    }
}

/// `∫ N(f; mean, var) integrand(f) df` with an `order`-point rule.
pub fn gauss_hermite(mean: f64, var: f64, integrand: impl FnMut(f64) -> f64, order: usize) -> Result<f64> {
    if !(var >= 0.0) {
        return Err(invalid("Gauss-Hermite variance must be non-negative"));
    }
    Ok(GaussHermite::new(order)?.expect(mean, var, integrand))
}
