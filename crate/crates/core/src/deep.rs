//! Deep GPs: layers composed with sampled inner activations.
//!
//! Inner layers add an identity mean function (inputs zero-padded or
//! truncated to the layer width); the final layer has zero mean. Inner
//! activations are drawn as `f̃ = μ̃ + m(h) + σ̃ ζ` with `ζ ~ N(0, 1)`, which
//! keeps gradients pathwise for a fixed `ζ`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::likelihood::MarginalMoments;
use crate::linalg::Mat;
use crate::model::{
    check_batch, layer_backward, likelihood_sum, log_prior_total, log_prior_total_grad, quadrature_for, LayerPass,
    Minibatch, ModelGrad, ModelState, Objective, Priors,
};

/// Number of forward samples per posterior sample at prediction time.
pub const DEFAULT_PREDICTION_PATHS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepForwardTrace {
    /// Sampled outputs of layers `1..L-1`, each B×P_ℓ.
    pub activations: Vec<Mat>,
    pub final_moments: MarginalMoments,
}

/// Adds the identity mean function `m(h)` to `out` (B×P), padding or truncating columns.
fn add_identity_mean(h: &Mat, out: &mut Mat) {
    let k = h.cols().min(out.cols());
    for n in 0..h.rows() {
        let src = &h.row(n)[..k];
        for (o, s) in out.row_mut(n)[..k].iter_mut().zip(src) {
            *o += s;
        }
    }
}

/// Standard-normal draws for every inner layer of `state`, for a batch of `b` points.
pub fn draw_inner_noise<R: Rng + ?Sized>(state: &ModelState, b: usize, rng: &mut R) -> Vec<Mat> {
    state.layers[..state.depth() - 1]
        .iter()
        .map(|l| Mat::from_fn(b, l.output_dim(), |_, _| rng.sample(StandardNormal)))
        .collect()
}

struct Forward {
    inputs: Vec<Mat>,
    passes: Vec<LayerPass>,
}

fn forward_with_noise(x: &Mat, state: &ModelState, zetas: &[Mat]) -> Result<Forward> {
    let depth = state.depth();
    if zetas.len() != depth - 1 {
        return Err(invalid("one noise matrix is needed per inner layer"));
    }
    let mut inputs = Vec::with_capacity(depth);
    let mut passes = Vec::with_capacity(depth);
    let mut h = x.clone();
    for (l, layer) in state.layers.iter().enumerate() {
        let pass = LayerPass::new(layer, &h)?;
        if l + 1 < depth {
            let zeta = &zetas[l];
            if zeta.rows() != h.rows() || zeta.cols() != layer.output_dim() {
                return Err(invalid("noise matrix shape does not match the layer output"));
            }
            let mut f = pass.mean.clone();
            add_identity_mean(&h, &mut f);
            for n in 0..f.rows() {
                let sd = pass.var[n].sqrt();
                for (o, z) in f.row_mut(n).iter_mut().zip(zeta.row(n)) {
                    *o += sd * z;
                }
            }
            inputs.push(core::mem::replace(&mut h, f));
        } else {
            inputs.push(h.clone());
        }
        passes.push(pass);
    }
    Ok(Forward { inputs, passes })
}

/// Forward pass with explicit inner-layer noise.
pub fn forward_with(xb: &Mat, state: &ModelState, zetas: &[Mat]) -> Result<DeepForwardTrace> {
    state.validate()?;
    state.validate_input_dim(xb.cols())?;
    let fw = forward_with_noise(xb, state, zetas)?;
    Ok(DeepForwardTrace {
        activations: fw.inputs[1..].to_vec(),
        final_moments: fw.passes[state.depth() - 1].moments(0),
    })
}

/// Draws one path through the inner layers and returns final-layer moments.
pub fn forward_sample<R: Rng + ?Sized>(xb: &Mat, state: &ModelState, rng: &mut R) -> Result<DeepForwardTrace> {
    let zetas = draw_inner_noise(state, xb.rows(), rng);
    forward_with(xb, state, &zetas)
}

fn energy_and_grad_impl(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    zetas: &[Mat],
    want_grad: bool,
) -> Result<(f64, Option<ModelGrad>)> {
    check_batch(state, batch, n_total)?;
    let fw = forward_with_noise(&batch.x, state, zetas)?;
    let depth = state.depth();
    let last = &fw.passes[depth - 1];
    let gh = quadrature_for(state.lik.kind, objective)?;
    let mut lik = likelihood_sum(last.mean.as_slice(), &last.var, &batch.y, &state.lik, objective, &gh);
    let scale = n_total as f64 / batch.len() as f64;
    if !want_grad {
        let u = -(scale * lik.value + log_prior_total(state, priors)?);
        return Ok((u, None));
    }
    lik.d_mean.iter_mut().for_each(|v| *v *= scale);
    lik.d_var.iter_mut().for_each(|v| *v *= scale);
    let mut grad = ModelGrad::zeros(state);
    grad.log_noise_variance = scale * lik.d_log_noise;

    let b = batch.len();
    let mut d_out = Mat::from_vec(b, 1, lik.d_mean);
    let mut d_var = lik.d_var;
    for l in (0..depth).rev() {
        let layer = &state.layers[l];
        let h = &fw.inputs[l];
        let pass = &fw.passes[l];
        if l + 1 < depth {
            // f̃ = μ̃ + m(h) + √v ζ
            let zeta = &zetas[l];
            d_var = (0..b)
                .map(|n| {
                    let v = pass.var[n];
                    if v > 0.0 {
                        let s: f64 = d_out.row(n).iter().zip(zeta.row(n)).map(|(d, z)| d * z).sum();
                        s / (2.0 * v.sqrt())
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        let mut dh = if l > 0 { Some(Mat::zeros(h.rows(), h.cols())) } else { None };
        layer_backward(layer, h, pass, &d_out, &d_var, &mut grad.layers[l], dh.as_mut());
        if let Some(mut dh) = dh {
            if l + 1 < depth {
                add_identity_mean(&d_out, &mut dh);
            }
            d_out = dh;
        }
    }
    let lp = log_prior_total_grad(state, priors, &mut grad)?;
    negate(&mut grad);
    Ok((-(scale * lik.value + lp), Some(grad)))
}

fn negate(g: &mut ModelGrad) {
    for l in &mut g.layers {
        l.hyper.d_log_lengthscales.iter_mut().for_each(|v| *v = -*v);
        l.hyper.d_log_variance = -l.hyper.d_log_variance;
        l.z.scale(-1.0);
        l.nu.scale(-1.0);
    }
    g.log_noise_variance = -g.log_noise_variance;
}

/// Deep energy with fixed inner-layer noise `zetas` (one B×P_ℓ matrix per inner layer).
pub fn deep_log_energy_with(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    zetas: &[Mat],
) -> Result<f64> {
    energy_and_grad_impl(state, batch, objective, priors, n_total, zetas, false).map(|r| r.0)
}

/// Energy and pathwise gradient with fixed inner-layer noise.
pub fn deep_energy_and_grad_with(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    zetas: &[Mat],
) -> Result<(f64, ModelGrad)> {
    let (u, g) = energy_and_grad_impl(state, batch, objective, priors, n_total, zetas, true)?;
    Ok((u, g.expect("gradient requested")))
}

/// Single-path estimate of the deep energy. With one layer this is the
/// shallow energy.
pub fn deep_log_energy<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    rng: &mut R,
) -> Result<f64> {
    let zetas = draw_inner_noise(state, batch.len(), rng);
    deep_log_energy_with(state, batch, objective, priors, n_total, &zetas)
}

pub fn deep_energy_and_grad<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    rng: &mut R,
) -> Result<(f64, ModelGrad)> {
    let zetas = draw_inner_noise(state, batch.len(), rng);
    deep_energy_and_grad_with(state, batch, objective, priors, n_total, &zetas)
}

pub fn deep_grad_energy<R: Rng + ?Sized>(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
    rng: &mut R,
) -> Result<ModelGrad> {
    deep_energy_and_grad(state, batch, objective, priors, n_total, rng).map(|r| r.1)
}

/// Final-layer latent moments at `x` for `paths` forward samples (one when
/// the model is shallow).
pub fn predict_paths<R: Rng + ?Sized>(state: &ModelState, x: &Mat, paths: usize, rng: &mut R) -> Result<Vec<MarginalMoments>> {
    if paths == 0 {
        return Err(invalid("at least one forward path is needed"));
    }
    let reps = if state.depth() == 1 { 1 } else { paths };
    (0..reps).map(|_| forward_sample(x, state, rng).map(|t| t.final_moments)).collect()
}

/// Builds a deep state's default hidden widths: every inner layer has width `d`.
pub fn default_widths(d: usize, depth: usize) -> Vec<usize> {
    let mut w = vec![d; depth.saturating_sub(1)];
    w.push(1);
    w
}
