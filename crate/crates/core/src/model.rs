//! Sparse-GP layer state in whitened form, conditional moments, and the
//! FITC / VFE energies with their gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::kernel::{
    chol_jitter, gram, gram_backward, gram_sym_backward, CholeskyFactor, GramMatrix, KernelHyper, KernelHyperGrad,
};
use crate::likelihood::{point_term, LikelihoodKind, LikelihoodParams, MarginalMoments, TermKind, DEFAULT_QUADRATURE_ORDER};
use crate::linalg::{cholesky_backward, solve_lower_in_place, solve_lower_transpose_in_place, Mat};
use crate::prior::{
    log_prior_hyper, log_prior_hyper_grad, log_prior_noise, log_prior_noise_grad, log_prior_z, log_prior_z_grad,
    HyperPriorConfig, InducingPriorConfig,
};
use crate::special::{GaussHermite, LN_2PI};

/// One sparse-GP layer: kernel, inducing inputs `Z` (M×D) and whitened
/// inducing variables `ν` (M×P), with `u = L_zz ν`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub hyper: KernelHyper,
    pub z: Mat,
    pub nu: Mat,
}

impl LayerState {
    pub fn new(hyper: KernelHyper, z: Mat, nu: Mat) -> Result<Self> {
        let l = LayerState { hyper, z, nu };
        l.validate()?;
        Ok(l)
    }

    pub fn num_inducing(&self) -> usize {
        self.z.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.nu.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.z.rows() == 0 {
            return Err(invalid("a layer needs at least one inducing point"));
        }
        if self.z.cols() != self.hyper.dim() {
            return Err(invalid(format!(
                "inducing inputs have {} columns but the kernel has {} lengthscales",
                self.z.cols(),
                self.hyper.dim()
            )));
        }
        if self.nu.rows() != self.z.rows() {
            return Err(invalid("nu must have one row per inducing point"));
        }
        if self.nu.cols() == 0 {
            return Err(invalid("layer output dimension must be at least one"));
        }
        if !self.z.is_finite() || !self.nu.is_finite() {
            return Err(invalid("layer state must be finite"));
        }
        Ok(())
    }

    /// Number of scalar coordinates in the flat layout.
    pub fn flat_len(&self) -> usize {
        self.hyper.dim() + 1 + self.z.as_slice().len() + self.nu.as_slice().len()
    }
}

/// All layers plus the likelihood parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub layers: Vec<LayerState>,
    pub lik: LikelihoodParams,
}

/// Names of the coordinate groups in the flat layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    LogLengthscales,
    LogVariance,
    InducingInputs,
    InducingVariables,
    LogNoiseVariance,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::LogLengthscales => "log_lengthscales",
            ParamGroup::LogVariance => "log_variance",
            ParamGroup::InducingInputs => "inducing_inputs",
            ParamGroup::InducingVariables => "inducing_variables",
            ParamGroup::LogNoiseVariance => "log_noise_variance",
        }
    }
}

impl ModelState {
    pub fn new(layers: Vec<LayerState>, lik: LikelihoodParams) -> Result<Self> {
        let s = ModelState { layers, lik };
        s.validate()?;
        Ok(s)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("model needs at least one layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| invalid(format!("layer {i}: {e}")))?;
            if i > 0 && l.input_dim() != self.layers[i - 1].output_dim() {
                return Err(invalid(format!(
                    "layer {i} expects input dimension {} but layer {} outputs {}",
                    l.input_dim(),
                    i - 1,
                    self.layers[i - 1].output_dim()
                )));
            }
        }
        if self.layers.last().map(|l| l.output_dim()) != Some(1) {
            return Err(invalid("final layer must have a single output"));
        }
        self.lik.validate()
    }

    pub fn validate_input_dim(&self, d: usize) -> Result<()> {
        if self.input_dim() != d {
            return Err(invalid(format!("model expects {} input columns, data has {d}", self.input_dim())));
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(LayerState::flat_len).sum::<usize>() + usize::from(self.lik.kind.has_noise())
    }

    /// Coordinates in the flat order: per layer log-lengthscales, log-variance,
    /// `Z` row-major, `ν` row-major; then the log noise variance if any.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for l in &self.layers {
            out.extend_from_slice(&l.hyper.log_lengthscales);
            out.push(l.hyper.log_variance);
            out.extend_from_slice(l.z.as_slice());
            out.extend_from_slice(l.nu.as_slice());
        }
        if self.lik.kind.has_noise() {
            out.push(self.lik.log_noise_variance);
        }
        out
    }

    /// Overwrites every coordinate from a flat vector produced by [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(invalid(format!("flat vector has {} entries, expected {}", flat.len(), self.flat_len())));
        }
        let mut k = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[k..k + dst.len()]);
            k += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.hyper.log_lengthscales);
            take(core::slice::from_mut(&mut l.hyper.log_variance));
            take(l.z.as_mut_slice());
            take(l.nu.as_mut_slice());
        }
        if self.lik.kind.has_noise() {
            take(core::slice::from_mut(&mut self.lik.log_noise_variance));
        }
        Ok(())
    }

    /// `(layer, group)` of every flat coordinate; the noise reports layer `None`.
    pub fn flat_groups(&self) -> Vec<(Option<usize>, ParamGroup)> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(core::iter::repeat((Some(i), ParamGroup::LogLengthscales)).take(l.hyper.dim()));
            out.push((Some(i), ParamGroup::LogVariance));
            out.extend(core::iter::repeat((Some(i), ParamGroup::InducingInputs)).take(l.z.as_slice().len()));
            out.extend(core::iter::repeat((Some(i), ParamGroup::InducingVariables)).take(l.nu.as_slice().len()));
        }
        if self.lik.kind.has_noise() {
            out.push((None, ParamGroup::LogNoiseVariance));
        }
        out
    }
}

pub fn group_label(layer: Option<usize>, group: ParamGroup) -> String {
    match layer {
        Some(i) => format!("layer {i} {}", group.name()),
        None => String::from(group.name()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    /// `Σ log E p(y_n | f_n)`
    Fitc,
    /// `Σ E log p(y_n | f_n)`
    Vfe,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Fitc => "fitc",
            Objective::Vfe => "vfe",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "fitc" => Some(Objective::Fitc),
            "vfe" => Some(Objective::Vfe),
            _ => None,
        }
    }

    pub(crate) fn term(self) -> TermKind {
        match self {
            Objective::Fitc => TermKind::LogExpectation,
            Objective::Vfe => TermKind::ExpectationOfLog,
        }
    }
}

/// Prior configuration shared by every layer. `hyper = None` means flat
/// priors on kernel and noise parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Priors {
    pub inducing: InducingPriorConfig,
    pub hyper: Option<HyperPriorConfig>,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { inducing: InducingPriorConfig::Normal, hyper: Some(HyperPriorConfig::default()) }
    }
}

impl Priors {
    pub fn flat() -> Self {
        Priors { inducing: InducingPriorConfig::Uniform, hyper: None }
    }
}

/// A batch of training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub x: Mat,
    pub y: Vec<f64>,
}

impl Minibatch {
    pub fn new(x: Mat, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(invalid(format!("batch has {} rows but {} targets", x.rows(), y.len())));
        }
        if x.rows() == 0 {
            return Err(invalid("empty batch"));
        }
        Ok(Minibatch { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `u = L_zz ν`.
pub fn unwhiten(layer: &LayerState) -> Result<Mat> {
    let kzz = GramMatrix::of_points(&layer.z, &layer.hyper)?;
    let c = chol_jitter(&kzz)?;
    Ok(c.factor.matmul(&layer.nu))
}

/// Cached forward quantities of one layer evaluated at inputs `X` (B×D).
#[derive(Clone, Debug)]
pub(crate) struct LayerPass {
    pub chol: CholeskyFactor,
    /// `K_zz + jitter·I`
    pub kzz_jit: Mat,
    /// `K_zx`, M×B
    pub kzx: Mat,
    /// `L⁻¹ K_zx`, M×B
    pub a: Mat,
    /// `Aᵀ ν`, B×P
    pub mean: Mat,
    /// clamped at zero
    pub var: Vec<f64>,
    pub clamped: Vec<bool>,
}

impl LayerPass {
    pub fn new(layer: &LayerState, x: &Mat) -> Result<Self> {
        if x.cols() != layer.input_dim() {
            return Err(invalid(format!(
                "inputs have {} columns, layer expects {}",
                x.cols(),
                layer.input_dim()
            )));
        }
        let kzz = GramMatrix::of_points(&layer.z, &layer.hyper)?;
        let chol = chol_jitter(&kzz)?;
        let mut kzz_jit = kzz.values;
        kzz_jit.add_diagonal(chol.jitter);
        let kzx = gram(&layer.z, x, &layer.hyper)?;
        let mut a = kzx.clone();
        solve_lower_in_place(&chol.factor, &mut a);
        let mean = a.t_matmul(&layer.nu);
        let sig2 = layer.hyper.variance();
        let b = x.rows();
        let mut colsum = vec![0.0; b];
        for m in 0..a.rows() {
            for (c, v) in colsum.iter_mut().zip(a.row(m)) {
                *c += v * v;
            }
        }
        let mut var = Vec::with_capacity(b);
        let mut clamped = Vec::with_capacity(b);
        for c in colsum {
            let v = sig2 - c;
            clamped.push(v <= 0.0);
            var.push(v.max(0.0));
        }
        Ok(LayerPass { chol, kzz_jit, kzx, a, mean, var, clamped })
    }

    pub fn moments(&self, column: usize) -> MarginalMoments {
        MarginalMoments { mean: self.mean.column(column), var: self.var.clone() }
    }
}

/// Gradient w.r.t. one layer, laid out like [`LayerState`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub hyper: KernelHyperGrad,
    pub z: Mat,
    pub nu: Mat,
}

impl LayerGrad {
    pub fn zeros(layer: &LayerState) -> Self {
        LayerGrad {
            hyper: KernelHyperGrad::zeros(layer.hyper.dim()),
            z: Mat::zeros(layer.z.rows(), layer.z.cols()),
            nu: Mat::zeros(layer.nu.rows(), layer.nu.cols()),
        }
    }
}

/// Gradient of an energy w.r.t. every coordinate of a [`ModelState`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub layers: Vec<LayerGrad>,
    pub log_noise_variance: f64,
}

impl ModelGrad {
    pub fn zeros(state: &ModelState) -> Self {
        ModelGrad { layers: state.layers.iter().map(LayerGrad::zeros).collect(), log_noise_variance: 0.0 }
    }

    /// Same layout as [`ModelState::to_flat`] for the given state.
    pub fn to_flat(&self, state: &ModelState) -> Vec<f64> {
        let mut out = Vec::with_capacity(state.flat_len());
        for g in &self.layers {
            out.extend_from_slice(&g.hyper.d_log_lengthscales);
            out.push(g.hyper.d_log_variance);
            out.extend_from_slice(g.z.as_slice());
            out.extend_from_slice(g.nu.as_slice());
        }
        if state.lik.kind.has_noise() {
            out.push(self.log_noise_variance);
        }
        out
    }

    fn negate(&mut self) {
        for g in &mut self.layers {
            g.hyper.d_log_lengthscales.iter_mut().for_each(|v| *v = -*v);
            g.hyper.d_log_variance = -g.hyper.d_log_variance;
            g.z.scale(-1.0);
            g.nu.scale(-1.0);
        }
        self.log_noise_variance = -self.log_noise_variance;
    }
}

/// Pulls `d_mean` (B×P) and `d_var` (B) back through one layer. Adds into
/// `grad`, and into `dx` (B×D) when requested.
pub(crate) fn layer_backward(
    layer: &LayerState,
    x: &Mat,
    pass: &LayerPass,
    d_mean: &Mat,
    d_var: &[f64],
    grad: &mut LayerGrad,
    dx: Option<&mut Mat>,
) {
    layer_backward_extra(layer, x, pass, d_mean, d_var, None, grad, dx)
}

/// [`layer_backward`] with an additional adjoint for `A = L⁻¹ K_zx` coming
/// from terms outside the layer (the variational covariance in SVGP).
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_backward_extra(
    layer: &LayerState,
    x: &Mat,
    pass: &LayerPass,
    d_mean: &Mat,
    d_var: &[f64],
    extra_da: Option<&Mat>,
    grad: &mut LayerGrad,
    dx: Option<&mut Mat>,
) {
    let m = layer.num_inducing();
    let b = x.rows();
    let p = layer.output_dim();
    // ν̄ = A · mean̄
    let dnu = pass.a.matmul(d_mean);
    grad.nu.add_assign(&dnu);

    // Ā = ν mean̄ᵀ − 2 A diag(var̄) on unclamped points
    let mut da = Mat::zeros(m, b);
    let sig2 = layer.hyper.variance();
    for i in 0..m {
        let nu_i = layer.nu.row(i);
        let a_i = pass.a.row(i);
        let out = da.row_mut(i);
        for n in 0..b {
            let dm = d_mean.row(n);
            let mut s = 0.0;
            for q in 0..p {
                s += nu_i[q] * dm[q];
            }
            if !pass.clamped[n] {
                s -= 2.0 * a_i[n] * d_var[n];
            }
            out[n] = s;
        }
    }
    for n in 0..b {
        if !pass.clamped[n] {
            grad.hyper.d_log_variance += d_var[n] * sig2;
        }
    }
    if let Some(e) = extra_da {
        da.add_assign(e);
    }

    // A = L⁻¹ K_zx:  K̄_zx = L⁻ᵀ Ā,  L̄ = −tril(K̄_zx Aᵀ)
    let mut kzx_bar = da;
    solve_lower_transpose_in_place(&pass.chol.factor, &mut kzx_bar);
    let mut l_bar = kzx_bar.matmul_t(&pass.a);
    l_bar.scale(-1.0);
    l_bar.make_lower();
    let kzz_bar = cholesky_backward(&pass.chol.factor, &l_bar);

    gram_backward(&layer.z, x, &layer.hyper, &pass.kzx, &kzx_bar, &mut grad.hyper, Some(&mut grad.z), dx);
    gram_sym_backward(&layer.z, &layer.hyper, &pass.kzz_jit, &kzz_bar, &mut grad.hyper, Some(&mut grad.z));
}

/// Per-point conditional moments of one layer at inputs `Xb`, one
/// [`MarginalMoments`] per output column.
pub fn conditional_moments(xb: &Mat, layer: &LayerState) -> Result<Vec<MarginalMoments>> {
    layer.validate()?;
    let pass = LayerPass::new(layer, xb)?;
    Ok((0..layer.output_dim()).map(|c| pass.moments(c)).collect())
}

/// Sum of the per-layer priors: `log p(ν) + log p(Z) + log p(θ)`, plus the noise prior.
pub fn log_prior_total(state: &ModelState, priors: &Priors) -> Result<f64> {
    let mut lp = 0.0;
    for l in &state.layers {
        lp += whitened_log_prior(&l.nu);
        lp += log_prior_z(&l.z, &l.hyper, &priors.inducing)?;
        if let Some(h) = &priors.hyper {
            lp += log_prior_hyper(&l.hyper, h);
        }
    }
    if let (Some(h), true) = (&priors.hyper, state.lik.kind.has_noise()) {
        lp += log_prior_noise(state.lik.log_noise_variance, h);
    }
    Ok(lp)
}

fn whitened_log_prior(nu: &Mat) -> f64 {
    -0.5 * nu.frobenius_sq() - 0.5 * nu.as_slice().len() as f64 * LN_2PI
}

/// Adds the prior gradient (of `log p`, positive sense) into `grad`; returns the log prior.
pub(crate) fn log_prior_total_grad(state: &ModelState, priors: &Priors, grad: &mut ModelGrad) -> Result<f64> {
    let mut lp = 0.0;
    for (l, g) in state.layers.iter().zip(&mut grad.layers) {
        lp += whitened_log_prior(&l.nu);
        for (d, v) in g.nu.as_mut_slice().iter_mut().zip(l.nu.as_slice()) {
            *d -= v;
        }
        lp += log_prior_z_grad(&l.z, &l.hyper, &priors.inducing, &mut g.z, &mut g.hyper)?;
        if let Some(h) = &priors.hyper {
            lp += log_prior_hyper_grad(&l.hyper, h, &mut g.hyper);
        }
    }
    if let (Some(h), true) = (&priors.hyper, state.lik.kind.has_noise()) {
        let (v, d) = log_prior_noise_grad(state.lik.log_noise_variance, h);
        lp += v;
        grad.log_noise_variance += d;
    }
    Ok(lp)
}

/// Sum over the batch of likelihood terms, with derivatives w.r.t. the
/// final-layer moments and the log noise.
pub(crate) struct LikelihoodSum {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
    pub d_log_noise: f64,
}

pub(crate) fn likelihood_sum(
    mean: &[f64],
    var: &[f64],
    y: &[f64],
    lik: &LikelihoodParams,
    objective: Objective,
    gh: &GaussHermite,
) -> LikelihoodSum {
    let noise = lik.noise_variance();
    let term = objective.term();
    let b = y.len();
    let mut out = LikelihoodSum { value: 0.0, d_mean: vec![0.0; b], d_var: vec![0.0; b], d_log_noise: 0.0 };
    for n in 0..b {
        let t = point_term(lik.kind, term, mean[n], var[n], y[n], noise, gh);
        out.value += t.value;
        out.d_mean[n] = t.d_mean;
        out.d_var[n] = t.d_var;
        out.d_log_noise += t.d_log_noise;
    }
    out
}

pub(crate) fn quadrature_for(kind: LikelihoodKind, objective: Objective) -> Result<GaussHermite> {
    if kind == LikelihoodKind::BernoulliProbit && objective == Objective::Vfe {
        GaussHermite::new(DEFAULT_QUADRATURE_ORDER)
    } else {
        Ok(GaussHermite { nodes: Vec::new(), weights: Vec::new() })
    }
}

pub(crate) fn check_batch(state: &ModelState, batch: &Minibatch, n_total: usize) -> Result<()> {
    state.validate()?;
    state.validate_input_dim(batch.x.cols())?;
    if batch.is_empty() || batch.x.rows() != batch.y.len() {
        return Err(invalid("batch must be non-empty with one target per row"));
    }
    if n_total < batch.len() {
        return Err(invalid(format!("N_total {n_total} is smaller than the batch size {}", batch.len())));
    }
    crate::likelihood::check_inputs(
        &MarginalMoments { mean: vec![0.0; batch.len()], var: vec![0.0; batch.len()] },
        &batch.y,
        &state.lik,
    )
}

fn require_shallow(state: &ModelState) -> Result<()> {
    if state.depth() != 1 {
        return Err(invalid("single-layer energy called on a deep model; use the deep module"));
    }
    Ok(())
}

/// `U(Ψ) = −[(N/B) Σ_n ℓ_n + log p(ν) + log p(Z) + log p(θ)]` for a single-layer model.
pub fn log_energy(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
) -> Result<f64> {
    require_shallow(state)?;
    check_batch(state, batch, n_total)?;
    let pass = LayerPass::new(&state.layers[0], &batch.x)?;
    let gh = quadrature_for(state.lik.kind, objective)?;
    let lik = likelihood_sum(pass.mean.as_slice(), &pass.var, &batch.y, &state.lik, objective, &gh);
    let scale = n_total as f64 / batch.len() as f64;
    Ok(-(scale * lik.value + log_prior_total(state, priors)?))
}

/// Energy and its gradient for a single-layer model.
pub fn energy_and_grad(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
) -> Result<(f64, ModelGrad)> {
    require_shallow(state)?;
    check_batch(state, batch, n_total)?;
    let layer = &state.layers[0];
    let pass = LayerPass::new(layer, &batch.x)?;
    let gh = quadrature_for(state.lik.kind, objective)?;
    let mut lik = likelihood_sum(pass.mean.as_slice(), &pass.var, &batch.y, &state.lik, objective, &gh);
    let scale = n_total as f64 / batch.len() as f64;
    lik.d_mean.iter_mut().for_each(|v| *v *= scale);
    lik.d_var.iter_mut().for_each(|v| *v *= scale);

    let mut grad = ModelGrad::zeros(state);
    grad.log_noise_variance = scale * lik.d_log_noise;
    let d_mean = Mat::from_vec(batch.len(), 1, lik.d_mean);
    layer_backward(layer, &batch.x, &pass, &d_mean, &lik.d_var, &mut grad.layers[0], None);
    let lp = log_prior_total_grad(state, priors, &mut grad)?;
    grad.negate();
    Ok((-(scale * lik.value + lp), grad))
}

/// Gradient of [`log_energy`].
pub fn grad_energy(
    state: &ModelState,
    batch: &Minibatch,
    objective: Objective,
    priors: &Priors,
    n_total: usize,
) -> Result<ModelGrad> {
    energy_and_grad(state, batch, objective, priors, n_total).map(|(_, g)| g)
}

/// Final-layer predictive moments of a single-layer model at `x` (latent `f`, no noise).
pub fn predict_latent(state: &ModelState, x: &Mat) -> Result<MarginalMoments> {
    require_shallow(state)?;
    let pass = LayerPass::new(&state.layers[0], x)?;
    Ok(pass.moments(0))
}
