//! Stochastic-gradient HMC, chain orchestration and the R̂ diagnostic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::deep::deep_energy_and_grad;
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::model::{energy_and_grad, group_label, Minibatch, ModelState, Objective, ParamGroup, Priors};

#[derive(Clone, Debug, PartialEq)]
pub struct SghmcConfig {
    /// ε
    pub step_size: f64,
    /// C, isotropic
    pub friction: f64,
    /// B̃, estimate of the gradient-noise covariance
    pub noise_estimate: f64,
    /// Scalar diagonal mass.
    pub mass: f64,
    pub burn_in_steps: usize,
    /// Simulation steps between retained samples.
    pub keep_every: usize,
    pub num_samples: usize,
    pub num_chains: usize,
    pub rng_seed: u64,
}

impl Default for SghmcConfig {
    fn default() -> Self {
        SghmcConfig {
            step_size: 0.01,
            friction: 5.0,
            noise_estimate: 0.0,
            mass: 1.0,
            burn_in_steps: 10_000,
            keep_every: 10,
            num_samples: 256,
            num_chains: 1,
            rng_seed: 0,
        }
    }
}

impl SghmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(invalid("step_size must be finite and non-negative"));
        }
        if !(self.friction >= 0.0) || !(self.noise_estimate >= 0.0) {
            return Err(invalid("friction and noise_estimate must be non-negative"));
        }
        if self.noise_estimate > self.friction {
            return Err(invalid("noise_estimate may not exceed friction (injected noise variance would be negative)"));
        }
        if !(self.mass > 0.0) {
            return Err(invalid("mass must be positive"));
        }
        if self.keep_every == 0 {
            return Err(invalid("keep_every must be at least 1"));
        }
        if self.num_chains == 0 {
            return Err(invalid("num_chains must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.burn_in_steps + self.keep_every * self.num_samples
    }

    /// Standard deviation of the injected noise, `√(2ε(C − B̃))`.
    pub fn noise_std(&self) -> f64 {
        (2.0 * self.step_size * (self.friction - self.noise_estimate)).max(0.0).sqrt()
    }
}

/// One SGHMC transition given `∇U` at the current position:
///
/// `r ← r − ε∇U − εC M⁻¹ r + N(0, 2ε(C − B̃))`, then `x ← x + ε M⁻¹ r`.
///
/// Exactly one standard normal is drawn per coordinate, whatever the
/// configuration. A non-finite gradient leaves both vectors untouched and
/// reports the first offending coordinate.
pub fn sghmc_step<R: Rng + ?Sized>(
    position: &mut [f64],
    momentum: &mut [f64],
    grad: &[f64],
    cfg: &SghmcConfig,
    rng: &mut R,
) -> Result<()> {
    if position.len() != momentum.len() || position.len() != grad.len() {
        return Err(invalid("position, momentum and gradient lengths differ"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged { group: format!("coordinate {i}"), step: 0, last_finite_sample: None });
    }
    let eps = cfg.step_size;
    let inv_mass = 1.0 / cfg.mass;
    let sd = cfg.noise_std();
    for ((x, r), g) in position.iter_mut().zip(momentum.iter_mut()).zip(grad) {
        let z: f64 = rng.sample(StandardNormal);
        *r = *r - eps * g - eps * cfg.friction * inv_mass * *r + sd * z;
        *x += eps * inv_mass * *r;
    }
    Ok(())
}

/// An energy `U` over a flat coordinate vector whose gradient may be noisy.
pub trait Potential {
    fn dim(&self) -> usize;

    /// Writes a (possibly stochastic) estimate of `∇U(position)` into `grad`.
    fn gradient<R: Rng + ?Sized>(&mut self, position: &[f64], grad: &mut [f64], rng: &mut R) -> Result<()>;

    /// Human-readable name of the group a coordinate belongs to.
    fn group_of(&self, index: usize) -> String {
        format!("coordinate {index}")
    }
}

/// Output of [`run_chain`]: retained positions and the elapsed seconds at each.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    pub samples: Vec<Vec<f64>>,
    pub seconds: Vec<f64>,
}

/// Burn-in, then keeps every `keep_every`-th state until `num_samples` are
/// collected. Momentum is drawn from `N(0, M)` once, at the start.
/// `clock` returns seconds since an arbitrary origin.
pub fn run_chain<P: Potential, R: Rng + ?Sized>(
    potential: &mut P,
    init: &[f64],
    cfg: &SghmcConfig,
    rng: &mut R,
    mut clock: impl FnMut() -> f64,
) -> Result<ChainOutput> {
    cfg.validate()?;
    if init.len() != potential.dim() {
        return Err(invalid(format!("initial position has {} coordinates, potential expects {}", init.len(), potential.dim())));
    }
    let start = clock();
    let mut x = init.to_vec();
    let sqrt_mass = cfg.mass.sqrt();
    let mut r: Vec<f64> = (0..x.len()).map(|_| sqrt_mass * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut grad = vec![0.0; x.len()];
    let mut out = ChainOutput { samples: Vec::with_capacity(cfg.num_samples), seconds: Vec::with_capacity(cfg.num_samples) };
    let last_finite = |out: &ChainOutput| out.samples.len().checked_sub(1);
    for step in 0..cfg.total_steps() {
        match potential.gradient(&x, &mut grad, rng) {
            Err(Error::Diverged { group, .. }) => {
                return Err(Error::Diverged { group, step, last_finite_sample: last_finite(&out) })
            }
            other => other?,
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged { group: potential.group_of(i), step, last_finite_sample: last_finite(&out) });
        }
        sghmc_step(&mut x, &mut r, &grad, cfg, rng)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged { group: potential.group_of(i), step, last_finite_sample: last_finite(&out) });
        }
        if step >= cfg.burn_in_steps && (step - cfg.burn_in_steps + 1) % cfg.keep_every == 0 {
            out.samples.push(x.clone());
            out.seconds.push(clock() - start);
        }
    }
    Ok(out)
}

/// Which parameter groups of a [`ModelState`] the sampler moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampledGroups {
    /// Kernel lengthscales and variances.
    pub hyper: bool,
    pub inducing: bool,
    pub nu: bool,
    pub noise: bool,
}

impl SampledGroups {
    pub fn all() -> Self {
        SampledGroups { hyper: true, inducing: true, nu: true, noise: true }
    }

    pub fn nu_only() -> Self {
        SampledGroups { hyper: false, inducing: false, nu: true, noise: false }
    }

    fn includes(&self, g: ParamGroup) -> bool {
        match g {
            ParamGroup::LogLengthscales | ParamGroup::LogVariance => self.hyper,
            ParamGroup::InducingInputs => self.inducing,
            ParamGroup::InducingVariables => self.nu,
            ParamGroup::LogNoiseVariance => self.noise,
        }
    }
}

/// The BSGP energy as a [`Potential`] over the sampled subset of coordinates.
/// Frozen coordinates keep their values from the template state.
pub struct ModelPotential<'a> {
    state: ModelState,
    x: &'a Mat,
    y: &'a [f64],
    objective: Objective,
    priors: Priors,
    batch_size: usize,
    full_batch: Option<Minibatch>,
    mask: Vec<usize>,
    groups: Vec<(Option<usize>, ParamGroup)>,
    labels: Vec<String>,
    flat: Vec<f64>,
}

/// Log-domain parameters beyond this magnitude are treated as a diverged chain.
const MAX_LOG_PARAM: f64 = 300.0;

impl<'a> ModelPotential<'a> {
    pub fn new(
        template: &ModelState,
        x: &'a Mat,
        y: &'a [f64],
        objective: Objective,
        priors: Priors,
        batch_size: usize,
        groups: SampledGroups,
    ) -> Result<Self> {
        template.validate()?;
        template.validate_input_dim(x.cols())?;
        if x.rows() != y.len() || y.is_empty() {
            return Err(invalid("training data must be non-empty with one target per row"));
        }
        if batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let batch_size = batch_size.min(y.len());
        let groups_all = template.flat_groups();
        let mask: Vec<usize> = (0..groups_all.len()).filter(|&i| groups.includes(groups_all[i].1)).collect();
        let labels = mask.iter().map(|&i| group_label(groups_all[i].0, groups_all[i].1)).collect();
        let full_batch = if batch_size == y.len() { Some(Minibatch::new(x.clone(), y.to_vec())?) } else { None };
        Ok(ModelPotential {
            flat: template.to_flat(),
            state: template.clone(),
            x,
            y,
            objective,
            priors,
            batch_size,
            full_batch,
            mask,
            groups: groups_all,
            labels,
        })
    }

    /// Sampled coordinates of `state`.
    pub fn project(&self, state: &ModelState) -> Vec<f64> {
        let f = state.to_flat();
        self.mask.iter().map(|&i| f[i]).collect()
    }

    /// Full state with the sampled coordinates set to `position`.
    pub fn state_at(&self, position: &[f64]) -> Result<ModelState> {
        let mut flat = self.flat.clone();
        for (&i, &v) in self.mask.iter().zip(position) {
            flat[i] = v;
        }
        let mut s = self.state.clone();
        s.set_flat(&flat)?;
        Ok(s)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn load(&mut self, position: &[f64]) -> Result<()> {
        for (k, (&i, &v)) in self.mask.iter().zip(position).enumerate() {
            // log-domain coordinates must stay exponentiable
            let is_log = matches!(
                self.groups[i].1,
                ParamGroup::LogLengthscales | ParamGroup::LogVariance | ParamGroup::LogNoiseVariance
            );
            if !v.is_finite() || (is_log && v.abs() > MAX_LOG_PARAM) {
                return Err(Error::Diverged { group: self.labels[k].clone(), step: 0, last_finite_sample: None });
            }
            self.flat[i] = v;
        }
        self.state.set_flat(&self.flat)
    }

    /// Energy and full-state gradient at `position` on a freshly drawn batch.
    pub fn energy_and_grad<R: Rng + ?Sized>(&mut self, position: &[f64], rng: &mut R) -> Result<(f64, Vec<f64>)> {
        self.load(position)?;
        let drawn;
        let batch = match &self.full_batch {
            Some(b) => b,
            None => {
                let idx = rand::seq::index::sample(rng, self.y.len(), self.batch_size).into_vec();
                let y = idx.iter().map(|&i| self.y[i]).collect();
                drawn = Minibatch::new(self.x.select_rows(&idx), y)?;
                &drawn
            }
        };
        let n_total = self.y.len();
        let (u, g) = if self.state.depth() == 1 {
            energy_and_grad(&self.state, batch, self.objective, &self.priors, n_total)?
        } else {
            deep_energy_and_grad(&self.state, batch, self.objective, &self.priors, n_total, rng)?
        };
        Ok((u, g.to_flat(&self.state)))
    }
}

impl Potential for ModelPotential<'_> {
    fn dim(&self) -> usize {
        self.mask.len()
    }

    fn gradient<R: Rng + ?Sized>(&mut self, position: &[f64], grad: &mut [f64], rng: &mut R) -> Result<()> {
        let (_, full) = self.energy_and_grad(position, rng)?;
        for (g, &i) in grad.iter_mut().zip(&self.mask) {
            *g = full[i];
        }
        Ok(())
    }

    fn group_of(&self, index: usize) -> String {
        self.labels.get(index).cloned().unwrap_or_else(|| format!("coordinate {index}"))
    }
}

/// Posterior draws from one or more chains.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub states: Vec<ModelState>,
    pub chain_ids: Vec<u32>,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub config: SghmcConfig,
    /// Elapsed wall-clock seconds within its chain at each retained state.
    pub seconds: Vec<f64>,
}

impl SampleSet {
    pub fn new(states: Vec<ModelState>, chain_ids: Vec<u32>, meta: SampleMeta) -> Result<Self> {
        let s = SampleSet { states, chain_ids, meta };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain_ids.len() != self.states.len() {
            return Err(invalid("one chain id is needed per state"));
        }
        if let Some(first) = self.states.first() {
            let shape = |s: &ModelState| -> Vec<(usize, usize, usize)> {
                s.layers.iter().map(|l| (l.num_inducing(), l.input_dim(), l.output_dim())).collect()
            };
            let reference = shape(first);
            for (i, s) in self.states.iter().enumerate() {
                if shape(s) != reference || s.lik.kind != first.lik.kind {
                    return Err(invalid(format!("state {i} differs in structure from state 0")));
                }
            }
        }
        Ok(())
    }

    /// Concatenates per-chain sets in the given order.
    pub fn merge(parts: Vec<SampleSet>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| invalid("nothing to merge"))?;
        for p in it {
            out.states.extend(p.states);
            out.chain_ids.extend(p.chain_ids);
            out.meta.seconds.extend(p.meta.seconds);
        }
        out.validate()?;
        Ok(out)
    }

    /// States belonging to `chain`, in order.
    pub fn chain(&self, chain: u32) -> Vec<&ModelState> {
        self.states.iter().zip(&self.chain_ids).filter(|(_, &c)| c == chain).map(|(s, _)| s).collect()
    }

    pub fn chain_list(&self) -> Vec<u32> {
        let mut ids = self.chain_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Runs one chain of the model potential from `init` and packages the draws.
#[allow(clippy::too_many_arguments)]
pub fn run_model_chain<R: Rng + ?Sized>(
    potential: &mut ModelPotential<'_>,
    init: &ModelState,
    cfg: &SghmcConfig,
    chain_id: u32,
    rng: &mut R,
    clock: impl FnMut() -> f64,
) -> Result<SampleSet> {
    let start = potential.project(init);
    let out = run_chain(potential, &start, cfg, rng, clock)?;
    let states = out.samples.iter().map(|p| potential.state_at(p)).collect::<Result<Vec<_>>>()?;
    let n = states.len();
    SampleSet::new(states, vec![chain_id; n], SampleMeta { config: cfg.clone(), seconds: out.seconds })
}

/// Gelman–Rubin potential scale reduction over equal-length chains.
pub fn rhat(traces: &[Vec<f64>]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(invalid("R-hat needs at least two chains"));
    }
    let n = traces[0].len();
    if n < 2 || traces.iter().any(|t| t.len() != n) {
        return Err(invalid("R-hat needs chains of equal length of at least two"));
    }
    if traces.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("R-hat traces must be finite"));
    }
    let nf = n as f64;
    let means: Vec<f64> = traces.iter().map(|t| t.iter().sum::<f64>() / nf).collect();
    let w = traces
        .iter()
        .zip(&means)
        .map(|(t, m)| t.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / traces.len() as f64;
    if !(w > 0.0) {
        return Err(Error::DiagnosticUndefined(String::from("within-chain variance is zero")));
    }
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let b = nf * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (means.len() as f64 - 1.0);
    Ok(((w * (nf - 1.0) / nf + b / nf) / w).sqrt())
}
