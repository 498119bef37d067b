//! Run configuration: flat `key = value` text in `[data] [model] [sampler] [prior]`
//! sections. [`RunConfig::echo`] writes every key, so a run can be rebuilt from it.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use bsgp_core::likelihood::LikelihoodKind;
use bsgp_core::model::Priors;
use bsgp_core::prior::{InducingPriorConfig, InducingPriorKind, StraussParams};
use bsgp_core::{Objective, SghmcConfig};

use crate::data::InducingInit;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// SGHMC over ν, θ, Z and noise.
    Bsgp,
    /// SGHMC over ν, θ and noise; Z frozen at its initial value.
    McmcSvgp,
    /// θ, Z and noise set by Adam on the energy, then SGHMC over ν only.
    SghmcDgp,
    /// Gaussian `q(u)` and point estimates by Adam on the ELBO.
    Svgp,
    /// As `Svgp` with the heteroskedastic likelihood.
    FitcSvgp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Bsgp, ModelKind::McmcSvgp, ModelKind::SghmcDgp, ModelKind::Svgp, ModelKind::FitcSvgp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bsgp => "bsgp",
            ModelKind::McmcSvgp => "mcmc-svgp",
            ModelKind::SghmcDgp => "sghmc-dgp",
            ModelKind::Svgp => "svgp",
            ModelKind::FitcSvgp => "fitc-svgp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_sampler(self) -> bool {
        !matches!(self, ModelKind::Svgp | ModelKind::FitcSvgp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Units {
    /// Targets in the units of the data file.
    Original,
    Standardized,
}

impl Units {
    pub fn name(self) -> &'static str {
        match self {
            Units::Original => "original",
            Units::Standardized => "standardized",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// A CSV stem under `dir`, or one of the generators `banana`, `toy1d`, `synthetic`.
    pub dataset: String,
    /// Explicit CSV path; overrides `dir`/`dataset` lookup.
    pub path: Option<PathBuf>,
    pub dir: PathBuf,
    pub folds: usize,
    pub fold: usize,
    pub split_seed: u64,
    /// Generator size: rows (`toy1d`, `synthetic`) or rows per class (`banana`).
    pub generator_n: usize,
    pub generator_seed: u64,
    pub toy_noise_std: f64,
    pub synthetic_dim: usize,
    pub units: Units,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub inducing: usize,
    pub objective: Objective,
    /// `None` picks Gaussian for regression and probit for classification.
    pub likelihood: Option<LikelihoodKind>,
    pub init: InducingInit,
    pub init_noise_variance: f64,
    pub prediction_paths: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub sghmc: SghmcConfig,
    pub batch_size: usize,
    /// Adam steps on the energy before sampling (`sghmc-dgp` always uses at least `adam_iterations`).
    pub warm_start_steps: usize,
    pub adam_iterations: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub priors: Priors,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig {
                dataset: "boston".into(),
                path: None,
                dir: PathBuf::from("data"),
                folds: 8,
                fold: 0,
                split_seed: 0,
                generator_n: 200,
                generator_seed: 0,
                toy_noise_std: 0.1,
                synthetic_dim: 8,
                units: Units::Original,
            },
            model: ModelConfig {
                kind: ModelKind::Bsgp,
                depth: 1,
                inducing: 100,
                objective: Objective::Fitc,
                likelihood: None,
                init: InducingInit::KMeans,
                init_noise_variance: 0.1,
                prediction_paths: bsgp_core::deep::DEFAULT_PREDICTION_PATHS,
            },
            sampler: SamplerConfig {
                sghmc: SghmcConfig::default(),
                batch_size: 1000,
                warm_start_steps: 0,
                adam_iterations: 10_000,
                learning_rate: 0.01,
            },
            priors: Priors::default(),
        }
    }
}

const SECTIONS: [&str; 4] = ["data", "model", "sampler", "prior"];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn choice<T>(key: &str, v: &str, parsed: Option<T>, valid: &[&str]) -> Result<T> {
    parsed.ok_or_else(|| HarnessError::Config(format!("`{key}`: `{v}` is not one of {}", valid.join(", "))))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let s = s.trim();
                if !SECTIONS.contains(&s) {
                    return Err(HarnessError::Config(format!(
                        "line {}: unknown section [{s}]; valid sections: {}",
                        lineno + 1,
                        SECTIONS.join(", ")
                    )));
                }
                section = Some(s.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| HarnessError::Config(format!("line {}: key outside of a section", lineno + 1)))?;
            cfg.set(sec, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `section.key=value`.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, v) =
            spec.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{spec}` needs `=`")))?;
        let (sec, key) = path
            .split_once('.')
            .ok_or_else(|| HarnessError::Config(format!("override `{spec}` needs `section.key`")))?;
        self.set(sec.trim(), key.trim(), v.trim())?;
        self.validate()
    }

    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let s = &mut self.sampler;
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("data", "dataset") => d.dataset = v.to_string(),
            ("data", "path") => d.path = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            ("data", "dir") => d.dir = PathBuf::from(v),
            ("data", "folds") => d.folds = num(k, v)?,
            ("data", "fold") => d.fold = num(k, v)?,
            ("data", "split_seed") => d.split_seed = num(k, v)?,
            ("data", "generator_n") => d.generator_n = num(k, v)?,
            ("data", "generator_seed") => d.generator_seed = num(k, v)?,
            ("data", "toy_noise_std") => d.toy_noise_std = num(k, v)?,
            ("data", "synthetic_dim") => d.synthetic_dim = num(k, v)?,
            ("data", "units") => {
                d.units = choice(
                    k,
                    v,
                    match v {
                        "original" => Some(Units::Original),
                        "standardized" => Some(Units::Standardized),
                        _ => None,
                    },
                    &["original", "standardized"],
                )?
            }
            ("model", "kind") => {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                m.kind = choice(k, v, ModelKind::from_name(v), &names)?
            }
            ("model", "depth") => m.depth = num(k, v)?,
            ("model", "inducing") => m.inducing = num(k, v)?,
            ("model", "objective") => m.objective = choice(k, v, Objective::from_name(v), &["fitc", "vfe"])?,
            ("model", "likelihood") => {
                m.likelihood = if v == "auto" {
                    None
                } else {
                    Some(choice(
                        k,
                        v,
                        LikelihoodKind::from_name(v),
                        &["auto", "gaussian", "heteroskedastic_gaussian", "bernoulli_probit"],
                    )?)
                }
            }
            ("model", "init") => m.init = choice(k, v, InducingInit::from_name(v), &["kmeans", "random_subset"])?,
            ("model", "init_noise_variance") => m.init_noise_variance = num(k, v)?,
            ("model", "prediction_paths") => m.prediction_paths = num(k, v)?,
            ("sampler", "step_size") => s.sghmc.step_size = num(k, v)?,
            ("sampler", "friction") => s.sghmc.friction = num(k, v)?,
            ("sampler", "noise_estimate") => s.sghmc.noise_estimate = num(k, v)?,
            ("sampler", "mass") => s.sghmc.mass = num(k, v)?,
            ("sampler", "burn_in") => s.sghmc.burn_in_steps = num(k, v)?,
            ("sampler", "keep_every") => s.sghmc.keep_every = num(k, v)?,
            ("sampler", "samples") => s.sghmc.num_samples = num(k, v)?,
            ("sampler", "chains") => s.sghmc.num_chains = num(k, v)?,
            ("sampler", "seed") => s.sghmc.rng_seed = num(k, v)?,
            ("sampler", "batch_size") => s.batch_size = num(k, v)?,
            ("sampler", "warm_start_steps") => s.warm_start_steps = num(k, v)?,
            ("sampler", "adam_iterations") => s.adam_iterations = num(k, v)?,
            ("sampler", "learning_rate") => s.learning_rate = num(k, v)?,
            ("prior", "inducing") => {
                let kind = choice(
                    k,
                    v,
                    InducingPriorKind::from_name(v),
                    &["normal", "uniform", "dpp", "strauss"],
                )?;
                let strauss = match self.priors.inducing {
                    InducingPriorConfig::Strauss(p) => p,
                    _ => StraussParams::default(),
                };
                self.priors.inducing = match kind {
                    InducingPriorKind::Normal => InducingPriorConfig::Normal,
                    InducingPriorKind::Uniform => InducingPriorConfig::Uniform,
                    InducingPriorKind::Dpp => InducingPriorConfig::Dpp,
                    InducingPriorKind::Strauss => InducingPriorConfig::Strauss(strauss),
                };
            }
            ("prior", "strauss_intensity" | "strauss_repulsion" | "strauss_radius") => {
                let InducingPriorConfig::Strauss(p) = &mut self.priors.inducing else {
                    return Err(HarnessError::Config(format!("`{k}` needs `inducing = strauss` set first")));
                };
                let x: f64 = num(k, v)?;
                match key {
                    "strauss_intensity" => p.intensity = x,
                    "strauss_repulsion" => p.repulsion = x,
                    _ => p.radius = x,
                }
            }
            ("prior", "hyper") => {
                self.priors.hyper = match v {
                    "lognormal" => Some(self.priors.hyper.unwrap_or_default()),
                    "flat" => None,
                    _ => return choice(k, v, None, &["lognormal", "flat"]),
                }
            }
            ("prior", "lengthscale_log_mean" | "variance_log_mean" | "noise_log_mean" | "log_std") => {
                let Some(h) = &mut self.priors.hyper else {
                    return Err(HarnessError::Config(format!("`{k}` needs `hyper = lognormal`")));
                };
                let x: f64 = num(k, v)?;
                match key {
                    "lengthscale_log_mean" => h.lengthscale_log_mean = x,
                    "variance_log_mean" => h.variance_log_mean = x,
                    "noise_log_mean" => h.noise_log_mean = x,
                    _ => h.log_std = x,
                }
            }
            _ => {
                let valid = self.valid_keys(section);
                return Err(HarnessError::Config(if valid.is_empty() {
                    format!("unknown section `{section}`; valid sections: {}", SECTIONS.join(", "))
                } else {
                    format!("unknown key `{key}` in [{section}]; valid keys: {}", valid.join(", "))
                }));
            }
        }
        Ok(())
    }

    /// Every key accepted in `section`, including those only valid for other prior kinds.
    pub fn valid_keys(&self, section: &str) -> Vec<&'static str> {
        match section {
            "data" => vec![
                "dataset",
                "path",
                "dir",
                "folds",
                "fold",
                "split_seed",
                "generator_n",
                "generator_seed",
                "toy_noise_std",
                "synthetic_dim",
                "units",
            ],
            "model" => vec![
                "kind",
                "depth",
                "inducing",
                "objective",
                "likelihood",
                "init",
                "init_noise_variance",
                "prediction_paths",
            ],
            "sampler" => vec![
                "step_size",
                "friction",
                "noise_estimate",
                "mass",
                "burn_in",
                "keep_every",
                "samples",
                "chains",
                "seed",
                "batch_size",
                "warm_start_steps",
                "adam_iterations",
                "learning_rate",
            ],
            "prior" => vec![
                "inducing",
                "strauss_intensity",
                "strauss_repulsion",
                "strauss_radius",
                "hyper",
                "lengthscale_log_mean",
                "variance_log_mean",
                "noise_log_mean",
                "log_std",
            ],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.model.depth == 0 {
            return bad("model.depth must be at least 1");
        }
        if self.model.inducing == 0 {
            return bad("model.inducing must be at least 1");
        }
        if self.model.prediction_paths == 0 {
            return bad("model.prediction_paths must be at least 1");
        }
        if !(self.model.init_noise_variance > 0.0) {
            return bad("model.init_noise_variance must be positive");
        }
        if !self.model.kind.is_sampler() && self.model.depth != 1 {
            return bad("svgp baselines are single-layer; set model.depth = 1");
        }
        if self.data.folds == 0 || self.data.fold >= self.data.folds {
            return bad("data.fold must be below data.folds");
        }
        if self.sampler.batch_size == 0 {
            return bad("sampler.batch_size must be at least 1");
        }
        self.sampler.sghmc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.priors.inducing.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(h) = &self.priors.hyper {
            h.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Text form holding every key; `parse(echo())` reproduces `self`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let d = &self.data;
        let m = &self.model;
        let s = &self.sampler;
        let _ = writeln!(out, "[data]");
        let _ = writeln!(out, "dataset = {}", d.dataset);
        let _ = writeln!(out, "path = {}", d.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        let _ = writeln!(out, "dir = {}", d.dir.display());
        let _ = writeln!(out, "folds = {}", d.folds);
        let _ = writeln!(out, "fold = {}", d.fold);
        let _ = writeln!(out, "split_seed = {}", d.split_seed);
        let _ = writeln!(out, "generator_n = {}", d.generator_n);
        let _ = writeln!(out, "generator_seed = {}", d.generator_seed);
        let _ = writeln!(out, "toy_noise_std = {:?}", d.toy_noise_std);
        let _ = writeln!(out, "synthetic_dim = {}", d.synthetic_dim);
        let _ = writeln!(out, "units = {}", d.units.name());
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "kind = {}", m.kind.name());
        let _ = writeln!(out, "depth = {}", m.depth);
        let _ = writeln!(out, "inducing = {}", m.inducing);
        let _ = writeln!(out, "objective = {}", m.objective.name());
        let _ = writeln!(out, "likelihood = {}", m.likelihood.map_or("auto", |k| k.name()));
        let _ = writeln!(out, "init = {}", m.init.name());
        let _ = writeln!(out, "init_noise_variance = {:?}", m.init_noise_variance);
        let _ = writeln!(out, "prediction_paths = {}", m.prediction_paths);
        let _ = writeln!(out, "[sampler]");
        let g = &s.sghmc;
        let _ = writeln!(out, "step_size = {:?}", g.step_size);
        let _ = writeln!(out, "friction = {:?}", g.friction);
        let _ = writeln!(out, "noise_estimate = {:?}", g.noise_estimate);
        let _ = writeln!(out, "mass = {:?}", g.mass);
        let _ = writeln!(out, "burn_in = {}", g.burn_in_steps);
        let _ = writeln!(out, "keep_every = {}", g.keep_every);
        let _ = writeln!(out, "samples = {}", g.num_samples);
        let _ = writeln!(out, "chains = {}", g.num_chains);
        let _ = writeln!(out, "seed = {}", g.rng_seed);
        let _ = writeln!(out, "batch_size = {}", s.batch_size);
        let _ = writeln!(out, "warm_start_steps = {}", s.warm_start_steps);
        let _ = writeln!(out, "adam_iterations = {}", s.adam_iterations);
        let _ = writeln!(out, "learning_rate = {:?}", s.learning_rate);
        let _ = writeln!(out, "[prior]");
        let _ = writeln!(out, "inducing = {}", self.priors.inducing.kind().name());
        if let InducingPriorConfig::Strauss(p) = &self.priors.inducing {
            let _ = writeln!(out, "strauss_intensity = {:?}", p.intensity);
            let _ = writeln!(out, "strauss_repulsion = {:?}", p.repulsion);
            let _ = writeln!(out, "strauss_radius = {:?}", p.radius);
        }
        match &self.priors.hyper {
            None => {
                let _ = writeln!(out, "hyper = flat");
            }
            Some(h) => {
                let _ = writeln!(out, "hyper = lognormal");
                let _ = writeln!(out, "lengthscale_log_mean = {:?}", h.lengthscale_log_mean);
                let _ = writeln!(out, "variance_log_mean = {:?}", h.variance_log_mean);
                let _ = writeln!(out, "noise_log_mean = {:?}", h.noise_log_mean);
                let _ = writeln!(out, "log_std = {:?}", h.log_std);
            }
        }
        out
    }

    /// Label for the `prior` column of the metrics CSV.
    pub fn prior_label(&self) -> &'static str {
        self.priors.inducing.kind().name()
    }
}

/// Defaults as shown by `--help`.
pub fn defaults_help() -> String {
    RunConfig::default().echo()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_override("prior.inducing=strauss").unwrap();
        c.apply_override("prior.strauss_radius=0.25").unwrap();
        c.apply_override("sampler.step_size=0.003").unwrap();
        c.apply_override("model.likelihood=bernoulli_probit").unwrap();
        assert_eq!(RunConfig::parse(&c.echo()).unwrap(), c);
        let mut f = RunConfig::default();
        f.apply_override("prior.hyper=flat").unwrap();
        assert_eq!(RunConfig::parse(&f.echo()).unwrap(), f);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::parse("[sampler]\nstepsize = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("stepsize") && err.contains("step_size") && err.contains("keep_every"), "{err}");
        assert!(RunConfig::parse("[optim]\nx = 1\n").is_err());
        assert!(RunConfig::parse("[model]\nkind = gp\n").unwrap_err().to_string().contains("bsgp"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# run\n[model]\ndepth = 2  # two layers\n\n[data]\nfold = 3\n").unwrap();
        assert_eq!((c.model.depth, c.data.fold), (2, 3));
    }
}
