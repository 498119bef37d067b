//! End-to-end runs: data preparation, initialization, training or sampling,
//! prediction and metrics.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use bsgp_core::baseline::{adam_minimize, svgp_train, SvgpConfig, SvgpModel};
use bsgp_core::deep::{default_widths, predict_paths};
use bsgp_core::eval::{auc, error_rate, mnll, rmse, PredictiveEnsemble};
use bsgp_core::likelihood::{LikelihoodKind, LikelihoodParams};
use bsgp_core::linalg::Mat;
use bsgp_core::model::{LayerState, ModelState};
use bsgp_core::sampler::{rhat, run_model_chain, ModelPotential, SampleSet, SampledGroups};
use bsgp_core::{KernelHyper, MarginalMoments};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelKind, RunConfig, Units};
use crate::data::{self, init_inducing, Dataset, FoldData, Task};
use crate::error::{HarnessError, Result};
use crate::io::{Fitted, ModelFile};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "BSGP_WORKERS";

/// Test points whose predictive-mean traces feed R̂.
pub const RHAT_POINTS: usize = 3;

pub const METRICS_HEADER: &str = "dataset,fold,model,depth,prior,objective,M,mnll,rmse_or_error,auc,seconds,rhat";

const PREDICT_STREAM: u64 = 1 << 40;

pub fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Independent, reproducible random stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    if let Some(p) = &d.path {
        return data::load_csv(p);
    }
    match d.dataset.as_str() {
        "banana" => data::banana(d.generator_n, d.generator_seed),
        "toy1d" => data::toy1d(d.generator_n, d.toy_noise_std, d.generator_seed),
        "synthetic" => data::synthetic_regression(d.generator_n, d.synthetic_dim, d.generator_seed),
        name => data::load_csv(&d.dir.join(format!("{name}.csv"))),
    }
}

pub fn prepare_fold(cfg: &RunConfig, ds: &Dataset) -> Result<FoldData> {
    let folds = data::make_folds(ds.len(), cfg.data.folds, cfg.data.split_seed)?;
    Ok(FoldData::new(ds, &folds[cfg.data.fold]))
}

fn likelihood_for(cfg: &RunConfig, task: Task) -> Result<LikelihoodParams> {
    let kind = match (cfg.model.kind, cfg.model.likelihood, task) {
        (ModelKind::FitcSvgp, _, Task::Classification) => {
            return Err(HarnessError::InvalidArgument("fitc-svgp is defined for regression only".into()))
        }
        (ModelKind::FitcSvgp, _, Task::Regression) => LikelihoodKind::HeteroskedasticGaussian,
        (_, Some(k), _) => k,
        (_, None, Task::Regression) => LikelihoodKind::Gaussian,
        (_, None, Task::Classification) => LikelihoodKind::BernoulliProbit,
    };
    if (kind == LikelihoodKind::BernoulliProbit) != (task == Task::Classification) {
        return Err(HarnessError::InvalidArgument(format!("likelihood {} does not fit a {} task", kind.name(), task.name())));
    }
    let noise = cfg.model.init_noise_variance;
    Ok(match kind {
        LikelihoodKind::Gaussian => LikelihoodParams::gaussian(noise),
        LikelihoodKind::HeteroskedasticGaussian => LikelihoodParams::heteroskedastic(noise),
        LikelihoodKind::BernoulliProbit => LikelihoodParams::probit(),
    })
}

/// Initial state: inducing inputs from the training inputs, `ν = 0`, every
/// lengthscale `√D_in`, variance 1 on the last layer and 0.05 on inner ones.
pub fn initial_state(cfg: &RunConfig, x: &Mat, task: Task, rng: &mut ChaCha8Rng) -> Result<ModelState> {
    let d = x.cols();
    let depth = cfg.model.depth;
    let m = cfg.model.inducing;
    let widths = default_widths(d, depth);
    let z0 = init_inducing(x, m, cfg.model.init, rng);
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let d_in = if l == 0 { d } else { widths[l - 1] };
        // inner layers see the identity-mapped input, padded or truncated
        let z = Mat::from_fn(m, d_in, |i, j| if j < d { z0[(i, j)] } else { 0.0 });
        let var = if l + 1 == depth { 1.0 } else { 0.05 };
        let hyper = KernelHyper::isotropic(d_in, (d_in as f64).sqrt(), var);
        layers.push(LayerState::new(hyper, z, Mat::zeros(m, widths[l]))?);
    }
    Ok(ModelState::new(layers, likelihood_for(cfg, task)?)?)
}

fn sampled_groups(kind: ModelKind) -> SampledGroups {
    match kind {
        ModelKind::McmcSvgp => SampledGroups { inducing: false, ..SampledGroups::all() },
        ModelKind::SghmcDgp => SampledGroups::nu_only(),
        _ => SampledGroups::all(),
    }
}

fn run_chains(cfg: &RunConfig, fd: &FoldData, threads: usize) -> Result<SampleSet> {
    let g = &cfg.sampler.sghmc;
    let n_chains = g.num_chains.max(1);
    let one = |c: usize| -> Result<SampleSet> {
        let seed = g.rng_seed;
        let mut init_rng = stream_rng(seed, 2 * c as u64 + 1);
        let mut rng = stream_rng(seed, 2 * c as u64 + 2);
        let mut init = initial_state(cfg, &fd.x_train, fd.task, &mut init_rng)?;
        let warm = match cfg.model.kind {
            ModelKind::SghmcDgp => cfg.sampler.warm_start_steps.max(cfg.sampler.adam_iterations),
            _ => cfg.sampler.warm_start_steps,
        };
        if warm > 0 {
            let mut pot = ModelPotential::new(
                &init,
                &fd.x_train,
                &fd.y_train,
                cfg.model.objective,
                cfg.priors,
                cfg.sampler.batch_size,
                SampledGroups::all(),
            )?;
            let mut pos = pot.project(&init);
            adam_minimize(&mut pot, &mut pos, warm, cfg.sampler.learning_rate, &mut init_rng)?;
            init = pot.state_at(&pos)?;
        }
        let mut pot = ModelPotential::new(
            &init,
            &fd.x_train,
            &fd.y_train,
            cfg.model.objective,
            cfg.priors,
            cfg.sampler.batch_size,
            sampled_groups(cfg.model.kind),
        )?;
        let t0 = Instant::now();
        let mut cg = g.clone();
        cg.num_chains = 1;
        Ok(run_model_chain(&mut pot, &init, &cg, c as u32, &mut rng, || t0.elapsed().as_secs_f64())?)
    };
    let results = parallel_map(n_chains, threads, one);
    let parts = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut set = SampleSet::merge(parts)?;
    set.meta.config = g.clone();
    Ok(set)
}

fn train_svgp(cfg: &RunConfig, fd: &FoldData) -> Result<SvgpModel> {
    let mut init_rng = stream_rng(cfg.sampler.sghmc.rng_seed, 1);
    let st = initial_state(cfg, &fd.x_train, fd.task, &mut init_rng)?;
    let layer = st.layers.into_iter().next().expect("depth is validated to be 1");
    let model = SvgpModel::new(layer, st.lik)?;
    let sc = SvgpConfig {
        iterations: cfg.sampler.adam_iterations,
        batch_size: cfg.sampler.batch_size,
        learning_rate: cfg.sampler.learning_rate,
        ..SvgpConfig::default()
    };
    let mut rng = stream_rng(cfg.sampler.sghmc.rng_seed, 2);
    Ok(svgp_train(model, &fd.x_train, &fd.y_train, &sc, &mut rng)?.model)
}

/// Trains per `cfg.model.kind`; chains run on up to `threads` threads.
pub fn fit(cfg: &RunConfig, fd: &FoldData, threads: usize) -> Result<Fitted> {
    if cfg.model.kind.is_sampler() {
        run_chains(cfg, fd, threads).map(Fitted::Samples)
    } else {
        train_svgp(cfg, fd).map(Fitted::Svgp)
    }
}

fn push_component(ens: &mut PredictiveEnsemble, m: &MarginalMoments, lik: &LikelihoodParams) -> Result<()> {
    match lik.kind {
        // y | f ~ N(f, σ² + σ̃²): the latent variance enters twice
        LikelihoodKind::HeteroskedasticGaussian => {
            let doubled = MarginalMoments { mean: m.mean.clone(), var: m.var.iter().map(|v| 2.0 * v).collect() };
            ens.push(&doubled, lik.noise_variance())?
        }
        _ => ens.push(m, lik.noise_variance())?,
    }
    Ok(())
}

fn empty_ensemble(lik: LikelihoodKind, n: usize) -> PredictiveEnsemble {
    if lik == LikelihoodKind::BernoulliProbit {
        PredictiveEnsemble::classification(n)
    } else {
        PredictiveEnsemble::regression(n)
    }
}

/// Posterior predictive mixture at standardized inputs `x`.
pub fn predictive(fitted: &Fitted, x: &Mat, paths: usize, rng: &mut ChaCha8Rng) -> Result<PredictiveEnsemble> {
    match fitted {
        Fitted::Samples(s) => {
            let lik = s.states.first().map(|st| st.lik.kind).ok_or_else(|| HarnessError::Format("no samples".into()))?;
            let mut ens = empty_ensemble(lik, x.rows());
            for st in &s.states {
                for m in predict_paths(st, x, paths, rng)? {
                    push_component(&mut ens, &m, &st.lik)?;
                }
            }
            Ok(ens)
        }
        Fitted::Svgp(m) => {
            let mut ens = empty_ensemble(m.lik.kind, x.rows());
            push_component(&mut ens, &m.predict_latent(x)?, &m.lik)?;
            Ok(ens)
        }
    }
}

/// `[point][chain][draw]` latent predictive means, averaged over forward paths.
pub fn mean_traces(s: &SampleSet, x: &Mat, paths: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<f64>>>> {
    let chains = s.chain_list();
    let mut out = vec![vec![Vec::new(); chains.len()]; x.rows()];
    for (ci, &c) in chains.iter().enumerate() {
        for st in s.chain(c) {
            let ms = predict_paths(st, x, paths, rng)?;
            for (p, trace) in out.iter_mut().enumerate() {
                trace[ci].push(ms.iter().map(|m| m.mean[p]).sum::<f64>() / ms.len() as f64);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub mnll: f64,
    pub rmse_or_error: f64,
    pub auc: Option<f64>,
}

/// Scores against standardized targets; regression metrics are mapped back to
/// the data units when `units` is `Original`.
pub fn score(ens: &PredictiveEnsemble, y: &[f64], y_scale: Option<&data::Standardizer>, units: Units) -> Result<Metrics> {
    match ens {
        PredictiveEnsemble::Regression { .. } => {
            let s = match (units, y_scale) {
                (Units::Original, Some(sc)) => sc.std[0],
                _ => 1.0,
            };
            Ok(Metrics { mnll: mnll(ens, y)? + s.ln(), rmse_or_error: rmse(ens, y)? * s, auc: None })
        }
        PredictiveEnsemble::Classification { .. } => Ok(Metrics {
            mnll: mnll(ens, y)?,
            rmse_or_error: error_rate(ens, y)?,
            auc: auc(ens, y).ok(),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub fold: usize,
    pub model: String,
    pub depth: usize,
    pub prior: String,
    pub objective: String,
    pub m: usize,
    pub metrics: Metrics,
    pub seconds: f64,
    pub rhat: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{}",
            self.dataset,
            self.fold,
            self.model,
            self.depth,
            self.prior,
            self.objective,
            self.m,
            self.metrics.mnll,
            self.metrics.rmse_or_error,
            opt(self.metrics.auc),
            self.seconds,
            opt(self.rhat)
        )
    }

    /// The row with the timing field blanked, for reproducibility comparisons.
    pub fn to_csv_untimed(&self) -> String {
        MetricsRow { seconds: 0.0, ..self.clone() }.to_csv()
    }
}

pub struct CellOutput {
    pub row: MetricsRow,
    pub model: ModelFile,
}

/// Trains on one fold of `ds` and evaluates on its test split.
pub fn run_cell(cfg: &RunConfig, ds: &Dataset, threads: usize) -> Result<CellOutput> {
    let t0 = Instant::now();
    let fd = prepare_fold(cfg, ds)?;
    let fitted = fit(cfg, &fd, threads)?;
    let mut rng = stream_rng(cfg.sampler.sghmc.rng_seed, PREDICT_STREAM);
    let ens = predictive(&fitted, &fd.x_test, cfg.model.prediction_paths, &mut rng)?;
    let metrics = score(&ens, &fd.y_test, fd.y_scale.as_ref(), cfg.data.units)?;
    let rhat_v = match &fitted {
        Fitted::Samples(s) if s.chain_list().len() >= 2 => {
            let k = RHAT_POINTS.min(fd.x_test.rows());
            let idx: Vec<usize> = (0..k).collect();
            let traces = mean_traces(s, &fd.x_test.select_rows(&idx), cfg.model.prediction_paths, &mut rng)?;
            let mut worst: Option<f64> = None;
            for t in &traces {
                if let Ok(r) = rhat(t) {
                    worst = Some(worst.map_or(r, |w: f64| w.max(r)));
                }
            }
            worst
        }
        _ => None,
    };
    let sampler = cfg.model.kind.is_sampler();
    let row = MetricsRow {
        dataset: ds.name.clone(),
        fold: cfg.data.fold,
        model: cfg.model.kind.name().into(),
        depth: cfg.model.depth,
        prior: if sampler { cfg.prior_label().into() } else { "-".into() },
        objective: if sampler { cfg.model.objective.name().into() } else { "elbo".into() },
        m: cfg.model.inducing,
        metrics,
        seconds: t0.elapsed().as_secs_f64(),
        rhat: rhat_v,
    };
    let model = ModelFile { fitted, config: cfg.clone(), x_scale: fd.x_scale, y_scale: fd.y_scale };
    Ok(CellOutput { row, model })
}

/// Runs `f(0..n)` on up to `threads` scoped threads; results keep index order.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut g = next.lock().unwrap();
                    let i = *g;
                    *g += 1;
                    i
                };
                if i >= n {
                    break;
                }
                let v = f(i);
                *slots[i].lock().unwrap() = Some(v);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every index is visited")).collect()
}

/// One benchmark cell's outcome.
pub struct BenchCell {
    pub dataset: String,
    pub model: String,
    pub fold: usize,
    pub result: Result<MetricsRow>,
}

/// Every (dataset, fold, model) cell of `base` with the given overrides.
/// Rows are appended to `out` as cells finish, one writer at a time.
pub fn bench(
    base: &RunConfig,
    datasets: &[String],
    models: &[ModelKind],
    out: Option<&Path>,
    threads: usize,
) -> Result<Vec<BenchCell>> {
    let mut cells = Vec::new();
    for d in datasets {
        for fold in 0..base.data.folds {
            for &m in models {
                let mut c = base.clone();
                c.data.dataset = d.clone();
                c.data.path = None;
                c.data.fold = fold;
                c.model.kind = m;
                cells.push(c);
            }
        }
    }
    let writer = match out {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| HarnessError::io(p, e))?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}").map_err(|e| HarnessError::io(p, e))?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };
    // datasets are loaded once per name
    let loaded: Vec<(String, Result<Dataset>)> = datasets
        .iter()
        .map(|d| {
            let mut c = base.clone();
            c.data.dataset = d.clone();
            c.data.path = None;
            (d.clone(), load_dataset(&c))
        })
        .collect();
    let results = parallel_map(cells.len(), threads, |i| {
        let c = &cells[i];
        let ds = &loaded.iter().find(|(n, _)| *n == c.data.dataset).expect("dataset was loaded").1;
        let result = match ds {
            Ok(ds) => run_cell(c, ds, 1).map(|o| o.row),
            Err(e) => Err(HarnessError::InvalidArgument(format!("missing dataset `{}`: {e}", c.data.dataset))),
        };
        if let (Ok(row), Some(w)) = (&result, &writer) {
            let mut f = w.lock().unwrap();
            let _ = writeln!(f, "{}", row.to_csv());
        }
        BenchCell { dataset: c.data.dataset.clone(), model: c.model.kind.name().into(), fold: c.data.fold, result }
    });
    Ok(results)
}
