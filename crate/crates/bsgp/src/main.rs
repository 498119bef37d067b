use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bsgp::config::{defaults_help, ModelKind, RunConfig};
use bsgp::data::{load_csv, Task};
use bsgp::error::{HarnessError, Result};
use bsgp::experiment::{self, mean_traces, predictive, run_cell, stream_rng, workers, METRICS_HEADER};
use bsgp::io::{self, Fitted};
use bsgp_core::eval::PredictiveEnsemble;
use bsgp_core::sampler::rhat;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsgp", version, about = "Bayesian sparse and deep Gaussian processes sampled with SGHMC")]
#[command(after_help = after_help())]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

fn after_help() -> String {
    format!(
        "Exit codes: 0 success, 1 run error, 2 usage or configuration error.\n\
         Worker threads: ${} (default: available cores).\n\n\
         Configuration defaults:\n{}",
        experiment::WORKERS_ENV,
        defaults_help()
    )
}

#[derive(Subcommand)]
enum Cmd {
    /// Train or sample one fold; writes the model file and appends a metrics row.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `section.key=value`, applied after the file.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Per-point predictive CSV for a data file with a target column.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Forward paths per sample for deep models; defaults to the trained value.
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Every dataset × fold × model cell; appends to the metrics CSV.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        datasets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "bsgp")]
        models: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// R̂ of predictive-mean traces, or of the columns of a trace CSV.
    Diag {
        #[arg(long, conflicts_with = "traces", requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// CSV with one column per chain and a header row.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long, default_value_t = experiment::RHAT_POINTS)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(|e| HarnessError::Io { path: p.into(), source: e })?)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io { path: path.into(), source: e })
}

fn append_row(path: &Path, row: &str) -> Result<()> {
    use std::io::Write;
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::Io { path: path.into(), source: e })?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(row);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| HarnessError::Io { path: path.into(), source: e })
}

fn train(config: Option<&Path>, overrides: &[String], out: &Path, metrics: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let ds = experiment::load_dataset(&cfg)?;
    let cell = run_cell(&cfg, &ds, workers())?;
    io::save(out, &cell.model)?;
    let row = cell.row.to_csv();
    println!("{METRICS_HEADER}\n{row}");
    if let Some(m) = metrics {
        append_row(m, &row)?;
    }
    Ok(())
}

fn predict(model: &Path, data: &Path, out: &Path, paths: Option<usize>, seed: u64) -> Result<()> {
    let mf = io::load(model)?;
    let ds = load_csv(data)?;
    if ds.dim() != mf.x_scale.mean.len() {
        return Err(HarnessError::InvalidArgument(format!(
            "data has {} features, model was trained on {}",
            ds.dim(),
            mf.x_scale.mean.len()
        )));
    }
    let x = mf.x_scale.apply(&ds.x);
    let y = match (&mf.y_scale, ds.task) {
        (Some(s), Task::Regression) => s.apply_targets(&ds.y),
        _ => ds.y.clone(),
    };
    let mut rng = stream_rng(seed, 0);
    let ens = predictive(&mf.fitted, &x, paths.unwrap_or(mf.config.model.prediction_paths), &mut rng)?;
    let nll = ens.pointwise_nll(&y)?;
    let pred = ens.point_predictions();
    let mut text = String::new();
    match &ens {
        PredictiveEnsemble::Regression { .. } => {
            let (mu, sd) = mf.y_scale.as_ref().map_or((0.0, 1.0), |s| (s.mean[0], s.std[0]));
            let var = ens.mixture_variance().unwrap_or_default();
            text.push_str("row,target,mean,variance,nll\n");
            for i in 0..y.len() {
                let _ = writeln!(text, "{},{},{},{},{}", i + 1, ds.y[i], pred[i] * sd + mu, var[i] * sd * sd, nll[i] + sd.ln());
            }
        }
        PredictiveEnsemble::Classification { .. } => {
            text.push_str("row,target,p1,nll\n");
            for i in 0..y.len() {
                let _ = writeln!(text, "{},{},{},{}", i + 1, ds.y[i], pred[i], nll[i]);
            }
        }
    }
    write_file(out, &text)
}

fn bench(config: Option<&Path>, overrides: &[String], datasets: &[String], models: &[String], out: &Path) -> Result<bool> {
    let cfg = load_config(config, overrides)?;
    let kinds = models
        .iter()
        .map(|m| {
            ModelKind::from_name(m).ok_or_else(|| {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                HarnessError::Config(format!("unknown model `{m}`; valid models: {}", names.join(", ")))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for k in &kinds {
        let mut c = cfg.clone();
        c.model.kind = *k;
        c.validate()?;
    }
    let cells = experiment::bench(&cfg, datasets, &kinds, Some(out), workers())?;
    let mut ok = true;
    for c in &cells {
        if let Err(e) = &c.result {
            ok = false;
            eprintln!("{} fold {} {}: {e}", c.dataset, c.fold, c.model);
        }
    }
    Ok(ok)
}

fn diag(model: Option<&Path>, data: Option<&Path>, traces: Option<&Path>, points: usize, seed: u64) -> Result<()> {
    if let Some(t) = traces {
        let text = std::fs::read_to_string(t).map_err(|e| HarnessError::Io { path: t.into(), source: e })?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n_chains = lines.next().map(|h| h.split(',').count()).unwrap_or(0);
        let mut cols = vec![Vec::new(); n_chains];
        for (row, l) in lines.enumerate() {
            let vals: Vec<&str> = l.split(',').map(str::trim).collect();
            if vals.len() != n_chains {
                return Err(HarnessError::Parse { context: t.display().to_string(), row: row + 1, msg: "wrong field count".into() });
            }
            for (c, v) in vals.iter().enumerate() {
                cols[c].push(v.parse::<f64>().map_err(|_| HarnessError::Parse {
                    context: t.display().to_string(),
                    row: row + 1,
                    msg: format!("`{v}` is not a number"),
                })?);
            }
        }
        println!("rhat = {}", rhat(&cols)?);
        return Ok(());
    }
    let (Some(model), Some(data)) = (model, data) else {
        return Err(HarnessError::Config("diag needs --traces, or --model with --data".into()));
    };
    let mf = io::load(model)?;
    let Fitted::Samples(s) = &mf.fitted else {
        return Err(HarnessError::InvalidArgument("diag needs a sampled model".into()));
    };
    let ds = load_csv(data)?;
    let k = points.min(ds.len());
    let idx: Vec<usize> = (0..k).collect();
    let x = mf.x_scale.apply(&ds.x.select_rows(&idx));
    let mut rng = stream_rng(seed, 0);
    for (i, t) in mean_traces(s, &x, mf.config.model.prediction_paths, &mut rng)?.iter().enumerate() {
        println!("point {}: rhat = {}", i + 1, rhat(t)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.cmd {
        Cmd::Train { config, overrides, out, metrics } => train(config.as_deref(), overrides, out, metrics.as_deref()).map(|_| true),
        Cmd::Predict { model, data, out, paths, seed } => predict(model, data, out, *paths, *seed).map(|_| true),
        Cmd::Bench { config, overrides, datasets, models, out } => bench(config.as_deref(), overrides, datasets, models, out),
        Cmd::Diag { model, data, traces, points, seed } => {
            diag(model.as_deref(), data.as_deref(), traces.as_deref(), *points, *seed).map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, HarnessError::Config(_)) { 2 } else { 1 })
        }
    }
}
