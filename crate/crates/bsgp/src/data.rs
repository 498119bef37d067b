//! Datasets, repeated train/test splits, standardization and synthetic generators.

use std::path::Path;

use bsgp_core::linalg::Mat;
use bsgp_core::{chol_jitter, GramMatrix, KernelHyper};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Mat,
    pub y: Vec<f64>,
    pub task: Task,
    /// Generator settings and ground truth, when synthetic.
    pub meta: Vec<(String, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> (Mat, Vec<f64>) {
        (self.x.select_rows(idx), idx.iter().map(|&i| self.y[i]).collect())
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    parse_csv(name, &text)
}

/// Header row, numeric columns, last column the target. A `# task=classification`
/// line marks a 0/1 target; other `#` lines are ignored. Rows are numbered from 1
/// after the header.
pub fn parse_csv(name: &str, text: &str) -> Result<Dataset> {
    let mut task = Task::Regression;
    let mut header: Option<usize> = None;
    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut row = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(t) = c.trim().strip_prefix("task") {
                match t.trim_start().trim_start_matches('=').trim() {
                    "classification" => task = Task::Classification,
                    "regression" => task = Task::Regression,
                    other => {
                        return Err(HarnessError::InvalidArgument(format!("{name}: unknown task `{other}`")))
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = header else {
            if fields.len() < 2 {
                return Err(HarnessError::InvalidArgument(format!("{name}: need at least one feature and a target")));
            }
            header = Some(fields.len());
            continue;
        };
        row += 1;
        if fields.len() != cols {
            return Err(HarnessError::Parse {
                context: name.into(),
                row,
                msg: format!("expected {cols} fields, found {}", fields.len()),
            });
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| HarnessError::Parse {
                context: name.into(),
                row,
                msg: format!("column {} is not a finite number: `{f}`", c + 1),
            })?;
            if c + 1 == cols {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let Some(cols) = header else {
        return Err(HarnessError::InvalidArgument(format!("{name}: empty file")));
    };
    if y.is_empty() {
        return Err(HarnessError::InvalidArgument(format!("{name}: no data rows")));
    }
    if task == Task::Classification {
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(HarnessError::Parse { context: name.into(), row: i + 1, msg: "label must be 0 or 1".into() });
        }
    }
    Ok(Dataset { name: name.into(), x: Mat::from_vec(y.len(), cols - 1, values), y, task, meta: Vec::new() })
}

/// Per-column affine map to zero mean and unit standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant columns keep a unit scale.
    pub fn fit(x: &Mat) -> Self {
        let (n, d) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn fit_targets(y: &[f64]) -> Self {
        Self::fit(&Mat::from_vec(y.len(), 1, y.to_vec()))
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, x: &Mat) -> Mat {
        Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] * self.std[j] + self.mean[j])
    }

    pub fn apply_targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean[0]) / self.std[0]).collect()
    }
}

/// One shuffled train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Number of training rows in a split: `round(0.8 N)`.
pub fn train_size(n: usize) -> usize {
    (0.8 * n as f64).round() as usize
}

/// `k` independent shuffled 80/20 splits (repeated hold-out, not a partition).
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if n < 10 {
        return Err(HarnessError::InvalidArgument(format!("need at least 10 rows to split, have {n}")));
    }
    let n_train = train_size(n);
    Ok((0..k)
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test_idx = idx.split_off(n_train);
            Fold { train_idx: idx, test_idx }
        })
        .collect())
}

/// A split with standardization fitted on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldData {
    pub x_train: Mat,
    pub y_train: Vec<f64>,
    pub x_test: Mat,
    pub y_test: Vec<f64>,
    pub x_scale: Standardizer,
    /// Regression only.
    pub y_scale: Option<Standardizer>,
    pub task: Task,
}

impl FoldData {
    pub fn new(ds: &Dataset, fold: &Fold) -> Self {
        let (xr, yr) = ds.subset(&fold.train_idx);
        let (xt, yt) = ds.subset(&fold.test_idx);
        let x_scale = Standardizer::fit(&xr);
        let y_scale = (ds.task == Task::Regression).then(|| Standardizer::fit_targets(&yr));
        let ys = |y: Vec<f64>| match &y_scale {
            Some(s) => s.apply_targets(&y),
            None => y,
        };
        FoldData {
            x_train: x_scale.apply(&xr),
            x_test: x_scale.apply(&xt),
            y_train: ys(yr),
            y_test: ys(yt),
            x_scale,
            y_scale,
            task: ds.task,
        }
    }
}

/// Two interleaving crescents in 2-D, `n_per_class` points each, label 1 on
/// the upper crescent. Radius 1, second crescent shifted by (1, −0.5), isotropic
/// jitter with std 0.2; features standardized.
pub fn banana(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(HarnessError::InvalidArgument("banana needs at least one point per class".into()));
    }
    const JITTER: f64 = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    for label in [1.0, 0.0] {
        for _ in 0..n_per_class {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (cx, cy) = if label == 1.0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            rows.push(([cx + JITTER * ex, cy + JITTER * ey], label));
        }
    }
    rows.shuffle(&mut rng);
    let raw = Mat::from_fn(rows.len(), 2, |i, j| rows[i].0[j]);
    Ok(Dataset {
        name: "banana".into(),
        x: Standardizer::fit(&raw).apply(&raw),
        y: rows.iter().map(|r| r.1).collect(),
        task: Task::Classification,
        meta: vec![
            ("n_per_class".into(), n_per_class.to_string()),
            ("jitter_std".into(), JITTER.to_string()),
            ("seed".into(), seed.to_string()),
        ],
    })
}

/// Ground truth of [`toy1d`]: unit lengthscale and variance.
pub fn toy1d_kernel() -> KernelHyper {
    KernelHyper::new(&[1.0], 1.0)
}

/// `x ~ U(−3, 3)`, `f ~ GP(0, k)` with [`toy1d_kernel`], `y = f + N(0, noise_std²)`.
pub fn toy1d(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(HarnessError::InvalidArgument("toy1d needs at least two points".into()));
    }
    let h = toy1d_kernel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
    let l = chol_jitter(&GramMatrix::of_points(&x, &h)?)?.factor;
    let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y = l.matvec(&e).iter().map(|f| f + noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Dataset {
        name: "toy1d".into(),
        x,
        y,
        task: Task::Regression,
        meta: vec![
            ("lengthscale".into(), "1".into()),
            ("variance".into(), "1".into()),
            ("noise_std".into(), noise_std.to_string()),
            ("seed".into(), seed.to_string()),
        ],
    })
}

/// Regression surrogate for large-scale smoke runs: `D` standard-normal
/// features and a smooth nonlinear target with unit-variance noise share 0.1.
pub fn synthetic_regression(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(HarnessError::InvalidArgument("synthetic set needs n ≥ 2 and d ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Mat::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let y = (0..n)
        .map(|i| {
            let r = x.row(i);
            let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
            s.sin() + 0.5 * r[0] * r[d.min(2) - 1] + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Ok(Dataset {
        name: "synthetic".into(),
        x,
        y,
        task: Task::Regression,
        meta: vec![("seed".into(), seed.to_string())],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingInit {
    KMeans,
    RandomSubset,
}

impl InducingInit {
    pub fn name(self) -> &'static str {
        match self {
            InducingInit::KMeans => "kmeans",
            InducingInit::RandomSubset => "random_subset",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "kmeans" => Some(InducingInit::KMeans),
            "random_subset" => Some(InducingInit::RandomSubset),
            _ => None,
        }
    }
}

/// `m` initial inducing inputs. When `m ≥ N` all rows are used and the rest are
/// perturbed copies.
pub fn init_inducing(x: &Mat, m: usize, how: InducingInit, rng: &mut impl Rng) -> Mat {
    let n = x.rows();
    if m >= n {
        let mut z = Mat::zeros(m, x.cols());
        for i in 0..m {
            for j in 0..x.cols() {
                let jitter = if i < n { 0.0 } else { 0.1 * rng.sample::<f64, _>(StandardNormal) };
                z[(i, j)] = x[(i % n, j)] + jitter;
            }
        }
        return z;
    }
    let idx = rand::seq::index::sample(rng, n, m).into_vec();
    let z = x.select_rows(&idx);
    match how {
        InducingInit::RandomSubset => z,
        InducingInit::KMeans => kmeans(x, z, 25),
    }
}

/// Lloyd iterations from the given centroids; empty clusters keep their centre.
fn kmeans(x: &Mat, mut z: Mat, iters: usize) -> Mat {
    let (n, d, m) = (x.rows(), x.cols(), z.rows());
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let r = x.row(i);
            let best = (0..m)
                .map(|c| (c, z.row(c).iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
                .0;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(m, d);
        let mut counts = vec![0usize; m];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..m {
            if counts[c] > 0 {
                for j in 0..d {
                    z[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
    }
    z
}
