#![allow(dead_code)]

use bsgp_core::linalg::Mat;
use bsgp_core::model::{LayerState, ModelState, ParamGroup};
use bsgp_core::{KernelHyper, LikelihoodParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_layer(rng: &mut impl Rng, m: usize, d: usize, p: usize) -> LayerState {
    let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.6..1.6)).collect();
    let var = rng.random_range(0.5..2.0);
    LayerState::new(KernelHyper::new(&ls, var), randn(rng, m, d), randn(rng, m, p)).unwrap()
}

pub fn random_state(rng: &mut impl Rng, m: usize, d: usize, lik: LikelihoodParams) -> ModelState {
    ModelState::new(vec![random_layer(rng, m, d, 1)], lik).unwrap()
}

/// Per-group max relative error between an analytic and a central-difference gradient.
pub fn group_errors(
    state: &ModelState,
    analytic: &[f64],
    mut energy: impl FnMut(&ModelState) -> f64,
    step: f64,
) -> Vec<(String, f64)> {
    let base = state.to_flat();
    let groups = state.flat_groups();
    let mut fd = vec![0.0; base.len()];
    let mut s = state.clone();
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + step;
        s.set_flat(&x).unwrap();
        let up = energy(&s);
        x[i] = base[i] - step;
        s.set_flat(&x).unwrap();
        let down = energy(&s);
        fd[i] = (up - down) / (2.0 * step);
    }
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut keys: Vec<(Option<usize>, ParamGroup)> = Vec::new();
    for g in &groups {
        if !keys.contains(g) {
            keys.push(*g);
        }
    }
    for key in keys {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == key).collect();
        let scale = idx.iter().map(|&i| analytic[i].abs().max(fd[i].abs())).fold(0.0, f64::max).max(1e-8);
        let err = idx.iter().map(|&i| (analytic[i] - fd[i]).abs()).fold(0.0, f64::max) / scale;
        out.push((bsgp_core::model::group_label(key.0, key.1), err));
    }
    out
}

/// Draws `y = f(x) + noise` with `f` from a GP with the given kernel, `x` uniform on [-3, 3].
pub fn gp_toy(rng: &mut impl Rng, n: usize, h: &KernelHyper, noise_std: f64) -> (Mat, Vec<f64>) {
    use bsgp_core::kernel::GramMatrix;
    let x = Mat::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
    let k = GramMatrix::of_points(&x, h).unwrap();
    let l = bsgp_core::chol_jitter(&k).unwrap().factor;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let f = l.matvec(&z);
    let y = f.iter().map(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
    (x, y)
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &Mat) -> Mat {
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Mat::identity(n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().partial_cmp(&m[(j, c)].abs()).unwrap()).unwrap();
        for k in 0..n {
            let (t1, t2) = (m[(c, k)], inv[(c, k)]);
            m[(c, k)] = m[(p, k)];
            m[(p, k)] = t1;
            inv[(c, k)] = inv[(p, k)];
            inv[(p, k)] = t2;
        }
        let d = m[(c, c)];
        for k in 0..n {
            m[(c, k)] /= d;
            inv[(c, k)] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[(i, c)];
                for k in 0..n {
                    m[(i, k)] -= f * m[(c, k)];
                    inv[(i, k)] -= f * inv[(c, k)];
                }
            }
        }
    }
    inv
}
