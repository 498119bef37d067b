mod common;

use bsgp_core::baseline::{
    collapsed_bound, dtc_predict, elbo_gaussian, exact_gp_predict, exact_log_evidence, fitc_predict, optimal_q, q_predict,
    svgp_train, SvgpConfig, SvgpModel,
};
use bsgp_core::eval::{mnll, PredictiveEnsemble};
use bsgp_core::kernel::gram;
use bsgp_core::linalg::Mat;
use bsgp_core::model::LayerState;
use bsgp_core::{KernelHyper, LikelihoodParams, MarginalMoments};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn problem(seed: u64, n: usize, m: usize) -> (Mat, Vec<f64>, Mat, KernelHyper) {
    let mut r = rng(seed);
    let h = KernelHyper::new(&[0.9, 1.3], 1.2);
    let x = randn(&mut r, n, 2);
    let y = (0..n).map(|i| (x[(i, 0)]).sin() + 0.3 * x[(i, 1)] + 0.1 * r.random_range(-1.0..1.0)).collect();
    let z = randn(&mut r, m, 2);
    (x, y, z, h)
}

/// Dense `K_*z K_zz⁻¹ K_zx` style projections with explicit inverses.
fn q_dense(a: &Mat, b: &Mat, z: &Mat, h: &KernelHyper) -> Mat {
    let kzz_inv = dense_inverse(&gram(z, z, h).unwrap());
    gram(a, z, h).unwrap().matmul(&kzz_inv).matmul(&gram(z, b, h).unwrap())
}

/// Dense predictive with training covariance `Q + Λ`.
fn dense_projected(xs: &Mat, x: &Mat, y: &[f64], z: &Mat, h: &KernelHyper, noise: f64, fitc: bool) -> MarginalMoments {
    let n = y.len();
    let qff = q_dense(x, x, z, h);
    let mut c = qff.clone();
    for i in 0..n {
        let k = if fitc { h.variance() - qff[(i, i)] } else { 0.0 };
        c[(i, i)] += k + noise;
    }
    let cinv = dense_inverse(&c);
    let qsf = q_dense(xs, x, z, h);
    let alpha = cinv.matvec(y);
    let mean = qsf.matvec(&alpha);
    let t = qsf.matmul(&cinv).matmul_t(&qsf);
    let var = (0..xs.rows()).map(|j| h.variance() - t[(j, j)]).collect();
    MarginalMoments { mean, var }
}

fn assert_moments_close(a: &MarginalMoments, b: &MarginalMoments, tol: f64) {
    for (p, q) in a.mean.iter().zip(&b.mean).chain(a.var.iter().zip(&b.var)) {
        assert!((p - q).abs() < tol * q.abs().max(1.0), "{p} vs {q}");
    }
}

#[test]
fn projected_predictives_match_dense_algebra() {
    let (x, y, z, h) = problem(1, 25, 6);
    let xs = randn(&mut rng(2), 9, 2);
    assert_moments_close(&fitc_predict(&xs, &x, &y, &z, &h, 0.05).unwrap(), &dense_projected(&xs, &x, &y, &z, &h, 0.05, true), 1e-8);
    assert_moments_close(&dtc_predict(&xs, &x, &y, &z, &h, 0.05).unwrap(), &dense_projected(&xs, &x, &y, &z, &h, 0.05, false), 1e-8);
}

#[test]
fn dtc_equals_optimal_q_prediction() {
    let (x, y, z, h) = problem(3, 30, 7);
    let xs = randn(&mut rng(4), 10, 2);
    let q = optimal_q(&x, &y, &z, &h, 0.1).unwrap();
    assert_moments_close(&dtc_predict(&xs, &x, &y, &z, &h, 0.1).unwrap(), &q_predict(&xs, &z, &h, &q).unwrap(), 1e-10);
}

#[test]
fn fitc_with_full_inducing_set_is_exact() {
    let (x, y, _, h) = problem(5, 15, 1);
    let xs = randn(&mut rng(6), 8, 2);
    let exact = exact_gp_predict(&xs, &x, &y, &h, 0.05).unwrap();
    assert_moments_close(&fitc_predict(&xs, &x, &y, &x, &h, 0.05).unwrap(), &exact, 1e-6);
    assert_moments_close(&dtc_predict(&xs, &x, &y, &x, &h, 0.05).unwrap(), &exact, 1e-6);
}

#[test]
fn vanishing_noise_interpolates() {
    let x = Mat::from_fn(8, 1, |i, _| i as f64 - 3.5);
    let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
    let h = KernelHyper::new(&[1.0], 1.0);
    let p = dtc_predict(&x, &x, &y, &x, &h, 1e-9).unwrap();
    for (m, t) in p.mean.iter().zip(&y) {
        assert!((m - t).abs() < 1e-4, "{m} vs {t}");
    }
    assert!(p.var.iter().all(|v| *v < 1e-4));
}

#[test]
fn optimal_q_is_stationary_and_collapses() {
    let (x, y, z, h) = problem(7, 40, 6);
    let noise = 0.08;
    let q = optimal_q(&x, &y, &z, &h, noise).unwrap();
    let s = q.covariance();
    let base = elbo_gaussian(&x, &y, &z, &h, noise, &q.m, &s).unwrap();
    let bound = collapsed_bound(&x, &y, &z, &h, noise).unwrap();
    assert!((base - bound).abs() < 1e-8 * bound.abs(), "{base} vs {bound}");
    let eps = 1e-5;
    for i in 0..q.m.len() {
        let mut up = q.m.clone();
        up[i] += eps;
        let mut dn = q.m.clone();
        dn[i] -= eps;
        let g = (elbo_gaussian(&x, &y, &z, &h, noise, &up, &s).unwrap() - elbo_gaussian(&x, &y, &z, &h, noise, &dn, &s).unwrap())
            / (2.0 * eps);
        assert!(g.abs() < 1e-4, "dm[{i}] = {g}");
    }
    // any symmetric perturbation of S lowers the bound
    let mut r = rng(8);
    for _ in 0..5 {
        let d = randn(&mut r, 6, 6);
        let mut sp = s.clone();
        for i in 0..6 {
            for j in 0..6 {
                sp[(i, j)] += 1e-4 * 0.5 * (d[(i, j)] + d[(j, i)]);
            }
        }
        if let Ok(v) = elbo_gaussian(&x, &y, &z, &h, noise, &q.m, &sp) {
            assert!(v <= base + 1e-9);
        }
    }
}

#[test]
fn collapsed_bound_is_tight_at_full_inducing_set() {
    let (x, y, z, h) = problem(9, 20, 5);
    let exact = exact_log_evidence(&x, &y, &h, 0.1).unwrap();
    assert!((collapsed_bound(&x, &y, &x, &h, 0.1).unwrap() - exact).abs() < 1e-6 * exact.abs());
    assert!(collapsed_bound(&x, &y, &z, &h, 0.1).unwrap() <= exact);
}

#[test]
fn svgp_elbo_matches_explicit_q() {
    let (x, y, z, h) = problem(10, 30, 5);
    let mut r = rng(11);
    let layer = LayerState::new(h.clone(), z.clone(), randn(&mut r, 5, 1)).unwrap();
    let mut model = SvgpModel::new(layer, LikelihoodParams::gaussian(0.1)).unwrap();
    let mut l = randn(&mut r, 5, 5);
    l.make_lower();
    for i in 0..5 {
        l[(i, i)] = 0.5 + l[(i, i)].abs();
    }
    model.l_s = l;
    let q = model.q().unwrap();
    let want = elbo_gaussian(&x, &y, &z, &h, 0.1, &q.m, &q.covariance()).unwrap();
    let got = model.elbo(&x, &y).unwrap();
    assert!((got - want).abs() < 1e-8 * want.abs(), "{got} vs {want}");
    assert_moments_close(&model.predict_latent(&x).unwrap(), &q_predict(&x, &z, &h, &q).unwrap(), 1e-9);
}

#[test]
fn svgp_recovers_exact_gp_on_toy_problem() {
    let truth = KernelHyper::new(&[1.0], 1.0);
    let (x, y) = gp_toy(&mut rng(12), 50, &truth, 0.1);
    let noise = 0.01;
    let exact = exact_gp_predict(&x, &x, &y, &truth, noise).unwrap();
    let mut ens = PredictiveEnsemble::regression(50);
    ens.push(&exact, noise).unwrap();
    let exact_mnll = mnll(&ens, &y).unwrap();

    let z = Mat::from_fn(15, 1, |i, _| -3.0 + 6.0 * i as f64 / 14.0);
    let layer = LayerState::new(truth.clone(), z, Mat::zeros(15, 1)).unwrap();
    let init = SvgpModel::new(layer, LikelihoodParams::gaussian(0.1)).unwrap();
    let cfg = SvgpConfig { iterations: 10_000, batch_size: 50, learning_rate: 0.01, ..SvgpConfig::default() };
    let fit = svgp_train(init, &x, &y, &cfg, &mut rng(13)).unwrap();
    let mut ens = PredictiveEnsemble::regression(50);
    ens.push(&fit.model.predict_latent(&x).unwrap(), fit.model.lik.noise_variance()).unwrap();
    let svgp_mnll = mnll(&ens, &y).unwrap();
    assert!((svgp_mnll - exact_mnll).abs() < 0.1, "svgp {svgp_mnll} vs exact {exact_mnll}");

    let t = &fit.elbo_trace;
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(avg(&t[t.len() - 500..]) >= avg(&t[..500]));
}

#[test]
fn svgp_rejects_mismatched_inputs() {
    let layer = LayerState::new(KernelHyper::new(&[1.0], 1.0), Mat::zeros(2, 1), Mat::zeros(2, 1)).unwrap();
    let init = SvgpModel::new(layer, LikelihoodParams::gaussian(0.1)).unwrap();
    let x = Mat::zeros(3, 2);
    assert!(svgp_train(init, &x, &[0.0; 3], &SvgpConfig::default(), &mut rng(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictive_variances_are_bounded(seed in 0u64..100_000, noise in 0.01f64..1.0) {
        let (x, y, z, h) = problem(seed, 12, 4);
        let xs = randn(&mut rng(seed + 1), 6, 2);
        let cap = h.variance() * (1.0 + 1e-9);
        for p in [
            fitc_predict(&xs, &x, &y, &z, &h, noise).unwrap(),
            dtc_predict(&xs, &x, &y, &z, &h, noise).unwrap(),
            exact_gp_predict(&xs, &x, &y, &h, noise).unwrap(),
        ] {
            prop_assert!(p.var.iter().all(|v| *v >= 0.0 && *v <= cap));
        }
    }
}
