mod common;

use bsgp_core::deep::{
    deep_energy_and_grad_with, deep_log_energy_with, draw_inner_noise, forward_sample, forward_with, predict_paths,
};
use bsgp_core::eval::{mnll, PredictiveEnsemble};
use bsgp_core::likelihood::log_expectation;
use bsgp_core::linalg::Mat;
use bsgp_core::model::{conditional_moments, energy_and_grad, log_energy, log_prior_total, LayerState, Minibatch, ModelState, Priors};
use bsgp_core::special::GaussHermite;
use bsgp_core::{KernelHyper, LikelihoodParams, MarginalMoments, Objective};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn two_layer(r: &mut impl Rng, d: usize, m: usize, lik: LikelihoodParams) -> ModelState {
    ModelState::new(vec![random_layer(r, m, d, d), random_layer(r, m, d, 1)], lik).unwrap()
}

#[test]
fn identity_propagation_at_inducing_inputs() {
    let mut r = rng(1);
    let mut s = two_layer(&mut r, 2, 5, LikelihoodParams::gaussian(0.1));
    s.layers[0].nu = Mat::zeros(5, 2);
    let x = s.layers[0].z.clone();
    let zeros = vec![Mat::zeros(5, 2)];
    let t = forward_with(&x, &s, &zeros).unwrap();
    assert_eq!(t.activations[0], x);
    let t = forward_sample(&x, &s, &mut r).unwrap();
    assert!(t.activations[0].max_abs_diff(&x) < 1e-6);
}

#[test]
fn two_layer_matches_scripted_recursion() {
    let mut r = rng(2);
    let s = two_layer(&mut r, 2, 4, LikelihoodParams::gaussian(0.2));
    let x = randn(&mut r, 6, 2);
    let t = forward_sample(&x, &s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();

    let mut oracle_rng = ChaCha8Rng::seed_from_u64(11);
    let inner = conditional_moments(&x, &s.layers[0]).unwrap();
    let mut f = Mat::zeros(6, 2);
    for n in 0..6 {
        for p in 0..2 {
            let z: f64 = oracle_rng.sample(StandardNormal);
            f[(n, p)] = inner[p].mean[n] + x[(n, p)] + inner[p].var[n].sqrt() * z;
        }
    }
    assert_eq!(t.activations[0], f);
    assert_eq!(t.final_moments, conditional_moments(&f, &s.layers[1]).unwrap()[0]);
}

#[test]
fn degenerate_inner_variance_reduces_to_composition() {
    let mut r = rng(3);
    let s = two_layer(&mut r, 2, 6, LikelihoodParams::gaussian(0.3));
    let x = s.layers[0].z.clone();
    let y: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let batch = Minibatch::new(x.clone(), y.clone()).unwrap();
    let p = Priors::default();
    let zetas = draw_inner_noise(&s, 6, &mut r);
    let deep = deep_log_energy_with(&s, &batch, Objective::Fitc, &p, 12, &zetas).unwrap();

    let inner = conditional_moments(&x, &s.layers[0]).unwrap();
    assert!(inner.iter().all(|m| m.var.iter().all(|v| *v < 1e-9)));
    let f = Mat::from_fn(6, 2, |n, q| inner[q].mean[n] + x[(n, q)]);
    let outer = ModelState::new(vec![s.layers[1].clone()], s.lik.clone()).unwrap();
    let shallow = log_energy(&outer, &Minibatch::new(f, y).unwrap(), Objective::Fitc, &p, 12).unwrap();
    let inner_state = ModelState::new(
        vec![LayerState::new(s.layers[0].hyper.clone(), s.layers[0].z.clone(), Mat::zeros(6, 1)).unwrap()],
        LikelihoodParams::probit(),
    )
    .unwrap();
    // the inner layer contributes only its priors; the M×1 stand-in carries all but the ν block
    let nu = s.layers[0].nu.as_slice();
    let expected_inner = {
        let lp_nu = -0.5 * nu.iter().map(|v| v * v).sum::<f64>() - 0.5 * nu.len() as f64 * bsgp_core::special::LN_2PI;
        let lp_rest = log_prior_total(&inner_state, &p).unwrap() - (-0.5 * 6.0 * bsgp_core::special::LN_2PI);
        lp_nu + lp_rest
    };
    assert!((deep - (shallow - expected_inner)).abs() < 1e-8 * deep.abs().max(1.0), "{deep} vs {}", shallow - expected_inner);
}

#[test]
fn nested_quadrature_oracle() {
    let mut r = rng(4);
    let s = two_layer(&mut r, 1, 3, LikelihoodParams::gaussian(0.25));
    let x = Mat::from_rows(&[[0.4]]);
    let y = [0.7];
    let inner = &conditional_moments(&x, &s.layers[0]).unwrap()[0];
    let gh = GaussHermite::new(60).unwrap();
    let outer = |f: f64| {
        let m = &conditional_moments(&Mat::from_rows(&[[f]]), &s.layers[1]).unwrap()[0];
        log_expectation(m, &y, &s.lik).unwrap()[0].exp()
    };
    let oracle = gh.expect(inner.mean[0] + 0.4, inner.var[0], outer);

    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut pr = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..n {
        let t = forward_sample(&x, &s, &mut pr).unwrap();
        let v = log_expectation(&t.final_moments, &y, &s.lik).unwrap()[0].exp();
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - oracle).abs() < 3.0 * se, "{mean} ± {se} vs {oracle}");
}

#[test]
fn zero_noise_gradient_matches_shallow_on_composed_inputs() {
    let mut r = rng(6);
    let s = two_layer(&mut r, 2, 4, LikelihoodParams::gaussian(0.3));
    let x = randn(&mut r, 7, 2);
    let y: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
    let p = Priors::default();
    let zetas = vec![Mat::zeros(7, 2)];
    let (_, g) = deep_energy_and_grad_with(&s, &Minibatch::new(x.clone(), y.clone()).unwrap(), Objective::Fitc, &p, 7, &zetas).unwrap();

    let inner = conditional_moments(&x, &s.layers[0]).unwrap();
    let f = Mat::from_fn(7, 2, |n, q| inner[q].mean[n] + x[(n, q)]);
    let outer = ModelState::new(vec![s.layers[1].clone()], s.lik.clone()).unwrap();
    let (_, gs) = energy_and_grad(&outer, &Minibatch::new(f, y).unwrap(), Objective::Fitc, &p, 7).unwrap();
    let a = &g.layers[1];
    let b = &gs.layers[0];
    let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-10 * p.abs().max(1.0));
    assert!(close(&a.hyper.d_log_lengthscales, &b.hyper.d_log_lengthscales));
    assert!(close(&[a.hyper.d_log_variance], &[b.hyper.d_log_variance]));
    assert!(close(a.z.as_slice(), b.z.as_slice()));
    assert!(close(a.nu.as_slice(), b.nu.as_slice()));
    assert!(close(&[g.log_noise_variance], &[gs.log_noise_variance]));
}

#[test]
fn more_forward_paths_reduce_mnll_spread() {
    let mut r = rng(7);
    let s = two_layer(&mut r, 1, 4, LikelihoodParams::gaussian(0.1));
    let xs = randn(&mut r, 20, 1);
    let ys: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
    let spread = |paths: usize| {
        let vals: Vec<f64> = (0..200)
            .map(|seed| {
                let mut pr = ChaCha8Rng::seed_from_u64(1000 + seed);
                let mut ens = PredictiveEnsemble::regression(20);
                for m in predict_paths(&s, &xs, paths, &mut pr).unwrap() {
                    ens.push(&m, s.lik.noise_variance()).unwrap();
                }
                mnll(&ens, &ys).unwrap()
            })
            .collect();
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (vals.len() - 1) as f64
    };
    let v1 = spread(1);
    let v10 = spread(10);
    assert!(v10 < v1, "{v10} !< {v1}");
}

#[test]
fn single_layer_prediction_is_deterministic() {
    let l = LayerState::new(KernelHyper::new(&[1.0], 1.0), Mat::from_rows(&[[0.0]]), Mat::from_rows(&[[1.0]])).unwrap();
    let s = ModelState::new(vec![l], LikelihoodParams::gaussian(0.1)).unwrap();
    let mut pr = ChaCha8Rng::seed_from_u64(0);
    let p = predict_paths(&s, &Mat::from_rows(&[[0.5]]), 10, &mut pr).unwrap();
    assert_eq!(p.len(), 1);
    let _: &MarginalMoments = &p[0];
}
