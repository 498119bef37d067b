mod common;

use bsgp_core::model::Priors;
use bsgp_core::sampler::{
    rhat, run_chain, run_model_chain, sghmc_step, ModelPotential, Potential, SampledGroups, SghmcConfig,
};
use bsgp_core::{Error, LikelihoodParams, Objective, Result};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Quadratic;

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        1
    }
    fn gradient<R: Rng + ?Sized>(&mut self, p: &[f64], g: &mut [f64], _: &mut R) -> Result<()> {
        g[0] = p[0];
        Ok(())
    }
}

#[test]
fn symplectic_energy_drift_is_second_order() {
    let cfg = SghmcConfig { step_size: 1e-3, friction: 0.0, ..Default::default() };
    let mut r = rng(1);
    let (mut x, mut p) = (vec![1.0], vec![0.5]);
    let h0 = 0.5 * (1.0 + 0.25);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = [x[0]];
        sghmc_step(&mut x, &mut p, &g, &cfg, &mut r).unwrap();
        let h = 0.5 * x[0] * x[0] + 0.5 * p[0] * p[0];
        worst = worst.max((h - h0).abs());
    }
    // bounded oscillation of size O(ε), no secular growth; and O(ε²)-scale against ε = 1e-3
    assert!(worst < 1e-3, "energy drift {worst}");
}

#[test]
fn injected_noise_has_the_configured_variance() {
    let cfg = SghmcConfig { step_size: 0.02, friction: 3.0, noise_estimate: 0.5, mass: 1.7, ..Default::default() };
    let mut r = rng(2);
    let mut shadow = r.clone();
    let x0 = vec![0.3, -1.0, 2.0];
    let p0 = vec![0.1, 0.2, -0.4];
    let g = vec![0.5, -0.25, 1.0];
    let (mut x, mut p) = (x0.clone(), p0.clone());
    sghmc_step(&mut x, &mut p, &g, &cfg, &mut r).unwrap();
    let sd = (2.0 * 0.02 * (3.0 - 0.5f64)).sqrt();
    for i in 0..3 {
        let z: f64 = shadow.sample(StandardNormal);
        let det = p0[i] - 0.02 * g[i] - 0.02 * 3.0 * p0[i] / 1.7;
        assert!((p[i] - det - sd * z).abs() < 1e-15);
        assert!((x[i] - (x0[i] + 0.02 * p[i] / 1.7)).abs() < 1e-15);
    }
    assert_eq!(cfg.noise_std() * cfg.noise_std(), 2.0 * 0.02 * 2.5);
}

#[test]
fn thinning_is_equivalent_to_subsampling() {
    let base = SghmcConfig { step_size: 0.05, friction: 1.0, burn_in_steps: 7, keep_every: 1, num_samples: 60, ..Default::default() };
    let thin = SghmcConfig { keep_every: 3, num_samples: 20, ..base.clone() };
    let a = run_chain(&mut Quadratic, &[0.2], &base, &mut rng(3), || 0.0).unwrap();
    let b = run_chain(&mut Quadratic, &[0.2], &thin, &mut rng(3), || 0.0).unwrap();
    let every_third: Vec<Vec<f64>> = a.samples.iter().skip(2).step_by(3).cloned().collect();
    assert_eq!(every_third, b.samples);
}

#[test]
fn fixed_seed_is_bit_identical() {
    let cfg = SghmcConfig { burn_in_steps: 50, keep_every: 2, num_samples: 30, ..Default::default() };
    let a = run_chain(&mut Quadratic, &[1.0], &cfg, &mut rng(4), || 0.0).unwrap();
    let b = run_chain(&mut Quadratic, &[1.0], &cfg, &mut rng(4), || 0.0).unwrap();
    assert_eq!(a, b);
}

fn normal_toy(step: f64, seed: u64, samples: usize) -> (f64, f64) {
    let cfg = SghmcConfig {
        step_size: step,
        friction: 0.1,
        burn_in_steps: 2_000,
        keep_every: 50,
        num_samples: samples,
        ..Default::default()
    };
    let out = run_chain(&mut Quadratic, &[0.0], &cfg, &mut rng(seed), || 0.0).unwrap();
    let v: Vec<f64> = out.samples.iter().map(|s| s[0]).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var)
}

#[test]
fn one_dimensional_normal_moments() {
    let (m, v) = normal_toy(0.01, 5, 20_000);
    assert!(m.abs() < 0.1, "mean {m}");
    assert!((v - 1.0).abs() < 0.15, "variance {v}");
}

#[test]
fn rhat_simulations() {
    let mut r = rng(6);
    let a: Vec<f64> = (0..1000).map(|_| r.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..1000).map(|_| 10.0 + r.sample::<f64, _>(StandardNormal)).collect();
    assert!(rhat(&[a, b]).unwrap() > 1.2);
    let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..5000).map(|_| r.sample(StandardNormal)).collect()).collect();
    assert!(rhat(&chains).unwrap() < 1.01);
    let t: Vec<f64> = (0..2000).map(|_| r.sample(StandardNormal)).collect();
    let v = rhat(&[t.clone(), t]).unwrap();
    assert!(v < 1.0 && v > 0.999);
}

#[test]
fn model_chain_reports_divergence_with_group_name() {
    let mut r = rng(7);
    let state = random_state(&mut r, 3, 1, LikelihoodParams::gaussian(0.1));
    let x = randn(&mut r, 10, 1);
    let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let mut pot = ModelPotential::new(&state, &x, &y, Objective::Fitc, Priors::default(), 10, SampledGroups::all()).unwrap();
    let cfg = SghmcConfig { step_size: 5.0, friction: 0.0, burn_in_steps: 0, keep_every: 1, num_samples: 500, ..Default::default() };
    match run_model_chain(&mut pot, &state, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(1), || 0.0) {
        Err(Error::Diverged { group, .. }) => assert!(group.contains("layer 0") || group.contains("noise"), "{group}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("a huge step size should diverge"),
    }
}

#[test]
fn frozen_groups_do_not_move() {
    let mut r = rng(8);
    let state = random_state(&mut r, 3, 2, LikelihoodParams::gaussian(0.2));
    let x = randn(&mut r, 30, 2);
    let y: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut pot = ModelPotential::new(&state, &x, &y, Objective::Fitc, Priors::default(), 8, SampledGroups::nu_only()).unwrap();
    assert_eq!(pot.dim(), 3);
    let cfg = SghmcConfig { burn_in_steps: 20, keep_every: 1, num_samples: 5, ..Default::default() };
    let set = run_model_chain(&mut pot, &state, &cfg, 2, &mut rng(9), || 0.0).unwrap();
    assert_eq!(set.len(), 5);
    assert_eq!(set.chain_ids, vec![2; 5]);
    for s in &set.states {
        assert_eq!(s.layers[0].z, state.layers[0].z);
        assert_eq!(s.layers[0].hyper, state.layers[0].hyper);
        assert_eq!(s.lik, state.lik);
        assert_ne!(s.layers[0].nu, state.layers[0].nu);
    }
}
