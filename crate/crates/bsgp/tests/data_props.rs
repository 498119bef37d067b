use std::path::Path;

use bsgp::data::{banana, load_csv, make_folds, toy1d, toy1d_kernel, train_size, FoldData, Standardizer};
use bsgp_core::baseline::exact_gp_predict;
use bsgp_core::eval::{mnll, PredictiveEnsemble};
use bsgp_core::linalg::Mat;
use proptest::prelude::*;

fn boston() -> Option<bsgp::data::Dataset> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/boston.csv");
    p.exists().then(|| load_csv(&p).unwrap())
}

#[test]
fn boston_shape_and_split_sizes() {
    let Some(ds) = boston() else {
        eprintln!("boston.csv not present; skipping");
        return;
    };
    assert_eq!((ds.len(), ds.dim()), (506, 13));
    assert_eq!(train_size(506), 405);
    for f in make_folds(506, 8, 1).unwrap() {
        assert!(f.train_idx.len() == 404 || f.train_idx.len() == 405);
        assert_eq!(f.train_idx.len() + f.test_idx.len(), 506);
    }
}

#[test]
fn folds_are_disjoint_and_seeded() {
    let a = make_folds(97, 8, 5).unwrap();
    assert_eq!(a, make_folds(97, 8, 5).unwrap());
    assert_ne!(a, make_folds(97, 8, 6).unwrap());
    for f in &a {
        let mut all: Vec<usize> = f.train_idx.iter().chain(&f.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
    }
    assert_ne!(a[0], a[1]);
}

#[test]
fn standardizer_ignores_test_rows() {
    let ds = toy1d(60, 0.1, 3).unwrap();
    let fold = &make_folds(60, 1, 0).unwrap()[0];
    let before = FoldData::new(&ds, fold);
    let mut perturbed = ds.clone();
    for &i in &fold.test_idx {
        perturbed.x[(i, 0)] += 100.0;
        perturbed.y[i] -= 50.0;
    }
    let after = FoldData::new(&perturbed, fold);
    assert_eq!(before.x_scale, after.x_scale);
    assert_eq!(before.y_scale, after.y_scale);
    assert_eq!(before.x_train, after.x_train);
}

#[test]
fn banana_is_balanced_and_reproducible() {
    let a = banana(200, 9).unwrap();
    assert_eq!(a, banana(200, 9).unwrap());
    assert_eq!(a.y.iter().filter(|&&v| v == 1.0).count(), 200);
    assert_eq!(a.len(), 400);
    assert_ne!(a.x, banana(200, 10).unwrap().x);
}

#[test]
fn toy1d_exact_oracle_mnll() {
    let ds = toy1d(200, 0.1, 0).unwrap();
    assert_eq!(ds, toy1d(200, 0.1, 0).unwrap());
    let fold = &make_folds(200, 1, 0).unwrap()[0];
    let (xr, yr) = ds.subset(&fold.train_idx);
    let (xt, yt) = ds.subset(&fold.test_idx);
    let p = exact_gp_predict(&xt, &xr, &yr, &toy1d_kernel(), 0.01).unwrap();
    let mut ens = PredictiveEnsemble::regression(yt.len());
    ens.push(&p, 0.01).unwrap();
    let v = mnll(&ens, &yt).unwrap();
    assert!((-1.2..=-0.6).contains(&v), "{v}");
}

proptest! {
    #[test]
    fn standardization_round_trips(vals in prop::collection::vec(-1e3f64..1e3, 6..60)) {
        let x = Mat::from_vec(vals.len() / 3, 3, vals[..vals.len() / 3 * 3].to_vec());
        let s = Standardizer::fit(&x);
        let back = s.invert(&s.apply(&x));
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
