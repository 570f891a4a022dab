mod common;

use common::{load, ALL_FIXTURES};
use kgp_core::metrics::*;
use kgp_core::symexpr::parse_expr;
use kgp_core::table::{sample_rows, RegionMask, Table};
use kgp_core::MetricError;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn brute_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let d = |p: &[f64; 2], q: &[f64; 2]| ((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1])).sqrt();
    let directed = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        a.iter().map(|p| b.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    let scale = rng.random_range(0.1..100.0);
    (0..n).map(|_| [rng.random_range(-scale..scale), rng.random_range(-scale..scale)]).collect()
}

#[test]
fn hausdorff_equals_brute_force_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(50..=200), rng.random_range(50..=200));
        let a = random_points(&mut rng, na);
        let b = random_points(&mut rng, nb);
        assert_eq!(hausdorff(&a, &b).unwrap().to_bits(), brute_hausdorff(&a, &b).to_bits());
    }
}

#[test]
fn mse_matches_noise_variance() {
    let f = parse_expr("x^3-3x^2+1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let rows: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let x: f64 = rng.random_range(-1.5..3.5);
            vec![x, x.powi(3) - 3.0 * x * x + 1.0 + noise.sample(&mut rng)]
        })
        .collect();
    let t = Table::from_numeric(&["x", "y"], rows).unwrap();
    let mse = mse_symbolic(&t, &f, "y", None).unwrap();
    assert!((mse - 0.09).abs() <= 0.15 * 0.09, "{mse}");
    let mask = RegionMask::new("x", 10.0, 20.0).unwrap();
    assert!(matches!(mse_symbolic(&t, &f, "y", Some(&mask)), Err(MetricError::RegionEmpty { .. })));
    let inner = RegionMask::new("x", 0.0, 1.0).unwrap();
    assert!(mse_symbolic(&t, &f, "y", Some(&inner)).is_ok());
}

#[test]
fn nll_matches_differential_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal: Vec<Vec<f64>> = (0..1000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let t = Table::from_numeric(&["x"], normal).unwrap();
    let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let nll = nll_kde(&t, &t).unwrap();
    assert!((nll - h).abs() <= 0.1, "{nll} vs {h}");

    let square: Vec<Vec<f64>> =
        (0..1000).map(|_| vec![rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect();
    let t = Table::from_numeric(&["x", "y"], square).unwrap();
    let nll = nll_kde(&t, &t).unwrap();
    assert!((nll - 1e4f64.ln()).abs() <= 0.5, "{nll}");
}

#[test]
fn kl_closed_forms() {
    let uniform: Vec<f64> = (0..2000).map(|i| i as f64 / 1999.0).collect();
    let point = vec![0.01; 500];
    let kl = kl_column(&uniform, &point, 20).unwrap();
    assert!((kl - 20f64.ln()).abs() <= 0.01 * 20f64.ln(), "{kl}");
    assert!(kl_column(&uniform, &uniform, 20).unwrap() <= 1e-6);
    let far: Vec<f64> = uniform.iter().map(|v| v + 10.0).collect();
    assert!(kl_column(&uniform, &far, 20).unwrap() > 10.0);
}

#[test]
fn dcr_detects_copies_and_ignores_affine_rescaling() {
    for name in ["dino_slice", "o2_like", "quartic"] {
        let t = load(name);
        let d = dcr(&t, &t).unwrap();
        assert_eq!((d.mean, d.zero_leaks), (0.0, t.len()), "{name}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let real: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(-5.0..5.0)]).collect();
    let syn: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(-5.0..5.0)]).collect();
    let base = dcr(&Table::from_numeric(&["a", "b"], real.clone()).unwrap(), &Table::from_numeric(&["a", "b"], syn.clone()).unwrap())
        .unwrap()
        .mean;
    let affine = |rows: &[Vec<f64>]| -> Table {
        Table::from_numeric(&["a", "b"], rows.iter().map(|r| vec![3.0 * r[0] - 7.0, 0.25 * r[1] + 100.0]).collect()).unwrap()
    };
    let scaled = dcr(&affine(&real), &affine(&syn)).unwrap().mean;
    assert!((base - scaled).abs() <= 1e-12, "{base} vs {scaled}");
}

fn line(xs: &[f64]) -> Table {
    Table::from_numeric(&["x", "y"], xs.iter().map(|&x| vec![x, 2.0 * x + 1.0]).collect()).unwrap()
}

#[test]
fn mlu_recovers_a_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let train: Vec<f64> = (0..300).map(|_| rng.random_range(1.0..10.0)).collect();
    let test: Vec<f64> = (0..100).map(|_| rng.random_range(1.0..10.0)).collect();
    let (syn, real) = (line(&train), line(&test));
    let ols = mlu(&syn, &real, "y", MluModel::LinearRegression, 0).unwrap();
    assert!(ols <= 1e-6, "{ols}");
    let rf = mlu(&syn, &real, "y", MluModel::RandomForest, 42).unwrap();
    assert!(rf <= 0.05, "{rf}");
    assert_eq!(rf, mlu(&syn, &real, "y", MluModel::RandomForest, 42).unwrap());

    // Shuffling the synthetic target destroys the signal.
    let mut ys: Vec<f64> = train.iter().map(|x| 2.0 * x + 1.0).collect();
    ys.shuffle(&mut rng);
    let shuffled = Table::from_numeric(&["x", "y"], train.iter().zip(&ys).map(|(x, y)| vec![*x, *y]).collect()).unwrap();
    let bad = mlu(&shuffled, &real, "y", MluModel::RandomForest, 42).unwrap();
    assert!(bad > 5.0 * rf.max(0.01), "{bad} vs {rf}");
}

#[test]
fn mlu_errors() {
    let t = line(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(matches!(mlu(&t.slice(0, 4), &t, "y", MluModel::LinearRegression, 0), Err(MetricError::Size(_))));
    assert!(matches!(mlu(&t, &t, "z", MluModel::LinearRegression, 0), Err(MetricError::Schema(_))));
    let zeros = Table::from_numeric(&["x", "y"], vec![vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    assert!(matches!(mlu(&t, &zeros, "y", MluModel::LinearRegression, 0), Err(MetricError::MapeUndefined(_))));
    // Collinear features fall back to a ridge solve instead of failing.
    let dup = Table::from_numeric(
        &["a", "b", "y"],
        (0..20).map(|i| vec![i as f64, i as f64, 3.0 * i as f64 + 2.0]).collect(),
    )
    .unwrap();
    assert!(mlu(&dup, &dup.slice(1, 20), "y", MluModel::LinearRegression, 0).unwrap() < 1e-4);
}

#[test]
fn real_data_is_likelier_than_its_bounding_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for name in ALL_FIXTURES {
        let t = load(name);
        let cols = t.numeric_column_names();
        let sub = sample_rows(&t, t.len() / 2, 1).unwrap();
        let m = t.numeric_matrix(&cols).unwrap();
        let bounds: Vec<(f64, f64)> = (0..cols.len())
            .map(|j| m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j]))))
            .collect();
        let uniform: Vec<Vec<f64>> = (0..sub.len())
            .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
            .collect();
        let real_only = Table::from_numeric(&cols, m).unwrap();
        let boxed = Table::from_numeric(&cols, uniform).unwrap();
        let sub_num = Table::from_numeric(&cols, sub.numeric_matrix(&cols).unwrap()).unwrap();
        let a = nll_kde(&real_only, &sub_num).unwrap();
        let b = nll_kde(&real_only, &boxed).unwrap();
        assert!(a < b, "{name}: {a} !< {b}");
    }
}

#[test]
fn evaluate_self_report() {
    let t = load("dino_slice");
    let r = evaluate(&t, &t, &EvalOptions::default()).unwrap();
    assert_eq!(r.hausdorff, Some(0.0));
    assert_eq!(r.dcr_mean, 0.0);
    assert_eq!(r.dcr_zero_leaks, t.len());
    assert!(r.kl <= 1e-6);
    assert_eq!(r.mse_symbolic, None);
    assert_eq!(r.config.mlu_target, "y");
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["n_synthetic"], t.len());

    let q = load("quartic");
    let opts = EvalOptions { equation: Some("y = 3x^4+4x^3-12x^2+2".into()), ..EvalOptions::default() };
    let r = evaluate(&q, &q, &opts).unwrap();
    assert!(r.mse_symbolic.unwrap() < 1e-6);
    assert!(r.render_table().contains("mse_symbolic"));
}

fn pts() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0).prop_map(|(a, b)| [a, b]), 1..40)
}

proptest! {
    #[test]
    fn hausdorff_is_a_metric(a in pts(), b in pts(), c in pts()) {
        let ab = hausdorff(&a, &b).unwrap();
        prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
        prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        let ac = hausdorff(&a, &c).unwrap();
        let cb = hausdorff(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9 * (1.0 + ac + cb));
    }

    #[test]
    fn kl_is_non_negative(p in prop::collection::vec(-10.0f64..10.0, 1..100), q in prop::collection::vec(-20.0f64..20.0, 1..100), bins in 2usize..40) {
        prop_assert!(kl_column(&p, &q, bins).unwrap() >= 0.0);
    }
}
