mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltvar_core::error::Error;
use voltvar_core::estimator::{fit_curve, least_squares, read_estimator, write_estimator};
use voltvar_core::powerflow::{solve, measurement_channels};

fn measurement(i: usize) -> Vec<f64> {
    common::fixture().trained.dataset.rows[i].measurements.clone()
}

#[test]
fn regression_recovers_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = 6;
    let channels: Vec<String> = (0..p).map(|i| format!("m{i}")).collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2e-4..2e-4)).collect();
    let x: Vec<Vec<f64>> = (0..80).map(|_| (0..p).map(|_| rng.gen_range(-800.0..1500.0)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| 1.01 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
    let (icpt, coef) = least_squares(&x, &[y], &channels).unwrap();
    assert!((icpt[0] - 1.01).abs() < 1e-9);
    for (c, b) in coef[0].iter().zip(&beta) {
        assert!((c - b).abs() < 1e-9, "{c} vs {b}");
    }
}

#[test]
fn collinear_channels_reported() {
    let channels: Vec<String> = vec!["p".into(), "p2".into()];
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let y = vec![(0..10).map(|i| i as f64).collect::<Vec<_>>()];
    match least_squares(&x, &y, &channels) {
        Err(Error::RankDeficient { columns }) => assert!(!columns.is_empty()),
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn curve_recovery(d0 in 1e-6f64..1e-4, b in 0.2f64..1.8) {
        let c: f64 = 3000.0;
        let a = d0 * c.powf(b);
        let samples: Vec<(f64, f64)> = (0..25)
            .map(|i| {
                let q = -1500.0 + 150.0 * i as f64;
                (q, a / (c + q).powf(b))
            })
            .collect();
        let f = fit_curve(&samples, c).unwrap();
        prop_assert!(((f.a - a) / a).abs() < 0.01, "a {} vs {a}", f.a);
        prop_assert!(((f.b - b) / b).abs() < 0.01, "b {} vs {b}", f.b);
    }

    #[test]
    fn estimate_is_affine(i in 0usize..50, j in 0usize..50, lam in 0.0f64..1.0) {
        let est = &common::fixture().trained.estimator;
        let taps = est.baseline_taps().to_vec();
        let (m1, m2) = (measurement(i), measurement(j));
        let mix: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let e1 = est.estimate_voltages(&m1, &taps).unwrap();
        let e2 = est.estimate_voltages(&m2, &taps).unwrap();
        let em = est.estimate_voltages(&mix, &taps).unwrap();
        for n in 0..em.len() {
            prop_assert!((em[n] - (lam * e1[n] + (1.0 - lam) * e2[n])).abs() < 1e-10);
        }
    }

    #[test]
    fn tap_shift_is_table_lookup(i in 0usize..50, dt in proptest::collection::vec(-3i32..=3, 4)) {
        let est = &common::fixture().trained.estimator;
        let m = measurement(i);
        let base = est.baseline_taps().to_vec();
        let taps: Vec<i32> = base.iter().zip(&dt).map(|(t, d)| t + d).collect();
        let e0 = est.estimate_voltages(&m, &base).unwrap();
        let e1 = est.estimate_voltages(&m, &taps).unwrap();
        let d = est.tap_sensitivities();
        for n in 0..e0.len() {
            let expect: f64 = d[n].iter().zip(&dt).map(|(s, t)| s * *t as f64).sum();
            prop_assert!((e1[n] - e0[n] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn correction_exact_at_secondaries(i in 0usize..50, noise in proptest::collection::vec(-0.01f64..0.01, 4)) {
        let est = &common::fixture().trained.estimator;
        let m = measurement(i);
        let taps = est.baseline_taps().to_vec();
        let raw = est.estimate_voltages(&m, &taps).unwrap();
        let sec: Vec<f64> = est.regulator_secondary.iter().zip(&noise).map(|(&p, e)| raw[p] + e).collect();
        let out = est.estimate_voltages_corrected(&m, &taps, &sec).unwrap();
        for (r, &p) in est.regulator_secondary.iter().enumerate() {
            prop_assert!((out.voltages[p] - sec[r]).abs() < 1e-15);
        }
        // nodes with no upstream regulator are untouched
        for (pos, up) in est.upstream.iter().enumerate() {
            if up.is_none() {
                prop_assert_eq!(out.voltages[pos], raw[pos]);
            }
        }
    }
}

#[test]
fn tap_table_zero_off_path() {
    let f = common::fixture();
    let table = &f.trained.estimator.taps;
    for (n, row) in table.delta.iter().enumerate() {
        for (r, d) in row.iter().enumerate() {
            if !f.model.is_downstream_of(n, r) {
                assert_eq!(*d, 0.0);
            }
        }
    }
}

#[test]
fn estimate_tracks_power_flow() {
    let f = common::fixture();
    let est = &f.trained.estimator;
    let state = f.history.state_at(40, &vec![0.0; 3], est.baseline_taps());
    let sol = solve(&f.model, &state).unwrap();
    let e = est.estimate_voltages(&sol.measurements.to_vector(), est.baseline_taps()).unwrap();
    for (c, v) in est.critical.nodes.iter().zip(&e) {
        assert!((sol.magnitudes[c.index] - v).abs() < 0.01);
    }
}

#[test]
fn missing_channel_named() {
    let f = common::fixture();
    let est = &f.trained.estimator;
    let mut m = measurement(0);
    m.pop();
    let last = measurement_channels(&f.model).pop().unwrap();
    match est.estimate_voltages(&m, est.baseline_taps()) {
        Err(Error::MissingMeasurement(ch)) => assert_eq!(ch, last),
        other => panic!("{other:?}"),
    }
    let mut m = measurement(0);
    m[2] = f64::NAN;
    assert!(matches!(est.estimate_voltages(&m, est.baseline_taps()), Err(Error::MissingMeasurement(_))));
}

#[test]
fn store_round_trip() {
    let f = common::fixture();
    let est = &f.trained.estimator;
    let dir = tempfile::tempdir().unwrap();
    write_estimator(est, &f.model, dir.path()).unwrap();
    let back = read_estimator(&f.model, dir.path()).unwrap();
    let taps = est.baseline_taps().to_vec();
    for i in 0..10 {
        let m = measurement(i);
        let a = est.estimate_voltages(&m, &taps).unwrap();
        let b = back.estimate_voltages(&m, &taps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert_eq!(back.critical, est.critical);
}
