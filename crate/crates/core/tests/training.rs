mod common;

use proptest::prelude::*;
use voltvar_core::feeder::DistanceMetric;
use voltvar_core::powerflow::solve;
use voltvar_core::scenario::{partition_blocks, random_indices, representative_indices, scenarios_from_profiles};
use voltvar_core::training::{read_dataset, write_dataset, Provenance};

#[test]
fn sweep_rows_replay() {
    let f = common::fixture();
    let ds = &f.trained.dataset;
    for row in ds.rows.iter().step_by(37) {
        let sol = solve(&f.model, &ds.row_state(&f.model, row)).unwrap();
        assert_eq!(sol.measurements.to_vector(), row.measurements);
        for (a, b) in sol.magnitudes.iter().zip(&row.voltages) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn sweep_shape() {
    let f = common::fixture();
    let ds = &f.trained.dataset;
    let np = f.model.pv_plants().len();
    // levels beyond the inverter headroom are skipped
    assert!(ds.rows.len() <= ds.scenarios.len() * np * ds.q_levels.len());
    for (si, s) in ds.scenarios.iter().enumerate() {
        for (k, pv) in f.model.pv_plants().iter().enumerate() {
            let expect = ds.q_levels.iter().filter(|l| (*l * pv.kva).abs() <= pv.excess_capacity_kvar(s.pv_kw[k]) + 1e-9 * pv.kva).count();
            let got = ds.rows.iter().filter(|r| r.scenario == si && r.plant == k).count();
            assert_eq!(got, expect);
        }
    }
    assert_eq!(ds.tap_rows.len(), f.model.regulators().len());
    for row in &ds.rows {
        let kva = f.model.pv_plants()[row.plant].kva;
        assert!(row.q_kvar.abs() <= kva + 1e-9);
    }
}

#[test]
fn dataset_round_trip() {
    let f = common::fixture();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&f.trained.dataset, &f.model, dir.path()).unwrap();
    let back = read_dataset(&f.model, dir.path()).unwrap();
    assert_eq!(back, f.trained.dataset);
}

#[test]
fn critical_set_is_small_and_covers_devices() {
    let f = common::fixture();
    let crit = &f.trained.estimator.critical;
    assert!(crit.len() as f64 <= 0.10 * f.model.node_count() as f64, "{} nodes", crit.len());
    let idx = crit.indices();
    for r in 0..f.model.regulators().len() {
        assert!(idx.contains(&f.model.regulator_secondary_node(r)));
        assert!(idx.contains(&f.model.regulator_primary_node(r)));
    }
    assert!(crit.nodes.iter().any(|c| c.provenance == Provenance::FeederHead));
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), idx.len());
    // every training extreme is in the set
    for row in &f.trained.dataset.rows {
        let (hi, _) = row.voltages.iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        assert!(idx.contains(&hi));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn selection_per_block(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let f = common::fixture();
        let sc = scenarios_from_profiles(&f.model, &f.history, DistanceMetric::LengthKm).unwrap();
        let grid = partition_blocks(&sc, rows, cols).unwrap();
        let total: usize = grid.blocks.iter().map(|b| b.len()).sum();
        prop_assert_eq!(total, sc.len());
        let guided = representative_indices(&grid, &sc);
        let random = random_indices(&grid, seed);
        prop_assert_eq!(&random, &random_indices(&grid, seed));
        for b in &grid.blocks {
            let g = guided.iter().filter(|i| b.contains(i)).count();
            let r = random.iter().filter(|i| b.contains(i)).count();
            prop_assert!(g <= 6);
            prop_assert_eq!(r, b.len().min(6));
            if !b.is_empty() {
                prop_assert!(g >= 1);
            }
        }
    }
}
