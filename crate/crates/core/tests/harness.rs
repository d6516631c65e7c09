mod common;

use std::sync::OnceLock;

use voltvar_core::harness::{
    run_case, run_experiment, write_metrics_csv, Case, CaseConfig, ExperimentConfig, ExperimentInputs,
    ExperimentKind, MetricsReport,
};
use voltvar_core::profiles::Profiles;
use voltvar_core::synth::{synthetic_profiles, ProfileSpec};

/// Midday of a stress day: the high-PV part of the record.
fn stress() -> &'static Profiles {
    static P: OnceLock<Profiles> = OnceLock::new();
    P.get_or_init(|| {
        let f = common::fixture();
        synthetic_profiles(&f.model, &ProfileSpec::stress(1, 5)).slice(600, 900)
    })
}

fn run(case: Case, cfg: &CaseConfig) -> (voltvar_core::harness::SimulationTrace, MetricsReport) {
    let f = common::fixture();
    run_case(&f.model, stress(), &cfg.with_case(case), Some(&f.trained.estimator)).unwrap()
}

#[test]
fn uncontrolled_window_violates() {
    let (_, m) = run(Case::Baseline, &CaseConfig::default());
    assert!(m.nvv > 0, "stress window should need control");
    assert_eq!(m.ntc, 0);
    assert_eq!(m.total_cost, 0.0);
}

#[test]
fn full_visibility_clears_optimization_limits() {
    // control every step so no drift accumulates between instants; the
    // reporting band allows only the linearization error of one step
    let mut cfg = CaseConfig {
        control_interval_min: 1,
        ..CaseConfig::default()
    };
    cfg.report_limits = (cfg.opt_limits.0 - 1e-6, cfg.opt_limits.1 + 1e-6);
    let (trace, m) = run(Case::A, &cfg);
    assert_eq!(m.nvv, 0, "mvvm {}", m.mvvm);
    assert!(trace.max_balance_residual <= 1e-6);
}

#[test]
fn correction_exact_at_secondaries() {
    let f = common::fixture();
    let (trace, _) = run(Case::D, &CaseConfig::default());
    assert!(!trace.estimates.is_empty());
    for rec in &trace.estimates {
        for &p in &f.trained.estimator.regulator_secondary {
            assert_eq!(rec.estimated[p], rec.actual[p]);
        }
    }
}

#[test]
fn controlled_cases_balance_and_respect_capacity() {
    let f = common::fixture();
    for case in [Case::B, Case::C, Case::D] {
        let (trace, _) = run(case, &CaseConfig::default());
        assert!(trace.max_balance_residual <= 1e-6);
        assert!(trace.skipped.is_empty());
        for (q, p) in trace.pv_kvar.iter().zip(&trace.pv_kw) {
            for (k, pv) in f.model.pv_plants().iter().enumerate() {
                assert!(q[k].abs() <= pv.excess_capacity_kvar(p[k]) + 1e-9);
            }
        }
        let reg = f.model.regulators();
        for taps in &trace.taps {
            for (t, r) in taps.iter().zip(reg) {
                assert!(*t >= r.tap_min && *t <= r.tap_max);
            }
        }
    }
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for i in 0..2 {
        let (_, m) = run(Case::D, &CaseConfig::default());
        let p = dir.path().join(format!("m{i}.csv"));
        write_metrics_csv(&p, &[], &[(Vec::new(), m)]).unwrap();
        bytes.push(std::fs::read(&p).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn experiment_outputs() {
    let f = common::fixture();
    let eval = synthetic_profiles(&f.model, &ProfileSpec::evaluation(1, 99)).slice(480, 960);
    let inputs = ExperimentInputs {
        model: &f.model,
        history: &f.history,
        evaluation: &eval,
        simulation: &stress().slice(0, 120),
        estimator: Some(&f.trained.estimator),
    };
    let cfg = ExperimentConfig {
        random_seeds: vec![1, 2],
        eval_stride: 20,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();

    let r = run_experiment(ExperimentKind::DeadbandSweep, &inputs, &cfg, dir.path()).unwrap();
    assert_eq!(r.metrics.len(), 6);
    let text = std::fs::read_to_string(dir.path().join("deadband_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("case_id,bandwidth_v,case,mvvm_pu,nvv,ntc,q_cost,t_cost,total_cost"));

    let r = run_experiment(ExperimentKind::CaseMatrix, &inputs, &cfg, dir.path()).unwrap();
    assert_eq!(r.metrics.len(), 5);
    let text = std::fs::read_to_string(dir.path().join("case_matrix.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), MetricsReport::HEADER.join(","));

    let r = run_experiment(ExperimentKind::SelectionComparison, &inputs, &cfg, dir.path()).unwrap();
    assert_eq!(r.errors.len(), 3);
    let hist = std::fs::read_to_string(dir.path().join("selection_histogram.csv")).unwrap();
    assert_eq!(hist.lines().next().unwrap(), "bin_lo,bin_hi,guided,random-1,random-2");
    let counts: Vec<u64> = r.errors.iter().map(|e| e.1.count as u64).collect();
    assert!(counts.iter().all(|c| *c == counts[0]));

    let r = run_experiment(ExperimentKind::CorrectionComparison, &inputs, &cfg, dir.path()).unwrap();
    assert_eq!(r.errors.len(), 2);
    assert!(dir.path().join("correction_histogram.csv").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "correction-comparison");
    assert_eq!(manifest["feeder_sha256"].as_str().unwrap().len(), 64);
}
