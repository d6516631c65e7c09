use std::time::Instant;

use num_complex::Complex64;
use proptest::prelude::*;
use voltvar_core::feeder::{load_feeder, FeederModel};
use voltvar_core::powerflow::{solve, InjectionState};
use voltvar_core::synth::{test_feeder, tutorial_feeder};

const TWO_BUS: &str = r#"{
  "name": "two-bus",
  "buses": [
    { "id": "s", "phases": ["a", "b", "c"], "base_kv": 12.47 },
    { "id": "r", "phases": ["a", "b", "c"], "base_kv": 12.47 }
  ],
  "lines": [{ "id": "l", "from": "s", "to": "r", "length_km": 1.0,
    "z": [[[1.5552, 3.1104], [0, 0], [0, 0]], [[0, 0], [1.5552, 3.1104], [0, 0]], [[0, 0], [0, 0], [1.5552, 3.1104]]] }],
  "loads": [
    { "id": "la", "bus": "r", "phase": "a", "kw": 400.0, "kvar": 100.0 },
    { "id": "lb", "bus": "r", "phase": "b", "kw": 400.0, "kvar": 100.0 },
    { "id": "lc", "bus": "r", "phase": "c", "kw": 400.0, "kvar": 100.0 }
  ],
  "source": { "bus": "s", "voltage_pu": [1.0, 1.0, 1.0] }
}"#;

// receiving-end voltage of a single branch feeding constant power s
fn closed_form(z: Complex64, s: Complex64) -> f64 {
    let b = 2.0 * (s * z.conj()).re - 1.0;
    let c = s.norm_sqr() * z.norm_sqr();
    let u = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
    (Complex64::new(u, 0.0) + s * z.conj()).norm()
}

#[test]
fn two_bus_closed_form() {
    let model = FeederModel::from_json(TWO_BUS).unwrap();
    let sol = solve(&model, &InjectionState::base(&model)).unwrap();
    let zb = (12470.0f64 / 3f64.sqrt()).powi(2) / 1e6;
    let z = Complex64::new(1.5552 / zb, 3.1104 / zb);
    let expect = closed_form(z, Complex64::new(0.4, 0.1));
    let r = model.bus_index("r").unwrap();
    for ph in 0..3 {
        let got = sol.magnitudes[r * 3 + ph];
        assert!((got - expect).abs() < 1e-8, "phase {ph}: {got} vs {expect}");
    }
}

#[test]
fn bundled_feeders_match_generators() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../feeders");
    let t = load_feeder(format!("{dir}/tutorial.json")).unwrap();
    assert_eq!(t.data(), tutorial_feeder().data());
    let s = load_feeder(format!("{dir}/synthetic-471.json")).unwrap();
    assert_eq!(s.data(), test_feeder().data());
}

#[test]
fn solve_is_fast() {
    let model = test_feeder();
    let mut st = InjectionState::base(&model);
    st.pv_kw = model.pv_plants().iter().map(|p| 0.8 * p.kva).collect();
    let t = Instant::now();
    for _ in 0..20 {
        solve(&model, &st).unwrap();
    }
    assert!(t.elapsed().as_secs_f64() / 20.0 < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn balance_holds(load in 0.1f64..1.3, pv in 0.0f64..1.0, q in -1.0f64..1.0, tap in -4i32..=4) {
        let model = test_feeder();
        let mut st = InjectionState::base(&model);
        for (v, l) in st.load_kw.iter_mut().zip(model.loads()) {
            *v = l.kw * load;
        }
        for (v, l) in st.load_kvar.iter_mut().zip(model.loads()) {
            *v = l.kvar * load;
        }
        for (k, p) in model.pv_plants().iter().enumerate() {
            st.pv_kw[k] = p.kva * pv;
            st.pv_kvar[k] = q * p.excess_capacity_kvar(st.pv_kw[k]);
        }
        st.taps = vec![tap; model.regulators().len()];
        let sol = solve(&model, &st).unwrap();
        for r in sol.balance.residual() {
            prop_assert!(r <= 1e-6, "residual {r}");
        }
        prop_assert!(sol.magnitudes.iter().all(|v| v.is_finite() && *v > 0.8 && *v < 1.2));
    }

    #[test]
    fn tap_raise_lifts_downstream(tap in -8i32..8) {
        let model = tutorial_feeder();
        let mut st = InjectionState::base(&model);
        st.taps = vec![tap];
        let lo = solve(&model, &st).unwrap();
        st.taps = vec![tap + 1];
        let hi = solve(&model, &st).unwrap();
        for i in 0..model.node_count() {
            if model.is_downstream_of(i, 0) {
                prop_assert!(hi.magnitudes[i] > lo.magnitudes[i]);
            } else {
                prop_assert!((hi.magnitudes[i] - lo.magnitudes[i]).abs() < 1e-3);
            }
        }
    }
}
