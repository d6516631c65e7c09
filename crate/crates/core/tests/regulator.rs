use proptest::prelude::*;
use voltvar_core::feeder::FeederModel;
use voltvar_core::powerflow::{solve, InjectionState};
use voltvar_core::regulator::{tap_to_setpoint, RegulatorRuntimeState, SetpointRule, BASE_VOLTS};
use voltvar_core::synth::tutorial_feeder;

fn secondary_volts(model: &FeederModel, st: &InjectionState) -> f64 {
    solve(model, st).unwrap().magnitudes[model.regulator_secondary_node(0)] * BASE_VOLTS
}

/// Issue the command for `dt` and run the controller against the power
/// flow until it settles; returns the final tap and the number of moves.
fn settle(load: f64, pv: f64, t0: i32, dt: i32, bandwidth: f64, delay: u32) -> (i32, u32) {
    let model = tutorial_feeder();
    let mut st = InjectionState::base(&model);
    for v in st.load_kw.iter_mut().chain(st.load_kvar.iter_mut()) {
        *v *= load;
    }
    st.pv_kw[0] = pv * model.pv_plants()[0].kva;
    st.taps = vec![t0 + dt];
    let v_s1 = secondary_volts(&model, &st) / BASE_VOLTS;
    st.taps = vec![t0];
    let reg = &model.regulators()[0];
    let cmd = tap_to_setpoint("vr", dt, v_s1, bandwidth, reg.tap_step * BASE_VOLTS, SetpointRule::HalfStep, t0 + dt, 0)
        .unwrap();
    let mut c = RegulatorRuntimeState::new(t0, reg.tap_min, reg.tap_max, delay).unwrap();
    c.set_command(cmd);
    let mut moves = 0;
    for _ in 0..(20 * delay + 40) {
        let d = c.step(secondary_volts(&model, &st));
        moves += d.unsigned_abs();
        st.taps = vec![c.tap];
    }
    (c.tap, moves)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn command_lands_on_target(
        load in 0.3f64..1.2,
        pv in 0.0f64..0.9,
        t0 in -6i32..=6,
        dt in -2i32..=2,
        bw in prop::sample::select(vec![2.0, 3.0, 4.0]),
        delay in 1u32..4,
    ) {
        let (tap, moves) = settle(load, pv, t0, dt, bw, delay);
        prop_assert_eq!(tap, t0 + dt);
        prop_assert_eq!(moves, dt.unsigned_abs());
    }

    #[test]
    fn hold_command_ignores_small_drift(v in 118.0f64..122.0, drift in -0.95f64..0.95, bw in 2.0f64..4.0) {
        let cmd = tap_to_setpoint("vr", 0, v / BASE_VOLTS, bw, 0.75, SetpointRule::HalfStep, 0, 0).unwrap();
        let mut c = RegulatorRuntimeState::new(0, -16, 16, 1).unwrap();
        c.set_command(cmd);
        for i in 0..50 {
            let wobble = drift * (i as f64 * 0.7).sin() * bw / 2.0;
            prop_assert_eq!(c.step(v + wobble), 0);
        }
        prop_assert_eq!(c.tap, 0);
    }
}

#[test]
fn setpoint_window_enforced() {
    assert!(tap_to_setpoint("vr", 1, 1.09, 4.0, 0.75, SetpointRule::HalfStep, 1, 0).is_err());
    assert!(tap_to_setpoint("vr", -1, 0.915, 4.0, 0.75, SetpointRule::HalfStep, -1, 0).is_err());
}
