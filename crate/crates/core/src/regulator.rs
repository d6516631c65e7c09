//! Local regulator controller: voltage setpoint, bandwidth and time delay,
//! plus translation of a desired tap change into a setpoint.
//!
//! Voltages here are on a 120 V base.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;

pub const BASE_VOLTS: f64 = 120.0;
pub const DEFAULT_BANDWIDTH: f64 = 4.0;
pub const SETPOINT_WINDOW: (f64, f64) = (110.0, 130.0);

/// How the band offset in the setpoint formula is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetpointRule {
    /// Offset `B/2 − step/2`: the desired tap is the first one inside the
    /// new band.
    #[default]
    HalfStep,
    /// Offset `B/2 − T/2` with `T` the commanded tap position taken as a
    /// plain number.
    LiteralTap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetpointCommand {
    pub regulator: String,
    /// Setpoint, volts.
    pub v_target: f64,
    /// Bandwidth, volts.
    pub bandwidth: f64,
    pub issued_at: usize,
}

impl SetpointCommand {
    pub fn in_band(&self, volts: f64) -> bool {
        (volts - self.v_target).abs() <= self.bandwidth / 2.0
    }
}

/// Setpoint for a tap change `dt`, given the expected post-control secondary
/// voltage `v_s1_pu`. `tap_step` is in volts; `target_tap` is only read by
/// [`SetpointRule::LiteralTap`].
pub fn tap_to_setpoint(
    regulator: &str,
    dt: i32,
    v_s1_pu: f64,
    bandwidth: f64,
    tap_step: f64,
    rule: SetpointRule,
    target_tap: i32,
    issued_at: usize,
) -> Result<SetpointCommand> {
    if !(bandwidth > tap_step) {
        return Err(Error::Validation(format!(
            "bandwidth {bandwidth} V must exceed the tap step {tap_step} V"
        )));
    }
    let v_s1 = v_s1_pu * BASE_VOLTS;
    let offset = match rule {
        SetpointRule::HalfStep => bandwidth / 2.0 - tap_step / 2.0,
        SetpointRule::LiteralTap => bandwidth / 2.0 - target_tap as f64 / 2.0,
    };
    let v_target = match dt.signum() {
        0 => v_s1,
        1 => v_s1 + offset,
        _ => v_s1 - offset,
    };
    if !(SETPOINT_WINDOW.0..=SETPOINT_WINDOW.1).contains(&v_target) {
        return Err(Error::Validation(format!(
            "setpoint {v_target:.3} V for '{regulator}' is outside {}..{} V",
            SETPOINT_WINDOW.0, SETPOINT_WINDOW.1
        )));
    }
    Ok(SetpointCommand {
        regulator: regulator.to_string(),
        v_target,
        bandwidth,
        issued_at,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulatorRuntimeState {
    pub tap: i32,
    pub tap_min: i32,
    pub tap_max: i32,
    pub command: Option<SetpointCommand>,
    /// Consecutive out-of-band steps.
    pub timer: u32,
    /// Steps out of band before a tap move.
    pub delay: u32,
    /// Set when a move was demanded past the tap range.
    pub at_limit: bool,
}

impl RegulatorRuntimeState {
    pub fn new(tap: i32, tap_min: i32, tap_max: i32, delay: u32) -> Result<Self> {
        if !(tap_min..=tap_max).contains(&tap) {
            return Err(Error::InvalidState(format!("tap {tap} outside [{tap_min}, {tap_max}]")));
        }
        Ok(Self {
            tap,
            tap_min,
            tap_max,
            command: None,
            timer: 0,
            delay: delay.max(1),
            at_limit: false,
        })
    }

    pub fn set_command(&mut self, command: SetpointCommand) {
        self.command = Some(command);
        self.timer = 0;
        self.at_limit = false;
    }

    /// One controller step with the measured secondary voltage in volts.
    /// Returns the tap move, at most one step.
    pub fn step(&mut self, measured: f64) -> i32 {
        let Some(cmd) = &self.command else {
            return 0;
        };
        if cmd.in_band(measured) {
            self.timer = 0;
            self.at_limit = false;
            return 0;
        }
        self.timer += 1;
        if self.timer < self.delay {
            return 0;
        }
        let dir = if measured < cmd.v_target { 1 } else { -1 };
        let next = self.tap + dir;
        if next < self.tap_min || next > self.tap_max {
            self.at_limit = true;
            return 0;
        }
        self.tap = next;
        self.timer = 0;
        dir
    }
}

pub fn step_local_control(state: &RegulatorRuntimeState, measured: f64) -> (RegulatorRuntimeState, i32) {
    let mut next = state.clone();
    let d = next.step(measured);
    (next, d)
}

/// Time delays coordinated along cascades: a regulator below `d` others
/// waits until they can have finished `max_moves` steps each.
pub fn coordinated_delays(model: &FeederModel, base: u32, max_moves: u32) -> Vec<u32> {
    let upstream = model.upstream_regulator_map();
    (0..model.regulators().len())
        .map(|r| {
            let mut depth = 0;
            let mut cur = upstream[model.regulator_primary_node(r)];
            while let Some(u) = cur {
                depth += 1;
                cur = upstream[model.regulator_primary_node(u)];
            }
            let base = base.max(1);
            base + depth * base * (max_moves + 1)
        })
        .collect()
}
