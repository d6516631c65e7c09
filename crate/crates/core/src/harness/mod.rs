//! Quasi-static time-series simulation of the control cases, metrics and
//! experiment drivers.
//!
//! Cases:
//! * `Baseline`: no volt-var control, PV at unity power factor, taps held.
//! * `A`: true voltages at every node, perturbation sensitivities, taps set
//!   directly.
//! * `B`: estimated voltages and sensitivities at critical nodes, taps set
//!   directly.
//! * `C`: as `B`, taps reached through setpoints and local controllers.
//! * `D`: as `C`, with measurement correction of the estimates.

mod experiment;
mod metrics;

pub use experiment::{
    evaluate_estimator, run_experiment, train_estimator, ErrorHistogram, ErrorSummary, EstimationErrors,
    ExperimentConfig, ExperimentInputs, ExperimentKind, ExperimentReport, RunManifest, SelectionMethod,
    TrainConfig, TrainedModel,
};
pub use metrics::{compute_metrics, rolling_mean, write_metrics_csv, MetricsReport};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::VoltageEstimator;
use crate::feeder::FeederModel;
use crate::optimizer::{solve_cvvc, solve_cvvc_relaxed, Branch, ControlPlan, CvvcProblem};
use crate::powerflow::{solve_with, InjectionState, SolverOptions, VoltageSolution};
use crate::profiles::Profiles;
use crate::regulator::{coordinated_delays, tap_to_setpoint, RegulatorRuntimeState, SetpointRule, BASE_VOLTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    Baseline,
    A,
    B,
    C,
    D,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::Baseline, Case::A, Case::B, Case::C, Case::D];

    pub fn needs_estimator(self) -> bool {
        matches!(self, Case::B | Case::C | Case::D)
    }

    pub fn uses_local_control(self) -> bool {
        matches!(self, Case::C | Case::D)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Baseline => "baseline",
            Case::A => "A",
            Case::B => "B",
            Case::C => "C",
            Case::D => "D",
        })
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Case::A),
            "B" => Ok(Case::B),
            "C" => Ok(Case::C),
            "D" => Ok(Case::D),
            "BASELINE" | "NONE" => Ok(Case::Baseline),
            other => Err(Error::Config(format!("unknown case '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseConfig {
    pub case: Case,
    pub control_interval_min: usize,
    pub resolution_min: usize,
    /// Regulator bandwidth, volts on 120 V.
    pub bandwidth_v: f64,
    pub opt_limits: (f64, f64),
    pub report_limits: (f64, f64),
    pub tap_cost: f64,
    pub q_cost: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_tap_change: i32,
    /// Case A sensitivity perturbations.
    pub perturbation_kvar: f64,
    pub perturbation_taps: i32,
    /// Local controller delay of the first regulator on a path, simulation
    /// steps; cascaded ones wait longer (see [`coordinated_delays`]).
    pub delay_steps: u32,
    pub setpoint_rule: SetpointRule,
    /// Rolling-average window for the metrics, samples.
    pub rolling_window: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            case: Case::D,
            control_interval_min: 5,
            resolution_min: 1,
            bandwidth_v: 4.0,
            opt_limits: (0.975, 1.04),
            report_limits: (0.965, 1.05),
            tap_cost: 0.14,
            q_cost: 8e-4,
            alpha: 1.0,
            beta: 1e4,
            max_tap_change: 2,
            perturbation_kvar: 10.0,
            perturbation_taps: 1,
            delay_steps: 1,
            setpoint_rule: SetpointRule::HalfStep,
            rolling_window: 10,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

impl CaseConfig {
    pub fn with_case(&self, case: Case) -> Self {
        Self { case, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.resolution_min == 0 || self.control_interval_min == 0 {
            return bad("resolution and control interval must be positive".into());
        }
        if self.control_interval_min % self.resolution_min != 0 {
            return bad(format!(
                "control interval {} min is not a multiple of the resolution {} min",
                self.control_interval_min, self.resolution_min
            ));
        }
        let (lo, hi) = self.opt_limits;
        let (rlo, rhi) = self.report_limits;
        if !(rlo < lo && lo < hi && hi < rhi) {
            return bad(format!(
                "optimization limits ({lo}, {hi}) must lie strictly inside reporting limits ({rlo}, {rhi})"
            ));
        }
        if !(self.bandwidth_v > 0.0) {
            return bad("bandwidth must be positive".into());
        }
        if self.rolling_window == 0 {
            return bad("rolling window must be at least one sample".into());
        }
        if self.perturbation_kvar <= 0.0 || self.perturbation_taps <= 0 {
            return bad("perturbation sizes must be positive".into());
        }
        Ok(())
    }

    fn steps_per_interval(&self) -> usize {
        self.control_interval_min / self.resolution_min
    }
}

/// One optimization instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub step: usize,
    pub branch: Branch,
    pub q_setpoint: Vec<f64>,
    pub tap_delta: Vec<i32>,
    pub objective: f64,
    /// Issued voltage setpoint per regulator, volts (cases C and D).
    pub setpoints: Vec<f64>,
}

/// Estimates used at one optimization instant against the power-flow truth,
/// in critical-node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub step: usize,
    pub estimated: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub case: Case,
    pub minutes: Vec<i64>,
    /// `[t][node]`, pu.
    pub voltages: Vec<Vec<f64>>,
    pub pv_kw: Vec<Vec<f64>>,
    pub pv_kvar: Vec<Vec<f64>>,
    /// Taps in effect for each logged solve.
    pub taps: Vec<Vec<i32>>,
    pub initial_taps: Vec<i32>,
    pub controls: Vec<ControlRecord>,
    pub estimates: Vec<EstimateRecord>,
    /// Steps whose power flow failed; the previous voltages were repeated.
    pub skipped: Vec<usize>,
    /// Largest per-phase power-balance residual over logged solves, pu.
    pub max_balance_residual: f64,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    /// Sum of absolute tap moves, counted from the initial taps.
    pub fn tap_changes(&self) -> u64 {
        let mut prev = &self.initial_taps;
        let mut n = 0u64;
        for t in &self.taps {
            n += t.iter().zip(prev).map(|(a, b)| (a - b).unsigned_abs() as u64).sum::<u64>();
            prev = t;
        }
        n
    }

    pub fn write_csv(&self, model: &FeederModel, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["minute".to_string()];
        header.extend(model.regulators().iter().map(|r| format!("tap_{}", r.id)));
        for p in model.pv_plants() {
            header.push(format!("{}_kw", p.id));
            header.push(format!("{}_kvar", p.id));
        }
        header.extend(model.nodes().iter().map(|n| format!("v_{n}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![self.minutes[t].to_string()];
            rec.extend(self.taps[t].iter().map(|v| v.to_string()));
            for k in 0..self.pv_kw[t].len() {
                rec.push(format!("{:.4}", self.pv_kw[t][k]));
                rec.push(format!("{:.4}", self.pv_kvar[t][k]));
            }
            rec.extend(self.voltages[t].iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn capacities(model: &FeederModel, pv_kw: &[f64]) -> Vec<f64> {
    model
        .pv_plants()
        .iter()
        .zip(pv_kw)
        .map(|(p, kw)| p.excess_capacity_kvar(*kw))
        .collect()
}

fn clamp_q(setpoint: &[f64], cap: &[f64]) -> Vec<f64> {
    setpoint.iter().zip(cap).map(|(q, c)| q.clamp(-c, *c)).collect()
}

/// Sensitivities of every node by one-sided perturbation.
fn perturbation_problem(
    model: &FeederModel,
    state: &InjectionState,
    base: &VoltageSolution,
    cfg: &CaseConfig,
) -> Result<CvvcProblem> {
    let n = model.node_count();
    let cap = capacities(model, &state.pv_kw);
    let mut dq = vec![vec![0.0; model.pv_plants().len()]; n];
    for k in 0..model.pv_plants().len() {
        let up = cap[k] - state.pv_kvar[k];
        let down = cap[k] + state.pv_kvar[k];
        let step = if up >= cfg.perturbation_kvar {
            cfg.perturbation_kvar
        } else if down >= cfg.perturbation_kvar {
            -cfg.perturbation_kvar
        } else if up.max(down) > 1e-6 {
            if up >= down {
                up
            } else {
                -down
            }
        } else {
            continue;
        };
        let mut st = state.clone();
        st.pv_kvar[k] += step;
        let sol = solve_with(model, &st, &cfg.solver)?;
        for i in 0..n {
            dq[i][k] = (sol.magnitudes[i] - base.magnitudes[i]) / step;
        }
    }
    let mut dvr = vec![vec![0.0; model.regulators().len()]; n];
    for (r, reg) in model.regulators().iter().enumerate() {
        let step = if state.taps[r] + cfg.perturbation_taps <= reg.tap_max {
            cfg.perturbation_taps
        } else {
            -cfg.perturbation_taps
        };
        let mut st = state.clone();
        st.taps[r] += step;
        let sol = solve_with(model, &st, &cfg.solver)?;
        for i in 0..n {
            dvr[i][r] = (sol.magnitudes[i] - base.magnitudes[i]) / step as f64;
        }
    }
    Ok(problem_shell(
        model,
        state,
        cfg,
        model.nodes().iter().map(|n| n.to_string()).collect(),
        base.magnitudes.clone(),
        dq,
        dvr,
    ))
}

fn problem_shell(
    model: &FeederModel,
    state: &InjectionState,
    cfg: &CaseConfig,
    node_names: Vec<String>,
    v0: Vec<f64>,
    dq: Vec<Vec<f64>>,
    dvr: Vec<Vec<f64>>,
) -> CvvcProblem {
    let cap = capacities(model, &state.pv_kw);
    CvvcProblem {
        node_names,
        v0,
        dq,
        dvr,
        q_now: state.pv_kvar.clone(),
        q_min: cap.iter().map(|c| -c).collect(),
        q_max: cap,
        taps: state.taps.clone(),
        tap_min: model.regulators().iter().map(|r| r.tap_min).collect(),
        tap_max: model.regulators().iter().map(|r| r.tap_max).collect(),
        tap_groups: model.tap_groups(),
        max_tap_change: cfg.max_tap_change,
        v_min: cfg.opt_limits.0,
        v_max: cfg.opt_limits.1,
        tap_cost: cfg.tap_cost,
        q_cost: cfg.q_cost,
        alpha: cfg.alpha,
        beta: cfg.beta,
    }
}

/// Dispatch problem built from the estimator at one instant, plus the
/// voltage estimates it used.
pub fn estimated_problem(
    model: &FeederModel,
    est: &VoltageEstimator,
    state: &InjectionState,
    sol: &VoltageSolution,
    cfg: &CaseConfig,
    corrected: bool,
) -> Result<(CvvcProblem, Vec<f64>)> {
    let m = sol.measurements.to_vector();
    let v = if corrected {
        let sec: Vec<f64> = (0..model.regulators().len())
            .map(|r| sol.magnitudes[model.regulator_secondary_node(r)])
            .collect();
        est.estimate_voltages_corrected(&m, &state.taps, &sec)?.voltages
    } else {
        est.estimate_voltages(&m, &state.taps)?
    };
    let (lo, hi) = est.q_range();
    let q_s = sol.measurements.head_total_kvar().clamp(lo, hi);
    let dq = est.q_sensitivities(q_s)?;
    let dvr = est.tap_sensitivities();
    let names = est.critical.nodes.iter().map(|c| c.node.to_string()).collect();
    Ok((problem_shell(model, state, cfg, names, v.clone(), dq, dvr), v))
}

fn dispatch(problem: &CvvcProblem) -> Result<ControlPlan> {
    match solve_cvvc(problem) {
        Ok(p) => Ok(p),
        Err(Error::Infeasible(msg)) => {
            log::debug!("strict dispatch infeasible ({msg}); relaxing");
            solve_cvvc_relaxed(problem)
        }
        Err(e) => Err(e),
    }
}

/// Simulate one case over the whole profile.
pub fn run_case(
    model: &FeederModel,
    profiles: &Profiles,
    cfg: &CaseConfig,
    estimator: Option<&VoltageEstimator>,
) -> Result<(SimulationTrace, MetricsReport)> {
    cfg.validate()?;
    profiles.check(model)?;
    if profiles.is_empty() {
        return Err(Error::InsufficientData("empty profile".into()));
    }
    let est = if cfg.case.needs_estimator() {
        let e = estimator.ok_or_else(|| Error::Config(format!("case {} needs a trained estimator", cfg.case)))?;
        if e.regression.channels != crate::powerflow::measurement_channels(model)
            || e.baseline_taps().len() != model.regulators().len()
        {
            return Err(Error::Validation("estimator was trained on a different feeder".into()));
        }
        Some(e)
    } else {
        None
    };

    let nr = model.regulators().len();
    let np = model.pv_plants().len();
    let initial_taps = model.initial_taps();
    let mut taps = initial_taps.clone();
    let mut q_set = vec![0.0; np];
    let mut controllers: Vec<RegulatorRuntimeState> = model
        .regulators()
        .iter()
        .zip(coordinated_delays(model, cfg.delay_steps, cfg.max_tap_change.max(0) as u32))
        .map(|(r, d)| RegulatorRuntimeState::new(r.initial_tap, r.tap_min, r.tap_max, d))
        .collect::<Result<_>>()?;

    let steps = profiles.len();
    let mut trace = SimulationTrace {
        case: cfg.case,
        minutes: Vec::with_capacity(steps),
        voltages: Vec::with_capacity(steps),
        pv_kw: Vec::with_capacity(steps),
        pv_kvar: Vec::with_capacity(steps),
        taps: Vec::with_capacity(steps),
        initial_taps,
        controls: Vec::new(),
        estimates: Vec::new(),
        skipped: Vec::new(),
        max_balance_residual: 0.0,
    };
    let every = cfg.steps_per_interval();

    for t in 0..steps {
        let cap = capacities(model, &profiles.pv_kw[t]);
        let mut state = profiles.state_at(t, &clamp_q(&q_set, &cap), &taps);

        if cfg.case != Case::Baseline && t % every == 0 {
            match solve_with(model, &state, &cfg.solver) {
                Ok(sol) => {
                    let problem = match (cfg.case, est) {
                        (Case::A, _) => perturbation_problem(model, &state, &sol, cfg)?,
                        (case, Some(e)) => {
                            let (p, v) = estimated_problem(model, e, &state, &sol, cfg, case == Case::D)?;
                            trace.estimates.push(EstimateRecord {
                                step: t,
                                estimated: v,
                                actual: e.critical.nodes.iter().map(|c| sol.magnitudes[c.index]).collect(),
                            });
                            p
                        }
                        _ => unreachable!("estimator presence checked above"),
                    };
                    let plan = dispatch(&problem)?;
                    q_set = plan.q_setpoint.clone();
                    let mut setpoints = Vec::new();
                    if cfg.case.uses_local_control() {
                        let e = est.expect("checked");
                        for (r, reg) in model.regulators().iter().enumerate() {
                            let dt = plan.tap_delta[r];
                            let v_s1 = plan.predicted[e.regulator_secondary[r]];
                            let cmd = tap_to_setpoint(
                                &reg.id,
                                dt,
                                v_s1,
                                cfg.bandwidth_v,
                                reg.tap_step * BASE_VOLTS,
                                cfg.setpoint_rule,
                                taps[r] + dt,
                                t,
                            )?;
                            setpoints.push(cmd.v_target);
                            controllers[r].set_command(cmd);
                        }
                    } else {
                        for r in 0..nr {
                            taps[r] += plan.tap_delta[r];
                            controllers[r].tap = taps[r];
                        }
                    }
                    trace.controls.push(ControlRecord {
                        step: t,
                        branch: plan.branch,
                        q_setpoint: plan.q_setpoint.clone(),
                        tap_delta: plan.tap_delta.clone(),
                        objective: plan.objective,
                        setpoints,
                    });
                    state = profiles.state_at(t, &clamp_q(&q_set, &cap), &taps);
                }
                Err(e) => {
                    log::warn!("measurement solve failed at step {t}: {e}; control skipped");
                }
            }
        }

        match solve_with(model, &state, &cfg.solver) {
            Ok(sol) => {
                let res = sol.balance.residual().iter().cloned().fold(0.0, f64::max);
                trace.max_balance_residual = trace.max_balance_residual.max(res);
                if cfg.case.uses_local_control() {
                    for (r, c) in controllers.iter_mut().enumerate() {
                        let volts = sol.magnitudes[model.regulator_secondary_node(r)] * BASE_VOLTS;
                        c.step(volts);
                    }
                }
                trace.voltages.push(sol.magnitudes);
            }
            Err(e) => {
                log::warn!("power flow failed at step {t}: {e}; step skipped");
                trace.skipped.push(t);
                let prev = trace.voltages.last().cloned().unwrap_or_else(|| vec![f64::NAN; model.node_count()]);
                trace.voltages.push(prev);
            }
        }
        trace.minutes.push(profiles.minutes[t]);
        trace.pv_kw.push(state.pv_kw.clone());
        trace.pv_kvar.push(state.pv_kvar.clone());
        trace.taps.push(state.taps.clone());
        if cfg.case.uses_local_control() {
            for r in 0..nr {
                taps[r] = controllers[r].tap;
            }
        }
    }
    let report = compute_metrics(&trace, cfg);
    Ok((trace, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{flat_profiles, tutorial_feeder};

    #[test]
    fn case_parsing() {
        assert_eq!("a".parse::<Case>().unwrap(), Case::A);
        assert_eq!("baseline".parse::<Case>().unwrap(), Case::Baseline);
        assert!("E".parse::<Case>().is_err());
    }

    #[test]
    fn config_checks() {
        let mut c = CaseConfig::default();
        c.control_interval_min = 7;
        c.resolution_min = 2;
        assert!(c.validate().is_err());
        let mut c = CaseConfig::default();
        c.opt_limits = (0.96, 1.04);
        assert!(c.validate().is_err());
        assert!(CaseConfig::default().validate().is_ok());
    }

    #[test]
    fn quiescent_case_a() {
        let m = tutorial_feeder();
        let p = flat_profiles(&m, 30, 0.5, 0.0);
        let cfg = CaseConfig::default().with_case(Case::A);
        let (trace, report) = run_case(&m, &p, &cfg, None).unwrap();
        assert_eq!(trace.len(), 30);
        assert_eq!(report.nvv, 0);
        assert_eq!(report.ntc, 0);
        assert_eq!(report.total_cost, 0.0);
        assert_eq!(trace.controls.len(), 6);
        assert!(trace.max_balance_residual < 1e-6);
    }

    #[test]
    fn estimator_required() {
        let m = tutorial_feeder();
        let p = flat_profiles(&m, 5, 0.5, 0.0);
        let cfg = CaseConfig::default().with_case(Case::B);
        assert!(matches!(run_case(&m, &p, &cfg, None), Err(Error::Config(_))));
    }
}
