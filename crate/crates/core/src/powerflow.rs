//! Unbalanced backward/forward sweep power flow for radial feeders.
//!
//! Loads are constant-PQ, PV plants are negative PQ injections split evenly
//! across their phases, and regulators are ideal ratio devices
//! (`V_sec = a·V_pri`, `I_pri = a·I_sec`, `a = 1 + tap·step`).
//! All internal quantities are per unit on the bus line-to-neutral base and
//! a 1 MVA per-phase power base.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, ParentEdge, Phase, POWER_BASE_VA};

const KW_PER_PU: f64 = POWER_BASE_VA / 1000.0;

/// Controllable and exogenous injections for one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionState {
    /// Active power per load (model order), kW.
    pub load_kw: Vec<f64>,
    pub load_kvar: Vec<f64>,
    /// Active output per PV plant, kW (all phases together).
    pub pv_kw: Vec<f64>,
    /// Reactive injection per PV plant, kvar (positive = injection).
    pub pv_kvar: Vec<f64>,
    /// Tap position per regulator.
    pub taps: Vec<i32>,
}

impl InjectionState {
    /// Base loads from the model, no PV, initial taps.
    pub fn base(model: &FeederModel) -> Self {
        Self {
            load_kw: model.loads().iter().map(|l| l.kw).collect(),
            load_kvar: model.loads().iter().map(|l| l.kvar).collect(),
            pv_kw: vec![0.0; model.pv_plants().len()],
            pv_kvar: vec![0.0; model.pv_plants().len()],
            taps: model.initial_taps(),
        }
    }

    pub fn validate(&self, model: &FeederModel) -> Result<()> {
        let n_load = model.loads().len();
        let n_pv = model.pv_plants().len();
        let n_reg = model.regulators().len();
        if self.load_kw.len() != n_load || self.load_kvar.len() != n_load {
            return Err(Error::InvalidState(format!("expected {n_load} load entries")));
        }
        if self.pv_kw.len() != n_pv || self.pv_kvar.len() != n_pv {
            return Err(Error::InvalidState(format!("expected {n_pv} PV entries")));
        }
        if self.taps.len() != n_reg {
            return Err(Error::InvalidState(format!("expected {n_reg} tap entries")));
        }
        for (v, l) in self.load_kw.iter().chain(&self.load_kvar).zip(model.loads().iter().cycle()) {
            if !v.is_finite() {
                return Err(Error::InvalidState(format!("load '{}' power not finite", l.id)));
            }
        }
        for (k, pv) in model.pv_plants().iter().enumerate() {
            let p = self.pv_kw[k];
            let q = self.pv_kvar[k];
            if !p.is_finite() || !q.is_finite() || p < 0.0 || p > pv.kva * (1.0 + 1e-9) {
                return Err(Error::InvalidState(format!(
                    "pv plant '{}' active output {p} kW outside [0, {}]",
                    pv.id, pv.kva
                )));
            }
            let qmax = pv.excess_capacity_kvar(p);
            if q.abs() > qmax + 1e-6 * pv.kva.max(1.0) {
                return Err(Error::InvalidState(format!(
                    "pv plant '{}' reactive power {q} kvar exceeds excess capacity {qmax} kvar",
                    pv.id
                )));
            }
        }
        for (r, reg) in model.regulators().iter().enumerate() {
            let t = self.taps[r];
            if t < reg.tap_min || t > reg.tap_max {
                return Err(Error::InvalidState(format!(
                    "regulator '{}' tap {t} outside [{}, {}]",
                    reg.id, reg.tap_min, reg.tap_max
                )));
            }
        }
        Ok(())
    }
}

/// Power measurements available to the online estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    /// Per-phase active power delivered at the feeder head, kW.
    pub head_kw: [f64; 3],
    pub head_kvar: [f64; 3],
    /// Per-plant active output, kW.
    pub pv_kw: Vec<f64>,
    pub pv_kvar: Vec<f64>,
}

impl Measurements {
    /// Flattened measurement vector: `P_a, Q_a, P_b, Q_b, P_c, Q_c`, then
    /// `P_k, Q_k` for every plant.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + 2 * self.pv_kw.len());
        for p in 0..3 {
            v.push(self.head_kw[p]);
            v.push(self.head_kvar[p]);
        }
        for (p, q) in self.pv_kw.iter().zip(&self.pv_kvar) {
            v.push(*p);
            v.push(*q);
        }
        v
    }

    /// Total feeder-head reactive power over all phases, kvar.
    pub fn head_total_kvar(&self) -> f64 {
        self.head_kvar.iter().sum()
    }

    pub fn head_total_kw(&self) -> f64 {
        self.head_kw.iter().sum()
    }
}

/// Channel names matching [`Measurements::to_vector`].
pub fn measurement_channels(model: &FeederModel) -> Vec<String> {
    let mut names = Vec::new();
    for ph in Phase::ALL {
        names.push(format!("head_p_{ph}"));
        names.push(format!("head_q_{ph}"));
    }
    for pv in model.pv_plants() {
        names.push(format!("{}_p", pv.id));
        names.push(format!("{}_q", pv.id));
    }
    names
}

/// Per-phase power balance terms in pu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBalance {
    pub source: [Complex64; 3],
    pub load: [Complex64; 3],
    pub pv: [Complex64; 3],
    pub losses: [Complex64; 3],
}

impl PowerBalance {
    /// |source − (load − pv + losses)| per phase.
    pub fn residual(&self) -> [f64; 3] {
        let mut r = [0.0; 3];
        for p in 0..3 {
            r[p] = (self.source[p] - (self.load[p] - self.pv[p] + self.losses[p])).norm();
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    /// Complex voltage per node, pu on the local base.
    pub voltages: Vec<Complex64>,
    pub magnitudes: Vec<f64>,
    pub measurements: Measurements,
    pub balance: PowerBalance,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl VoltageSolution {
    /// CSV dump: node, phase, |V| pu, angle in degrees.
    pub fn to_csv(&self, model: &FeederModel) -> String {
        let mut out = String::from("bus,phase,vmag_pu,angle_deg\n");
        for (i, n) in model.nodes().iter().enumerate() {
            let v = self.voltages[i];
            let _ = writeln!(out, "{},{},{:.10},{:.6}", n.bus, n.phase, v.norm(), v.arg().to_degrees());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Maximum per-node power mismatch, pu.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Solve with default options.
pub fn solve(model: &FeederModel, state: &InjectionState) -> Result<VoltageSolution> {
    solve_with(model, state, &SolverOptions::default())
}

pub fn solve_with(
    model: &FeederModel,
    state: &InjectionState,
    opts: &SolverOptions,
) -> Result<VoltageSolution> {
    state.validate(model)?;
    let n = model.node_count();
    let nb = model.buses().len();

    // net specified power per node (load − pv), pu
    let mut load_pu = vec![Complex64::new(0.0, 0.0); n];
    let mut pv_pu = vec![Complex64::new(0.0, 0.0); n];
    for (i, l) in model.loads().iter().enumerate() {
        let b = model.bus_index(&l.bus).expect("validated");
        let node = model.node_at(b, l.phase).expect("validated");
        load_pu[node] += Complex64::new(state.load_kw[i], state.load_kvar[i]) / KW_PER_PU;
    }
    for (k, pv) in model.pv_plants().iter().enumerate() {
        let b = model.bus_index(&pv.bus).expect("validated");
        let share = 1.0 / pv.phases.len() as f64;
        for ph in &pv.phases {
            let node = model.node_at(b, *ph).expect("validated");
            pv_pu[node] += Complex64::new(state.pv_kw[k], state.pv_kvar[k]) * share / KW_PER_PU;
        }
    }
    let s_net: Vec<Complex64> = load_pu.iter().zip(&pv_pu).map(|(l, g)| l - g).collect();

    let ratio: Vec<f64> = model
        .regulators()
        .iter()
        .zip(&state.taps)
        .map(|(r, t)| r.ratio(*t))
        .collect();
    let branch_ratio = |br: usize, ph: Phase| -> f64 {
        model.regulator_branches()[br].members[ph.index()].map_or(1.0, |r| ratio[r])
    };

    // per-unit series impedance per line
    let z_pu: Vec<[[Complex64; 3]; 3]> = model
        .lines()
        .iter()
        .map(|l| {
            let zb = model.z_base(model.bus_index(&l.from).expect("validated"));
            let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
            for (i, row) in z.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = l.impedance(Phase::ALL[i], Phase::ALL[j]) / zb;
                }
            }
            z
        })
        .collect();

    let src = model.source_bus();
    let src_v = model.source().voltage_pu;
    let order = model.bus_order();
    let bus_phases: Vec<&[Phase]> = model.buses().iter().map(|b| b.phases.as_slice()).collect();

    // flat start, propagated through regulator ratios at the initial taps
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for &b in order {
        for &ph in bus_phases[b] {
            let node = model.node_at(b, ph).expect("phase present");
            v[node] = if b == src {
                Complex64::from_polar(src_v[ph.index()], ph.nominal_angle())
            } else {
                let (p, e) = model.parent(b).expect("non-source");
                let up = v[model.node_at(p, ph).expect("validated subset")];
                match e {
                    ParentEdge::Line(_) => up,
                    ParentEdge::Regulator(br) => up * branch_ratio(br, ph),
                }
            };
        }
    }

    let mut inj = vec![Complex64::new(0.0, 0.0); n];
    // current entering each bus from its parent edge, on the bus side
    let mut bus_current = vec![[Complex64::new(0.0, 0.0); 3]; nb];

    let backward = |v: &[Complex64], inj: &mut [Complex64], bus_current: &mut [[Complex64; 3]]| {
        for node in 0..n {
            inj[node] = if s_net[node] == Complex64::new(0.0, 0.0) {
                Complex64::new(0.0, 0.0)
            } else {
                (s_net[node] / v[node]).conj()
            };
        }
        for &b in order.iter().rev() {
            let mut j = [Complex64::new(0.0, 0.0); 3];
            for &ph in bus_phases[b] {
                j[ph.index()] = inj[model.node_at(b, ph).expect("phase present")];
            }
            for &c in model.children(b) {
                let (_, e) = model.parent(c).expect("child has parent");
                for &ph in bus_phases[c] {
                    let i = ph.index();
                    j[i] += match e {
                        ParentEdge::Line(_) => bus_current[c][i],
                        ParentEdge::Regulator(br) => bus_current[c][i] * branch_ratio(br, ph),
                    };
                }
            }
            bus_current[b] = j;
        }
    };

    let forward = |v: &mut [Complex64], bus_current: &[[Complex64; 3]]| {
        for &b in &order[1..] {
            let (p, e) = model.parent(b).expect("non-source");
            for &ph in bus_phases[b] {
                let node = model.node_at(b, ph).expect("phase present");
                let up = v[model.node_at(p, ph).expect("validated subset")];
                v[node] = match e {
                    ParentEdge::Line(l) => {
                        let mut drop = Complex64::new(0.0, 0.0);
                        for &q in bus_phases[b] {
                            drop += z_pu[l][ph.index()][q.index()] * bus_current[b][q.index()];
                        }
                        up - drop
                    }
                    ParentEdge::Regulator(br) => up * branch_ratio(br, ph),
                };
            }
        }
    };

    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;
    let mut worst = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        backward(&v, &mut inj, &mut bus_current);
        forward(&mut v, &bus_current);
        max_mismatch = 0.0;
        for node in 0..n {
            let m = (v[node] * inj[node].conj() - s_net[node]).norm();
            if m > max_mismatch {
                max_mismatch = m;
                worst = node;
            }
        }
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= opts.tolerance {
            break;
        }
    }
    if !(max_mismatch <= opts.tolerance) {
        return Err(Error::NonConvergence {
            iterations,
            worst_node: model.nodes()[worst].to_string(),
            mismatch: max_mismatch,
        });
    }

    // flows consistent with the final voltages
    backward(&v, &mut inj, &mut bus_current);

    let mut balance = PowerBalance {
        source: [Complex64::new(0.0, 0.0); 3],
        load: [Complex64::new(0.0, 0.0); 3],
        pv: [Complex64::new(0.0, 0.0); 3],
        losses: [Complex64::new(0.0, 0.0); 3],
    };
    for &ph in bus_phases[src] {
        let i = ph.index();
        let node = model.node_at(src, ph).expect("phase present");
        balance.source[i] = v[node] * bus_current[src][i].conj();
    }
    for node in 0..n {
        let i = model.nodes()[node].phase.index();
        balance.load[i] += load_pu[node];
        balance.pv[i] += pv_pu[node];
    }
    for &b in &order[1..] {
        let (p, e) = model.parent(b).expect("non-source");
        if let ParentEdge::Line(_) = e {
            for &ph in bus_phases[b] {
                let i = ph.index();
                let vf = v[model.node_at(p, ph).expect("subset")];
                let vt = v[model.node_at(b, ph).expect("present")];
                balance.losses[i] += (vf - vt) * bus_current[b][i].conj();
            }
        }
    }

    let measurements = Measurements {
        head_kw: balance.source.map(|s| s.re * KW_PER_PU),
        head_kvar: balance.source.map(|s| s.im * KW_PER_PU),
        pv_kw: state.pv_kw.clone(),
        pv_kvar: state.pv_kvar.clone(),
    };

    Ok(VoltageSolution {
        magnitudes: v.iter().map(|x| x.norm()).collect(),
        voltages: v,
        measurements,
        balance,
        iterations,
        max_mismatch,
    })
}
