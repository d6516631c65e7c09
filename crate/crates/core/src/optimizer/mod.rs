//! Centralized volt-var dispatch over PV reactive power and regulator taps.
//!
//! Integer tap changes are enumerated in order of total movement and, for
//! each combination, reactive-power setpoints are found by an LP (strict
//! limits) or a convex QP with squared violation slacks (relaxed limits).

mod lemke;
mod simplex;

pub use lemke::{solve_lcp, solve_qp, LcpOutcome};
pub use simplex::{solve_lp, Cmp, LpOutcome, Row};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_TAP_COMBINATIONS: u64 = 100_000;

fn default_alpha() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    1e4
}

/// One dispatch instance. Voltages in pu, reactive power in kvar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvvcProblem {
    #[serde(default)]
    pub node_names: Vec<String>,
    pub v0: Vec<f64>,
    /// `[node][plant]`, pu per kvar.
    pub dq: Vec<Vec<f64>>,
    /// `[node][regulator]`, pu per tap.
    pub dvr: Vec<Vec<f64>>,
    pub q_now: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub taps: Vec<i32>,
    pub tap_min: Vec<i32>,
    pub tap_max: Vec<i32>,
    /// Regulators that must move together; regulators not listed move alone.
    #[serde(default)]
    pub tap_groups: Vec<Vec<usize>>,
    pub max_tap_change: i32,
    pub v_min: f64,
    pub v_max: f64,
    /// Cost per tap step.
    pub tap_cost: f64,
    /// Cost per kvar of absolute setpoint.
    pub q_cost: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Strict,
    Relaxed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    pub branch: Branch,
    /// Absolute reactive setpoint per plant, kvar.
    pub q_setpoint: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub tap_delta: Vec<i32>,
    /// Violation slack per node, pu; zero on the strict branch.
    pub slack: Vec<f64>,
    pub predicted: Vec<f64>,
    pub q_cost: f64,
    pub tap_cost: f64,
    pub objective: f64,
    /// Tap combinations whose continuous subproblem was solved.
    pub combinations_solved: usize,
}

impl ControlPlan {
    pub fn tap_changes(&self) -> u32 {
        self.tap_delta.iter().map(|d| d.unsigned_abs()).sum()
    }
}

impl CvvcProblem {
    pub fn nodes(&self) -> usize {
        self.v0.len()
    }

    pub fn plants(&self) -> usize {
        self.q_now.len()
    }

    pub fn regulators(&self) -> usize {
        self.taps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k, r) = (self.nodes(), self.plants(), self.regulators());
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.v_min < self.v_max) {
            return bad(format!("voltage limits ({}, {}) are not ordered", self.v_min, self.v_max));
        }
        if self.dq.len() != n || self.dq.iter().any(|row| row.len() != k) {
            return bad(format!("dq must be {n} x {k}"));
        }
        if self.dvr.len() != n || self.dvr.iter().any(|row| row.len() != r) {
            return bad(format!("dvr must be {n} x {r}"));
        }
        if self.q_min.len() != k || self.q_max.len() != k {
            return bad("q bounds must have one entry per plant".into());
        }
        if self.tap_min.len() != r || self.tap_max.len() != r {
            return bad("tap bounds must have one entry per regulator".into());
        }
        if !self.node_names.is_empty() && self.node_names.len() != n {
            return bad("node_names must match v0".into());
        }
        let finite = self.v0.iter().chain(self.dq.iter().flatten()).chain(self.dvr.iter().flatten());
        if finite.chain(&self.q_now).any(|v| !v.is_finite()) {
            return bad("voltages and sensitivities must be finite".into());
        }
        for i in 0..k {
            if !(self.q_min[i] <= self.q_max[i]) {
                return bad(format!("plant {i}: q_min {} > q_max {}", self.q_min[i], self.q_max[i]));
            }
        }
        for i in 0..r {
            if !(self.tap_min[i] <= self.taps[i] && self.taps[i] <= self.tap_max[i]) {
                return bad(format!(
                    "regulator {i}: tap {} outside [{}, {}]",
                    self.taps[i], self.tap_min[i], self.tap_max[i]
                ));
            }
        }
        if self.max_tap_change < 0 {
            return bad("max_tap_change must be non-negative".into());
        }
        if self.tap_cost < 0.0 || self.q_cost < 0.0 || self.alpha <= 0.0 || self.beta <= 0.0 {
            return bad("costs must be non-negative and weights positive".into());
        }
        let mut seen = vec![false; r];
        for g in &self.tap_groups {
            for &m in g {
                if m >= r || seen[m] {
                    return bad(format!("tap group member {m} is invalid or repeated"));
                }
                seen[m] = true;
            }
        }
        Ok(())
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = self.tap_groups.iter().filter(|g| !g.is_empty()).cloned().collect();
        for r in 0..self.regulators() {
            if !groups.iter().any(|g| g.contains(&r)) {
                groups.push(vec![r]);
            }
        }
        groups.sort_by_key(|g| g.iter().copied().min());
        groups
    }

    /// Tap-change vectors in order of total movement, then moves on
    /// lower-numbered regulators first, then lowering before raising.
    pub fn tap_combinations(&self) -> Result<Vec<Vec<i32>>> {
        let groups = self.groups();
        let windows: Vec<(i32, i32)> = groups
            .iter()
            .map(|g| {
                let lo = g
                    .iter()
                    .map(|&r| self.tap_min[r] - self.taps[r])
                    .max()
                    .unwrap_or(0)
                    .max(-self.max_tap_change);
                let hi = g
                    .iter()
                    .map(|&r| self.tap_max[r] - self.taps[r])
                    .min()
                    .unwrap_or(0)
                    .min(self.max_tap_change);
                (lo.min(0), hi.max(0))
            })
            .collect();
        let count = windows
            .iter()
            .try_fold(1u64, |acc, (lo, hi)| acc.checked_mul((hi - lo + 1) as u64))
            .unwrap_or(u64::MAX);
        if count > MAX_TAP_COMBINATIONS {
            return Err(Error::TooManyCombinations(count));
        }
        let mut combos: Vec<Vec<i32>> = vec![vec![0; self.regulators()]];
        for (g, (lo, hi)) in groups.iter().zip(&windows) {
            let mut next = Vec::with_capacity(combos.len() * (hi - lo + 1) as usize);
            for c in &combos {
                for d in *lo..=*hi {
                    let mut c = c.clone();
                    for &r in g {
                        c[r] = d;
                    }
                    next.push(c);
                }
            }
            combos = next;
        }
        combos.sort_by(|a, b| {
            let ta: u32 = a.iter().map(|d| d.unsigned_abs()).sum();
            let tb: u32 = b.iter().map(|d| d.unsigned_abs()).sum();
            let ka: Vec<i64> = a.iter().map(|d| -(d.unsigned_abs() as i64)).collect();
            let kb: Vec<i64> = b.iter().map(|d| -(d.unsigned_abs() as i64)).collect();
            ta.cmp(&tb).then_with(|| ka.cmp(&kb)).then_with(|| a.cmp(b))
        });
        Ok(combos)
    }

    /// Predicted voltage with absolute setpoints `q` and tap change `dt`.
    pub fn predict(&self, q: &[f64], dt: &[i32]) -> Vec<f64> {
        (0..self.nodes())
            .map(|i| {
                self.v0[i]
                    + self.dq[i]
                        .iter()
                        .zip(q.iter().zip(&self.q_now))
                        .map(|(d, (q, q0))| d * (q - q0))
                        .sum::<f64>()
                    + self.dvr[i].iter().zip(dt).map(|(d, t)| d * *t as f64).sum::<f64>()
            })
            .collect()
    }

    fn tap_cost_of(&self, dt: &[i32]) -> f64 {
        self.tap_cost * dt.iter().map(|d| d.unsigned_abs() as f64).sum::<f64>()
    }

    /// Per node: voltage at q = 0 with the tap change applied, and the
    /// reachable range over the setpoint box.
    fn node_ranges(&self, dt: &[i32]) -> Vec<(f64, f64, f64)> {
        let zero = vec![0.0; self.plants()];
        let base = self.predict(&zero, dt);
        base.iter()
            .enumerate()
            .map(|(i, b)| {
                let (mut lo, mut hi) = (*b, *b);
                for k in 0..self.plants() {
                    let (x, y) = (self.dq[i][k] * self.q_min[k], self.dq[i][k] * self.q_max[k]);
                    lo += x.min(y);
                    hi += x.max(y);
                }
                (*b, lo, hi)
            })
            .collect()
    }

    fn plan(&self, branch: Branch, q: Vec<f64>, dt: Vec<i32>, slack: Vec<f64>, solved: usize) -> ControlPlan {
        let predicted = self.predict(&q, &dt);
        let q_cost = self.q_cost * q.iter().map(|v| v.abs()).sum::<f64>();
        let tap_cost = self.tap_cost_of(&dt);
        let objective = match branch {
            Branch::Strict => q_cost + tap_cost,
            Branch::Relaxed => {
                self.alpha * (q_cost + tap_cost) + self.beta * slack.iter().map(|s| s * s).sum::<f64>()
            }
        };
        ControlPlan {
            branch,
            q_plus: q.iter().map(|v| v.max(0.0)).collect(),
            q_minus: q.iter().map(|v| (-v).max(0.0)).collect(),
            q_setpoint: q,
            tap_delta: dt,
            slack,
            predicted,
            q_cost,
            tap_cost,
            objective,
            combinations_solved: solved,
        }
    }

    /// Strict LP for one tap combination: variables `[q⁺; q⁻]`.
    fn strict_subproblem(&self, dt: &[i32]) -> Option<Vec<f64>> {
        let k = self.plants();
        let mut rows = Vec::new();
        for (i, (base, lo, hi)) in self.node_ranges(dt).into_iter().enumerate() {
            if hi < self.v_min || lo > self.v_max {
                return None;
            }
            let mut a = vec![0.0; 2 * k];
            for j in 0..k {
                a[j] = self.dq[i][j];
                a[k + j] = -self.dq[i][j];
            }
            if lo < self.v_min {
                rows.push(Row {
                    a: a.clone(),
                    cmp: Cmp::Ge,
                    b: self.v_min - base,
                });
            }
            if hi > self.v_max {
                rows.push(Row {
                    a,
                    cmp: Cmp::Le,
                    b: self.v_max - base,
                });
            }
        }
        for j in 0..k {
            let mut a = vec![0.0; 2 * k];
            a[j] = 1.0;
            a[k + j] = -1.0;
            rows.push(Row {
                a: a.clone(),
                cmp: Cmp::Le,
                b: self.q_max[j],
            });
            rows.push(Row {
                a,
                cmp: Cmp::Ge,
                b: self.q_min[j],
            });
        }
        let c = vec![self.q_cost; 2 * k];
        match solve_lp(&c, &rows) {
            LpOutcome::Optimal { x, .. } => Some((0..k).map(|j| x[j] - x[k + j]).collect()),
            _ => None,
        }
    }

    /// Relaxed QP for one tap combination: variables `[q⁺; q⁻; s]`.
    fn relaxed_subproblem(&self, dt: &[i32]) -> Option<(Vec<f64>, Vec<f64>)> {
        let (k, n) = (self.plants(), self.nodes());
        let ranges = self.node_ranges(dt);
        // nodes inside the limits over the whole box need no slack
        let active: Vec<usize> = (0..n)
            .filter(|&i| ranges[i].1 < self.v_min || ranges[i].2 > self.v_max)
            .collect();
        let s0 = 2 * k;
        let dim = s0 + active.len();
        let mut h = vec![vec![0.0; dim]; dim];
        for s in 0..active.len() {
            h[s0 + s][s0 + s] = 2.0 * self.beta;
        }
        let mut c = vec![self.alpha * self.q_cost; dim];
        for v in c.iter_mut().skip(s0) {
            *v = 0.0;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (s, &i) in active.iter().enumerate() {
            let base = ranges[i].0;
            let mut row = vec![0.0; dim];
            for j in 0..k {
                row[j] = self.dq[i][j];
                row[k + j] = -self.dq[i][j];
            }
            row[s0 + s] = 1.0;
            if ranges[i].1 < self.v_min {
                a.push(row.clone());
                b.push(self.v_min - base);
            }
            if ranges[i].2 > self.v_max {
                let mut neg: Vec<f64> = row.iter().map(|v| -v).collect();
                neg[s0 + s] = 1.0;
                a.push(neg);
                b.push(base - self.v_max);
            }
        }
        for j in 0..k {
            let mut row = vec![0.0; dim];
            row[j] = 1.0;
            row[k + j] = -1.0;
            a.push(row.iter().map(|v| -v).collect());
            b.push(-self.q_max[j]);
            a.push(row);
            b.push(self.q_min[j]);
        }
        let x = solve_qp(&h, &c, &a, &b)?;
        let q: Vec<f64> = (0..k).map(|j| x[j] - x[k + j]).collect();
        // slacks recomputed from the setpoints so they are exactly minimal
        let pred = self.predict(&q, dt);
        let mut slack = vec![0.0; n];
        for &i in &active {
            slack[i] = (self.v_min - pred[i]).max(pred[i] - self.v_max).max(0.0);
        }
        Some((q, slack))
    }
}

fn better(new: f64, best: f64) -> bool {
    new < best - 1e-12 * best.abs().max(1e-9)
}

/// Minimum-cost plan keeping every node within limits. Fails with
/// [`Error::Infeasible`] when no tap combination admits a feasible setpoint.
pub fn solve_cvvc(problem: &CvvcProblem) -> Result<ControlPlan> {
    problem.validate()?;
    let k = problem.plants();
    let zero_q = vec![0.0; k];
    let no_taps = vec![0; problem.regulators()];
    if problem
        .predict(&zero_q, &no_taps)
        .iter()
        .all(|v| *v >= problem.v_min && *v <= problem.v_max)
        && problem.q_min.iter().zip(&problem.q_max).all(|(lo, hi)| *lo <= 0.0 && *hi >= 0.0)
    {
        return Ok(problem.plan(Branch::Strict, zero_q, no_taps, vec![0.0; problem.nodes()], 0));
    }
    let mut best: Option<(f64, Vec<f64>, Vec<i32>)> = None;
    let mut solved = 0;
    for dt in problem.tap_combinations()? {
        let tc = problem.tap_cost_of(&dt);
        if let Some((b, _, _)) = &best {
            if !better(tc, *b) {
                continue;
            }
        }
        solved += 1;
        if let Some(q) = problem.strict_subproblem(&dt) {
            let cost = tc + problem.q_cost * q.iter().map(|v| v.abs()).sum::<f64>();
            if best.as_ref().is_none_or(|(b, _, _)| better(cost, *b)) {
                best = Some((cost, q, dt));
            }
        }
    }
    match best {
        Some((_, q, dt)) => Ok(problem.plan(Branch::Strict, q, dt, vec![0.0; problem.nodes()], solved)),
        None => Err(Error::Infeasible(format!(
            "no setpoint keeps all {} nodes within ({}, {}) pu over {solved} tap combinations",
            problem.nodes(),
            problem.v_min,
            problem.v_max
        ))),
    }
}

/// Plan minimizing `α·(action cost) + β·Σ slack²`. A problem that is
/// feasible without slack gets the strict plan.
pub fn solve_cvvc_relaxed(problem: &CvvcProblem) -> Result<ControlPlan> {
    match solve_cvvc(problem) {
        Ok(plan) => return Ok(plan),
        Err(Error::Infeasible(_)) => {}
        Err(e) => return Err(e),
    }
    let mut best: Option<(f64, Vec<f64>, Vec<i32>, Vec<f64>)> = None;
    let mut solved = 0;
    for dt in problem.tap_combinations()? {
        let tc = problem.alpha * problem.tap_cost_of(&dt);
        if let Some((b, ..)) = &best {
            if !better(tc, *b) {
                continue;
            }
        }
        solved += 1;
        if let Some((q, slack)) = problem.relaxed_subproblem(&dt) {
            let cost = tc
                + problem.alpha * problem.q_cost * q.iter().map(|v| v.abs()).sum::<f64>()
                + problem.beta * slack.iter().map(|s| s * s).sum::<f64>();
            if best.as_ref().is_none_or(|(b, ..)| better(cost, *b)) {
                best = Some((cost, q, dt, slack));
            }
        }
    }
    match best {
        Some((_, q, dt, slack)) => Ok(problem.plan(Branch::Relaxed, q, dt, slack, solved)),
        None => Err(Error::Infeasible("relaxed problem has no admissible setpoint".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn one_node(v0: f64, dq: Vec<f64>, dvr: Vec<f64>) -> CvvcProblem {
        let k = dq.len();
        let r = dvr.len();
        CvvcProblem {
            node_names: vec![],
            v0: vec![v0],
            dq: vec![dq],
            dvr: vec![dvr],
            q_now: vec![0.0; k],
            q_min: vec![-500.0; k],
            q_max: vec![500.0; k],
            taps: vec![0; r],
            tap_min: vec![-16; r],
            tap_max: vec![16; r],
            tap_groups: vec![],
            max_tap_change: 2,
            v_min: 0.975,
            v_max: 1.04,
            tap_cost: 0.14,
            q_cost: 8e-4,
            alpha: 1.0,
            beta: 1e4,
        }
    }

    #[test]
    fn inside_limits_is_free() {
        let p = one_node(1.0, vec![1e-3], vec![0.00625]);
        let plan = solve_cvvc(&p).unwrap();
        assert_eq!(plan.objective, 0.0);
        assert_eq!(plan.tap_delta, vec![0]);
        assert_eq!(plan.q_setpoint, vec![0.0]);
    }

    #[test]
    fn single_constraint_lp() {
        let p = one_node(0.970, vec![1e-3], vec![]);
        let plan = solve_cvvc(&p).unwrap();
        assert!((plan.q_setpoint[0] - 5.0).abs() < 1e-9, "{:?}", plan.q_setpoint);
        assert!((plan.objective - 5.0 * 8e-4).abs() < 1e-12);
        assert!((plan.predicted[0] - 0.975).abs() < 1e-12);
    }

    #[test]
    fn tap_only_fix() {
        let mut p = one_node(0.96, vec![0.0], vec![0.00625]);
        p.v_min = 0.965;
        let plan = solve_cvvc(&p).unwrap();
        assert_eq!(plan.tap_delta, vec![1]);
        assert!((plan.objective - 0.14).abs() < 1e-12);
        p.v_min = 0.975;
        assert!(matches!(solve_cvvc(&p), Err(Error::Infeasible(_))));
        let p = one_node(0.97, vec![0.0], vec![0.00625]);
        let plan = solve_cvvc(&p).unwrap();
        assert_eq!(plan.tap_delta, vec![1]);
        assert!((plan.objective - 0.14).abs() < 1e-12);
    }

    #[test]
    fn infeasible_falls_to_relaxed() {
        let mut p = one_node(0.95, vec![0.0], vec![]);
        p.max_tap_change = 0;
        assert!(matches!(solve_cvvc(&p), Err(Error::Infeasible(_))));
        let plan = solve_cvvc_relaxed(&p).unwrap();
        assert_eq!(plan.branch, Branch::Relaxed);
        assert!((plan.slack[0] - 0.025).abs() < 1e-12);
        assert_eq!(plan.q_setpoint, vec![0.0]);
    }

    #[test]
    fn feasible_problem_keeps_strict_plan_under_relaxation() {
        let p = one_node(0.970, vec![1e-3], vec![]);
        assert_eq!(solve_cvvc(&p).unwrap(), solve_cvvc_relaxed(&p).unwrap());
    }

    #[test]
    fn two_node_slack_split_matches_analytic_minimizer() {
        // f(q) = c q + β[(0.005 − 0.002q)² + (0.005 + 0.001q)²] → q = 1 − c/(β·1e-5)
        let mut p = one_node(0.970, vec![2e-3], vec![]);
        p.v0.push(1.045);
        p.dq.push(vec![1e-3]);
        p.dvr.push(vec![]);
        let plan = solve_cvvc_relaxed(&p).unwrap();
        let q = 1.0 - 8e-4 / (1e4 * 1e-5);
        assert!((plan.q_setpoint[0] - q).abs() < 1e-9, "{:?}", plan.q_setpoint);
        assert!((plan.slack[0] - (0.005 - 0.002 * q)).abs() < 1e-12);
        assert!((plan.slack[1] - (0.005 + 0.001 * q)).abs() < 1e-12);
    }

    #[test]
    fn enumeration_order_and_guard() {
        let mut p = one_node(1.0, vec![], vec![0.0, 0.0]);
        p.max_tap_change = 1;
        let combos = p.tap_combinations().unwrap();
        assert_eq!(combos[0], vec![0, 0]);
        assert_eq!(&combos[1..5], &[vec![-1, 0], vec![1, 0], vec![0, -1], vec![0, 1]]);
        assert_eq!(combos.len(), 9);
        let mut big = one_node(1.0, vec![], vec![0.0; 6]);
        big.max_tap_change = 4;
        assert!(matches!(big.tap_combinations(), Err(Error::TooManyCombinations(531441))));
    }

    #[test]
    fn tap_window_respects_range() {
        let mut p = one_node(0.96, vec![0.0], vec![0.00625]);
        p.taps = vec![16];
        assert!(matches!(solve_cvvc(&p), Err(Error::Infeasible(_))));
        p.taps = vec![15];
        assert!(solve_cvvc(&p).is_err());
        p.taps = vec![14];
        p.v0 = vec![0.97];
        assert_eq!(solve_cvvc(&p).unwrap().tap_delta, vec![1]);
    }

    #[test]
    fn ganged_regulators_move_together() {
        let mut p = one_node(0.97, vec![], vec![0.00625, 0.0]);
        p.tap_groups = vec![vec![0, 1]];
        let plan = solve_cvvc(&p).unwrap();
        assert_eq!(plan.tap_delta, vec![1, 1]);
        assert!((plan.tap_cost - 0.28).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_fewer_taps() {
        // either regulator fixes the node; the lower index wins
        let p = one_node(0.97, vec![], vec![0.00625, 0.00625]);
        assert_eq!(solve_cvvc(&p).unwrap().tap_delta, vec![1, 0]);
    }
}
