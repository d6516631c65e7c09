//! Online voltage and sensitivity estimation from sparse measurements.
//!
//! Voltages at critical nodes are an affine function of the feeder-head and
//! PV-plant power measurements, shifted by a static per-tap sensitivity for
//! every regulator whose tap differs from the training baseline. When
//! regulator secondary voltages are measured, the estimate error at each
//! regulator is added to every node it feeds.

mod curves;
mod regression;
mod store;

pub use curves::{
    estimate_sensitivity, fit_curve, fit_sensitivity_curves, SensitivityCurve, SensitivityTable,
    DEFAULT_OFFSET_KVAR, NEGLIGIBLE_PU_PER_KVAR,
};
pub use regression::{fit_voltage_regression, least_squares, VoltageRegressionModel};
pub use store::{read_estimator, write_estimator, MODEL_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::training::{CriticalNodeSet, TrainingDataset};

/// Voltage change per tap raise, pu, for every node × regulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapSensitivityTable {
    /// `[node][regulator]`, all feeder nodes.
    pub delta: Vec<Vec<f64>>,
    /// Voltages before (`V⁰`) and after (`V^r`) each unit tap solve.
    pub base_voltages: Vec<f64>,
    pub perturbed_voltages: Vec<Vec<f64>>,
}

impl TapSensitivityTable {
    /// Build from the dataset's tap rows. Entries for nodes that are not
    /// downstream of a regulator are set to zero.
    pub fn from_dataset(dataset: &TrainingDataset, model: &FeederModel) -> Result<Self> {
        let n = model.node_count();
        let nr = model.regulators().len();
        if dataset.tap_rows.len() != nr {
            return Err(Error::InsufficientData(format!(
                "{} tap perturbations for {nr} regulators",
                dataset.tap_rows.len()
            )));
        }
        let mut delta = vec![vec![0.0; nr]; n];
        let mut perturbed = vec![Vec::new(); nr];
        for row in &dataset.tap_rows {
            let d = row.delta_per_tap();
            let limit = 2.0 * model.regulators()[row.regulator].tap_step;
            for (node, dv) in d.iter().enumerate() {
                if model.is_downstream_of(node, row.regulator) {
                    if dv.abs() > limit * row.before[node].max(1.0) {
                        return Err(Error::Validation(format!(
                            "tap sensitivity {dv:.5} pu at {} for regulator '{}' exceeds two tap steps",
                            model.nodes()[node],
                            model.regulators()[row.regulator].id
                        )));
                    }
                    delta[node][row.regulator] = *dv;
                }
            }
            perturbed[row.regulator] = row.after.clone();
        }
        let base_voltages = dataset.tap_rows.first().map(|r| r.before.clone()).unwrap_or_default();
        Ok(Self {
            delta,
            base_voltages,
            perturbed_voltages: perturbed,
        })
    }

    /// Tap-shift term `Σ_r δ_{i,r}·(T_r − T⁰_r)` for one node.
    pub fn shift(&self, node: usize, taps: &[i32], baseline: &[i32]) -> f64 {
        self.delta[node]
            .iter()
            .zip(taps.iter().zip(baseline))
            .map(|(d, (t, t0))| d * (t - t0) as f64)
            .sum()
    }
}

/// Everything the online controller needs, fitted from one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageEstimator {
    pub critical: CriticalNodeSet,
    pub regression: VoltageRegressionModel,
    pub curves: SensitivityTable,
    pub taps: TapSensitivityTable,
    /// Upstream regulator per critical node.
    pub upstream: Vec<Option<usize>>,
    /// Critical-set position of each regulator's secondary node.
    pub regulator_secondary: Vec<usize>,
    /// Training baseline, needed to interpret the model without the dataset.
    pub q_levels: Vec<f64>,
}

/// Estimates at the critical nodes, in critical-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageEstimate {
    pub voltages: Vec<f64>,
    /// Per-regulator correction ε_r; empty when uncorrected.
    pub corrections: Vec<f64>,
}

impl VoltageEstimator {
    pub fn fit(
        model: &FeederModel,
        dataset: &TrainingDataset,
        critical: CriticalNodeSet,
        curve_offset: f64,
    ) -> Result<Self> {
        let regression = fit_voltage_regression(dataset, &critical)?;
        let curves = fit_sensitivity_curves(dataset, &critical, model.pv_plants().len(), curve_offset)?;
        let taps = TapSensitivityTable::from_dataset(dataset, model)?;
        Self::assemble(model, critical, regression, curves, taps, dataset.q_levels.clone())
    }

    pub(crate) fn assemble(
        model: &FeederModel,
        critical: CriticalNodeSet,
        regression: VoltageRegressionModel,
        curves: SensitivityTable,
        taps: TapSensitivityTable,
        q_levels: Vec<f64>,
    ) -> Result<Self> {
        let up_map = model.upstream_regulator_map();
        let upstream = critical.nodes.iter().map(|c| up_map[c.index]).collect();
        let regulator_secondary = (0..model.regulators().len())
            .map(|r| {
                let node = model.regulator_secondary_node(r);
                critical.position(node).ok_or_else(|| {
                    Error::Validation(format!(
                        "regulator '{}' secondary node is not a critical node",
                        model.regulators()[r].id
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            critical,
            regression,
            curves,
            taps,
            upstream,
            regulator_secondary,
            q_levels,
        })
    }

    pub fn baseline_taps(&self) -> &[i32] {
        &self.regression.baseline_taps
    }

    fn check_measurements(&self, m: &[f64]) -> Result<()> {
        let ch = &self.regression.channels;
        if m.len() < ch.len() {
            return Err(Error::MissingMeasurement(ch[m.len()].clone()));
        }
        if m.len() > ch.len() {
            return Err(Error::MissingMeasurement(format!(
                "{} values for {} channels",
                m.len(),
                ch.len()
            )));
        }
        if let Some(i) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingMeasurement(ch[i].clone()));
        }
        Ok(())
    }

    /// Uncorrected estimate: regression plus tap shift.
    pub fn estimate_voltages(&self, m: &[f64], taps: &[i32]) -> Result<Vec<f64>> {
        self.check_measurements(m)?;
        if taps.len() != self.baseline_taps().len() {
            return Err(Error::InvalidState(format!(
                "{} taps for {} regulators",
                taps.len(),
                self.baseline_taps().len()
            )));
        }
        Ok(self
            .critical
            .nodes
            .iter()
            .enumerate()
            .map(|(pos, c)| {
                self.regression.predict_node(pos, m) + self.taps.shift(c.index, taps, self.baseline_taps())
            })
            .collect())
    }

    /// Estimate corrected by measured regulator secondary voltages (pu).
    pub fn estimate_voltages_corrected(
        &self,
        m: &[f64],
        taps: &[i32],
        secondary_measured: &[f64],
    ) -> Result<VoltageEstimate> {
        let nr = self.regulator_secondary.len();
        if secondary_measured.len() != nr {
            return Err(Error::MissingMeasurement(format!(
                "regulator secondary voltage ({} of {nr} given)",
                secondary_measured.len()
            )));
        }
        if let Some(r) = secondary_measured.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingMeasurement(format!("regulator {r} secondary voltage")));
        }
        let mut v = self.estimate_voltages(m, taps)?;
        let corrections: Vec<f64> = self
            .regulator_secondary
            .iter()
            .zip(secondary_measured)
            .map(|(&pos, meas)| meas - v[pos])
            .collect();
        for (pos, up) in self.upstream.iter().enumerate() {
            if let Some(r) = up {
                v[pos] += corrections[*r];
            }
        }
        Ok(VoltageEstimate {
            voltages: v,
            corrections,
        })
    }

    /// δ^Q matrix `[critical node][plant]`, pu per kvar, at head reactive
    /// power `q_s` kvar.
    pub fn q_sensitivities(&self, q_s: f64) -> Result<Vec<Vec<f64>>> {
        self.curves.evaluate(q_s)
    }

    /// δ^VR matrix `[critical node][regulator]`, pu per tap.
    pub fn tap_sensitivities(&self) -> Vec<Vec<f64>> {
        self.critical
            .nodes
            .iter()
            .map(|c| self.taps.delta[c.index].clone())
            .collect()
    }

    /// Training range of `Q_s` shared by all curves, kvar.
    pub fn q_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in self.curves.curves.iter().flatten() {
            lo = lo.min(c.q_min);
            hi = hi.max(c.q_max);
        }
        (lo, hi)
    }
}
