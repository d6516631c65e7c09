//! Per-node ordinary least squares of |V| on the measurement vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{CriticalNodeSet, TrainingDataset};

/// Relative singular-value threshold below which the design is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageRegressionModel {
    pub channels: Vec<String>,
    /// Feeder node index per fitted node.
    pub nodes: Vec<usize>,
    pub intercept: Vec<f64>,
    /// `[node][channel]`, pu per kW or kvar.
    pub coefficients: Vec<Vec<f64>>,
    /// In-sample residual RMS per node, pu.
    pub residual_rms: Vec<f64>,
    pub baseline_taps: Vec<i32>,
}

impl VoltageRegressionModel {
    /// Affine prediction for the fitted node at position `pos`.
    pub fn predict_node(&self, pos: usize, m: &[f64]) -> f64 {
        self.intercept[pos]
            + self.coefficients[pos]
                .iter()
                .zip(m)
                .map(|(a, x)| a * x)
                .sum::<f64>()
    }

    pub fn predict(&self, m: &[f64]) -> Vec<f64> {
        (0..self.nodes.len()).map(|p| self.predict_node(p, m)).collect()
    }
}

/// Least squares of `targets` (one column per output) on `[1, x]`.
/// Columns are standardized before the SVD so kW-scale regressors and the
/// intercept are comparably conditioned.
pub fn least_squares(
    x: &[Vec<f64>],
    targets: &[Vec<f64>],
    channels: &[String],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let rows = x.len();
    let p = channels.len();
    if rows < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{rows} rows for {} regression coefficients",
            p + 1
        )));
    }
    let mut mean = vec![0.0; p];
    for r in x {
        if r.len() != p {
            return Err(Error::InsufficientData("measurement row has wrong width".into()));
        }
        for (j, v) in r.iter().enumerate() {
            mean[j] += v / rows as f64;
        }
    }
    let mut scale = vec![0.0; p];
    for r in x {
        for (j, v) in r.iter().enumerate() {
            scale[j] += (v - mean[j]).powi(2) / rows as f64;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
    }

    let design = DMatrix::from_fn(rows, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else if scale[j - 1] > 0.0 {
            (x[i][j - 1] - mean[j - 1]) / scale[j - 1]
        } else {
            0.0
        }
    });
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut collinear = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s <= RANK_TOL * smax.max(f64::MIN_POSITIVE) {
            for j in 0..=p {
                if v_t[(k, j)].abs() > 1e-6 {
                    let name = if j == 0 { "intercept".to_string() } else { channels[j - 1].clone() };
                    if !collinear.contains(&name) {
                        collinear.push(name);
                    }
                }
            }
        }
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    let mut intercepts = Vec::with_capacity(targets.len());
    let mut coefs = Vec::with_capacity(targets.len());
    for y in targets {
        let rhs = DVector::from_column_slice(y);
        let beta = svd
            .solve(&rhs, 0.0)
            .map_err(|e| Error::InsufficientData(format!("least squares failed: {e}")))?;
        let c: Vec<f64> = (0..p)
            .map(|j| if scale[j] > 0.0 { beta[j + 1] / scale[j] } else { 0.0 })
            .collect();
        let b0 = beta[0] - c.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
        intercepts.push(b0);
        coefs.push(c);
    }
    Ok((intercepts, coefs))
}

/// Fit one affine model per critical node on the sweep rows (tap
/// perturbations are not part of the fit).
pub fn fit_voltage_regression(
    dataset: &TrainingDataset,
    critical: &CriticalNodeSet,
) -> Result<VoltageRegressionModel> {
    let x: Vec<Vec<f64>> = dataset.rows.iter().map(|r| r.measurements.clone()).collect();
    let nodes = critical.indices();
    let targets: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| dataset.rows.iter().map(|r| r.voltages[n]).collect())
        .collect();
    let (intercept, coefficients) = least_squares(&x, &targets, &dataset.channels)?;

    let mut model = VoltageRegressionModel {
        channels: dataset.channels.clone(),
        nodes,
        intercept,
        coefficients,
        residual_rms: Vec::new(),
        baseline_taps: dataset.baseline_taps.clone(),
    };
    model.residual_rms = (0..model.nodes.len())
        .map(|p| {
            let ss: f64 = x
                .iter()
                .zip(&targets[p])
                .map(|(m, y)| (model.predict_node(p, m) - y).powi(2))
                .sum();
            (ss / x.len() as f64).sqrt()
        })
        .collect();
    Ok(model)
}
