//! Reactive-power sensitivity curves `δ = a / (c + Q_s)^b`, with `Q_s` the
//! total feeder-head reactive power in kvar and `δ` in pu per kvar of plant
//! injection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{CriticalNodeSet, TrainingDataset};

pub const DEFAULT_OFFSET_KVAR: f64 = 3000.0;

/// Pairs whose sensitivity never exceeds this magnitude are zeroed.
pub const NEGLIGIBLE_PU_PER_KVAR: f64 = 1e-8;

const GN_MAX_ITER: usize = 50;
const GN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub a: f64,
    pub b: f64,
    /// Offset c, kvar.
    pub c: f64,
    /// Range of `Q_s` seen in training, kvar.
    pub q_min: f64,
    pub q_max: f64,
    pub negligible: bool,
}

impl SensitivityCurve {
    pub fn constant(a: f64, c: f64) -> Self {
        Self {
            a,
            b: 0.0,
            c,
            q_min: f64::NEG_INFINITY,
            q_max: f64::INFINITY,
            negligible: false,
        }
    }

    pub fn in_range(&self, q_s: f64) -> bool {
        (self.q_min..=self.q_max).contains(&q_s)
    }

    pub fn value(&self, q_s: f64) -> Result<f64> {
        let base = self.c + q_s;
        if !(base > 0.0) {
            return Err(Error::Domain(format!(
                "c + Q_s = {base} kvar is not positive (c = {}, Q_s = {q_s})",
                self.c
            )));
        }
        if self.negligible {
            return Ok(0.0);
        }
        Ok(self.a * base.powf(-self.b))
    }
}

/// Sensitivity estimate and whether `Q_s` lies outside the training range.
pub fn estimate_sensitivity(curve: &SensitivityCurve, q_s: f64) -> Result<(f64, bool)> {
    Ok((curve.value(q_s)?, !curve.in_range(q_s)))
}

/// Least-squares fit of `a/(c+q)^b` to `(q, δ)` samples: a log-space linear
/// fit seeds a damped Gauss–Newton refinement.
pub fn fit_curve(samples: &[(f64, f64)], c: f64) -> Result<SensitivityCurve> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} sensitivity samples; at least 2 needed",
            samples.len()
        )));
    }
    if let Some((q, _)) = samples.iter().find(|(q, _)| !(c + q > 0.0)) {
        return Err(Error::Domain(format!(
            "c + Q_s = {} kvar for sample at Q_s = {q}; use a larger offset c",
            c + q
        )));
    }
    let q_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let q_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let mut curve = SensitivityCurve {
        a: 0.0,
        b: 0.0,
        c,
        q_min,
        q_max,
        negligible: false,
    };
    if samples.iter().all(|(_, d)| d.abs() < NEGLIGIBLE_PU_PER_KVAR) {
        curve.negligible = true;
        return Ok(curve);
    }

    let n = samples.len() as f64;
    let mean_d = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let same_sign = samples.iter().all(|s| s.1 > 0.0) || samples.iter().all(|s| s.1 < 0.0);
    let spread = q_max > q_min;
    if !same_sign || !spread {
        curve.a = mean_d;
        return Ok(curve);
    }

    // ln|δ| = ln|a| − b·ln(c + q)
    let sign = mean_d.signum();
    let xs: Vec<f64> = samples.iter().map(|(q, _)| (c + q).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, d)| d.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let mut b = -slope;
    let mut a = sign * (my - slope * mx).exp();

    let sse = |a: f64, b: f64| -> f64 {
        samples
            .iter()
            .map(|(q, d)| (a * (c + q).powf(-b) - d).powi(2))
            .sum()
    };
    let mut cost = sse(a, b);
    for _ in 0..GN_MAX_ITER {
        // J^T J and J^T r for residual r = f − δ
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (q, d) in samples {
            let l = (c + q).ln();
            let g = (-b * l).exp();
            let f = a * g;
            let da = g;
            let db = -f * l;
            let r = f - d;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let det = jaa * jbb - jab * jab;
        if det.abs() < f64::MIN_POSITIVE {
            break;
        }
        let step_a = -(jbb * ga - jab * gb) / det;
        let step_b = -(jaa * gb - jab * ga) / det;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (na, nb) = (a + t * step_a, b + t * step_b);
            let nc = sse(na, nb);
            if nc <= cost {
                a = na;
                b = nb;
                cost = nc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let rel = (t * step_a).abs() / a.abs().max(1e-300) + (t * step_b).abs() / b.abs().max(1.0);
        if !accepted || rel < GN_TOL {
            break;
        }
    }

    if b < 0.0 {
        // the decaying form does not fit; fall back to the best constant
        a = mean_d;
        b = 0.0;
    }
    curve.a = a;
    curve.b = b;
    Ok(curve)
}

/// Dense `[critical node][plant]` table of fitted curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub nodes: Vec<usize>,
    pub curves: Vec<Vec<SensitivityCurve>>,
}

impl SensitivityTable {
    /// δ matrix `[node][plant]` at feeder-head reactive power `q_s`.
    pub fn evaluate(&self, q_s: f64) -> Result<Vec<Vec<f64>>> {
        self.curves
            .iter()
            .map(|row| row.iter().map(|c| c.value(q_s)).collect())
            .collect()
    }
}

/// Difference consecutive sweep rows of each (scenario, plant) and fit one
/// curve per (critical node, plant).
pub fn fit_sensitivity_curves(
    dataset: &TrainingDataset,
    critical: &CriticalNodeSet,
    n_plants: usize,
    c: f64,
) -> Result<SensitivityTable> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.rows.iter().enumerate() {
        groups.entry((r.scenario, r.plant)).or_default().push(i);
    }
    // (q_s, row, previous row) per plant
    let mut pairs: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); n_plants];
    for ((_, plant), mut idx) in groups {
        idx.sort_by(|&x, &y| dataset.rows[x].q_kvar.total_cmp(&dataset.rows[y].q_kvar));
        for w in idx.windows(2) {
            let (prev, cur) = (&dataset.rows[w[0]], &dataset.rows[w[1]]);
            if cur.q_kvar > prev.q_kvar {
                pairs[plant].push((cur.head_kvar, w[1], w[0]));
            }
        }
    }
    let nodes = critical.indices();
    let curves = nodes
        .iter()
        .map(|&n| {
            (0..n_plants)
                .map(|k| {
                    let samples: Vec<(f64, f64)> = pairs[k]
                        .iter()
                        .map(|&(q_s, cur, prev)| {
                            let (c_row, p_row) = (&dataset.rows[cur], &dataset.rows[prev]);
                            let dv = c_row.voltages[n] - p_row.voltages[n];
                            (q_s, dv / (c_row.q_kvar - p_row.q_kvar))
                        })
                        .collect();
                    fit_curve(&samples, c)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityTable { nodes, curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_known_curve() {
        let samples: Vec<(f64, f64)> = (0..25)
            .map(|i| {
                let q = -1500.0 + 120.0 * i as f64;
                (q, 2.0 / (3000.0 + q).powf(0.5))
            })
            .collect();
        let c = fit_curve(&samples, 3000.0).unwrap();
        assert!((c.a - 2.0).abs() < 1e-6, "a = {}", c.a);
        assert!((c.b - 0.5).abs() < 1e-6, "b = {}", c.b);
    }

    #[test]
    fn flat_samples_give_zero_exponent() {
        let samples: Vec<(f64, f64)> = (0..10).map(|i| (100.0 * i as f64, 3e-5)).collect();
        let c = fit_curve(&samples, 3000.0).unwrap();
        assert!(c.b.abs() < 1e-9);
        assert!((c.a - 3e-5).abs() < 1e-15);
    }

    #[test]
    fn insensitive_pair_is_negligible() {
        let samples: Vec<(f64, f64)> = (0..10).map(|i| (100.0 * i as f64, 1e-12 * i as f64)).collect();
        let c = fit_curve(&samples, 3000.0).unwrap();
        assert!(c.negligible);
        assert_eq!(c.value(0.0).unwrap(), 0.0);
    }

    #[test]
    fn offset_too_small_is_reported() {
        let samples = vec![(-3500.0, 1e-4), (0.0, 1e-4)];
        let err = fit_curve(&samples, 3000.0).unwrap_err();
        assert!(err.to_string().contains("larger offset"), "{err}");
    }

    #[test]
    fn direct_evaluation() {
        let unit = SensitivityCurve::constant(1.0, 3000.0);
        assert_eq!(estimate_sensitivity(&unit, 1234.0).unwrap().0, 1.0);
        let c = SensitivityCurve {
            a: 2000.0,
            b: 1.0,
            c: 3000.0,
            q_min: 0.0,
            q_max: 500.0,
            negligible: false,
        };
        let (v, extrapolated) = estimate_sensitivity(&c, -1000.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(extrapolated);
        assert!(estimate_sensitivity(&c, -3000.5).is_err());
    }
}
