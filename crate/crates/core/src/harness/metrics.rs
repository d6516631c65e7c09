use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaseConfig, SimulationTrace};
use crate::error::{Error, Result};

/// Performance summary of one simulated case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case: String,
    /// Largest distance outside the reporting limits, pu.
    pub mvvm: f64,
    /// Out-of-limit node-timesteps of the rolling average.
    pub nvv: u64,
    pub ntc: u64,
    pub q_cost: f64,
    pub t_cost: f64,
    pub total_cost: f64,
}

impl MetricsReport {
    pub const HEADER: [&'static str; 7] = ["case", "mvvm_pu", "nvv", "ntc", "q_cost", "t_cost", "total_cost"];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.case.clone(),
            format!("{:.6}", self.mvvm),
            self.nvv.to_string(),
            self.ntc.to_string(),
            format!("{:.6}", self.q_cost),
            format!("{:.6}", self.t_cost),
            format!("{:.6}", self.total_cost),
        ]
    }
}

/// Trailing mean over `window` samples; the first `window − 1` samples are
/// dropped.
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() + 1 - window);
    let mut sum: f64 = series[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..series.len() {
        sum += series[i] - series[i - window];
        out.push(sum / window as f64);
    }
    out
}

pub fn compute_metrics(trace: &SimulationTrace, cfg: &CaseConfig) -> MetricsReport {
    let (lo, hi) = cfg.report_limits;
    let n_nodes = trace.voltages.first().map_or(0, |v| v.len());
    let w = cfg.rolling_window.max(1);
    let mut mvvm: f64 = 0.0;
    let mut nvv = 0u64;
    let mut series = vec![0.0; trace.len()];
    for i in 0..n_nodes {
        for (t, v) in trace.voltages.iter().enumerate() {
            series[t] = v[i];
        }
        // exact sums per window keep the count free of drift
        for t in (w - 1)..trace.len() {
            let avg = series[t + 1 - w..=t].iter().sum::<f64>() / w as f64;
            let viol = (lo - avg).max(avg - hi);
            if viol > 0.0 {
                nvv += 1;
                mvvm = mvvm.max(viol);
            }
        }
    }
    let ntc = trace.tap_changes();
    let scale = cfg.resolution_min as f64 / cfg.control_interval_min as f64;
    let q_cost = cfg.q_cost * scale * trace.pv_kvar.iter().flatten().map(|q| q.abs()).sum::<f64>();
    let t_cost = cfg.tap_cost * ntc as f64;
    MetricsReport {
        case: trace.case.to_string(),
        mvvm,
        nvv,
        ntc,
        q_cost,
        t_cost,
        total_cost: q_cost + t_cost,
    }
}

/// Write reports with optional leading label columns.
pub fn write_metrics_csv(
    path: impl AsRef<Path>,
    labels: &[&str],
    rows: &[(Vec<String>, MetricsReport)],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = labels.to_vec();
    header.extend(MetricsReport::HEADER);
    w.write_record(&header)?;
    for (l, r) in rows {
        let mut rec = l.clone();
        rec.extend(r.record());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
