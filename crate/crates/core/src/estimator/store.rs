//! Model directory: `manifest.json` plus one CSV per fitted product.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SensitivityCurve, SensitivityTable, TapSensitivityTable, VoltageEstimator, VoltageRegressionModel};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::training::{CriticalNode, CriticalNodeSet, Provenance};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    feeder: String,
    channels: Vec<String>,
    baseline_taps: Vec<i32>,
    regulators: Vec<String>,
    plants: Vec<String>,
    q_levels: Vec<f64>,
    critical_nodes: usize,
}

fn num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")))
}

pub fn write_estimator(est: &VoltageEstimator, model: &FeederModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        schema_version: MODEL_SCHEMA_VERSION,
        feeder: model.name().to_string(),
        channels: est.regression.channels.clone(),
        baseline_taps: est.regression.baseline_taps.clone(),
        regulators: model.regulators().iter().map(|r| r.id.clone()).collect(),
        plants: model.pv_plants().iter().map(|p| p.id.clone()).collect(),
        q_levels: est.q_levels.clone(),
        critical_nodes: est.critical.len(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("critical_nodes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["node", "provenance"])?;
    for c in &est.critical.nodes {
        w.write_record([c.node.to_string(), c.provenance.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("regression.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["node".to_string(), "intercept".into(), "residual_rms".into()];
    header.extend(est.regression.channels.iter().cloned());
    w.write_record(&header)?;
    for (p, c) in est.critical.nodes.iter().enumerate() {
        let mut rec = vec![
            c.node.to_string(),
            est.regression.intercept[p].to_string(),
            est.regression.residual_rms[p].to_string(),
        ];
        rec.extend(est.regression.coefficients[p].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["node", "plant", "a", "b", "c", "q_min", "q_max", "negligible"])?;
    for (p, c) in est.critical.nodes.iter().enumerate() {
        for (k, cv) in est.curves.curves[p].iter().enumerate() {
            w.write_record([
                c.node.to_string(),
                model.pv_plants()[k].id.clone(),
                cv.a.to_string(),
                cv.b.to_string(),
                cv.c.to_string(),
                cv.q_min.to_string(),
                cv.q_max.to_string(),
                cv.negligible.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("tap_sensitivity.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["node".to_string(), "v_base".into()];
    for r in model.regulators() {
        header.push(format!("{}_delta", r.id));
        header.push(format!("{}_v_after", r.id));
    }
    w.write_record(&header)?;
    for (i, n) in model.nodes().iter().enumerate() {
        let mut rec = vec![n.to_string(), est.taps.base_voltages.get(i).copied().unwrap_or(f64::NAN).to_string()];
        for r in 0..model.regulators().len() {
            rec.push(est.taps.delta[i][r].to_string());
            rec.push(
                est.taps.perturbed_voltages[r]
                    .get(i)
                    .copied()
                    .unwrap_or(f64::NAN)
                    .to_string(),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_estimator(model: &FeederModel, dir: impl AsRef<Path>) -> Result<VoltageEstimator> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "model schema {} is not supported (expected {MODEL_SCHEMA_VERSION})",
            m.schema_version
        )));
    }
    let regs: Vec<String> = model.regulators().iter().map(|r| r.id.clone()).collect();
    let plants: Vec<String> = model.pv_plants().iter().map(|p| p.id.clone()).collect();
    if m.regulators != regs || m.plants != plants {
        return Err(Error::Validation(format!(
            "model directory was trained on feeder '{}' with different regulators or plants",
            m.feeder
        )));
    }
    let lookup: HashMap<String, usize> = model.nodes().iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
    let node_of = |s: &str| {
        lookup
            .get(s.trim())
            .copied()
            .ok_or_else(|| Error::UnknownNode(s.to_string()))
    };

    let mut critical = CriticalNodeSet { nodes: Vec::new() };
    let mut rdr = csv::Reader::from_path(dir.join("critical_nodes.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        let index = node_of(&rec[0])?;
        critical.nodes.push(CriticalNode {
            node: model.nodes()[index].clone(),
            index,
            provenance: rec[1].parse::<Provenance>()?,
        });
    }
    if critical.len() != m.critical_nodes {
        return Err(Error::Parse("critical node list does not match the manifest".into()));
    }
    let nc = critical.len();
    let n_ch = m.channels.len();

    let mut regression = VoltageRegressionModel {
        channels: m.channels.clone(),
        nodes: critical.indices(),
        intercept: vec![0.0; nc],
        coefficients: vec![Vec::new(); nc],
        residual_rms: vec![0.0; nc],
        baseline_taps: m.baseline_taps.clone(),
    };
    let mut seen = vec![false; nc];
    let mut rdr = csv::Reader::from_path(dir.join("regression.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 + n_ch {
            return Err(Error::Parse("regression row has wrong width".into()));
        }
        let p = critical
            .position(node_of(&rec[0])?)
            .ok_or_else(|| Error::Parse(format!("regression row for non-critical node '{}'", &rec[0])))?;
        regression.intercept[p] = num(&rec[1])?;
        regression.residual_rms[p] = num(&rec[2])?;
        regression.coefficients[p] = (3..3 + n_ch).map(|c| num(&rec[c])).collect::<Result<_>>()?;
        seen[p] = true;
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("no regression row for {}", critical.nodes[p].node)));
    }

    let mut curves: Vec<Vec<Option<SensitivityCurve>>> = vec![vec![None; plants.len()]; nc];
    let mut rdr = csv::Reader::from_path(dir.join("curves.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        let p = critical
            .position(node_of(&rec[0])?)
            .ok_or_else(|| Error::Parse(format!("curve for non-critical node '{}'", &rec[0])))?;
        let k = model
            .plant_index(&rec[1])
            .ok_or_else(|| Error::Parse(format!("unknown plant '{}'", &rec[1])))?;
        curves[p][k] = Some(SensitivityCurve {
            a: num(&rec[2])?,
            b: num(&rec[3])?,
            c: num(&rec[4])?,
            q_min: num(&rec[5])?,
            q_max: num(&rec[6])?,
            negligible: rec[7].trim() == "true",
        });
    }
    let curves = curves
        .into_iter()
        .enumerate()
        .map(|(p, row)| {
            row.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Parse(format!("missing curve for {}", critical.nodes[p].node)))
        })
        .collect::<Result<Vec<_>>>()?;
    let curves = SensitivityTable {
        nodes: critical.indices(),
        curves,
    };

    let nr = regs.len();
    let n = model.node_count();
    let mut taps = TapSensitivityTable {
        delta: vec![vec![0.0; nr]; n],
        base_voltages: vec![f64::NAN; n],
        perturbed_voltages: vec![vec![f64::NAN; n]; nr],
    };
    let mut rdr = csv::Reader::from_path(dir.join("tap_sensitivity.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 + 2 * nr {
            return Err(Error::Parse("tap sensitivity row has wrong width".into()));
        }
        let i = node_of(&rec[0])?;
        taps.base_voltages[i] = num(&rec[1])?;
        for r in 0..nr {
            taps.delta[i][r] = num(&rec[2 + 2 * r])?;
            taps.perturbed_voltages[r][i] = num(&rec[3 + 2 * r])?;
        }
    }

    VoltageEstimator::assemble(model, critical, regression, curves, taps, m.q_levels)
}
