//! Offline training-data generation and critical-node selection.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, NodeRef};
use crate::powerflow::{measurement_channels, solve_with, InjectionState, SolverOptions};
use crate::scenario::Scenario;

/// Default Q levels as fractions of plant rating: −100 %, −80 %, …, +100 %.
pub fn default_q_levels() -> Vec<f64> {
    (-5..=5).map(|i| i as f64 * 0.2).collect()
}

/// One power-flow result of the reactive-power sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Position of the scenario in [`TrainingDataset::scenarios`].
    pub scenario: usize,
    pub plant: usize,
    /// Commanded reactive power of the perturbed plant, kvar.
    pub q_kvar: f64,
    /// Measurement vector, see [`crate::powerflow::Measurements::to_vector`].
    pub measurements: Vec<f64>,
    /// Feeder-head reactive power summed over phases, kvar.
    pub head_kvar: f64,
    /// |V| per node, pu.
    pub voltages: Vec<f64>,
}

/// Unit tap perturbation on the first scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapRow {
    pub regulator: usize,
    /// +1, or −1 when the regulator sits at its upper limit.
    pub step: i32,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl TapRow {
    /// Voltage change per tap raise, pu, per node.
    pub fn delta_per_tap(&self) -> Vec<f64> {
        self.after
            .iter()
            .zip(&self.before)
            .map(|(a, b)| (a - b) / self.step as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub channels: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub baseline_taps: Vec<i32>,
    pub q_levels: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub tap_rows: Vec<TapRow>,
}

impl TrainingDataset {
    /// Injection state that produced a sweep row.
    pub fn row_state(&self, model: &FeederModel, row: &SweepRow) -> InjectionState {
        let s = &self.scenarios[row.scenario];
        let mut q = vec![0.0; model.pv_plants().len()];
        q[row.plant] = row.q_kvar;
        InjectionState {
            load_kw: s.load_kw.clone(),
            load_kvar: s.load_kvar.clone(),
            pv_kw: s.pv_kw.clone(),
            pv_kvar: q,
            taps: self.baseline_taps.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOptions {
    pub q_levels: Vec<f64>,
    pub solver: SolverOptions,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            q_levels: default_q_levels(),
            solver: SolverOptions::default(),
        }
    }
}

fn scenario_state(model: &FeederModel, s: &Scenario, taps: &[i32]) -> InjectionState {
    InjectionState {
        load_kw: s.load_kw.clone(),
        load_kvar: s.load_kvar.clone(),
        pv_kw: s.pv_kw.clone(),
        pv_kvar: vec![0.0; model.pv_plants().len()],
        taps: taps.to_vec(),
    }
}

/// Run the tap perturbations on the first scenario and the per-plant
/// reactive-power sweep on every scenario.
pub fn generate_training_data(
    model: &FeederModel,
    scenarios: &[Scenario],
    opts: &TrainingOptions,
) -> Result<TrainingDataset> {
    if scenarios.is_empty() {
        return Err(Error::InsufficientData("no representative scenarios".into()));
    }
    let t0 = model.initial_taps();

    let base = scenario_state(model, &scenarios[0], &t0);
    let before = solve_with(model, &base, &opts.solver)
        .map_err(|e| Error::Training {
            scenario: 0,
            plant: "-".into(),
            q_kvar: 0.0,
            source: Box::new(e),
        })?
        .magnitudes;
    let tap_rows = model
        .regulators()
        .iter()
        .enumerate()
        .map(|(r, reg)| {
            let step = if t0[r] < reg.tap_max { 1 } else { -1 };
            let mut st = base.clone();
            st.taps[r] += step;
            let after = solve_with(model, &st, &opts.solver)
                .map_err(|e| Error::Training {
                    scenario: 0,
                    plant: format!("tap:{}", reg.id),
                    q_kvar: 0.0,
                    source: Box::new(e),
                })?
                .magnitudes;
            Ok(TapRow {
                regulator: r,
                step,
                before: before.clone(),
                after,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_scenario: Vec<Result<Vec<SweepRow>>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let mut rows = Vec::new();
            for (k, pv) in model.pv_plants().iter().enumerate() {
                let headroom = pv.excess_capacity_kvar(s.pv_kw[k]);
                for &level in &opts.q_levels {
                    let q = level * pv.kva;
                    if q.abs() > headroom + 1e-9 * pv.kva {
                        continue;
                    }
                    let mut st = scenario_state(model, s, &t0);
                    st.pv_kvar[k] = q;
                    let sol = solve_with(model, &st, &opts.solver).map_err(|e| Error::Training {
                        scenario: si,
                        plant: pv.id.clone(),
                        q_kvar: q,
                        source: Box::new(e),
                    })?;
                    rows.push(SweepRow {
                        scenario: si,
                        plant: k,
                        q_kvar: q,
                        head_kvar: sol.measurements.head_total_kvar(),
                        measurements: sol.measurements.to_vector(),
                        voltages: sol.magnitudes,
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_scenario {
        rows.extend(r?);
    }

    Ok(TrainingDataset {
        channels: measurement_channels(model),
        scenarios: scenarios.to_vec(),
        baseline_taps: t0,
        q_levels: opts.q_levels.clone(),
        rows,
        tap_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FeederHead,
    RegulatorPrimary,
    RegulatorSecondary,
    PvPlant,
    ObservedExtreme,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::FeederHead => "feeder-head",
            Provenance::RegulatorPrimary => "regulator-primary",
            Provenance::RegulatorSecondary => "regulator-secondary",
            Provenance::PvPlant => "pv-plant",
            Provenance::ObservedExtreme => "observed-extreme",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "feeder-head" => Provenance::FeederHead,
            "regulator-primary" => Provenance::RegulatorPrimary,
            "regulator-secondary" => Provenance::RegulatorSecondary,
            "pv-plant" => Provenance::PvPlant,
            "observed-extreme" => Provenance::ObservedExtreme,
            other => return Err(Error::Parse(format!("unknown provenance '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalNode {
    pub node: NodeRef,
    /// Index into [`FeederModel::nodes`].
    pub index: usize,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalNodeSet {
    pub nodes: Vec<CriticalNode>,
}

impl CriticalNodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.nodes.iter().map(|c| c.index).collect()
    }

    pub fn position(&self, node_index: usize) -> Option<usize> {
        self.nodes.iter().position(|c| c.index == node_index)
    }
}

fn arg_extremes(v: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[lo] {
            lo = i;
        }
        if *x > v[hi] {
            hi = i;
        }
    }
    (hi, lo)
}

/// Feeder head, both buses of every regulator and every PV bus, then the
/// highest- and lowest-voltage node of every training solve.
pub fn select_critical_nodes(dataset: &TrainingDataset, model: &FeederModel) -> Result<CriticalNodeSet> {
    if dataset.rows.is_empty() && dataset.tap_rows.is_empty() {
        return Err(Error::InsufficientData("training dataset is empty".into()));
    }
    let mut seen = BTreeSet::new();
    let mut nodes = Vec::new();
    let add_bus = |bus: usize, prov: Provenance, seen: &mut BTreeSet<usize>, nodes: &mut Vec<CriticalNode>| {
        for ph in &model.buses()[bus].phases {
            let idx = model.node_at(bus, *ph).expect("phase present");
            if seen.insert(idx) {
                nodes.push(CriticalNode {
                    node: model.nodes()[idx].clone(),
                    index: idx,
                    provenance: prov,
                });
            }
        }
    };
    add_bus(model.source_bus(), Provenance::FeederHead, &mut seen, &mut nodes);
    for reg in model.regulators() {
        let p = model.bus_index(&reg.primary_bus).expect("validated");
        let s = model.bus_index(&reg.secondary_bus).expect("validated");
        add_bus(p, Provenance::RegulatorPrimary, &mut seen, &mut nodes);
        add_bus(s, Provenance::RegulatorSecondary, &mut seen, &mut nodes);
    }
    for pv in model.pv_plants() {
        let b = model.bus_index(&pv.bus).expect("validated");
        add_bus(b, Provenance::PvPlant, &mut seen, &mut nodes);
    }
    let solves = dataset
        .rows
        .iter()
        .map(|r| r.voltages.as_slice())
        .chain(dataset.tap_rows.iter().map(|t| t.after.as_slice()));
    for v in solves {
        let (hi, lo) = arg_extremes(v);
        for idx in [hi, lo] {
            if seen.insert(idx) {
                nodes.push(CriticalNode {
                    node: model.nodes()[idx].clone(),
                    index: idx,
                    provenance: Provenance::ObservedExtreme,
                });
            }
        }
    }
    Ok(CriticalNodeSet { nodes })
}

fn fmt_taps(t: &[i32]) -> String {
    t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_taps(s: &str) -> Result<Vec<i32>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.trim().parse::<i32>().map_err(|_| Error::Parse(format!("bad tap '{x}'"))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    schema_version: u32,
    channels: Vec<String>,
    nodes: Vec<String>,
    baseline_taps: Vec<i32>,
    q_levels: Vec<f64>,
    scenarios: Vec<Scenario>,
}

const DATASET_SCHEMA: u32 = 1;

/// Persist as `dataset.csv`, `tap_rows.csv` and `dataset_manifest.json`.
pub fn write_dataset(dataset: &TrainingDataset, model: &FeederModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let node_names: Vec<String> = model.nodes().iter().map(|n| n.to_string()).collect();

    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA,
        channels: dataset.channels.clone(),
        nodes: node_names.clone(),
        baseline_taps: dataset.baseline_taps.clone(),
        q_levels: dataset.q_levels.clone(),
        scenarios: dataset.scenarios.clone(),
    };
    let mpath = dir.join("dataset_manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;

    let path = dir.join("dataset.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["scenario".to_string(), "plant".into(), "q_kvar".into(), "taps".into(), "head_kvar".into()];
    header.extend(dataset.channels.iter().cloned());
    header.extend(node_names.iter().map(|n| format!("v_{n}")));
    w.write_record(&header)?;
    let taps = fmt_taps(&dataset.baseline_taps);
    for r in &dataset.rows {
        let mut rec = vec![
            r.scenario.to_string(),
            model.pv_plants()[r.plant].id.clone(),
            r.q_kvar.to_string(),
            taps.clone(),
            r.head_kvar.to_string(),
        ];
        rec.extend(r.measurements.iter().map(|v| v.to_string()));
        rec.extend(r.voltages.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("tap_rows.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["regulator".to_string(), "step".into(), "kind".into()];
    header.extend(node_names.iter().map(|n| format!("v_{n}")));
    w.write_record(&header)?;
    for t in &dataset.tap_rows {
        for (kind, v) in [("before", &t.before), ("after", &t.after)] {
            let mut rec = vec![model.regulators()[t.regulator].id.clone(), t.step.to_string(), kind.to_string()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_dataset(model: &FeederModel, dir: impl AsRef<Path>) -> Result<TrainingDataset> {
    let dir = dir.as_ref();
    let mpath = dir.join("dataset_manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != DATASET_SCHEMA {
        return Err(Error::Parse(format!("unsupported dataset schema {}", manifest.schema_version)));
    }
    let n_nodes = model.node_count();
    if manifest.nodes.len() != n_nodes {
        return Err(Error::Validation("dataset was generated for a different feeder".into()));
    }
    let n_ch = manifest.channels.len();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")));

    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("dataset.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 + n_ch + n_nodes {
            return Err(Error::Parse("dataset row has wrong width".into()));
        }
        let plant = model
            .plant_index(&rec[1])
            .ok_or_else(|| Error::Parse(format!("unknown plant '{}'", &rec[1])))?;
        let taps = parse_taps(&rec[3])?;
        if taps != manifest.baseline_taps {
            return Err(Error::Validation("sweep row taps differ from the baseline".into()));
        }
        rows.push(SweepRow {
            scenario: rec[0].trim().parse().map_err(|_| Error::Parse("bad scenario".into()))?,
            plant,
            q_kvar: num(&rec[2])?,
            head_kvar: num(&rec[4])?,
            measurements: (5..5 + n_ch).map(|c| num(&rec[c])).collect::<Result<_>>()?,
            voltages: (5 + n_ch..5 + n_ch + n_nodes).map(|c| num(&rec[c])).collect::<Result<_>>()?,
        });
    }

    let mut tap_rows: Vec<TapRow> = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("tap_rows.csv"))?;
    for rec in rdr.records() {
        let rec = rec?;
        let regulator = model
            .regulator_index(&rec[0])
            .ok_or_else(|| Error::Parse(format!("unknown regulator '{}'", &rec[0])))?;
        let step: i32 = rec[1].trim().parse().map_err(|_| Error::Parse("bad step".into()))?;
        let v: Vec<f64> = (3..3 + n_nodes).map(|c| num(&rec[c])).collect::<Result<_>>()?;
        match &rec[2] {
            "before" => tap_rows.push(TapRow {
                regulator,
                step,
                before: v,
                after: Vec::new(),
            }),
            "after" => match tap_rows.last_mut() {
                Some(t) if t.regulator == regulator && t.after.is_empty() => t.after = v,
                _ => return Err(Error::Parse("tap row 'after' without 'before'".into())),
            },
            other => return Err(Error::Parse(format!("unknown tap row kind '{other}'"))),
        }
    }

    Ok(TrainingDataset {
        channels: manifest.channels,
        scenarios: manifest.scenarios,
        baseline_taps: manifest.baseline_taps,
        q_levels: manifest.q_levels,
        rows,
        tap_rows,
    })
}
