//! Static feeder model: buses, line sections, loads, PV plants and voltage
//! regulators, plus the topology queries the rest of the crate relies on.
//!
//! A *node* is a bus × phase pair. Node indices follow bus file order, then
//! phase order a, b, c within each bus.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System-wide power base per phase, in VA.
pub const POWER_BASE_VA: f64 = 1.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    /// Nominal angle of this phase's source voltage in radians.
    pub fn nominal_angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            other => Err(Error::Parse(format!("unknown phase '{other}'"))),
        }
    }
}

/// A single-phase node: bus id plus phase.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub bus: String,
    pub phase: Phase,
}

impl NodeRef {
    pub fn new(bus: impl Into<String>, phase: Phase) -> Self {
        Self {
            bus: bus.into(),
            phase,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub phases: Vec<Phase>,
    /// Line-to-line base voltage in kV.
    pub base_kv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSection {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_km: f64,
    /// 3×3 phase impedance matrix of the whole section, `[r, x]` in ohms.
    /// Rows and columns for phases absent at the `to` bus are ignored.
    pub z: [[[f64; 2]; 3]; 3],
}

impl LineSection {
    pub fn impedance(&self, row: Phase, col: Phase) -> Complex64 {
        let [r, x] = self.z[row.index()][col.index()];
        Complex64::new(r, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    pub kw: f64,
    pub kvar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvPlant {
    pub id: String,
    pub bus: String,
    pub phases: Vec<Phase>,
    /// Inverter rating S_k in kVA (all phases together).
    pub kva: f64,
}

impl PvPlant {
    /// Reactive headroom sqrt(S² − P²) at active output `p_kw`.
    pub fn excess_capacity_kvar(&self, p_kw: f64) -> f64 {
        let s = self.kva;
        (s * s - p_kw * p_kw).max(0.0).sqrt()
    }
}

fn default_tap_min() -> i32 {
    -16
}

fn default_tap_max() -> i32 {
    16
}

fn default_tap_step() -> f64 {
    0.00625
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regulator {
    pub id: String,
    pub phase: Phase,
    pub primary_bus: String,
    pub secondary_bus: String,
    #[serde(default = "default_tap_min")]
    pub tap_min: i32,
    #[serde(default = "default_tap_max")]
    pub tap_max: i32,
    /// Ratio change per tap, pu.
    #[serde(default = "default_tap_step")]
    pub tap_step: f64,
    #[serde(default)]
    pub initial_tap: i32,
    /// Regulators sharing a gang id are operated as one device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gang: Option<String>,
}

impl Regulator {
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + tap as f64 * self.tap_step
    }

    pub fn clamp_tap(&self, tap: i32) -> i32 {
        tap.clamp(self.tap_min, self.tap_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub bus: String,
    /// Per-phase source voltage magnitude in pu, phases a, b, c.
    pub voltage_pu: [f64; 3],
}

/// On-disk representation of a feeder; see `docs/feeder-schema.md`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederData {
    #[serde(default)]
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<LineSection>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub pv_plants: Vec<PvPlant>,
    #[serde(default)]
    pub regulators: Vec<Regulator>,
    pub source: Source,
}

/// How electrical distance from the feeder head is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Sum of section lengths in km.
    #[default]
    LengthKm,
    /// Sum of the node phase's self-impedance magnitude in ohms.
    ImpedanceOhm,
}

/// Edge by which a bus is fed from its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentEdge {
    Line(usize),
    Regulator(usize),
}

/// Zero-impedance ideal ratio branch formed by all regulators sharing a
/// primary/secondary bus pair.
#[derive(Clone, Debug)]
pub struct RegulatorBranch {
    pub primary: usize,
    pub secondary: usize,
    /// Regulator index per phase, if that phase is regulated.
    pub members: [Option<usize>; 3],
}

#[derive(Clone, Debug)]
struct Topology {
    bus_index: HashMap<String, usize>,
    /// node index of (bus, phase), `None` if the phase is absent
    node_of: Vec<[Option<usize>; 3]>,
    nodes: Vec<NodeRef>,
    node_bus: Vec<usize>,
    parent: Vec<Option<(usize, ParentEdge)>>,
    children: Vec<Vec<usize>>,
    /// buses in breadth-first order from the source
    order: Vec<usize>,
    branches: Vec<RegulatorBranch>,
    /// branch index of every regulator
    regulator_branch: Vec<usize>,
}

/// Validated, immutable feeder model.
#[derive(Clone, Debug)]
pub struct FeederModel {
    data: FeederData,
    topo: Topology,
}

impl PartialEq for FeederModel {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

/// Load and validate a feeder model file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeederModel::from_json(&text)
}

pub fn write_feeder(model: &FeederModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

impl FeederModel {
    pub fn new(data: FeederData) -> Result<Self> {
        let topo = validate(&data)?;
        Ok(Self { data, topo })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: FeederData = serde_json::from_str(text)?;
        Self::new(data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.data)?)
    }

    pub fn data(&self) -> &FeederData {
        &self.data
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.data.buses
    }

    pub fn lines(&self) -> &[LineSection] {
        &self.data.lines
    }

    pub fn loads(&self) -> &[Load] {
        &self.data.loads
    }

    pub fn pv_plants(&self) -> &[PvPlant] {
        &self.data.pv_plants
    }

    pub fn regulators(&self) -> &[Regulator] {
        &self.data.regulators
    }

    pub fn source(&self) -> &Source {
        &self.data.source
    }

    pub fn source_bus(&self) -> usize {
        self.topo.bus_index[&self.data.source.bus]
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.topo.nodes
    }

    pub fn node_count(&self) -> usize {
        self.topo.nodes.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.topo.bus_index.get(id).copied()
    }

    pub fn node_index(&self, node: &NodeRef) -> Option<usize> {
        let b = self.bus_index(&node.bus)?;
        self.topo.node_of[b][node.phase.index()]
    }

    pub(crate) fn node_at(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.topo.node_of[bus][phase.index()]
    }

    pub(crate) fn bus_order(&self) -> &[usize] {
        &self.topo.order
    }

    pub(crate) fn parent(&self, bus: usize) -> Option<(usize, ParentEdge)> {
        self.topo.parent[bus]
    }

    pub(crate) fn children(&self, bus: usize) -> &[usize] {
        &self.topo.children[bus]
    }

    pub(crate) fn regulator_branches(&self) -> &[RegulatorBranch] {
        &self.topo.branches
    }

    pub fn regulator_index(&self, id: &str) -> Option<usize> {
        self.data.regulators.iter().position(|r| r.id == id)
    }

    pub fn plant_index(&self, id: &str) -> Option<usize> {
        self.data.pv_plants.iter().position(|p| p.id == id)
    }

    /// Initial tap vector, one entry per regulator.
    pub fn initial_taps(&self) -> Vec<i32> {
        self.data.regulators.iter().map(|r| r.initial_tap).collect()
    }

    /// Secondary-bus node of a regulator (its regulated phase).
    pub fn regulator_secondary_node(&self, reg: usize) -> usize {
        let r = &self.data.regulators[reg];
        let b = self.topo.bus_index[&r.secondary_bus];
        self.topo.node_of[b][r.phase.index()].expect("validated regulator phase")
    }

    pub fn regulator_primary_node(&self, reg: usize) -> usize {
        let r = &self.data.regulators[reg];
        let b = self.topo.bus_index[&r.primary_bus];
        self.topo.node_of[b][r.phase.index()].expect("validated regulator phase")
    }

    /// Base line-to-neutral voltage of a bus in volts.
    pub fn base_ln_volts(&self, bus: usize) -> f64 {
        self.data.buses[bus].base_kv * 1000.0 / 3f64.sqrt()
    }

    /// Per-phase impedance base in ohms for a bus.
    pub fn z_base(&self, bus: usize) -> f64 {
        let v = self.base_ln_volts(bus);
        v * v / POWER_BASE_VA
    }

    /// Bus indices on the source-to-bus path, source first.
    fn resolve(&self, node: &NodeRef) -> Result<(usize, usize)> {
        let b = self
            .bus_index(&node.bus)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        let n = self.topo.node_of[b][node.phase.index()]
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        Ok((b, n))
    }

    /// Distance of a node from the feeder head along its unique path.
    pub fn electrical_distance(&self, node: &NodeRef) -> Result<f64> {
        self.electrical_distance_with(node, DistanceMetric::LengthKm)
    }

    pub fn electrical_distance_with(&self, node: &NodeRef, metric: DistanceMetric) -> Result<f64> {
        let (b, _) = self.resolve(node)?;
        Ok(self.bus_distance(b, node.phase, metric))
    }

    pub(crate) fn bus_distance(&self, bus: usize, phase: Phase, metric: DistanceMetric) -> f64 {
        let mut d = 0.0;
        let mut cur = bus;
        while let Some((p, edge)) = self.topo.parent[cur] {
            if let ParentEdge::Line(l) = edge {
                let line = &self.data.lines[l];
                d += match metric {
                    DistanceMetric::LengthKm => line.length_km,
                    DistanceMetric::ImpedanceOhm => line.impedance(phase, phase).norm(),
                };
            }
            cur = p;
        }
        d
    }

    /// Per-node distance table, indexed like [`FeederModel::nodes`].
    pub fn node_distances(&self, metric: DistanceMetric) -> Vec<f64> {
        self.topo
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| self.bus_distance(self.topo.node_bus[i], n.phase, metric))
            .collect()
    }

    /// Regulator immediately upstream of a node: the last regulator on the
    /// source-to-node path that regulates the node's phase. A node on a
    /// regulator's secondary bus counts as downstream of it.
    pub fn upstream_regulator(&self, node: &NodeRef) -> Result<Option<usize>> {
        let (b, _) = self.resolve(node)?;
        Ok(self.upstream_regulator_of_bus(b, node.phase))
    }

    pub(crate) fn upstream_regulator_of_bus(&self, bus: usize, phase: Phase) -> Option<usize> {
        let mut cur = bus;
        while let Some((p, edge)) = self.topo.parent[cur] {
            if let ParentEdge::Regulator(br) = edge {
                if let Some(r) = self.topo.branches[br].members[phase.index()] {
                    return Some(r);
                }
            }
            cur = p;
        }
        None
    }

    /// Upstream regulator for every node, indexed like [`FeederModel::nodes`].
    pub fn upstream_regulator_map(&self) -> Vec<Option<usize>> {
        self.topo
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| self.upstream_regulator_of_bus(self.topo.node_bus[i], n.phase))
            .collect()
    }

    /// True if `node` lies on or below the secondary of regulator `reg`
    /// on the regulated phase.
    pub fn is_downstream_of(&self, node: usize, reg: usize) -> bool {
        let r = &self.data.regulators[reg];
        if self.topo.nodes[node].phase != r.phase {
            return false;
        }
        let br = self.topo.regulator_branch[reg];
        let sec = self.topo.branches[br].secondary;
        let mut cur = self.topo.node_bus[node];
        loop {
            if cur == sec {
                return true;
            }
            match self.topo.parent[cur] {
                Some((p, _)) => cur = p,
                None => return false,
            }
        }
    }

    /// Regulator control units: gang groups or single regulators, ordered
    /// by first member index.
    pub fn tap_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut gang_slot: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.data.regulators.iter().enumerate() {
            match &r.gang {
                Some(g) => match gang_slot.get(g.as_str()) {
                    Some(&slot) => groups[slot].push(i),
                    None => {
                        gang_slot.insert(g.as_str(), groups.len());
                        groups.push(vec![i]);
                    }
                },
                None => groups.push(vec![i]),
            }
        }
        groups
    }
}

fn dup_check<'a>(kind: &str, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate {kind} id '{id}'")));
        }
    }
    Ok(())
}

fn validate(data: &FeederData) -> Result<Topology> {
    dup_check("bus", data.buses.iter().map(|b| b.id.as_str()))?;
    dup_check("line", data.lines.iter().map(|l| l.id.as_str()))?;
    dup_check("load", data.loads.iter().map(|l| l.id.as_str()))?;
    dup_check("pv plant", data.pv_plants.iter().map(|p| p.id.as_str()))?;
    dup_check("regulator", data.regulators.iter().map(|r| r.id.as_str()))?;

    if data.buses.is_empty() {
        return Err(Error::Validation("feeder has no buses".into()));
    }

    let bus_index: HashMap<String, usize> = data
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.clone(), i))
        .collect();

    let mut node_of = vec![[None; 3]; data.buses.len()];
    let mut nodes = Vec::new();
    let mut node_bus = Vec::new();
    for (bi, bus) in data.buses.iter().enumerate() {
        if bus.phases.is_empty() {
            return Err(Error::Validation(format!("bus '{}' has no phases", bus.id)));
        }
        if !(bus.base_kv > 0.0) {
            return Err(Error::Validation(format!("bus '{}' has non-positive base kV", bus.id)));
        }
        let mut phases = bus.phases.clone();
        phases.sort();
        phases.dedup();
        if phases.len() != bus.phases.len() {
            return Err(Error::Validation(format!("bus '{}' lists a phase twice", bus.id)));
        }
        for ph in phases {
            node_of[bi][ph.index()] = Some(nodes.len());
            nodes.push(NodeRef::new(bus.id.clone(), ph));
            node_bus.push(bi);
        }
    }

    let lookup = |kind: &str, owner: &str, id: &str| -> Result<usize> {
        bus_index.get(id).copied().ok_or_else(|| {
            Error::Validation(format!("{kind} '{owner}' references unknown bus '{id}'"))
        })
    };
    let has_phase = |b: usize, ph: Phase| node_of[b][ph.index()].is_some();

    let src = lookup("source", "source", &data.source.bus)?;
    if data.source.voltage_pu.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Validation("source voltage must be positive".into()));
    }

    // edges: (a, b, edge)
    let mut edges: Vec<(usize, usize, ParentEdge)> = Vec::new();
    for (li, line) in data.lines.iter().enumerate() {
        let f = lookup("line", &line.id, &line.from)?;
        let t = lookup("line", &line.id, &line.to)?;
        if f == t {
            return Err(Error::Validation(format!("line '{}' is a self-loop", line.id)));
        }
        if !(line.length_km >= 0.0) {
            return Err(Error::Validation(format!("line '{}' has negative length", line.id)));
        }
        if (data.buses[f].base_kv - data.buses[t].base_kv).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "line '{}' connects buses with different base kV",
                line.id
            )));
        }
        if line.z.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("line '{}' has non-finite impedance", line.id)));
        }
        edges.push((f, t, ParentEdge::Line(li)));
    }

    let mut branches: Vec<RegulatorBranch> = Vec::new();
    let mut regulator_branch = Vec::with_capacity(data.regulators.len());
    let mut branch_of_pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (ri, reg) in data.regulators.iter().enumerate() {
        let p = lookup("regulator", &reg.id, &reg.primary_bus)?;
        let s = lookup("regulator", &reg.id, &reg.secondary_bus)?;
        if p == s {
            return Err(Error::Validation(format!(
                "regulator '{}' has identical primary and secondary bus",
                reg.id
            )));
        }
        if !has_phase(p, reg.phase) || !has_phase(s, reg.phase) {
            return Err(Error::Validation(format!(
                "regulator '{}' phase {} missing at its buses",
                reg.id, reg.phase
            )));
        }
        if !(reg.tap_step > 0.0) {
            return Err(Error::Validation(format!("regulator '{}' tap step must be > 0", reg.id)));
        }
        if reg.tap_min > 0 || reg.tap_max < 0 {
            return Err(Error::Validation(format!("regulator '{}' tap range must contain 0", reg.id)));
        }
        if reg.initial_tap < reg.tap_min || reg.initial_tap > reg.tap_max {
            return Err(Error::Validation(format!(
                "regulator '{}' initial tap outside its range",
                reg.id
            )));
        }
        let bi = *branch_of_pair.entry((p, s)).or_insert_with(|| {
            branches.push(RegulatorBranch {
                primary: p,
                secondary: s,
                members: [None; 3],
            });
            branches.len() - 1
        });
        let slot = &mut branches[bi].members[reg.phase.index()];
        if slot.is_some() {
            return Err(Error::Validation(format!(
                "regulator '{}' duplicates phase {} on its bus pair",
                reg.id, reg.phase
            )));
        }
        *slot = Some(ri);
        regulator_branch.push(bi);
    }
    for (bi, br) in branches.iter().enumerate() {
        if (data.buses[br.primary].base_kv - data.buses[br.secondary].base_kv).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "regulator branch {} -> {} changes base kV",
                data.buses[br.primary].id, data.buses[br.secondary].id
            )));
        }
        edges.push((br.primary, br.secondary, ParentEdge::Regulator(bi)));
    }

    // gang members must share a bus pair
    let mut gang_pair: HashMap<&str, usize> = HashMap::new();
    for (ri, reg) in data.regulators.iter().enumerate() {
        if let Some(g) = &reg.gang {
            let br = regulator_branch[ri];
            if *gang_pair.entry(g.as_str()).or_insert(br) != br {
                return Err(Error::Validation(format!(
                    "gang '{g}' spans more than one bus pair (regulator '{}')",
                    reg.id
                )));
            }
        }
    }

    let nb = data.buses.len();
    if edges.len() != nb - 1 {
        return Err(Error::Validation(format!(
            "non-radial: {} branches for {} buses (a radial feeder has exactly {})",
            edges.len(),
            nb,
            nb - 1
        )));
    }

    let mut adj: Vec<Vec<(usize, ParentEdge)>> = vec![Vec::new(); nb];
    for &(a, b, e) in &edges {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }

    let mut parent: Vec<Option<(usize, ParentEdge)>> = vec![None; nb];
    let mut visited = vec![false; nb];
    let mut order = Vec::with_capacity(nb);
    let mut queue = VecDeque::from([src]);
    visited[src] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, e) in &adj[u] {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            parent[v] = Some((u, e));
            queue.push_back(v);
        }
    }
    if let Some(missing) = visited.iter().position(|v| !v) {
        return Err(Error::Validation(format!(
            "non-radial: bus '{}' is not connected to the source (the branch set contains a loop)",
            data.buses[missing].id
        )));
    }

    // downstream phases must be a subset of upstream phases; regulators
    // must be oriented primary -> secondary away from the source
    let mut children = vec![Vec::new(); nb];
    for &b in &order[1..] {
        let (p, e) = parent[b].expect("non-source bus has a parent");
        children[p].push(b);
        for ph in &data.buses[b].phases {
            if !has_phase(p, *ph) {
                return Err(Error::Validation(format!(
                    "bus '{}' has phase {} absent at upstream bus '{}'",
                    data.buses[b].id, ph, data.buses[p].id
                )));
            }
        }
        if let ParentEdge::Regulator(bi) = e {
            if branches[bi].secondary != b {
                return Err(Error::Validation(format!(
                    "regulator branch {} -> {} is oriented toward the source",
                    data.buses[branches[bi].primary].id, data.buses[branches[bi].secondary].id
                )));
            }
        }
    }

    for load in &data.loads {
        let b = lookup("load", &load.id, &load.bus)?;
        if !has_phase(b, load.phase) {
            return Err(Error::Validation(format!(
                "load '{}' references phase {} absent at bus '{}'",
                load.id, load.phase, load.bus
            )));
        }
        if !load.kw.is_finite() || !load.kvar.is_finite() {
            return Err(Error::Validation(format!("load '{}' has non-finite power", load.id)));
        }
    }
    for pv in &data.pv_plants {
        let b = lookup("pv plant", &pv.id, &pv.bus)?;
        if pv.phases.is_empty() {
            return Err(Error::Validation(format!("pv plant '{}' has no phases", pv.id)));
        }
        if let Some(ph) = pv.phases.iter().find(|ph| !has_phase(b, **ph)) {
            return Err(Error::Validation(format!(
                "pv plant '{}' references phase {} absent at bus '{}'",
                pv.id, ph, pv.bus
            )));
        }
        if !(pv.kva > 0.0) {
            return Err(Error::Validation(format!("pv plant '{}' rating must be > 0", pv.id)));
        }
    }

    Ok(Topology {
        bus_index,
        node_of,
        nodes,
        node_bus,
        parent,
        children,
        order,
        branches,
        regulator_branch,
    })
}
