//! Representative-scenario selection.
//!
//! Historical timesteps are placed on a (feeder-head load, total PV) plane,
//! the plane is cut into a uniform grid of blocks, and from every non-empty
//! block the scenarios with the minimum, median and maximum load center and
//! PV center are kept.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{DistanceMetric, FeederModel};
use crate::profiles::Profiles;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Position in the source profile (timestamp order).
    pub index: usize,
    pub minute: i64,
    /// Per-load kW, model load order.
    pub load_kw: Vec<f64>,
    pub load_kvar: Vec<f64>,
    /// Per-plant kW.
    pub pv_kw: Vec<f64>,
    /// Total load minus total PV, kW.
    pub p_feeder_kw: f64,
    pub p_pv_total_kw: f64,
    /// Load center, km (or ohm, depending on the distance metric).
    pub load_center: f64,
    /// PV center; `None` when no PV is producing.
    pub pv_center: Option<f64>,
}

/// Precomputed distances used by the center computation.
#[derive(Clone, Debug)]
pub struct CenterTable {
    load_distance: Vec<f64>,
    plant_distance: Vec<f64>,
}

impl CenterTable {
    pub fn new(model: &FeederModel, metric: DistanceMetric) -> Self {
        let load_distance = model
            .loads()
            .iter()
            .map(|l| {
                let b = model.bus_index(&l.bus).expect("validated");
                model.bus_distance(b, l.phase, metric)
            })
            .collect();
        let plant_distance = model
            .pv_plants()
            .iter()
            .map(|p| {
                let b = model.bus_index(&p.bus).expect("validated");
                let d: f64 = p.phases.iter().map(|ph| model.bus_distance(b, *ph, metric)).sum();
                d / p.phases.len() as f64
            })
            .collect();
        Self {
            load_distance,
            plant_distance,
        }
    }

    /// Injection-weighted mean distances `(D_L, D_PV)`.
    pub fn centers(&self, load_kw: &[f64], pv_kw: &[f64]) -> Result<(f64, Option<f64>)> {
        let total_load: f64 = load_kw.iter().sum();
        if !(total_load > 0.0) {
            return Err(Error::DegenerateScenario(format!(
                "total load {total_load} kW; load center undefined"
            )));
        }
        let d_l = load_kw
            .iter()
            .zip(&self.load_distance)
            .map(|(l, d)| l * d)
            .sum::<f64>()
            / total_load;
        let total_pv: f64 = pv_kw.iter().sum();
        let d_pv = (total_pv > 0.0).then(|| {
            pv_kw
                .iter()
                .zip(&self.plant_distance)
                .map(|(p, d)| p * d)
                .sum::<f64>()
                / total_pv
        });
        Ok((d_l, d_pv))
    }
}

/// Load and PV centers of a scenario's injections.
pub fn compute_centers(scenario: &Scenario, model: &FeederModel) -> Result<(f64, Option<f64>)> {
    CenterTable::new(model, DistanceMetric::LengthKm).centers(&scenario.load_kw, &scenario.pv_kw)
}

/// One scenario per profile timestep, with derived features.
pub fn scenarios_from_profiles(
    model: &FeederModel,
    profiles: &Profiles,
    metric: DistanceMetric,
) -> Result<Vec<Scenario>> {
    let table = CenterTable::new(model, metric);
    (0..profiles.len())
        .map(|t| {
            let load_kw = profiles.load_kw[t].clone();
            let pv_kw = profiles.pv_kw[t].clone();
            let (load_center, pv_center) = table
                .centers(&load_kw, &pv_kw)
                .map_err(|e| Error::DegenerateScenario(format!("minute {}: {e}", profiles.minutes[t])))?;
            let total_load: f64 = load_kw.iter().sum();
            let total_pv: f64 = pv_kw.iter().sum();
            Ok(Scenario {
                index: t,
                minute: profiles.minutes[t],
                load_kvar: profiles.load_kvar[t].clone(),
                load_kw,
                pv_kw,
                p_feeder_kw: total_load - total_pv,
                p_pv_total_kw: total_pv,
                load_center,
                pv_center,
            })
        })
        .collect()
}

/// Uniform grid over the observed (P_feeder, P_PVTOT) range. Columns split
/// the feeder-head axis, rows split the PV axis; blocks are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub feeder_range: (f64, f64),
    pub pv_range: (f64, f64),
    /// Scenario positions (into the partitioned list) per block.
    pub blocks: Vec<Vec<usize>>,
}

impl BlockGrid {
    pub fn block(&self, row: usize, col: usize) -> &[usize] {
        &self.blocks[row * self.cols + col]
    }

    pub fn non_empty(&self) -> usize {
        self.blocks.iter().filter(|b| !b.is_empty()).count()
    }

    /// Indices of blocks with no scenarios.
    pub fn empty_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.blocks[i].is_empty()).collect()
    }
}

fn cell(x: f64, (lo, hi): (f64, f64), n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let f = ((x - lo) / (hi - lo) * n as f64).floor();
    (f.max(0.0) as usize).min(n - 1)
}

pub fn partition_blocks(scenarios: &[Scenario], rows: usize, cols: usize) -> Result<BlockGrid> {
    if scenarios.is_empty() {
        return Err(Error::InsufficientData("no scenarios to partition".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Config("grid rows and cols must be >= 1".into()));
    }
    let range = |f: fn(&Scenario) -> f64| {
        scenarios
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let feeder_range = range(|s| s.p_feeder_kw);
    let pv_range = range(|s| s.p_pv_total_kw);
    let mut blocks = vec![Vec::new(); rows * cols];
    for (i, s) in scenarios.iter().enumerate() {
        let c = cell(s.p_feeder_kw, feeder_range, cols);
        let r = cell(s.p_pv_total_kw, pv_range, rows);
        blocks[r * cols + c].push(i);
    }
    Ok(BlockGrid {
        rows,
        cols,
        feeder_range,
        pv_range,
        blocks,
    })
}

fn push_unique(out: &mut Vec<usize>, i: usize) {
    if !out.contains(&i) {
        out.push(i);
    }
}

/// Min / lower-median / max picks of `key` over `members`; ties go to the
/// earliest timestamp.
fn extremes(members: &[usize], scenarios: &[Scenario], key: impl Fn(&Scenario) -> Option<f64>) -> Vec<usize> {
    let mut keyed: Vec<(f64, i64, usize)> = members
        .iter()
        .filter_map(|&i| key(&scenarios[i]).map(|k| (k, scenarios[i].minute, i)))
        .collect();
    if keyed.is_empty() {
        return Vec::new();
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n = keyed.len();
    // earliest scenario among those sharing the maximum value
    let max_val = keyed[n - 1].0;
    let max_pick = keyed.iter().find(|k| k.0 == max_val).expect("non-empty").2;
    vec![keyed[0].2, keyed[(n - 1) / 2].2, max_pick]
}

/// Positions of the guided picks, block by block.
pub fn representative_indices(grid: &BlockGrid, scenarios: &[Scenario]) -> Vec<usize> {
    let mut out = Vec::new();
    for members in &grid.blocks {
        if members.is_empty() {
            continue;
        }
        let mut picks = Vec::new();
        for i in extremes(members, scenarios, |s| Some(s.load_center)) {
            push_unique(&mut picks, i);
        }
        for i in extremes(members, scenarios, |s| s.pv_center) {
            push_unique(&mut picks, i);
        }
        out.extend(picks);
    }
    out
}

pub fn select_representatives(grid: &BlockGrid, scenarios: &[Scenario]) -> Vec<Scenario> {
    representative_indices(grid, scenarios)
        .into_iter()
        .map(|i| scenarios[i].clone())
        .collect()
}

/// Positions of six uniform draws without replacement per non-empty block.
pub fn random_indices(grid: &BlockGrid, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for members in &grid.blocks {
        if members.is_empty() {
            continue;
        }
        let k = members.len().min(6);
        let mut picks: Vec<usize> = sample(&mut rng, members.len(), k).into_iter().map(|j| members[j]).collect();
        picks.sort_unstable();
        out.extend(picks);
    }
    out
}

pub fn select_random(grid: &BlockGrid, scenarios: &[Scenario], seed: u64) -> Vec<Scenario> {
    random_indices(grid, seed)
        .into_iter()
        .map(|i| scenarios[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(i: usize, p_feeder: f64, p_pv: f64, d_l: f64, d_pv: Option<f64>) -> Scenario {
        Scenario {
            index: i,
            minute: i as i64,
            load_kw: vec![],
            load_kvar: vec![],
            pv_kw: vec![],
            p_feeder_kw: p_feeder,
            p_pv_total_kw: p_pv,
            load_center: d_l,
            pv_center: d_pv,
        }
    }

    fn table(loads: &[f64], plants: &[f64]) -> CenterTable {
        CenterTable {
            load_distance: loads.to_vec(),
            plant_distance: plants.to_vec(),
        }
    }

    #[test]
    fn single_load_center_is_its_distance() {
        let (d_l, _) = table(&[5.0], &[]).centers(&[3.0], &[]).unwrap();
        assert_eq!(d_l, 5.0);
    }

    #[test]
    fn two_equal_loads_center_between() {
        let (d_l, _) = table(&[1.0, 3.0], &[]).centers(&[2.0, 2.0], &[]).unwrap();
        assert!((d_l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn night_pv_center_is_undefined() {
        let (_, d_pv) = table(&[1.0], &[2.0, 4.0]).centers(&[1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(d_pv, None);
    }

    #[test]
    fn zero_load_is_degenerate() {
        assert!(matches!(
            table(&[1.0], &[]).centers(&[0.0], &[]),
            Err(Error::DegenerateScenario(_))
        ));
    }

    #[test]
    fn one_by_one_grid_holds_everything() {
        let s: Vec<_> = (0..7).map(|i| sc(i, i as f64, 2.0 * i as f64, 1.0, None)).collect();
        let g = partition_blocks(&s, 1, 1).unwrap();
        assert_eq!(g.blocks[0].len(), 7);
    }

    #[test]
    fn corners_fall_in_distinct_blocks() {
        let s = vec![
            sc(0, 0.0, 0.0, 1.0, None),
            sc(1, 10.0, 0.0, 1.0, None),
            sc(2, 0.0, 10.0, 1.0, None),
            sc(3, 10.0, 10.0, 1.0, None),
        ];
        let g = partition_blocks(&s, 2, 2).unwrap();
        assert_eq!(g.block(0, 0), &[0]);
        assert_eq!(g.block(0, 1), &[1]);
        assert_eq!(g.block(1, 0), &[2]);
        assert_eq!(g.block(1, 1), &[3]);
    }

    #[test]
    fn identical_scenarios_collapse_to_one_block() {
        let s: Vec<_> = (0..5).map(|i| sc(i, 3.0, 3.0, 1.0, None)).collect();
        let g = partition_blocks(&s, 5, 5).unwrap();
        assert_eq!(g.non_empty(), 1);
        assert_eq!(g.blocks[0].len(), 5);
        assert_eq!(g.empty_blocks().len(), 24);
    }

    #[test]
    fn single_member_block_selected_once() {
        let s = vec![sc(0, 1.0, 1.0, 2.0, Some(3.0))];
        let g = partition_blocks(&s, 1, 1).unwrap();
        assert_eq!(representative_indices(&g, &s), vec![0]);
    }

    #[test]
    fn load_center_picks_min_median_max() {
        let s: Vec<_> = [3.0, 1.0, 5.0, 2.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &d)| sc(i, 1.0, 1.0, d, Some(10.0 + i as f64)))
            .collect();
        let g = partition_blocks(&s, 1, 1).unwrap();
        let picks = representative_indices(&g, &s);
        // D_L picks at 1, 3, 5 km are positions 1, 0, 2
        assert_eq!(&picks[..3], &[1, 0, 2]);
    }

    #[test]
    fn six_distinct_extrema() {
        let d_l = [1.0, 2.0, 3.0, 9.0, 9.5, 9.7, 9.9];
        let d_pv = [5.0, 5.1, 1.0, 5.15, 5.3, 8.0, 5.05];
        let s: Vec<_> = (0..7).map(|i| sc(i, 1.0, 1.0, d_l[i], Some(d_pv[i]))).collect();
        let g = partition_blocks(&s, 1, 1).unwrap();
        let picks = representative_indices(&g, &s);
        assert_eq!(picks.len(), 6);
    }

    #[test]
    fn ties_go_to_earliest_timestamp() {
        let s = vec![
            sc(0, 1.0, 1.0, 2.0, None),
            sc(1, 1.0, 1.0, 2.0, None),
            sc(2, 1.0, 1.0, 1.0, None),
        ];
        let g = partition_blocks(&s, 1, 1).unwrap();
        // min 2, median (lower) 0, max 0 (earliest of the tie)
        assert_eq!(representative_indices(&g, &s), vec![2, 0]);
    }

    #[test]
    fn random_selection_is_seeded() {
        let s: Vec<_> = (0..1000)
            .map(|i| sc(i, (i % 37) as f64, (i % 11) as f64, 1.0, None))
            .collect();
        let g = partition_blocks(&s, 5, 5).unwrap();
        let a = random_indices(&g, 7);
        assert_eq!(a, random_indices(&g, 7));
        assert!(a.len() <= 6 * g.non_empty());
        assert_ne!(a, random_indices(&g, 8));
    }

    #[test]
    fn small_block_fully_selected_at_random() {
        let s: Vec<_> = (0..4).map(|i| sc(i, 1.0, 1.0, 1.0, None)).collect();
        let g = partition_blocks(&s, 1, 1).unwrap();
        assert_eq!(random_indices(&g, 1), vec![0, 1, 2, 3]);
    }
}
