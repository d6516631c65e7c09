//! Training pipeline, estimator evaluation and the experiment drivers.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_case, write_metrics_csv, Case, CaseConfig, MetricsReport};
use crate::error::{Error, Result};
use crate::estimator::{VoltageEstimator, DEFAULT_OFFSET_KVAR};
use crate::feeder::{DistanceMetric, FeederModel};
use crate::powerflow::{solve_with, SolverOptions};
use crate::profiles::Profiles;
use crate::scenario::{partition_blocks, random_indices, representative_indices, scenarios_from_profiles};
use crate::training::{
    default_q_levels, generate_training_data, select_critical_nodes, CriticalNodeSet, TrainingDataset,
    TrainingOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    Guided,
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub selection: SelectionMethod,
    pub metric: DistanceMetric,
    /// Fractions of plant rating.
    pub q_levels: Vec<f64>,
    pub curve_offset_kvar: f64,
    pub solver: SolverOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grid_rows: 5,
            grid_cols: 5,
            selection: SelectionMethod::Guided,
            metric: DistanceMetric::LengthKm,
            q_levels: default_q_levels(),
            curve_offset_kvar: DEFAULT_OFFSET_KVAR,
            solver: SolverOptions::default(),
        }
    }
}

pub struct TrainedModel {
    pub estimator: VoltageEstimator,
    pub dataset: TrainingDataset,
    /// Profile timesteps chosen as training scenarios.
    pub selected: Vec<usize>,
}

/// Select scenarios from `history`, generate training data and fit the
/// estimator. A fixed `critical` set replaces the one derived from the data.
pub fn train_estimator(
    model: &FeederModel,
    history: &Profiles,
    cfg: &TrainConfig,
    critical: Option<&CriticalNodeSet>,
) -> Result<TrainedModel> {
    history.check(model)?;
    let scenarios = scenarios_from_profiles(model, history, cfg.metric)?;
    let grid = partition_blocks(&scenarios, cfg.grid_rows, cfg.grid_cols)?;
    let selected = match cfg.selection {
        SelectionMethod::Guided => representative_indices(&grid, &scenarios),
        SelectionMethod::Random { seed } => random_indices(&grid, seed),
    };
    let chosen: Vec<_> = selected.iter().map(|&i| scenarios[i].clone()).collect();
    let opts = TrainingOptions {
        q_levels: cfg.q_levels.clone(),
        solver: cfg.solver,
    };
    let dataset = generate_training_data(model, &chosen, &opts)?;
    let critical = match critical {
        Some(c) => c.clone(),
        None => select_critical_nodes(&dataset, model)?,
    };
    let estimator = VoltageEstimator::fit(model, &dataset, critical, cfg.curve_offset_kvar)?;
    Ok(TrainedModel {
        estimator,
        dataset,
        selected,
    })
}

/// Signed estimation errors `V̂ − V` over critical-node-timesteps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrors {
    pub uncorrected: Vec<f64>,
    pub corrected: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean_signed: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub within_001: f64,
}

impl ErrorSummary {
    pub fn of(errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        Self {
            count: errors.len(),
            mean_signed: errors.iter().sum::<f64>() / n,
            mean_abs: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
            max_abs: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
            within_001: errors.iter().filter(|e| e.abs() <= 0.01).count() as f64 / n,
        }
    }

    const HEADER: [&'static str; 5] = ["count", "mean_signed", "mean_abs", "max_abs", "within_0.01"];

    fn record(&self) -> Vec<String> {
        vec![
            self.count.to_string(),
            format!("{:.8}", self.mean_signed),
            format!("{:.8}", self.mean_abs),
            format!("{:.8}", self.max_abs),
            format!("{:.6}", self.within_001),
        ]
    }
}

/// Fixed-width error histogram, with the outer bins catching overflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ErrorHistogram {
    pub fn new(errors: &[f64], limit: f64, bins: usize) -> Self {
        let width = 2.0 * limit / bins as f64;
        let edges = (0..=bins).map(|i| -limit + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for e in errors {
            let b = ((e + limit) / width).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { edges, counts }
    }
}

/// Compare estimates with power-flow truth over `profiles` (every
/// `stride`-th step), with PV at unity power factor and baseline taps.
pub fn evaluate_estimator(
    model: &FeederModel,
    est: &VoltageEstimator,
    profiles: &Profiles,
    stride: usize,
    solver: &SolverOptions,
) -> Result<EstimationErrors> {
    let taps = est.baseline_taps().to_vec();
    let zero_q = vec![0.0; model.pv_plants().len()];
    let steps: Vec<usize> = (0..profiles.len()).step_by(stride.max(1)).collect();
    let per_step: Vec<(Vec<f64>, Vec<f64>)> = steps
        .par_iter()
        .map(|&t| {
            let state = profiles.state_at(t, &zero_q, &taps);
            let sol = solve_with(model, &state, solver)?;
            let m = sol.measurements.to_vector();
            let sec: Vec<f64> = (0..model.regulators().len())
                .map(|r| sol.magnitudes[model.regulator_secondary_node(r)])
                .collect();
            let raw = est.estimate_voltages(&m, &taps)?;
            let cor = est.estimate_voltages_corrected(&m, &taps, &sec)?.voltages;
            let truth: Vec<f64> = est.critical.nodes.iter().map(|c| sol.magnitudes[c.index]).collect();
            Ok((
                raw.iter().zip(&truth).map(|(a, b)| a - b).collect(),
                cor.iter().zip(&truth).map(|(a, b)| a - b).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut out = EstimationErrors::default();
    for (u, c) in per_step {
        out.uncorrected.extend(u);
        out.corrected.extend(c);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SelectionComparison,
    CorrectionComparison,
    DeadbandSweep,
    CaseMatrix,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selection-comparison" => Ok(Self::SelectionComparison),
            "correction-comparison" => Ok(Self::CorrectionComparison),
            "deadband-sweep" => Ok(Self::DeadbandSweep),
            "case-matrix" => Ok(Self::CaseMatrix),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SelectionComparison => "selection-comparison",
            Self::CorrectionComparison => "correction-comparison",
            Self::DeadbandSweep => "deadband-sweep",
            Self::CaseMatrix => "case-matrix",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub case: CaseConfig,
    pub train: TrainConfig,
    pub random_seeds: Vec<u64>,
    pub bandwidths_v: Vec<f64>,
    pub deadband_cases: Vec<Case>,
    pub matrix_cases: Vec<Case>,
    /// Evaluation stride for estimator comparisons, steps.
    pub eval_stride: usize,
    pub histogram_limit: f64,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: CaseConfig::default(),
            train: TrainConfig::default(),
            random_seeds: vec![1, 2, 3, 4, 5],
            bandwidths_v: vec![2.0, 3.0, 4.0],
            deadband_cases: vec![Case::C, Case::D],
            matrix_cases: Case::ALL.to_vec(),
            eval_stride: 5,
            histogram_limit: 0.03,
            histogram_bins: 24,
        }
    }
}

pub struct ExperimentInputs<'a> {
    pub model: &'a FeederModel,
    /// Record used for scenario selection.
    pub history: &'a Profiles,
    /// Held-out record for estimator comparisons.
    pub evaluation: &'a Profiles,
    /// Record driving the closed-loop simulations.
    pub simulation: &'a Profiles,
    /// Pre-trained estimator; trained from `history` when absent.
    pub estimator: Option<&'a VoltageEstimator>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub feeder: String,
    pub feeder_sha256: String,
    pub estimator_sha256: Option<String>,
    pub profiles_sha256: Vec<String>,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    /// Labelled metric rows (deadband sweep, case matrix).
    pub metrics: Vec<(Vec<String>, MetricsReport)>,
    /// Labelled error summaries (selection and correction comparisons).
    pub errors: Vec<(Vec<String>, ErrorSummary)>,
    pub files: Vec<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn write_error_csv(path: &Path, labels: &[&str], rows: &[(Vec<String>, ErrorSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = labels.to_vec();
    header.extend(ErrorSummary::HEADER);
    w.write_record(&header)?;
    for (l, s) in rows {
        let mut rec = l.clone();
        rec.extend(s.record());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_histograms(path: &Path, columns: &[(String, ErrorHistogram)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    w.write_record(&header)?;
    if let Some((_, first)) = columns.first() {
        for b in 0..first.counts.len() {
            let mut rec = vec![format!("{:.4}", first.edges[b]), format!("{:.4}", first.edges[b + 1])];
            rec.extend(columns.iter().map(|c| c.1.counts[b].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn profiles_hash(p: &Profiles) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(p)?))
}

/// Run one experiment and write its CSV outputs and `manifest.json` into
/// `out_dir`.
pub fn run_experiment(
    kind: ExperimentKind,
    inputs: &ExperimentInputs<'_>,
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.case.validate()?;
    let model = inputs.model;

    let trained;
    let estimator = match inputs.estimator {
        Some(e) => e,
        None => {
            trained = train_estimator(model, inputs.history, &cfg.train, None)?;
            &trained.estimator
        }
    };

    let mut report = ExperimentReport::default();
    let hist = |e: &[f64]| ErrorHistogram::new(e, cfg.histogram_limit, cfg.histogram_bins.max(1));
    match kind {
        ExperimentKind::SelectionComparison => {
            // same critical set for every method so errors are comparable
            let critical = &estimator.critical;
            let mut methods = vec![("guided".to_string(), SelectionMethod::Guided)];
            methods.extend(
                cfg.random_seeds
                    .iter()
                    .map(|&s| (format!("random-{s}"), SelectionMethod::Random { seed: s })),
            );
            let results: Vec<(String, SelectionMethod, EstimationErrors)> = methods
                .par_iter()
                .map(|(name, method)| {
                    let tc = TrainConfig {
                        selection: *method,
                        ..cfg.train.clone()
                    };
                    let t = train_estimator(model, inputs.history, &tc, Some(critical))?;
                    let e = evaluate_estimator(model, &t.estimator, inputs.evaluation, cfg.eval_stride, &cfg.train.solver)?;
                    Ok((name.clone(), *method, e))
                })
                .collect::<Result<_>>()?;
            let mut hists = Vec::new();
            for (name, method, e) in &results {
                let seed = match method {
                    SelectionMethod::Guided => String::new(),
                    SelectionMethod::Random { seed } => seed.to_string(),
                };
                let label = if seed.is_empty() { "guided" } else { "random" };
                report
                    .errors
                    .push((vec![label.to_string(), seed], ErrorSummary::of(&e.uncorrected)));
                hists.push((name.clone(), hist(&e.uncorrected)));
            }
            let p = out_dir.join("selection_comparison.csv");
            write_error_csv(&p, &["method", "seed"], &report.errors)?;
            report.files.push(p);
            let p = out_dir.join("selection_histogram.csv");
            write_histograms(&p, &hists)?;
            report.files.push(p);
        }
        ExperimentKind::CorrectionComparison => {
            let e = evaluate_estimator(model, estimator, inputs.evaluation, cfg.eval_stride, &cfg.train.solver)?;
            report
                .errors
                .push((vec!["uncorrected".into()], ErrorSummary::of(&e.uncorrected)));
            report.errors.push((vec!["corrected".into()], ErrorSummary::of(&e.corrected)));
            let p = out_dir.join("correction_comparison.csv");
            write_error_csv(&p, &["pathway"], &report.errors)?;
            report.files.push(p);
            let p = out_dir.join("correction_histogram.csv");
            write_histograms(
                &p,
                &[
                    ("uncorrected".into(), hist(&e.uncorrected)),
                    ("corrected".into(), hist(&e.corrected)),
                ],
            )?;
            report.files.push(p);
        }
        ExperimentKind::DeadbandSweep => {
            let conditions: Vec<(Case, f64)> = cfg
                .deadband_cases
                .iter()
                .flat_map(|&c| cfg.bandwidths_v.iter().map(move |&b| (c, b)))
                .collect();
            report.metrics = conditions
                .par_iter()
                .map(|&(case, b)| {
                    let cc = CaseConfig {
                        case,
                        bandwidth_v: b,
                        ..cfg.case.clone()
                    };
                    let (_, m) = run_case(model, inputs.simulation, &cc, Some(estimator))?;
                    Ok((vec![case.to_string(), format!("{b}")], m))
                })
                .collect::<Result<_>>()?;
            let p = out_dir.join("deadband_sweep.csv");
            write_metrics_csv(&p, &["case_id", "bandwidth_v"], &report.metrics)?;
            report.files.push(p);
        }
        ExperimentKind::CaseMatrix => {
            report.metrics = cfg
                .matrix_cases
                .par_iter()
                .map(|&case| {
                    let (_, m) = run_case(model, inputs.simulation, &cfg.case.with_case(case), Some(estimator))?;
                    Ok((Vec::new(), m))
                })
                .collect::<Result<_>>()?;
            let p = out_dir.join("case_matrix.csv");
            write_metrics_csv(&p, &[], &report.metrics)?;
            report.files.push(p);
        }
    }

    let manifest = RunManifest {
        experiment: kind.to_string(),
        feeder: model.name().to_string(),
        feeder_sha256: sha256_hex(model.to_json()?.as_bytes()),
        estimator_sha256: Some(sha256_hex(&serde_json::to_vec(estimator)?)),
        profiles_sha256: vec![
            profiles_hash(inputs.history)?,
            profiles_hash(inputs.evaluation)?,
            profiles_hash(inputs.simulation)?,
        ],
        config: cfg.clone(),
        files: report
            .files
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
    };
    let p = out_dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    report.files.push(p);
    Ok(report)
}
