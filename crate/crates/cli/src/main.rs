use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use voltvar_core::error::Error;
use voltvar_core::estimator::{read_estimator, write_estimator};
use voltvar_core::feeder::{load_feeder, write_feeder, FeederModel};
use voltvar_core::harness::{
    run_case, run_experiment, train_estimator, write_metrics_csv, Case, CaseConfig, ExperimentConfig,
    ExperimentInputs, ExperimentKind, SelectionMethod, TrainConfig,
};
use voltvar_core::optimizer::{solve_cvvc, solve_cvvc_relaxed, CvvcProblem};
use voltvar_core::profiles::Profiles;
use voltvar_core::scenario::{partition_blocks, random_indices, representative_indices, scenarios_from_profiles};
use voltvar_core::synth::{synthetic_profiles, test_feeder, tutorial_feeder, ProfileSpec};
use voltvar_core::training::write_dataset;

const EXIT_CONFIG: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;
const EXIT_FALLBACK: u8 = 4;

#[derive(Parser)]
#[command(name = "voltvar", version, about = "Centralized volt-var control with estimated voltages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic feeder and its profile records.
    Generate {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Use the six-node tutorial feeder instead of the test feeder.
        #[arg(long)]
        tutorial: bool,
        /// Days of history, evaluation and stress records.
        #[arg(long, default_value_t = 60)]
        history_days: usize,
        #[arg(long, default_value_t = 1)]
        evaluation_days: usize,
        #[arg(long, default_value_t = 7)]
        stress_days: usize,
    },
    /// Pick training scenarios from a history record.
    SelectScenarios {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pick at random with this seed instead of by center distance.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        cols: usize,
    },
    /// Generate training data and fit the voltage estimator.
    Train {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one control case over a profile record.
    Simulate {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        case: Case,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: CaseOverrides,
    },
    /// Run one of the comparison experiments.
    Evaluate {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        experiment: ExperimentKind,
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        evaluation: PathBuf,
        #[arg(long)]
        stress: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: CaseOverrides,
    },
    /// Solve a single dispatch problem given as JSON and print the plan.
    Optimize {
        #[arg(long)]
        problem: PathBuf,
        /// Go straight to the relaxed problem.
        #[arg(long)]
        relaxed: bool,
    },
}

#[derive(Args)]
struct FeederArg {
    /// Feeder JSON; the bundled test feeder when omitted.
    #[arg(long)]
    feeder: Option<PathBuf>,
}

impl FeederArg {
    fn load(&self) -> anyhow::Result<FeederModel> {
        match &self.feeder {
            Some(p) => Ok(load_feeder(p)?),
            None => Ok(test_feeder()),
        }
    }
}

#[derive(Args)]
struct CaseOverrides {
    /// JSON case or experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Regulator bandwidth, volts.
    #[arg(long)]
    deadband: Option<f64>,
    /// Truncate the profile to this many steps.
    #[arg(long)]
    horizon: Option<usize>,
}

impl CaseOverrides {
    fn apply(&self, cfg: &mut CaseConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.deadband {
            cfg.bandwidth_v = b;
        }
    }

    fn truncate(&self, p: Profiles) -> Profiles {
        match self.horizon {
            Some(h) if h < p.len() => p.slice(0, h),
            _ => p,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. }) | Some(Error::Training { .. }) => EXIT_CONVERGENCE,
        Some(Error::Infeasible(_)) => EXIT_FALLBACK,
        _ => EXIT_CONFIG,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Generate {
            out,
            seed,
            tutorial,
            history_days,
            evaluation_days,
            stress_days,
        } => {
            std::fs::create_dir_all(&out)?;
            let model = if tutorial { tutorial_feeder() } else { test_feeder() };
            write_feeder(&model, out.join("feeder.json"))?;
            let records = [
                ("history.csv", ProfileSpec::history(history_days, seed)),
                ("evaluation.csv", ProfileSpec::evaluation(evaluation_days, seed.wrapping_add(1))),
                ("stress.csv", ProfileSpec::stress(stress_days, seed.wrapping_add(2))),
            ];
            for (name, spec) in records {
                synthetic_profiles(&model, &spec).write_csv(out.join(name), &model)?;
            }
            log::info!("wrote {} ({} nodes) to {}", model.name(), model.node_count(), out.display());
        }
        Command::SelectScenarios {
            feeder,
            profiles,
            out,
            seed,
            rows,
            cols,
        } => {
            let model = feeder.load()?;
            let history = Profiles::read_csv(&profiles, &model)?;
            let scenarios = scenarios_from_profiles(&model, &history, Default::default())?;
            let grid = partition_blocks(&scenarios, rows, cols)?;
            let picked = match seed {
                Some(s) => random_indices(&grid, s),
                None => representative_indices(&grid, &scenarios),
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["index", "minute", "load_center", "pv_center", "p_feeder_kw", "p_pv_kw"])?;
            for &i in &picked {
                let s = &scenarios[i];
                w.write_record([
                    s.index.to_string(),
                    s.minute.to_string(),
                    format!("{:.6}", s.load_center),
                    s.pv_center.map(|c| format!("{c:.6}")).unwrap_or_default(),
                    format!("{:.3}", s.p_feeder_kw),
                    format!("{:.3}", s.p_pv_total_kw),
                ])?;
            }
            w.flush()?;
            log::info!("selected {} of {} scenarios ({} empty blocks)", picked.len(), scenarios.len(), grid.empty_blocks().len());
        }
        Command::Train {
            feeder,
            profiles,
            model_dir,
            seed,
            config,
        } => {
            let model = feeder.load()?;
            let history = Profiles::read_csv(&profiles, &model)?;
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.selection = SelectionMethod::Random { seed: s };
            }
            let trained = train_estimator(&model, &history, &cfg, None)?;
            write_estimator(&trained.estimator, &model, &model_dir)?;
            write_dataset(&trained.dataset, &model, model_dir.join("training"))?;
            log::info!(
                "trained on {} scenarios, {} critical nodes",
                trained.selected.len(),
                trained.estimator.critical.len()
            );
        }
        Command::Simulate {
            feeder,
            case,
            profiles,
            model_dir,
            out,
            overrides,
        } => {
            let model = feeder.load()?;
            let record = overrides.truncate(Profiles::read_csv(&profiles, &model)?);
            let mut cfg: CaseConfig = match &overrides.config {
                Some(p) => read_json(p)?,
                None => CaseConfig::default(),
            };
            cfg.case = case;
            overrides.apply(&mut cfg);
            let est = match (&model_dir, case.needs_estimator()) {
                (Some(d), true) => Some(read_estimator(&model, d)?),
                (None, true) => bail!(Error::Config(format!("case {case} needs --model-dir"))),
                _ => None,
            };
            std::fs::create_dir_all(&out)?;
            let (trace, report) = run_case(&model, &record, &cfg, est.as_ref())?;
            trace.write_csv(&model, out.join("trace.csv"))?;
            write_metrics_csv(out.join("metrics.csv"), &[], &[(Vec::new(), report.clone())])?;
            println!("{}", MetricsLine(&report));
            let relaxed = trace
                .controls
                .iter()
                .filter(|c| c.branch == voltvar_core::optimizer::Branch::Relaxed)
                .count();
            if relaxed > 0 {
                log::warn!("{relaxed} control instants fell back to the relaxed problem");
                return Ok(EXIT_FALLBACK);
            }
        }
        Command::Evaluate {
            feeder,
            experiment,
            history,
            evaluation,
            stress,
            model_dir,
            out,
            overrides,
        } => {
            let model = feeder.load()?;
            let history = Profiles::read_csv(&history, &model)?;
            let evaluation = Profiles::read_csv(&evaluation, &model)?;
            let stress = overrides.truncate(Profiles::read_csv(&stress, &model)?);
            let mut cfg: ExperimentConfig = match &overrides.config {
                Some(p) => read_json(p)?,
                None => ExperimentConfig::default(),
            };
            overrides.apply(&mut cfg.case);
            if let Some(b) = overrides.deadband {
                cfg.bandwidths_v = vec![b];
            }
            let est = model_dir.as_ref().map(|d| read_estimator(&model, d)).transpose()?;
            let inputs = ExperimentInputs {
                model: &model,
                history: &history,
                evaluation: &evaluation,
                simulation: &stress,
                estimator: est.as_ref(),
            };
            let report = run_experiment(experiment, &inputs, &cfg, &out)?;
            for (labels, m) in &report.metrics {
                println!("{} {}", labels.join(" "), MetricsLine(m));
            }
            for (labels, s) in &report.errors {
                println!(
                    "{}: mean {:+.6} mae {:.6} within 0.01 {:.4}",
                    labels.join(" "),
                    s.mean_signed,
                    s.mean_abs,
                    s.within_001
                );
            }
        }
        Command::Optimize { problem, relaxed } => {
            let p: CvvcProblem = read_json(&problem)?;
            let (plan, code) = if relaxed {
                (solve_cvvc_relaxed(&p)?, 0)
            } else {
                match solve_cvvc(&p) {
                    Ok(plan) => (plan, 0),
                    Err(Error::Infeasible(msg)) => {
                        log::warn!("strict problem infeasible ({msg}); using the relaxed problem");
                        (solve_cvvc_relaxed(&p)?, EXIT_FALLBACK)
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            println!("{}", serde_json::to_string_pretty(&plan)?);
            return Ok(code);
        }
    }
    Ok(0)
}

struct MetricsLine<'a>(&'a voltvar_core::harness::MetricsReport);

impl std::fmt::Display for MetricsLine<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.0;
        write!(
            f,
            "case {}: MVVM {:.4} pu, NVV {}, NTC {}, cost {:.3} (Q {:.3}, T {:.3})",
            m.case, m.mvvm, m.nvv, m.ntc, m.total_cost, m.q_cost, m.t_cost
        )
    }
}
