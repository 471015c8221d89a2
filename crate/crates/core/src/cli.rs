//! Command-line surface: configuration loading, the sweep driver, and the
//! file outputs it emits.
//!
//! A sweep runs the centralized baseline once, resolves the convergence
//! targets against it, then runs every requested mode x strategy cell.
//! Four artifacts land in the output directory: `rounds.csv` (per-round
//! log), `table.csv` / `table.json` (the comparison table), and
//! `manifest.json` (the fully resolved configuration). All numbers are
//! written with shortest round-trip formatting, so identical configurations
//! produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::aggregation::StrategyId;
use crate::data::{PartitionMode, PartitionSpec, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::federation::{
    fold_partitions, run_centralized_baseline, run_experiment, EvalMetricId, ExperimentConfig,
    RunResult,
};
use crate::metrics::{mean_average_precision, read_detections, read_ground_truths,
    rounds_to_target, MapReport};
use crate::model::{MlpArchitecture, TrainingOptions};

/// Convergence targets for the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// Target levels; fractions of the centralized final metric when
    /// `relative_to_central` holds, absolute metric values otherwise.
    pub levels: Vec<f64>,
    pub relative_to_central: bool,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            levels: vec![0.75, 0.85, 0.95],
            relative_to_central: true,
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::validation("targets.levels", "must not be empty"));
        }
        if self
            .levels
            .iter()
            .any(|l| !(l.is_finite() && *l > 0.0 && *l <= 1.0))
        {
            return Err(Error::validation("targets.levels", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// The full sweep configuration, mirroring the TOML file layout. Unknown
/// keys are rejected; omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub client_fraction: f64,
    pub mu: f64,
    pub folds: usize,
    pub init_std: f64,
    pub eval_metric: EvalMetricId,
    pub modes: Vec<PartitionMode>,
    pub strategies: Vec<StrategyId>,
    pub targets: TargetSpec,
    pub dataset: SyntheticDatasetSpec,
    pub partition: PartitionSpec,
    pub model: MlpArchitecture,
    pub training: TrainingOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Self {
            seed: exp.seed,
            global_epochs: exp.global_epochs,
            local_epochs: exp.local_epochs,
            client_fraction: exp.client_fraction,
            mu: exp.mu,
            folds: exp.folds,
            init_std: exp.init_std,
            eval_metric: exp.eval_metric,
            modes: vec![PartitionMode::Iid, PartitionMode::DirichletPreference],
            strategies: StrategyId::ALL.to_vec(),
            targets: TargetSpec::default(),
            dataset: exp.dataset,
            partition: exp.partition,
            model: exp.model,
            training: exp.training,
        }
    }
}

impl SweepConfig {
    /// The per-run slice of this configuration.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            global_epochs: self.global_epochs,
            local_epochs: self.local_epochs,
            client_fraction: self.client_fraction,
            mu: self.mu,
            folds: self.folds,
            init_std: self.init_std,
            eval_metric: self.eval_metric,
            dataset: self.dataset.clone(),
            partition: self.partition.clone(),
            model: self.model.clone(),
            training: self.training.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()?;
        self.targets.validate()?;
        if self.modes.is_empty() {
            return Err(Error::validation("modes", "must not be empty"));
        }
        if self.strategies.is_empty() {
            return Err(Error::validation("strategies", "must not be empty"));
        }
        Ok(())
    }
}

/// Load a sweep configuration from a TOML file.
pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parse a comma-separated list of target levels.
pub fn parse_target_levels(s: &str) -> Result<Vec<f64>> {
    let levels: Vec<f64> = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("invalid target level '{}'", part.trim())))
        })
        .collect::<Result<_>>()?;
    let spec = TargetSpec {
        levels,
        ..TargetSpec::default()
    };
    spec.validate()?;
    Ok(spec.levels)
}

fn dedup_in_order<T: PartialEq + Copy>(items: Vec<T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// A resolved target: the requested level and the metric threshold it maps
/// to (the level itself, or the level times the centralized final metric).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetThreshold {
    pub level: f64,
    pub threshold: f64,
}

fn resolve_targets(spec: &TargetSpec, central_final: f64) -> Vec<TargetThreshold> {
    spec.levels
        .iter()
        .map(|&level| TargetThreshold {
            level,
            threshold: if spec.relative_to_central {
                level * central_final
            } else {
                level
            },
        })
        .collect()
}

/// One target cell of a table row: rounds to reach the threshold and the
/// speedup against the sample-count baseline, when both are attained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetCell {
    pub level: f64,
    pub threshold: f64,
    pub rounds: Option<usize>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub mode: String,
    pub strategy: String,
    pub final_metric: f64,
    pub targets: Vec<TargetCell>,
}

/// The comparison table behind `table.csv` and `table.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub eval_metric: String,
    pub targets: Vec<TargetThreshold>,
    pub rows: Vec<TableRow>,
}

pub(crate) const CENTRAL_MODE: &str = "pooled";
pub(crate) const CENTRAL_STRATEGY: &str = "central";

/// Speedup baseline: FedAvg's rounds-to-target in the same mode, falling
/// back to FedProx when FedAvg never attains the target.
fn baseline_rounds(
    outcomes: &[(PartitionMode, StrategyId, RunResult)],
    mode: PartitionMode,
    threshold: f64,
) -> Option<usize> {
    for candidate in [StrategyId::FedAvg, StrategyId::FedProx] {
        let attained = outcomes
            .iter()
            .find(|(m, s, _)| *m == mode && *s == candidate)
            .and_then(|(_, _, r)| rounds_to_target(&r.mean_curve, threshold));
        if attained.is_some() {
            return attained;
        }
    }
    None
}

fn build_table(
    central: &RunResult,
    outcomes: &[(PartitionMode, StrategyId, RunResult)],
    thresholds: &[TargetThreshold],
    eval_metric: EvalMetricId,
) -> ComparisonTable {
    let mut rows = Vec::with_capacity(outcomes.len() + 1);
    rows.push(TableRow {
        mode: CENTRAL_MODE.to_string(),
        strategy: CENTRAL_STRATEGY.to_string(),
        final_metric: central.final_metric,
        targets: thresholds
            .iter()
            .map(|t| TargetCell {
                level: t.level,
                threshold: t.threshold,
                rounds: rounds_to_target(&central.mean_curve, t.threshold),
                speedup: None,
            })
            .collect(),
    });
    for (mode, strategy, result) in outcomes {
        let targets = thresholds
            .iter()
            .map(|t| {
                let rounds = rounds_to_target(&result.mean_curve, t.threshold);
                let speedup = match (baseline_rounds(outcomes, *mode, t.threshold), rounds) {
                    (Some(base), Some(own)) => Some(base as f64 / own as f64),
                    _ => None,
                };
                TargetCell {
                    level: t.level,
                    threshold: t.threshold,
                    rounds,
                    speedup,
                }
            })
            .collect();
        rows.push(TableRow {
            mode: mode.to_string(),
            strategy: strategy.to_string(),
            final_metric: result.final_metric,
            targets,
        });
    }
    ComparisonTable {
        eval_metric: eval_metric.to_string(),
        targets: thresholds.to_vec(),
        rows,
    }
}

/// Unattained cells render as "x".
fn cell_or_x<T: std::fmt::Display>(value: Option<T>) -> String {
    value.map_or_else(|| "x".to_string(), |v| v.to_string())
}

fn render_table_csv(table: &ComparisonTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "mode".to_string(),
        "strategy".to_string(),
        "final_metric".to_string(),
    ];
    for t in &table.targets {
        header.push(format!("eg_at_{}", t.level));
        header.push(format!("speedup_at_{}", t.level));
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![
            row.mode.clone(),
            row.strategy.clone(),
            row.final_metric.to_string(),
        ];
        for cell in &row.targets {
            record.push(cell_or_x(cell.rounds));
            record.push(cell_or_x(cell.speedup));
        }
        w.write_record(&record)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?)
        .map_err(|e| Error::Config(e.to_string()))
}

fn run_id(strategy: &str, mode: &str, seed: u64) -> String {
    format!("{strategy}-{mode}-s{seed}")
}

fn render_rounds_csv(
    seed: u64,
    central: &RunResult,
    outcomes: &[(PartitionMode, StrategyId, RunResult)],
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run_id",
        "mode",
        "strategy",
        "fold",
        "round",
        "eval_metric",
        "train_loss_mean",
        "selected_clients",
        "weights",
    ])?;
    let mut write_result = |mode: &str, strategy: &str, result: &RunResult| -> Result<()> {
        let id = run_id(strategy, mode, seed);
        for r in &result.records {
            let selected: Vec<String> =
                r.selected_clients.iter().map(|c| c.to_string()).collect();
            let weights: Vec<String> = r.weights.iter().map(|v| v.to_string()).collect();
            w.write_record([
                id.as_str(),
                mode,
                strategy,
                &r.fold.to_string(),
                &r.round.to_string(),
                &r.eval_metric.to_string(),
                &r.train_loss_mean.to_string(),
                &selected.join(";"),
                &weights.join(";"),
            ])?;
        }
        Ok(())
    };
    write_result(CENTRAL_MODE, CENTRAL_STRATEGY, central)?;
    for (mode, strategy, result) in outcomes {
        write_result(&mode.to_string(), strategy.as_str(), result)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?)
        .map_err(|e| Error::Config(e.to_string()))
}

/// A sweep cell that errored; the sweep continues past it.
#[derive(Debug, Clone, Serialize)]
pub struct FailedRun {
    pub mode: String,
    pub strategy: String,
    pub error: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    eval_metric: String,
    modes: Vec<String>,
    strategies: Vec<String>,
    targets: &'a [TargetThreshold],
    central_final_metric: f64,
    outputs: [&'static str; 4],
    failures: &'a [FailedRun],
    config: &'a SweepConfig,
}

/// What [`run_sweep`] hands back to the caller.
pub struct SweepSummary {
    pub table: ComparisonTable,
    pub failures: Vec<FailedRun>,
    pub central_final_metric: f64,
    pub out_dir: PathBuf,
}

/// Run the full sweep and write `rounds.csv`, `table.csv`, `table.json`,
/// and `manifest.json` into `out_dir`. Individual strategy runs that fail
/// are recorded and skipped; a failing centralized baseline is fatal
/// because the targets depend on it.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let experiment = cfg.experiment();
    let modes = dedup_in_order(cfg.modes.clone());
    let strategies = dedup_in_order(cfg.strategies.clone());

    log::info!("running centralized baseline");
    let central = run_centralized_baseline(&experiment)?;
    let thresholds = resolve_targets(&cfg.targets, central.final_metric);

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for &mode in &modes {
        for &strategy in &strategies {
            log::info!("running {strategy} under {mode}");
            match run_experiment(&experiment, strategy, mode) {
                Ok(result) => outcomes.push((mode, strategy, result)),
                Err(e) => {
                    log::error!("{strategy} under {mode} failed: {e}");
                    failures.push(FailedRun {
                        mode: mode.to_string(),
                        strategy: strategy.to_string(),
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    fs::write(
        out_dir.join("rounds.csv"),
        render_rounds_csv(cfg.seed, &central, &outcomes)?,
    )?;
    let table = build_table(&central, &outcomes, &thresholds, cfg.eval_metric);
    fs::write(out_dir.join("table.csv"), render_table_csv(&table)?)?;
    fs::write(
        out_dir.join("table.json"),
        serde_json::to_string_pretty(&table)? + "\n",
    )?;
    let manifest = RunManifest {
        tool: "fedsim",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        eval_metric: cfg.eval_metric.to_string(),
        modes: modes.iter().map(|m| m.to_string()).collect(),
        strategies: strategies.iter().map(|s| s.to_string()).collect(),
        targets: &thresholds,
        central_final_metric: central.final_metric,
        outputs: ["rounds.csv", "table.csv", "table.json", "manifest.json"],
        failures: &failures,
        config: cfg,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    Ok(SweepSummary {
        table,
        failures,
        central_final_metric: central.final_metric,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Per-client label histograms of one fold, for inspecting partition skew.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub mode: String,
    pub seed: u64,
    pub fold: usize,
    pub num_classes: usize,
    pub clients: Vec<ClientSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientSummary {
    pub client_id: usize,
    pub sample_count: u64,
    pub preferred_class: usize,
    pub histogram: Vec<u64>,
}

/// Build the partition report for one fold under one mode.
pub fn partition_report(
    cfg: &ExperimentConfig,
    mode: PartitionMode,
    fold: usize,
) -> Result<PartitionReport> {
    let partitions = fold_partitions(cfg, mode, fold)?;
    let num_classes = cfg.dataset.num_classes;
    Ok(PartitionReport {
        mode: mode.to_string(),
        seed: cfg.seed,
        fold,
        num_classes,
        clients: partitions
            .iter()
            .map(|p| ClientSummary {
                client_id: p.client_id,
                sample_count: p.histogram.total(),
                preferred_class: p.client_id % num_classes,
                histogram: p.histogram.counts.clone(),
            })
            .collect(),
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulator comparing aggregation strategies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the mode x strategy comparison sweep and write its artifacts.
    Sweep(SweepArgs),
    /// Print per-client label histograms for one fold.
    PartitionReport(PartitionReportArgs),
    /// Score a detection file against ground truths (mAP).
    EvalDetections(EvalDetectionsArgs),
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Strategy to run (repeatable); replaces the configured list.
    #[arg(long = "strategy", value_name = "NAME")]
    pub strategies: Vec<String>,
    /// Partition mode to run (repeatable): iid or dirichlet_preference.
    #[arg(long = "mode", value_name = "NAME")]
    pub modes: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated target levels, e.g. 0.75,0.85,0.95.
    #[arg(long, value_name = "LEVELS")]
    pub targets: Option<String>,
}

#[derive(Args, Debug)]
pub struct PartitionReportArgs {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Partition mode to inspect.
    #[arg(long, default_value = "dirichlet_preference")]
    pub mode: String,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fold whose training split is partitioned.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalDetectionsArgs {
    /// Detection file: `image_id class_id confidence x_min y_min x_max y_max` per line.
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Ground-truth file: `image_id class_id x_min y_min x_max y_max` per line.
    #[arg(long = "ground-truths", value_name = "FILE")]
    pub ground_truths: PathBuf,
    /// IoU threshold for matching.
    #[arg(long = "iou-threshold", default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Resolve the sweep configuration from the config file plus flag overrides.
pub fn resolve_sweep_config(args: &SweepArgs) -> Result<SweepConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_sweep_config(path)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.strategies.is_empty() {
        cfg.strategies = args
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
    }
    if !args.modes.is_empty() {
        cfg.modes = args.modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if let Some(levels) = &args.targets {
        cfg.targets.levels = parse_target_levels(levels)?;
    }
    Ok(cfg)
}

fn print_table(table: &ComparisonTable) {
    let mut header = format!("{:<22} {:<12} {:>12}", "mode", "strategy", "final_metric");
    for t in &table.targets {
        header.push_str(&format!(" {:>10} {:>14}", format!("eg@{}", t.level), format!("speedup@{}", t.level)));
    }
    println!("{header}");
    for row in &table.rows {
        let mut line = format!(
            "{:<22} {:<12} {:>12.4}",
            row.mode, row.strategy, row.final_metric
        );
        for cell in &row.targets {
            line.push_str(&format!(
                " {:>10} {:>14}",
                cell_or_x(cell.rounds),
                cell.speedup
                    .map_or_else(|| "x".to_string(), |s| format!("{s:.2}")),
            ));
        }
        println!("{line}");
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn base_experiment(config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => load_sweep_config(path)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg.experiment())
}

/// Run one parsed command to completion.
pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = resolve_sweep_config(&args)?;
            let summary = run_sweep(&cfg, &args.out)?;
            println!(
                "centralized baseline ({}): {:.4}",
                cfg.eval_metric, summary.central_final_metric
            );
            print_table(&summary.table);
            println!("artifacts written to {}", summary.out_dir.display());
            if summary.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &summary.failures {
                    eprintln!("failed: {} under {}: {}", f.strategy, f.mode, f.error);
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::PartitionReport(args) => {
            let cfg = base_experiment(args.config.as_deref(), args.seed)?;
            let mode: PartitionMode = args.mode.parse()?;
            let report = partition_report(&cfg, mode, args.fold)?;
            emit_json(&report, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EvalDetections(args) => {
            let detections = read_detections(&args.detections)?;
            let ground_truths = read_ground_truths(&args.ground_truths)?;
            let report: MapReport =
                mean_average_precision(&detections, &ground_truths, args.iou_threshold)?;
            emit_json(&report, args.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
