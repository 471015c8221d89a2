//! Python bindings for the simulator.
//!
//! The surface mirrors the operations a notebook actually wants: weighting
//! rules on raw histograms, parameter aggregation, the detection metrics,
//! and whole experiment runs returning plain dicts. Strategies and
//! partition modes are passed as their string names (`"fedavg"`,
//! `"fedla"`, ..., `"iid"`, `"dirichlet_preference"`); boxes are
//! `(x_min, y_min, x_max, y_max)` tuples.
//!
//! Configuration uses the same TOML schema as the CLI: pass a TOML string
//! to override the defaults, field by field.

use std::collections::{BTreeMap, HashMap};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedsim::aggregation::{self, AggregationWeights, ClientUpdate, StrategyId};
use fedsim::data::{LabelHistogram, PartitionMode};
use fedsim::federation::{self, ExperimentConfig, RunResult};
use fedsim::metrics;
use fedsim::model::ParameterVector;

/// `(x_min, y_min, x_max, y_max)` corner tuple as passed from Python.
type BoxTuple = (f64, f64, f64, f64);
/// `(image_id, class_id, confidence, box)` detection tuple.
type DetectionTuple = (String, usize, f64, BoxTuple);
/// `(image_id, class_id, box)` ground-truth tuple.
type GroundTruthTuple = (String, usize, BoxTuple);

fn value_error(err: impl ToString) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_strategy(name: &str) -> PyResult<StrategyId> {
    name.parse().map_err(value_error)
}

fn parse_mode(name: &str) -> PyResult<PartitionMode> {
    name.parse().map_err(value_error)
}

fn parse_config(config_toml: Option<&str>, seed: u64) -> PyResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match config_toml {
        Some(text) => toml::from_str(text).map_err(value_error)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn updates_from_histograms(histograms: &[Vec<u64>]) -> Vec<ClientUpdate> {
    histograms
        .iter()
        .enumerate()
        .map(|(client_id, counts)| ClientUpdate {
            client_id,
            params: ParameterVector::new(vec![0.0]),
            sample_count: counts.iter().sum(),
            histogram: LabelHistogram::new(counts.clone()),
        })
        .collect()
}

fn weights_to_vec(weights: &AggregationWeights, len: usize) -> Vec<f64> {
    (0..len).map(|i| weights.get(i).unwrap_or(0.0)).collect()
}

fn bbox(t: BoxTuple) -> PyResult<metrics::BBox> {
    metrics::BBox::new(t.0, t.1, t.2, t.3).map_err(value_error)
}

fn run_to_dict(py: Python<'_>, result: &RunResult) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("final_metric", result.final_metric)?;
    dict.set_item("mean_curve", result.mean_curve.clone())?;
    let records: Vec<(usize, usize, f64, f64)> = result
        .records
        .iter()
        .map(|r| (r.fold, r.round, r.eval_metric, r.train_loss_mean))
        .collect();
    dict.set_item("records", records)?;
    Ok(dict.unbind())
}

/// Normalized aggregation weights for `strategy` given per-client label
/// histograms (one row per client, one column per class).
#[pyfunction]
fn strategy_weights(strategy: &str, histograms: Vec<Vec<u64>>) -> PyResult<Vec<f64>> {
    let strategy = parse_strategy(strategy)?;
    let updates = updates_from_histograms(&histograms);
    let weights = aggregation::weights_for(strategy, &updates).map_err(value_error)?;
    Ok(weights_to_vec(&weights, histograms.len()))
}

/// Label-attention weights; shorthand for `strategy_weights("fedla", ...)`.
#[pyfunction]
fn fedla_weights(histograms: Vec<Vec<u64>>) -> PyResult<Vec<f64>> {
    strategy_weights("fedla", histograms)
}

/// Weighted aggregation of parameter vectors. `weights` must be aligned
/// with `parameters` and sum to one.
#[pyfunction]
fn aggregate_params(parameters: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    if parameters.len() != weights.len() {
        return Err(value_error("parameters and weights must have equal length"));
    }
    let updates: Vec<ClientUpdate> = parameters
        .into_iter()
        .enumerate()
        .map(|(client_id, values)| ClientUpdate {
            client_id,
            params: ParameterVector::new(values),
            sample_count: 1,
            histogram: LabelHistogram::new(vec![1]),
        })
        .collect();
    let weights = AggregationWeights::new(
        weights.into_iter().enumerate().collect::<BTreeMap<_, _>>(),
    );
    let merged = aggregation::aggregate(&updates, &weights).map_err(value_error)?;
    Ok(merged.values().to_vec())
}

/// Intersection over union of two `(x_min, y_min, x_max, y_max)` boxes.
#[pyfunction]
fn iou(a: BoxTuple, b: BoxTuple) -> PyResult<f64> {
    Ok(metrics::iou(&bbox(a)?, &bbox(b)?))
}

/// All-point interpolated average precision of a confidence-ranked
/// hit/miss sequence.
#[pyfunction]
fn average_precision(labels: Vec<bool>, num_ground_truths: usize) -> PyResult<f64> {
    metrics::average_precision(&labels, num_ground_truths).map_err(value_error)
}

/// Mean average precision. Detections are
/// `(image_id, class_id, confidence, box)` tuples, ground truths
/// `(image_id, class_id, box)` tuples. Returns `(map, {class_id: ap})`.
#[pyfunction]
fn mean_average_precision(
    detections: Vec<DetectionTuple>,
    ground_truths: Vec<GroundTruthTuple>,
    iou_threshold: f64,
) -> PyResult<(f64, HashMap<usize, f64>)> {
    let detections: Vec<metrics::Detection> = detections
        .into_iter()
        .map(|(image_id, class_id, confidence, b)| {
            Ok(metrics::Detection { image_id, class_id, confidence, bbox: bbox(b)? })
        })
        .collect::<PyResult<_>>()?;
    let ground_truths: Vec<metrics::GroundTruth> = ground_truths
        .into_iter()
        .map(|(image_id, class_id, b)| {
            Ok(metrics::GroundTruth { image_id, class_id, bbox: bbox(b)? })
        })
        .collect::<PyResult<_>>()?;
    let report = metrics::mean_average_precision(&detections, &ground_truths, iou_threshold)
        .map_err(value_error)?;
    let per_class = report
        .per_class
        .iter()
        .map(|(&class_id, ap)| (class_id, ap.average_precision))
        .collect();
    Ok((report.map, per_class))
}

/// mAP over the plain-text exchange format: one detection per line
/// (`image_id class_id confidence x_min y_min x_max y_max`), one ground
/// truth per line (`image_id class_id x_min y_min x_max y_max`).
#[pyfunction]
fn eval_detections(
    detections_text: &str,
    ground_truths_text: &str,
    iou_threshold: f64,
) -> PyResult<(f64, HashMap<usize, f64>)> {
    let detections = metrics::parse_detections(detections_text).map_err(value_error)?;
    let ground_truths =
        metrics::parse_ground_truths(ground_truths_text).map_err(value_error)?;
    let report = metrics::mean_average_precision(&detections, &ground_truths, iou_threshold)
        .map_err(value_error)?;
    let per_class = report
        .per_class
        .iter()
        .map(|(&class_id, ap)| (class_id, ap.average_precision))
        .collect();
    Ok((report.map, per_class))
}

/// 1-based index of the first curve point at or above `target`, or None.
#[pyfunction]
fn rounds_to_target(curve: Vec<f64>, target: f64) -> Option<usize> {
    metrics::rounds_to_target(&curve, target)
}

/// Run one federated experiment; returns a dict with `final_metric`,
/// `mean_curve` and per-fold `records` of
/// `(fold, round, eval_metric, train_loss_mean)`.
#[pyfunction]
#[pyo3(signature = (strategy, mode, seed = 42, config_toml = None))]
fn run_experiment(
    py: Python<'_>,
    strategy: &str,
    mode: &str,
    seed: u64,
    config_toml: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let cfg = parse_config(config_toml, seed)?;
    let strategy = parse_strategy(strategy)?;
    let mode = parse_mode(mode)?;
    let result = federation::run_experiment(&cfg, strategy, mode).map_err(value_error)?;
    run_to_dict(py, &result)
}

/// Train one model on the pooled training split; same return shape as
/// `run_experiment`.
#[pyfunction]
#[pyo3(signature = (seed = 42, config_toml = None))]
fn run_centralized_baseline(
    py: Python<'_>,
    seed: u64,
    config_toml: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let cfg = parse_config(config_toml, seed)?;
    let result = federation::run_centralized_baseline(&cfg).map_err(value_error)?;
    run_to_dict(py, &result)
}

/// Per-client label histograms of one fold's partition under `mode`.
#[pyfunction]
#[pyo3(signature = (mode, seed = 42, fold = 0, config_toml = None))]
fn fold_histograms(
    mode: &str,
    seed: u64,
    fold: usize,
    config_toml: Option<&str>,
) -> PyResult<Vec<Vec<u64>>> {
    let cfg = parse_config(config_toml, seed)?;
    let mode = parse_mode(mode)?;
    let partitions = federation::fold_partitions(&cfg, mode, fold).map_err(value_error)?;
    Ok(partitions.into_iter().map(|p| p.histogram.counts).collect())
}

#[pymodule]
fn fedsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(strategy_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fedla_weights, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_params, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(eval_detections, m)?)?;
    m.add_function(wrap_pyfunction!(rounds_to_target, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_centralized_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(fold_histograms, m)?)?;
    m.add("STRATEGIES", StrategyId::ALL.map(|s| s.as_str()))?;
    m.add("PARTITION_MODES", ["iid", "dirichlet_preference"])?;
    Ok(())
}
