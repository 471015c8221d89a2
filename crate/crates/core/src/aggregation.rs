//! Server-side aggregation: weighting rules and parameter averaging.
//!
//! Three weighting rules are implemented — sample counts (FedAvg), total
//! label counts (FedAvgL), and per-label attention (FedLA) — plus the two
//! proximal strategies that reuse those weights while changing the local
//! objective. Weights are computed in exact rational arithmetic and
//! converted to `f64` once at the end, so algebraically equal inputs (for
//! example identical client histograms under different rules) yield
//! bit-identical weights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::data::LabelHistogram;
use crate::error::{Error, Result};
use crate::model::ParameterVector;

/// The aggregation strategies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedavgl")]
    FedAvgL,
    #[serde(rename = "fedla")]
    FedLa,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fedprox_la")]
    FedProxLa,
}

/// How a strategy turns client metadata into aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRule {
    /// Proportional to the client's sample count.
    SampleCount,
    /// Proportional to the client's total label count.
    LabelCount,
    /// Per-label shares summed across labels, then normalized.
    LabelAttention,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::FedAvg,
        StrategyId::FedAvgL,
        StrategyId::FedLa,
        StrategyId::FedProx,
        StrategyId::FedProxLa,
    ];

    pub fn weight_rule(self) -> WeightRule {
        match self {
            StrategyId::FedAvg | StrategyId::FedProx => WeightRule::SampleCount,
            StrategyId::FedAvgL => WeightRule::LabelCount,
            StrategyId::FedLa | StrategyId::FedProxLa => WeightRule::LabelAttention,
        }
    }

    /// Whether the local objective carries the proximal penalty.
    pub fn uses_proximal(self) -> bool {
        matches!(self, StrategyId::FedProx | StrategyId::FedProxLa)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl StrategyId {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::FedAvg => "fedavg",
            StrategyId::FedAvgL => "fedavgl",
            StrategyId::FedLa => "fedla",
            StrategyId::FedProx => "fedprox",
            StrategyId::FedProxLa => "fedprox_la",
        }
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(StrategyId::FedAvg),
            "fedavgl" => Ok(StrategyId::FedAvgL),
            "fedla" => Ok(StrategyId::FedLa),
            "fedprox" => Ok(StrategyId::FedProx),
            "fedprox_la" | "fedprox+la" | "fedproxla" => Ok(StrategyId::FedProxLa),
            other => Err(Error::InvalidInput(format!(
                "unknown strategy '{other}' (expected fedavg, fedavgl, fedla, fedprox, fedprox_la)"
            ))),
        }
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParameterVector,
    pub sample_count: u64,
    pub histogram: LabelHistogram,
}

/// Normalized per-client weights keyed by client id.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    weights: BTreeMap<usize, f64>,
}

impl AggregationWeights {
    pub fn new(weights: BTreeMap<usize, f64>) -> Self {
        Self { weights }
    }

    pub fn get(&self, client_id: usize) -> Option<f64> {
        self.weights.get(&client_id).copied()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(client_id, weight)` pairs in ascending client order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&id, &w)| (id, w))
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

fn check_updates(updates: &[ClientUpdate]) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::InvalidInput("no client updates to aggregate".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for u in updates {
        if !seen.insert(u.client_id) {
            return Err(Error::Protocol(format!(
                "duplicate update from client {}",
                u.client_id
            )));
        }
    }
    let hist_len = updates[0].histogram.counts.len();
    if updates.iter().any(|u| u.histogram.counts.len() != hist_len) {
        return Err(Error::Protocol(
            "clients disagree on the number of labels".into(),
        ));
    }
    Ok(())
}

/// Normalize exact per-client scores into f64 weights. A zero score is a
/// legal degenerate client (weight 0, with a warning); all scores zero is
/// an error because no weighting exists.
fn normalize_scores(
    updates: &[ClientUpdate],
    scores: Vec<BigRational>,
    rule: &str,
) -> Result<AggregationWeights> {
    let total: BigRational = scores.iter().sum();
    if total.is_zero() {
        return Err(Error::DegenerateInput(format!(
            "all clients have zero {rule}; no aggregation weights exist"
        )));
    }
    let mut weights = BTreeMap::new();
    for (u, score) in updates.iter().zip(scores) {
        if score.is_zero() {
            log::warn!(
                "client {} has zero {rule}; it receives aggregation weight 0",
                u.client_id
            );
        }
        let w = (score / &total)
            .to_f64()
            .ok_or_else(|| Error::Numerical("weight does not fit in f64".into()))?;
        weights.insert(u.client_id, w);
    }
    Ok(AggregationWeights::new(weights))
}

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Weights proportional to client sample counts.
pub fn fedavg_weights(updates: &[ClientUpdate]) -> Result<AggregationWeights> {
    check_updates(updates)?;
    let scores = updates.iter().map(|u| big(u.sample_count)).collect();
    normalize_scores(updates, scores, "sample count")
}

/// Weights proportional to total label counts.
pub fn fedavgl_weights(updates: &[ClientUpdate]) -> Result<AggregationWeights> {
    check_updates(updates)?;
    let scores = updates.iter().map(|u| big(u.histogram.total())).collect();
    normalize_scores(updates, scores, "label count")
}

/// Label-attention weights: for every label with a positive global count,
/// each client earns that label's share `S(c_i, l_j) / S(l_j)`; the shares
/// are summed per client and normalized. Labels absent from every client
/// are skipped.
pub fn fedla_weights(updates: &[ClientUpdate]) -> Result<AggregationWeights> {
    check_updates(updates)?;
    let num_labels = updates[0].histogram.counts.len();
    let mut scores = vec![BigRational::zero(); updates.len()];
    for j in 0..num_labels {
        let label_total: u64 = updates.iter().map(|u| u.histogram.counts[j]).sum();
        if label_total == 0 {
            continue;
        }
        let denom = big(label_total);
        for (score, u) in scores.iter_mut().zip(updates) {
            *score += big(u.histogram.counts[j]) / &denom;
        }
    }
    normalize_scores(updates, scores, "label attention")
}

/// Weights for a strategy's weighting rule.
pub fn weights_for(strategy: StrategyId, updates: &[ClientUpdate]) -> Result<AggregationWeights> {
    match strategy.weight_rule() {
        WeightRule::SampleCount => fedavg_weights(updates),
        WeightRule::LabelCount => fedavgl_weights(updates),
        WeightRule::LabelAttention => fedla_weights(updates),
    }
}

/// Weighted average of client parameters.
///
/// Computed in delta form around the first update, `p_0 + sum w_i (p_i -
/// p_0)`, so that exact fixed points stay exact: if every client returns
/// the same parameter vector, that vector comes back bit-identical.
pub fn aggregate(
    updates: &[ClientUpdate],
    weights: &AggregationWeights,
) -> Result<ParameterVector> {
    check_updates(updates)?;
    if weights.len() != updates.len()
        || updates.iter().any(|u| weights.get(u.client_id).is_none())
    {
        return Err(Error::Protocol(
            "aggregation weights do not match the set of client updates".into(),
        ));
    }
    let dim = updates[0].params.len();
    if updates.iter().any(|u| u.params.len() != dim) {
        return Err(Error::Protocol(
            "clients returned parameter vectors of different lengths".into(),
        ));
    }
    let sum = weights.sum();
    if !(sum.is_finite() && (sum - 1.0).abs() <= 1e-6) {
        return Err(Error::InvalidInput(format!(
            "aggregation weights must sum to 1, got {sum}"
        )));
    }

    let anchor = &updates[0].params;
    if updates.iter().all(|u| u.params.bits_eq(anchor)) {
        return Ok(anchor.clone());
    }

    let mut out = anchor.values().to_vec();
    for u in updates {
        let w = weights.get(u.client_id).unwrap();
        for (o, (p, a)) in out.iter_mut().zip(u.params.values().iter().zip(anchor.values())) {
            *o += w * (p - a);
        }
    }
    let out = ParameterVector::new(out);
    if !out.all_finite() {
        return Err(Error::Numerical(
            "aggregated parameters are not finite".into(),
        ));
    }
    Ok(out)
}
