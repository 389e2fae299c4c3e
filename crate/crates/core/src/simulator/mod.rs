//! Cost and latency simulation of design options.

mod scenario;

pub use scenario::{Chain, Evaluation, PathLatency, Route, Scenario};

use crate::enumerate::{DesignOption, InvalidOption};
use crate::ids::{ComponentId, LinkId, NodeId, OptionId, PathId};
use crate::model::{ApplicationPath, Connection, InfrastructureModel, ModelError, SoftwareModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no route from `{from}` to `{to}`")]
    Unreachable { from: NodeId, to: NodeId },
    #[error(transparent)]
    InvalidOption(#[from] InvalidOption),
    #[error("node `{0}` hosts a service but has no hardware selected")]
    NoHardware(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no results to select from")]
    EmptyInput,
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
}

/// A connection routed through the infrastructure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoutedFlow {
    pub producer: ComponentId,
    pub consumer: ComponentId,
    pub node_path: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub data_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathMetrics {
    pub processing_time_ms: f64,
    pub transmission_time_ms: f64,
    pub end_to_end_ms: f64,
    pub slo_latency_ms: f64,
}

impl PathMetrics {
    /// Positive when the path has headroom below its SLO.
    pub fn slo_margin_ms(&self) -> f64 {
        self.slo_latency_ms - self.end_to_end_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Memory,
    Bandwidth,
    Slo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub kind: ViolationKind,
    /// Node, link or path id.
    pub subject: String,
    pub required: f64,
    pub available: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Costs {
    pub processing_cost_month: f64,
    pub transmission_cost_month: f64,
    pub total_cost_month: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationMetrics {
    pub per_path: BTreeMap<PathId, PathMetrics>,
    pub processing_cost_month: f64,
    pub transmission_cost_month: f64,
    pub total_cost_month: f64,
    /// False when any violation, including an SLO miss, is present.
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl SimulationMetrics {
    pub fn resources_ok(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::Memory | ViolationKind::Bandwidth))
    }

    pub fn slos_met(&self) -> bool {
        self.per_path.values().all(|p| p.end_to_end_ms <= p.slo_latency_ms)
    }

    pub fn worst_path_ms(&self) -> f64 {
        self.per_path.values().map(|p| p.end_to_end_ms).fold(0.0, f64::max)
    }

    pub fn costs(&self) -> Costs {
        Costs {
            processing_cost_month: self.processing_cost_month,
            transmission_cost_month: self.transmission_cost_month,
            total_cost_month: self.total_cost_month,
        }
    }
}

/// One simulated design, as exported line by line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimRecord {
    pub option_id: OptionId,
    /// Enumerated options sharing this design's placement and used-node hardware.
    #[serde(default = "one")]
    pub multiplicity: u64,
    #[serde(flatten)]
    pub option: DesignOption,
    #[serde(flatten)]
    pub metrics: SimulationMetrics,
}

fn one() -> u64 {
    1
}

fn resolve(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<(Scenario, crate::enumerate::IndexedOption), SimError> {
    let scenario = Scenario::new(infra, software)?;
    let indexed = scenario.index.indexed(option)?;
    Ok((scenario, indexed))
}

/// Cheapest route for one connection under `option`.
pub fn route(
    connection: &Connection,
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<RoutedFlow, SimError> {
    let (scenario, indexed) = resolve(option, infra, software)?;
    scenario
        .routed_flows(&indexed)?
        .into_iter()
        .find(|f| f.producer == connection.producer && f.consumer == connection.consumer)
        .ok_or_else(|| SimError::Unknown {
            kind: "connection",
            id: format!("{} -> {}", connection.producer, connection.consumer),
        })
}

/// Memory and bandwidth violations of `option`.
pub fn check_resources(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<Vec<Violation>, SimError> {
    let metrics = simulate(option, infra, software)?;
    Ok(metrics
        .violations
        .into_iter()
        .filter(|v| v.kind != ViolationKind::Slo)
        .collect())
}

pub fn path_latency(
    path: &ApplicationPath,
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<PathMetrics, SimError> {
    let metrics = simulate(option, infra, software)?;
    metrics
        .per_path
        .get(&path.id)
        .copied()
        .ok_or_else(|| SimError::Unknown {
            kind: "path",
            id: path.id.to_string(),
        })
}

pub fn costs(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<Costs, SimError> {
    Ok(simulate(option, infra, software)?.costs())
}

/// Full metrics for one option. Compiles the models on every call; use
/// [`Scenario`] directly when evaluating many options.
pub fn simulate(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
) -> Result<SimulationMetrics, SimError> {
    let (scenario, indexed) = resolve(option, infra, software)?;
    scenario.simulate(&indexed)
}

/// Keeps feasible records whose every path meets its SLO.
pub fn filter_slo(results: Vec<SimRecord>) -> Vec<SimRecord> {
    results
        .into_iter()
        .filter(|r| r.metrics.feasible && r.metrics.slos_met())
        .collect()
}

/// `max(1, floor(n * fraction))`.
pub fn shortlist_size(n: usize, fraction: f64) -> usize {
    // The epsilon keeps products such as 0.29 * 100 from flooring one short.
    (((n as f64) * fraction + 1e-9).floor() as usize).max(1).min(n.max(1))
}

/// Cheapest `fraction` of `results`; ties keep enumeration order.
pub fn select_percentile(mut results: Vec<SimRecord>, fraction: f64) -> Result<Vec<SimRecord>, SimError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SimError::InvalidFraction(fraction));
    }
    if results.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let k = shortlist_size(results.len(), fraction);
    results.sort_by(|a, b| {
        a.metrics
            .total_cost_month
            .total_cmp(&b.metrics.total_cost_month)
            .then(a.option_id.cmp(&b.option_id))
    });
    results.truncate(k);
    Ok(results)
}

#[cfg(test)]
mod tests;
