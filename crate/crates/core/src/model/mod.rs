//! Infrastructure and software models.
//!
//! Units are canonical after loading: bytes, bytes per second, milliseconds and
//! currency per 30-day month.

mod load;
mod rates;

pub use load::{
    load_infrastructure, load_models, load_models_with, load_software, to_document, validate_models,
    LoadOptions,
};
pub use rates::derive_rates;

use crate::ids::{ComponentId, HardwareId, LinkId, NodeId, PathId};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Seconds in the 30-day month used for price conversion.
pub const SECONDS_PER_MONTH: f64 = 2_592_000.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error in {document} document: {message}")]
    Schema {
        document: &'static str,
        message: String,
    },
    #[error("invariant `{invariant}` violated: {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },
    #[error("infrastructure graph is disconnected: {} is unreachable from {}", .unreachable.join(", "), .root)]
    DisconnectedGraph {
        root: NodeId,
        unreachable: Vec<String>,
    },
    #[error("software graph contains a cycle through `{0}`")]
    CyclicSoftwareGraph(ComponentId),
    #[error("`{0}` has no output rate")]
    MissingRate(ComponentId),
}

impl ModelError {
    pub(crate) fn invalid(invariant: &'static str, detail: impl Into<String>) -> Self {
        ModelError::Validation {
            invariant,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyClass {
    Low,
    Medium,
    High,
}

/// Latency class boundaries used when a link does not declare its class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LatencyThresholds {
    pub medium_from_ms: f64,
    pub high_from_ms: f64,
}

impl Default for LatencyThresholds {
    fn default() -> Self {
        Self {
            medium_from_ms: 5.0,
            high_from_ms: 50.0,
        }
    }
}

impl LatencyThresholds {
    pub fn classify(&self, latency_ms: f64) -> LatencyClass {
        if latency_ms < self.medium_from_ms {
            LatencyClass::Low
        } else if latency_ms < self.high_from_ms {
            LatencyClass::Medium
        } else {
            LatencyClass::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "load::RawHardwareOption")]
pub struct HardwareOption {
    pub id: HardwareId,
    /// Relative performance indicator; 1.0 is the reference machine.
    pub rpi: f64,
    pub memory_bytes: u64,
    pub price_month: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InfraNode {
    pub id: NodeId,
    #[serde(default)]
    pub name: String,
    pub tier: String,
    #[serde(default)]
    pub pinned: Vec<ComponentId>,
    pub hardware_options: Vec<HardwareOption>,
}

impl InfraNode {
    pub fn hardware(&self, id: &str) -> Option<&HardwareOption> {
        self.hardware_options.iter().find(|o| o.id.as_str() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "load::RawNetworkLink")]
pub struct NetworkLink {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ms: f64,
    pub bandwidth_bytes_per_sec: f64,
    pub bandwidth_price_month_per_byte_per_sec: f64,
    /// Filled from [`LatencyThresholds`] at load time when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_class: Option<LatencyClass>,
}

impl NetworkLink {
    pub fn connects(&self, x: &NodeId, y: &NodeId) -> bool {
        (&self.a == x && &self.b == y) || (&self.a == y && &self.b == x)
    }

    pub fn other_end(&self, n: &NodeId) -> Option<&NodeId> {
        if &self.a == n {
            Some(&self.b)
        } else if &self.b == n {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn is_high_latency(&self) -> bool {
        self.latency_class == Some(LatencyClass::High)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InfrastructureModel {
    pub tier_order: Vec<String>,
    pub nodes: Vec<InfraNode>,
    pub links: Vec<NetworkLink>,
}

impl InfrastructureModel {
    pub fn node(&self, id: &str) -> Option<&InfraNode> {
        self.nodes.iter().find(|n| n.id.as_str() == id)
    }

    pub fn link(&self, id: &str) -> Option<&NetworkLink> {
        self.links.iter().find(|l| l.id.as_str() == id)
    }

    pub fn tier_rank(&self, tier: &str) -> Option<usize> {
        self.tier_order.iter().position(|t| t == tier)
    }

    /// Tier rank of a node; panics on an unvalidated model.
    pub fn node_rank(&self, node: &NodeId) -> usize {
        let n = self.node(node.as_str()).expect("node exists");
        self.tier_rank(&n.tier).expect("tier declared")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Source,
    Service,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceRole {
    EventProcessor,
    Preprocessor,
    HeavyAnalytics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathClass {
    EventProcessing,
    DataAnalytics,
}

impl fmt::Display for PathClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathClass::EventProcessing => "event-processing",
            PathClass::DataAnalytics => "data-analytics",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SoftwareComponent {
    pub id: ComponentId,
    pub kind: ComponentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_rate_bytes_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_memory_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ServiceRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_node: Option<NodeId>,
}

impl SoftwareComponent {
    pub fn source(id: &str, rate: f64, node: &str) -> Self {
        Self {
            output_rate_bytes_per_sec: Some(rate),
            pinned_node: Some(node.into()),
            ..Self::bare(id, ComponentKind::Source)
        }
    }

    pub fn service(id: &str, ratio: f64, delay_ms: f64, memory: u64, role: ServiceRole) -> Self {
        Self {
            output_ratio: Some(ratio),
            ref_delay_ms: Some(delay_ms),
            required_memory_bytes: Some(memory),
            role: Some(role),
            ..Self::bare(id, ComponentKind::Service)
        }
    }

    pub fn sink(id: &str, node: &str) -> Self {
        Self {
            pinned_node: Some(node.into()),
            ..Self::bare(id, ComponentKind::Sink)
        }
    }

    fn bare(id: &str, kind: ComponentKind) -> Self {
        Self {
            id: id.into(),
            kind,
            output_rate_bytes_per_sec: None,
            output_ratio: None,
            ref_delay_ms: None,
            required_memory_bytes: None,
            role: None,
            pinned_node: None,
        }
    }

    pub fn is_service(&self) -> bool {
        self.kind == ComponentKind::Service
    }

    pub fn ref_delay(&self) -> f64 {
        self.ref_delay_ms.unwrap_or(0.0)
    }

    pub fn memory(&self) -> u64 {
        self.required_memory_bytes.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Connection {
    pub producer: ComponentId,
    pub consumer: ComponentId,
    /// Derived by [`derive_rates`]; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_rate_bytes_per_sec: Option<f64>,
}

impl Connection {
    pub fn new(producer: &str, consumer: &str) -> Self {
        Self {
            producer: producer.into(),
            consumer: consumer.into(),
            data_rate_bytes_per_sec: None,
        }
    }

    pub fn rate(&self) -> f64 {
        self.data_rate_bytes_per_sec.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ApplicationPath {
    pub id: PathId,
    pub class: PathClass,
    pub members: Vec<ComponentId>,
    pub slo_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SoftwareModel {
    pub components: Vec<SoftwareComponent>,
    #[serde(default)]
    pub connections: Vec<Connection>,
    #[serde(default)]
    pub paths: Vec<ApplicationPath>,
}

impl SoftwareModel {
    pub fn component(&self, id: &str) -> Option<&SoftwareComponent> {
        self.components.iter().find(|c| c.id.as_str() == id)
    }

    pub fn path(&self, id: &str) -> Option<&ApplicationPath> {
        self.paths.iter().find(|p| p.id.as_str() == id)
    }

    pub fn services(&self) -> impl Iterator<Item = &SoftwareComponent> {
        self.components.iter().filter(|c| c.is_service())
    }

    pub fn of_kind(&self, kind: ComponentKind) -> impl Iterator<Item = &SoftwareComponent> {
        self.components.iter().filter(move |c| c.kind == kind)
    }

    pub fn path_sink(&self, path: &ApplicationPath) -> Option<&SoftwareComponent> {
        path.members
            .iter()
            .filter_map(|m| self.component(m.as_str()))
            .find(|c| c.kind == ComponentKind::Sink)
    }

    pub fn path_sources<'a>(
        &'a self,
        path: &'a ApplicationPath,
    ) -> impl Iterator<Item = &'a SoftwareComponent> + 'a {
        path.members
            .iter()
            .filter_map(|m| self.component(m.as_str()))
            .filter(|c| c.kind == ComponentKind::Source)
    }

    /// Component chains from each source of `path` to its sink, following only
    /// connections between path members. Each chain lists component ids in flow order.
    pub fn chains(&self, path: &ApplicationPath) -> Vec<Vec<ComponentId>> {
        let Some(sink) = self.path_sink(path) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for source in self.path_sources(path) {
            let mut stack = vec![source.id.clone()];
            self.walk_chains(path, &sink.id, &mut stack, &mut out);
        }
        out
    }

    fn walk_chains(
        &self,
        path: &ApplicationPath,
        sink: &ComponentId,
        stack: &mut Vec<ComponentId>,
        out: &mut Vec<Vec<ComponentId>>,
    ) {
        let last = stack.last().expect("non-empty").clone();
        if &last == sink {
            out.push(stack.clone());
            return;
        }
        for c in self.connections.iter().filter(|c| c.producer == last) {
            if path.members.contains(&c.consumer) {
                stack.push(c.consumer.clone());
                self.walk_chains(path, sink, stack, out);
                stack.pop();
            }
        }
    }
}

#[cfg(test)]
mod tests;
