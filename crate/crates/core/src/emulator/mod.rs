//! Single-host virtual testbed for shortlisted designs.
//!
//! Every component runs as a thread. Messages between components pass through a
//! network-fabric thread that holds them for the injected one-way latency of each
//! routed link and shapes them with a per-link token bucket. Services burn
//! calibrated busy-work scaled by the rPI of their node's hardware.

mod calibrate;
mod run;

pub use calibrate::{burn, calibrate, thread_cpu_s, time_units_ms, Calibration, DEFAULT_REFERENCE_UNITS, KERNEL_PRIME};
pub use run::{run_experiment, run_experiment_with, BusyWork, RunOptions, ServiceHook};

use crate::enumerate::DesignOption;
use crate::ids::{ComponentId, HardwareId, LinkId, NodeId, OptionId, PathId};
use crate::model::{ComponentKind, InfrastructureModel, SoftwareModel};
use crate::simulator::{Scenario, SimError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmuError {
    #[error("calibration unstable: samples {samples_ms:?} ms deviate more than 10% from their median")]
    CalibrationUnstable { samples_ms: Vec<f64> },
    #[error("node `{node}` needs {required} bytes of memory but has {available}")]
    ResourceExhausted {
        node: NodeId,
        required: u64,
        available: u64,
    },
    #[error("path `{path}` recorded no samples after warmup from `{source_id}`")]
    Starvation { path: PathId, source_id: ComponentId },
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("cannot read trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("testbed has {0} components; at most 128 are supported")]
    TooManyComponents(usize),
    #[error("an actor thread panicked")]
    ActorPanicked,
    #[error(transparent)]
    Routing(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VirtualNode {
    pub hardware: Option<HardwareId>,
    /// rPI of the selected hardware, 1.0 when none is selected.
    pub compute_scale: f64,
    pub memory_cap: Option<u64>,
    /// Sum of the footprints of the services placed here.
    pub memory_required: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VirtualLink {
    pub latency_ms: f64,
    pub bandwidth_bytes_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Actor {
    pub id: ComponentId,
    pub kind: ComponentKind,
    pub node: NodeId,
    pub work_units: u64,
    pub output_ratio: f64,
    /// Bytes per second emitted by a source.
    pub output_rate: f64,
}

/// A producer-to-consumer channel and the links its messages cross.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Flow {
    pub producer: usize,
    pub consumer: usize,
    pub links: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathPlan {
    pub id: PathId,
    pub slo_ms: f64,
    pub sink: usize,
    pub sources: Vec<usize>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VirtualTestbed {
    pub option: DesignOption,
    pub nodes: BTreeMap<NodeId, VirtualNode>,
    pub links: BTreeMap<LinkId, VirtualLink>,
    pub actors: Vec<Actor>,
    pub flows: Vec<Flow>,
    pub paths: Vec<PathPlan>,
}

impl VirtualTestbed {
    /// Sum of injected latencies along each flow.
    pub fn flow_latency_ms(&self, flow: usize) -> f64 {
        self.flows[flow].links.iter().map(|l| self.links[l].latency_ms).sum()
    }
}

/// Plans a testbed for `option`. Pure: no clocks or threads are involved.
pub fn build_testbed(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    calibration: &Calibration,
) -> Result<VirtualTestbed, EmuError> {
    let scenario = Scenario::new(infra, software)?;
    let indexed = scenario.index.indexed(option).map_err(SimError::from)?;
    let flows = scenario.routed_flows(&indexed)?;

    let host = |c: &crate::model::SoftwareComponent| -> Result<NodeId, EmuError> {
        match (&c.pinned_node, option.placement.get(&c.id)) {
            (Some(n), _) | (None, Some(n)) => Ok(n.clone()),
            (None, None) => Err(SimError::Unknown {
                kind: "placement for",
                id: c.id.to_string(),
            }
            .into()),
        }
    };

    let mut nodes: BTreeMap<NodeId, VirtualNode> = BTreeMap::new();
    let mut actors = Vec::with_capacity(software.components.len());
    for c in &software.components {
        let node_id = host(c)?;
        let node = infra
            .node(node_id.as_str())
            .ok_or_else(|| SimError::UnknownNode(node_id.to_string()))?;
        let hw = option.hardware.get(&node_id).and_then(|h| node.hardware(h.as_str()));
        if c.is_service() && hw.is_none() {
            return Err(SimError::NoHardware(node_id).into());
        }
        let v = nodes.entry(node_id.clone()).or_insert_with(|| VirtualNode {
            hardware: hw.map(|h| h.id.clone()),
            compute_scale: hw.map_or(1.0, |h| h.rpi),
            memory_cap: hw.map(|h| h.memory_bytes),
            memory_required: 0,
        });
        let mut work_units = 0;
        if c.is_service() {
            v.memory_required += c.memory();
            work_units = calibration.work_units(c.ref_delay(), v.compute_scale);
        }
        actors.push(Actor {
            id: c.id.clone(),
            kind: c.kind,
            node: node_id,
            work_units,
            output_ratio: c.output_ratio.unwrap_or(1.0),
            output_rate: c.output_rate_bytes_per_sec.unwrap_or(0.0),
        });
    }

    let position = |id: &ComponentId| {
        software
            .components
            .iter()
            .position(|c| &c.id == id)
            .expect("routed component exists")
    };
    let mut links = BTreeMap::new();
    let mut planned = Vec::with_capacity(flows.len());
    for f in flows {
        for l in &f.links {
            let link = infra.link(l.as_str()).expect("routed link exists");
            links.insert(
                l.clone(),
                VirtualLink {
                    latency_ms: link.latency_ms,
                    bandwidth_bytes_per_sec: link.bandwidth_bytes_per_sec,
                },
            );
        }
        planned.push(Flow {
            producer: position(&f.producer),
            consumer: position(&f.consumer),
            links: f.links,
        });
    }

    let paths = software
        .paths
        .iter()
        .map(|p| PathPlan {
            id: p.id.clone(),
            slo_ms: p.slo_latency_ms,
            sink: position(&software.path_sink(p).expect("validated path").id),
            sources: software.path_sources(p).map(|c| position(&c.id)).collect(),
            members: p.members.iter().map(position).collect::<BTreeSet<_>>().into_iter().collect(),
        })
        .collect();

    Ok(VirtualTestbed {
        option: option.clone(),
        nodes,
        links,
        actors,
        flows: planned,
        paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum SourceWorkload {
    /// Fixed-size messages at a fixed rate. The byte rate defaults to the
    /// component's output rate, the message size to rate / messagesPerSec.
    ConstantRate {
        #[serde(default)]
        rate_bytes_per_sec: Option<f64>,
        #[serde(default)]
        message_bytes: Option<f64>,
    },
    /// CSV with columns `offsetMs,sizeBytes`.
    TraceReplay { trace: PathBuf },
}

fn one() -> f64 {
    1.0
}
fn sixty() -> f64 {
    60.0
}
fn three() -> u32 {
    3
}
fn yes() -> bool {
    true
}
fn ten() -> f64 {
    10.0
}

/// How service time and path latency are clocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Each virtual node keeps its own timeline: a service takes the thread CPU
    /// time its work actually consumed, services sharing a node queue behind
    /// each other, and links deliver relative to the logical send time. Host
    /// threads competing for fewer cores than there are virtual nodes therefore
    /// do not inflate each other's latencies.
    #[default]
    NodeTime,
    /// Plain wall-clock timestamps on a shared monotonic clock.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default = "one")]
    pub messages_per_sec: f64,
    #[serde(default = "sixty")]
    pub duration_sec: f64,
    /// Defaults to a tenth of the duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_sec: Option<f64>,
    #[serde(default = "three")]
    pub repeats: u32,
    /// Spread source phases evenly over one message period.
    #[serde(default = "yes")]
    pub stagger: bool,
    #[serde(default = "ten")]
    pub drain_timeout_sec: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<ComponentId, SourceWorkload>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl WorkloadSpec {
    pub fn warmup(&self) -> f64 {
        self.warmup_sec.unwrap_or(self.duration_sec * 0.1)
    }

    pub fn validate(&self) -> Result<(), EmuError> {
        let bad = |m: &str| Err(EmuError::InvalidWorkload(m.into()));
        let w = self.warmup();
        if !(self.duration_sec > w && w >= 0.0) {
            return bad("durationSec must exceed warmupSec, which must be non-negative");
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1");
        }
        if !(self.messages_per_sec > 0.0 && self.messages_per_sec.is_finite()) {
            return bad("messagesPerSec must be positive");
        }
        if !(self.drain_timeout_sec >= 0.0) {
            return bad("drainTimeoutSec must be non-negative");
        }
        for (s, w) in &self.sources {
            if let SourceWorkload::ConstantRate {
                rate_bytes_per_sec,
                message_bytes,
            } = w
            {
                if rate_bytes_per_sec.is_some_and(|r| !(r > 0.0)) || message_bytes.is_some_and(|m| !(m > 0.0)) {
                    return Err(EmuError::InvalidWorkload(format!("non-positive rate or size for `{s}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunStats {
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathReport {
    pub slo_ms: f64,
    /// Statistics of the slowest source chain, per run.
    pub runs: Vec<RunStats>,
    pub median_run: usize,
    pub median: RunStats,
    /// Coefficient of variation of run means; present with two or more runs.
    pub cov: Option<f64>,
    pub slo_met: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    /// Messages handed to the fabric.
    pub sent: u64,
    /// Messages fully handled by their consumer.
    pub consumed: u64,
    pub in_flight_at_shutdown: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Sample {
    pub run: u32,
    pub message: u64,
    pub source: ComponentId,
    pub sink: ComponentId,
    pub origin_ms: f64,
    pub latency_ms: f64,
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmulationReport {
    pub paths: BTreeMap<PathId, PathReport>,
    pub runs: Vec<RunSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Sample>,
}

impl EmulationReport {
    pub fn all_slos_met(&self) -> bool {
        self.paths.values().all(|p| p.slo_met)
    }

    pub fn worst_path_ms(&self) -> f64 {
        self.paths.values().map(|p| p.median.mean_ms).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RankEntry {
    pub rank: usize,
    pub option_id: OptionId,
    pub slos_met: bool,
    pub cost_month: f64,
    pub worst_path_ms: f64,
}

/// One emulated option with its simulated monthly cost.
#[derive(Debug, Clone, Copy)]
pub struct Measured<'a> {
    pub option_id: OptionId,
    pub cost_month: f64,
    pub report: &'a EmulationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub ranking: Vec<RankEntry>,
    /// `optionId,path,meanMs,stddevMs,sloMs` rows for per-path bar charts.
    pub bars_csv: String,
}

/// Orders by all SLOs met, then cost, then measured worst path, then option id.
pub fn compare(measured: &[Measured<'_>]) -> Comparison {
    let mut ranking: Vec<RankEntry> = measured
        .iter()
        .map(|m| RankEntry {
            rank: 0,
            option_id: m.option_id,
            slos_met: m.report.all_slos_met(),
            cost_month: m.cost_month,
            worst_path_ms: m.report.worst_path_ms(),
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.slos_met
            .cmp(&a.slos_met)
            .then(a.cost_month.total_cmp(&b.cost_month))
            .then(a.worst_path_ms.total_cmp(&b.worst_path_ms))
            .then(a.option_id.cmp(&b.option_id))
    });
    for (i, r) in ranking.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let mut bars_csv = String::from("optionId,path,meanMs,stddevMs,sloMs\n");
    for m in measured {
        for (p, r) in &m.report.paths {
            bars_csv.push_str(&format!(
                "{},{p},{},{},{}\n",
                m.option_id.0, r.median.mean_ms, r.median.stddev_ms, r.slo_ms
            ));
        }
    }
    Comparison { ranking, bars_csv }
}
