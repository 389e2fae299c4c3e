//! End-to-end exploration runs and their artifacts.
//!
//! A run walks the funnel enumerate → best-practices → feasibility → slo →
//! percentile → emulation → final and writes every intermediate result to the
//! output directory:
//!
//! | file | content |
//! |------|---------|
//! | `candidates.json` | per-service candidate nodes |
//! | `justification.txt` | why each (service, node) pair was dropped |
//! | `records.jsonl`, `records.csv` | one simulated record per distinct design |
//! | `shortlist.jsonl` | the cheapest SLO-conforming designs |
//! | `calibration.json` | host throughput used by the emulator |
//! | `emulation.json`, `emulation.csv` | testbed reports, ranking and bar data |
//! | `samples.csv` | raw latencies, with `--dump-samples` |
//! | `funnel.json` | stage counts and the final recommendation |
//! | `timings.json` | wall-clock time per stage |
//!
//! `funnel.json` holds no timings or paths so that equal inputs give equal bytes.

mod explain;
mod stages;

pub use explain::{explain, explain_design};
pub use stages::{
    CountSummary, EmulationOutcome, EmulationResult, EmulationSummary, Progress, PruneSummary, Session,
    SimSummary,
};

use crate::bestpractices::{RuleError, RuleSet};
use crate::emulator::{ClockMode, EmuError, WorkloadSpec, DEFAULT_REFERENCE_UNITS};
use crate::enumerate::{EnumerateError, HardwareScope};
use crate::ids::{ComponentId, HardwareId, NodeId, OptionId, PathId};
use crate::model::{LatencyThresholds, ModelError};
use crate::simulator::{SimError, SimulationMetrics};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

fn default_percentile() -> f64 {
    0.05
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}
fn reference_units() -> u64 {
    DEFAULT_REFERENCE_UNITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EmulationConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "reference_units")]
    pub reference_work_units: u64,
    /// A stored calibration profile; the host is measured when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub dump_samples: bool,
    #[serde(default)]
    pub workload: WorkloadSpec,
}

impl Default for EmulationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub infrastructure: PathBuf,
    pub software: PathBuf,
    #[serde(default)]
    pub rules: RuleSet,
    /// Replacement latency limits keyed by path id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slo_overrides: BTreeMap<PathId, f64>,
    #[serde(default)]
    pub hardware_scope: HardwareScope,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub emulation: EmulationConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    /// Simulation worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Seeds sampled diagnostics only; runs are otherwise deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_thresholds: Option<LatencyThresholds>,
}

impl PipelineConfig {
    /// Parses a config document. Relative paths are taken relative to `base`.
    pub fn parse(doc: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut c: PipelineConfig =
            serde_json::from_str(doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.resolve(base);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let doc = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&doc, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.infrastructure);
        fix(&mut self.software);
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.emulation.calibration {
            fix(c);
        }
        for w in self.emulation.workload.sources.values_mut() {
            if let crate::emulator::SourceWorkload::TraceReplay { trace } = w {
                fix(trace);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(PipelineError::Config(format!(
                "percentile {} is outside (0, 1]",
                self.percentile
            )));
        }
        if self.jobs == Some(0) {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        for (p, v) in &self.slo_overrides {
            if !(*v > 0.0) {
                return Err(PipelineError::Config(format!("SLO override for `{p}` must be positive")));
            }
        }
        self.emulation
            .workload
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn clock(&self) -> ClockMode {
        self.emulation.workload.clock
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Enumerate,
    BestPractices,
    Feasibility,
    Slo,
    Percentile,
    Emulation,
    Final,
}

impl StageName {
    pub const ALL: [StageName; 7] = [
        StageName::Enumerate,
        StageName::BestPractices,
        StageName::Feasibility,
        StageName::Slo,
        StageName::Percentile,
        StageName::Emulation,
        StageName::Final,
    ];
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageRecord {
    pub stage: StageName,
    pub options_in: u64,
    pub options_out: u64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmulationVerdict {
    pub rank: usize,
    pub slos_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Recommendation {
    pub option_id: OptionId,
    pub placement: BTreeMap<ComponentId, NodeId>,
    pub hardware: BTreeMap<NodeId, HardwareId>,
    pub metrics: SimulationMetrics,
    pub emulation: Option<EmulationVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunnelReport {
    pub stages: Vec<StageRecord>,
    #[serde(rename = "final")]
    pub recommendation: Option<Recommendation>,
}

impl FunnelReport {
    /// Canonical bytes of `funnel.json`.
    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn stage(&self, name: StageName) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn is_monotonic(&self) -> bool {
        self.stages.iter().all(|s| s.options_out <= s.options_in)
            && self.stages.windows(2).all(|w| w[1].options_in <= w[0].options_out)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Enumerate(#[from] EnumerateError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Emulation(#[from] EmuError),
    #[error("no option survives the {0} stage")]
    EmptyResult(StageName),
    #[error("unknown option {0}")]
    UnknownOption(u64),
    #[error("missing artifact {0}; run the earlier stages first")]
    MissingArtifact(PathBuf),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: StageName,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn at(self, stage: StageName) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 2 for invalid input, 3 for an empty result, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Stage { source, .. } => source.exit_code(),
            PipelineError::Config(_)
            | PipelineError::Model(_)
            | PipelineError::UnknownOption(_)
            | PipelineError::Simulation(SimError::InvalidOption(_)) => 2,
            PipelineError::Rules(RuleError::EmptyCandidates { .. }) | PipelineError::EmptyResult(_) => 3,
            PipelineError::Rules(_) => 2,
            PipelineError::Enumerate(EnumerateError::EmptySpace(_)) => 3,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests;
