//! Lazy enumeration and counting of design options.
//!
//! Options are ordered lexicographically: services by id (first service is the
//! most significant digit), then candidate nodes by id, then hardware options
//! by node id and option id.

use crate::ids::{ComponentId, HardwareId, NodeId};
use crate::model::{InfrastructureModel, SoftwareModel};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

/// Which nodes receive a hardware selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardwareScope {
    /// Placements only; no hardware digits.
    Disabled,
    /// Only nodes hosting at least one service get a machine.
    #[default]
    UsedNodes,
    /// Every node gets a machine, hosting services or not. Unused machines are
    /// neither billed nor simulated, so options differing only there share metrics.
    AllNodes,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateSets(pub BTreeMap<ComponentId, BTreeSet<NodeId>>);

impl CandidateSets {
    /// Every service may go on every node.
    pub fn unrestricted(infra: &InfrastructureModel, software: &SoftwareModel) -> Self {
        let all: BTreeSet<NodeId> = infra.nodes.iter().map(|n| n.id.clone()).collect();
        Self(software.services().map(|s| (s.id.clone(), all.clone())).collect())
    }

    pub fn get(&self, service: &str) -> Option<&BTreeSet<NodeId>> {
        self.0.get(service)
    }

    pub fn sizes(&self) -> Vec<(ComponentId, usize)> {
        self.0.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn placement_count(&self) -> u128 {
        self.0.values().map(|s| s.len() as u128).product()
    }

    pub fn allows(&self, service: &str, node: &str) -> bool {
        self.0.get(service).is_some_and(|s| s.contains(node))
    }
}

/// One mapping of services to nodes plus the machine chosen per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DesignOption {
    pub placement: BTreeMap<ComponentId, NodeId>,
    #[serde(default)]
    pub hardware: BTreeMap<NodeId, HardwareId>,
}

impl DesignOption {
    pub fn used_nodes(&self) -> BTreeSet<&NodeId> {
        self.placement.values().collect()
    }

    /// Drops hardware selections on nodes that host no service.
    pub fn effective(&self) -> DesignOption {
        let used = self.used_nodes();
        DesignOption {
            placement: self.placement.clone(),
            hardware: self
                .hardware
                .iter()
                .filter(|(n, _)| used.contains(n))
                .map(|(n, h)| (n.clone(), h.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for DesignOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, n) in &self.placement {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{s}@{n}")?;
            if let Some(h) = self.hardware.get(n) {
                write!(f, "[{h}]")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnumerateError {
    #[error("design space is empty: service `{0}` has no candidate node")]
    EmptySpace(ComponentId),
    #[error("candidate sets do not cover service `{0}`")]
    Uncovered(ComponentId),
    #[error("candidate sets reference unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },
}

/// A problem found while resolving a user-supplied [`DesignOption`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptionProblem {
    UnknownService { service: ComponentId },
    UnknownNode { service: ComponentId, node: NodeId },
    Unplaced { service: ComponentId },
    UnknownHardwareNode { node: NodeId },
    MissingHardware { node: NodeId },
    UnknownHardware { node: NodeId, hardware: HardwareId },
}

impl fmt::Display for OptionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptionProblem::UnknownService { service } => write!(f, "unknown service `{service}`"),
            OptionProblem::UnknownNode { service, node } => {
                write!(f, "`{service}` placed on unknown node `{node}`")
            }
            OptionProblem::UnknownHardwareNode { node } => {
                write!(f, "hardware selected on unknown node `{node}`")
            }
            OptionProblem::Unplaced { service } => write!(f, "`{service}` is not placed"),
            OptionProblem::MissingHardware { node } => write!(f, "no hardware selected on `{node}`"),
            OptionProblem::UnknownHardware { node, hardware } => {
                write!(f, "`{node}` has no hardware option `{hardware}`")
            }
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid design option: {}", .problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidOption {
    pub problems: Vec<OptionProblem>,
}

/// Compact option: node index per service and hardware index per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexedOption {
    pub placement: Vec<usize>,
    pub hardware: Vec<Option<usize>>,
}

/// Dense index of the ids of a model pair, in id order.
#[derive(Debug, Clone)]
pub struct ModelIndex {
    pub nodes: Vec<NodeId>,
    pub hardware: Vec<Vec<HardwareId>>,
    pub services: Vec<ComponentId>,
    node_pos: HashMap<NodeId, usize>,
    service_pos: HashMap<ComponentId, usize>,
}

impl ModelIndex {
    pub fn new(infra: &InfrastructureModel, software: &SoftwareModel) -> Self {
        let mut nodes: Vec<_> = infra.nodes.iter().collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let hardware = nodes
            .iter()
            .map(|n| {
                let mut ids: Vec<_> = n.hardware_options.iter().map(|o| o.id.clone()).collect();
                ids.sort();
                ids
            })
            .collect();
        let nodes: Vec<NodeId> = nodes.into_iter().map(|n| n.id.clone()).collect();
        let mut services: Vec<ComponentId> = software.services().map(|s| s.id.clone()).collect();
        services.sort();
        Self {
            node_pos: nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect(),
            service_pos: services.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect(),
            nodes,
            hardware,
            services,
        }
    }

    pub fn node(&self, id: &str) -> Option<usize> {
        self.node_pos.get(id).copied()
    }

    pub fn service(&self, id: &str) -> Option<usize> {
        self.service_pos.get(id).copied()
    }

    pub fn design(&self, option: &IndexedOption) -> DesignOption {
        DesignOption {
            placement: option
                .placement
                .iter()
                .enumerate()
                .map(|(s, &n)| (self.services[s].clone(), self.nodes[n].clone()))
                .collect(),
            hardware: option
                .hardware
                .iter()
                .enumerate()
                .filter_map(|(n, h)| h.map(|h| (self.nodes[n].clone(), self.hardware[n][h].clone())))
                .collect(),
        }
    }

    /// Resolves ids to indices. Hardware entries on nodes hosting no service are kept;
    /// every node hosting a service must have one.
    pub fn indexed(&self, option: &DesignOption) -> Result<IndexedOption, InvalidOption> {
        let mut problems = Vec::new();
        let mut placement = vec![usize::MAX; self.services.len()];
        for (s, n) in &option.placement {
            match (self.service(s.as_str()), self.node(n.as_str())) {
                (None, _) => problems.push(OptionProblem::UnknownService { service: s.clone() }),
                (Some(_), None) => problems.push(OptionProblem::UnknownNode {
                    service: s.clone(),
                    node: n.clone(),
                }),
                (Some(si), Some(ni)) => placement[si] = ni,
            }
        }
        for (si, &n) in placement.iter().enumerate() {
            if n == usize::MAX && !option.placement.contains_key(&self.services[si]) {
                problems.push(OptionProblem::Unplaced {
                    service: self.services[si].clone(),
                });
            }
        }
        let mut hardware = vec![None; self.nodes.len()];
        for (n, h) in &option.hardware {
            match self.node(n.as_str()) {
                None => problems.push(OptionProblem::UnknownHardwareNode { node: n.clone() }),
                Some(ni) => match self.hardware[ni].iter().position(|x| x == h) {
                    Some(hi) => hardware[ni] = Some(hi),
                    None => problems.push(OptionProblem::UnknownHardware {
                        node: n.clone(),
                        hardware: h.clone(),
                    }),
                },
            }
        }
        let used: BTreeSet<usize> = placement.iter().copied().filter(|&n| n != usize::MAX).collect();
        for &n in &used {
            if hardware[n].is_none() && !option.hardware.contains_key(&self.nodes[n]) {
                problems.push(OptionProblem::MissingHardware {
                    node: self.nodes[n].clone(),
                });
            }
        }
        if problems.is_empty() {
            Ok(IndexedOption { placement, hardware })
        } else {
            Err(InvalidOption { problems })
        }
    }
}

/// A candidate-restricted design space.
#[derive(Debug, Clone)]
pub struct OptionSpace {
    index: ModelIndex,
    candidates: Vec<Vec<usize>>,
    scope: HardwareScope,
}

impl OptionSpace {
    pub fn new(
        infra: &InfrastructureModel,
        software: &SoftwareModel,
        candidates: &CandidateSets,
        scope: HardwareScope,
    ) -> Result<Self, EnumerateError> {
        let index = ModelIndex::new(infra, software);
        for s in candidates.0.keys() {
            if index.service(s.as_str()).is_none() {
                return Err(EnumerateError::Unknown {
                    kind: "service",
                    id: s.to_string(),
                });
            }
        }
        let mut sets = Vec::with_capacity(index.services.len());
        for s in &index.services {
            let set = candidates
                .get(s.as_str())
                .ok_or_else(|| EnumerateError::Uncovered(s.clone()))?;
            if set.is_empty() {
                return Err(EnumerateError::EmptySpace(s.clone()));
            }
            let mut nodes = Vec::with_capacity(set.len());
            for n in set {
                nodes.push(index.node(n.as_str()).ok_or_else(|| EnumerateError::Unknown {
                    kind: "node",
                    id: n.to_string(),
                })?);
            }
            nodes.sort_unstable();
            sets.push(nodes);
        }
        Ok(Self {
            index,
            candidates: sets,
            scope,
        })
    }

    pub fn index(&self) -> &ModelIndex {
        &self.index
    }

    pub fn scope(&self) -> HardwareScope {
        self.scope
    }

    pub fn candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn placement_count(&self) -> u128 {
        self.candidates.iter().map(|c| c.len() as u128).product()
    }

    /// Total options, computed without walking the hardware digits.
    pub fn count(&self) -> u128 {
        match self.scope {
            HardwareScope::Disabled => self.placement_count(),
            HardwareScope::AllNodes => {
                self.placement_count() * self.index.hardware.iter().map(|h| h.len() as u128).product::<u128>()
            }
            HardwareScope::UsedNodes => self.count_used_nodes(),
        }
    }

    // Dynamic program over the set of used nodes that have more than one machine to
    // choose from; single-option nodes never change the product.
    fn count_used_nodes(&self) -> u128 {
        let multi: Vec<usize> = (0..self.index.nodes.len())
            .filter(|&n| self.index.hardware[n].len() > 1)
            .collect();
        if multi.len() > 128 {
            return self.placements().map(|p| self.hardware_count(&p)).sum();
        }
        let bit: HashMap<usize, u128> = multi.iter().enumerate().map(|(i, &n)| (n, 1u128 << i)).collect();
        let mut states: HashMap<u128, u128> = HashMap::from([(0, 1)]);
        for cands in &self.candidates {
            let mut next: HashMap<u128, u128> = HashMap::new();
            for (&mask, &count) in &states {
                for n in cands {
                    let m = mask | bit.get(n).copied().unwrap_or(0);
                    *next.entry(m).or_default() += count;
                }
            }
            states = next;
        }
        states
            .into_iter()
            .map(|(mask, count)| {
                let weight: u128 = multi
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &n)| self.index.hardware[n].len() as u128)
                    .product();
                count * weight
            })
            .sum()
    }

    /// Nodes receiving a hardware digit under this placement, ascending.
    pub fn hardware_nodes(&self, placement: &[usize]) -> Vec<usize> {
        match self.scope {
            HardwareScope::Disabled => Vec::new(),
            HardwareScope::AllNodes => (0..self.index.nodes.len()).collect(),
            HardwareScope::UsedNodes => {
                let set: BTreeSet<usize> = placement.iter().copied().collect();
                set.into_iter().collect()
            }
        }
    }

    pub fn hardware_count(&self, placement: &[usize]) -> u128 {
        self.hardware_nodes(placement)
            .iter()
            .map(|&n| self.index.hardware[n].len() as u128)
            .product()
    }

    pub fn placements(&self) -> Odometer {
        Odometer::new(self.candidates.iter().map(|c| c.len()).collect())
            .with_map(self.candidates.clone())
    }

    /// Decodes the `i`-th placement in enumeration order.
    pub fn placement_at(&self, mut i: u128) -> Option<Vec<usize>> {
        if i >= self.placement_count() {
            return None;
        }
        let mut out = vec![0; self.candidates.len()];
        for (s, cands) in self.candidates.iter().enumerate().rev() {
            let r = cands.len() as u128;
            out[s] = cands[(i % r) as usize];
            i /= r;
        }
        Some(out)
    }

    pub fn hardware_choices<'a>(&'a self, placement: &'a [usize]) -> impl Iterator<Item = IndexedOption> + 'a {
        let nodes = self.hardware_nodes(placement);
        let radices = nodes.iter().map(|&n| self.index.hardware[n].len()).collect();
        let n_nodes = self.index.nodes.len();
        Odometer::new(radices).map(move |digits| {
            let mut hardware = vec![None; n_nodes];
            for (&n, h) in nodes.iter().zip(digits) {
                hardware[n] = Some(h);
            }
            IndexedOption {
                placement: placement.to_vec(),
                hardware,
            }
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = IndexedOption> + '_ {
        self.placements().flat_map(move |p| {
            let nodes = self.hardware_nodes(&p);
            let radices = nodes.iter().map(|&n| self.index.hardware[n].len()).collect();
            let n_nodes = self.index.nodes.len();
            Odometer::new(radices).map(move |digits| {
                let mut hardware = vec![None; n_nodes];
                for (&n, h) in nodes.iter().zip(digits) {
                    hardware[n] = Some(h);
                }
                IndexedOption {
                    placement: p.clone(),
                    hardware,
                }
            })
        })
    }

    /// Decodes the option at position `i` of the enumeration.
    pub fn option_at(&self, i: u128) -> Option<IndexedOption> {
        if i >= self.count() {
            return None;
        }
        let (p, offset) = match self.scope {
            HardwareScope::Disabled => (self.placement_at(i)?, 0),
            HardwareScope::AllNodes => {
                let per = self.hardware_count(&[]);
                (self.placement_at(i / per)?, i % per)
            }
            HardwareScope::UsedNodes => {
                let mut rest = i;
                let mut found = None;
                for p in self.placements() {
                    let c = self.hardware_count(&p);
                    if rest < c {
                        found = Some(p);
                        break;
                    }
                    rest -= c;
                }
                (found?, rest)
            }
        };
        let nodes = self.hardware_nodes(&p);
        let mut hardware = vec![None; self.index.nodes.len()];
        let mut rest = offset;
        for &n in nodes.iter().rev() {
            let r = self.index.hardware[n].len() as u128;
            hardware[n] = Some((rest % r) as usize);
            rest /= r;
        }
        Some(IndexedOption { placement: p, hardware })
    }

    pub fn design(&self, option: &IndexedOption) -> DesignOption {
        self.index.design(option)
    }
}

/// Mixed-radix counter, most significant digit first.
#[derive(Debug, Clone)]
pub struct Odometer {
    radices: Vec<usize>,
    digits: Vec<usize>,
    map: Option<Vec<Vec<usize>>>,
    done: bool,
}

impl Odometer {
    pub fn new(radices: Vec<usize>) -> Self {
        let done = radices.contains(&0);
        Self {
            digits: vec![0; radices.len()],
            radices,
            map: None,
            done,
        }
    }

    fn with_map(mut self, map: Vec<Vec<usize>>) -> Self {
        self.map = Some(map);
        self
    }
}

impl Iterator for Odometer {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let item = match &self.map {
            Some(map) => self.digits.iter().enumerate().map(|(i, &d)| map[i][d]).collect(),
            None => self.digits.clone(),
        };
        let mut i = self.radices.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.digits[i] += 1;
            if self.digits[i] < self.radices[i] {
                break;
            }
            self.digits[i] = 0;
        }
        Some(item)
    }
}

/// Lazy stream of every option in the space.
pub fn enumerate_options<'a>(
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    candidates: &CandidateSets,
    scope: HardwareScope,
) -> Result<impl Iterator<Item = DesignOption> + 'a, EnumerateError> {
    let space = OptionSpace::new(infra, software, candidates, scope)?;
    Ok(OwnedIter::new(space))
}

struct OwnedIter {
    space: OptionSpace,
    placements: Odometer,
    current: Option<(Vec<usize>, Vec<usize>, Odometer)>,
}

impl OwnedIter {
    fn new(space: OptionSpace) -> Self {
        Self {
            placements: space.placements(),
            space,
            current: None,
        }
    }
}

impl Iterator for OwnedIter {
    type Item = DesignOption;

    fn next(&mut self) -> Option<DesignOption> {
        loop {
            if let Some((placement, nodes, hw)) = &mut self.current {
                if let Some(digits) = hw.next() {
                    let mut hardware = vec![None; self.space.index.nodes.len()];
                    for (&n, h) in nodes.iter().zip(digits) {
                        hardware[n] = Some(h);
                    }
                    return Some(self.space.design(&IndexedOption {
                        placement: placement.clone(),
                        hardware,
                    }));
                }
            }
            let p = self.placements.next()?;
            let nodes = self.space.hardware_nodes(&p);
            let radices = nodes.iter().map(|&n| self.space.index.hardware[n].len()).collect();
            self.current = Some((p, nodes, Odometer::new(radices)));
        }
    }
}

/// Closed-form size of the space; 0 when any candidate set is empty or missing.
pub fn count_options(
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    candidates: &CandidateSets,
    scope: HardwareScope,
) -> u128 {
    OptionSpace::new(infra, software, candidates, scope)
        .map(|s| s.count())
        .unwrap_or(0)
}
