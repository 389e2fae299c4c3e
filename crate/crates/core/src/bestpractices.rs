//! Best-practice pruning of per-service candidate nodes.
//!
//! Candidate-level rules shrink the node set of each service independently:
//!
//! * `shortestPath` (event-processing paths): nodes on a minimum-hop route between
//!   a source's node and the sink's node, plus nodes reachable from those by
//!   strictly cloud-ward tier steps.
//! * `forbidHighLatencyLinks` (per path): drops candidates that cannot reach every
//!   source and the sink without crossing a high-latency link.
//! * `preprocessorEdgeward` / `heavyCloudward` (data-analytics paths): preprocessors
//!   stay at or below the analytics floor tier, heavy analytics at or above it.
//! * `zoneCeiling` (per path): drops nodes above a tier.
//! * overrides: `allow` replaces the computed set, `deny` subtracts from it.
//!
//! Option-level rules (link reuse, preprocessor-before-heavy ordering) depend on
//! the whole placement and are checked by [`OptionRules`].

use crate::enumerate::{CandidateSets, DesignOption, IndexedOption};
use crate::ids::{ComponentId, NodeId, PathId};
use crate::model::{
    ApplicationPath, ComponentKind, InfrastructureModel, PathClass, ServiceRole, SoftwareModel,
};
use crate::simulator::{Scenario, SimError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkReuseScope {
    /// Count traversals along each source-to-sink chain separately.
    #[default]
    Chain,
    /// Count traversals over the union of all routed connections.
    Option,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Override {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow: Option<BTreeSet<NodeId>>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub deny: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct RuleSet {
    pub shortest_path: bool,
    pub preprocessor_edgeward: bool,
    pub heavy_cloudward: bool,
    /// Boundary tier between edge-side preprocessing and heavy analytics.
    pub analytics_floor_tier: Option<String>,
    pub zone_ceiling: BTreeMap<PathId, String>,
    pub forbid_high_latency_links: BTreeMap<PathId, bool>,
    pub link_reuse: bool,
    pub link_reuse_threshold: u32,
    pub link_reuse_scope: LinkReuseScope,
    pub link_reuse_directional: bool,
    pub ordering_constraints: bool,
    pub overrides: BTreeMap<ComponentId, Override>,
}

impl Default for RuleSet {
    /// Every rule off, no overrides.
    fn default() -> Self {
        Self {
            shortest_path: false,
            preprocessor_edgeward: false,
            heavy_cloudward: false,
            analytics_floor_tier: None,
            zone_ceiling: BTreeMap::new(),
            forbid_high_latency_links: BTreeMap::new(),
            link_reuse: false,
            link_reuse_threshold: 2,
            link_reuse_scope: LinkReuseScope::Chain,
            link_reuse_directional: false,
            ordering_constraints: false,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    ShortestPath,
    HighLatencyLink,
    PreprocessorEdgeward,
    HeavyCloudward,
    ZoneCeiling,
    OverrideAllow,
    OverrideDeny,
    LinkReuse,
    Ordering,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Reason {
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathId>,
    pub detail: String,
}

/// Why one node was removed from one service's candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Exclusion {
    pub service: ComponentId,
    pub node: NodeId,
    pub reasons: Vec<Reason>,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} excluded from {}:", self.service, self.node)?;
        for (i, r) in self.reasons.iter().enumerate() {
            let sep = if i == 0 { " " } else { "; " };
            match &r.path {
                Some(p) => write!(f, "{sep}{} on {p} ({})", r.rule, r.detail)?,
                None => write!(f, "{sep}{} ({})", r.rule, r.detail)?,
            }
        }
        Ok(())
    }
}

/// Candidate sets plus the justification for every removed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    pub candidates: CandidateSets,
    pub trace: Vec<Exclusion>,
}

impl Pruning {
    /// Line-oriented justification report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (s, nodes) in &self.candidates.0 {
            let list: Vec<&str> = nodes.iter().map(NodeId::as_str).collect();
            out.push_str(&format!("{s} keeps {} node(s): {}\n", nodes.len(), list.join(", ")));
        }
        for e in &self.trace {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("invalid rule set: {0}")]
    InvalidRuleSet(String),
    #[error("service `{service}` has no candidate node left")]
    EmptyCandidates {
        service: ComponentId,
        pruning: Box<Pruning>,
    },
    #[error("service `{0}` is not on path `{1}`")]
    NotOnPath(ComponentId, PathId),
    #[error(transparent)]
    Routing(#[from] SimError),
}

impl RuleSet {
    pub fn validate(&self, infra: &InfrastructureModel, software: &SoftwareModel) -> Result<(), RuleError> {
        let bad = |m: String| Err(RuleError::InvalidRuleSet(m));
        if self.link_reuse_threshold < 1 {
            return bad("linkReuseThreshold must be at least 1".into());
        }
        if let Some(t) = &self.analytics_floor_tier {
            if infra.tier_rank(t).is_none() {
                return bad(format!("analyticsFloorTier `{t}` is not a declared tier"));
            }
        } else if self.preprocessor_edgeward || self.heavy_cloudward {
            return bad("analytics rules need analyticsFloorTier".into());
        }
        for (p, t) in &self.zone_ceiling {
            if software.path(p.as_str()).is_none() {
                return bad(format!("zoneCeiling names unknown path `{p}`"));
            }
            if infra.tier_rank(t).is_none() {
                return bad(format!("zoneCeiling of `{p}` uses undeclared tier `{t}`"));
            }
        }
        for p in self.forbid_high_latency_links.keys() {
            if software.path(p.as_str()).is_none() {
                return bad(format!("forbidHighLatencyLinks names unknown path `{p}`"));
            }
        }
        for (s, o) in &self.overrides {
            if !software.component(s.as_str()).is_some_and(|c| c.is_service()) {
                return bad(format!("override for unknown service `{s}`"));
            }
            for n in o.allow.iter().flatten().chain(&o.deny) {
                if infra.node(n.as_str()).is_none() {
                    return bad(format!("override for `{s}` names unknown node `{n}`"));
                }
            }
        }
        Ok(())
    }
}

struct Graph<'a> {
    infra: &'a InfrastructureModel,
    adj: HashMap<&'a NodeId, Vec<(&'a NodeId, bool)>>,
}

impl<'a> Graph<'a> {
    fn new(infra: &'a InfrastructureModel) -> Self {
        let mut adj: HashMap<&NodeId, Vec<(&NodeId, bool)>> =
            infra.nodes.iter().map(|n| (&n.id, Vec::new())).collect();
        for l in &infra.links {
            let high = l.is_high_latency();
            adj.entry(&l.a).or_default().push((&l.b, high));
            adj.entry(&l.b).or_default().push((&l.a, high));
        }
        Self { infra, adj }
    }

    fn hops(&self, from: &'a NodeId, skip_high: bool) -> HashMap<&'a NodeId, usize> {
        let mut dist = HashMap::from([(from, 0)]);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &(v, high) in &self.adj[u] {
                if skip_high && high {
                    continue;
                }
                if !dist.contains_key(v) {
                    dist.insert(v, dist[u] + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn rank(&self, n: &NodeId) -> usize {
        self.infra.node_rank(n)
    }
}

fn pinned_node<'a>(software: &'a SoftwareModel, id: &ComponentId) -> Option<&'a NodeId> {
    software.component(id.as_str()).and_then(|c| c.pinned_node.as_ref())
}

// Per-node exclusion reasons from the path-level rules, before overrides.
fn path_reasons(
    service: &ComponentId,
    path: &ApplicationPath,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    rules: &RuleSet,
    graph: &Graph<'_>,
) -> Result<BTreeMap<NodeId, Vec<Reason>>, RuleError> {
    if !path.members.contains(service) {
        return Err(RuleError::NotOnPath(service.clone(), path.id.clone()));
    }
    let role = software.component(service.as_str()).and_then(|c| c.role);
    let mut reasons: BTreeMap<NodeId, Vec<Reason>> =
        infra.nodes.iter().map(|n| (n.id.clone(), Vec::new())).collect();
    let mut exclude = |n: &NodeId, rule: Rule, detail: String| {
        reasons.get_mut(n).expect("known node").push(Reason {
            rule,
            path: Some(path.id.clone()),
            detail,
        });
    };

    let sink = software
        .path_sink(path)
        .and_then(|c| c.pinned_node.as_ref())
        .expect("validated path has a pinned sink");
    let sources: Vec<&NodeId> = software
        .path_sources(path)
        .filter_map(|c| pinned_node(software, &c.id))
        .collect();
    let forbid = rules
        .forbid_high_latency_links
        .get(&path.id)
        .copied()
        .unwrap_or(false);

    if rules.shortest_path && path.class == PathClass::EventProcessing {
        let to_sink = graph.hops(sink, false);
        let mut base: BTreeSet<&NodeId> = BTreeSet::new();
        for s in &sources {
            let from = graph.hops(s, false);
            let Some(&d) = from.get(sink) else { continue };
            for n in &infra.nodes {
                if let (Some(a), Some(b)) = (from.get(&n.id), to_sink.get(&n.id)) {
                    if a + b == d {
                        base.insert(&n.id);
                    }
                }
            }
        }
        let mut keep = base.clone();
        let mut queue: VecDeque<&NodeId> = base.iter().copied().collect();
        while let Some(u) = queue.pop_front() {
            for &(v, high) in &graph.adj[u] {
                if forbid && high {
                    continue;
                }
                if graph.rank(v) > graph.rank(u) && keep.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        let ends: Vec<&str> = sources.iter().map(|n| n.as_str()).collect();
        for n in &infra.nodes {
            if !keep.contains(&n.id) {
                exclude(
                    &n.id,
                    Rule::ShortestPath,
                    format!(
                        "not on a minimum-hop route from {} to {sink} nor cloud-ward of one",
                        ends.join("/")
                    ),
                );
            }
        }
    }

    if forbid {
        let mut reach: Option<BTreeSet<&NodeId>> = None;
        for end in sources.iter().copied().chain([sink]) {
            let r: BTreeSet<&NodeId> = graph.hops(end, true).into_keys().collect();
            reach = Some(match reach {
                None => r,
                Some(acc) => acc.intersection(&r).copied().collect(),
            });
        }
        let reach = reach.unwrap_or_default();
        for n in &infra.nodes {
            if !reach.contains(&n.id) {
                exclude(
                    &n.id,
                    Rule::HighLatencyLink,
                    "reaching it from the path's endpoints crosses a high-latency link".into(),
                );
            }
        }
    }

    if path.class == PathClass::DataAnalytics {
        let floor = rules.analytics_floor_tier.as_deref();
        let floor_rank = floor.and_then(|t| infra.tier_rank(t));
        match (role, floor_rank) {
            (Some(ServiceRole::Preprocessor), Some(f)) if rules.preprocessor_edgeward => {
                for n in &infra.nodes {
                    if graph.rank(&n.id) > f {
                        exclude(
                            &n.id,
                            Rule::PreprocessorEdgeward,
                            format!("tier {} is above {}", n.tier, floor.unwrap_or_default()),
                        );
                    }
                }
            }
            (Some(ServiceRole::HeavyAnalytics), Some(f)) if rules.heavy_cloudward => {
                for n in &infra.nodes {
                    if graph.rank(&n.id) < f {
                        exclude(
                            &n.id,
                            Rule::HeavyCloudward,
                            format!("tier {} is below {}", n.tier, floor.unwrap_or_default()),
                        );
                    }
                }
            }
            _ => {}
        }
    }

    if let Some(ceiling) = rules.zone_ceiling.get(&path.id) {
        let c = infra.tier_rank(ceiling).unwrap_or(usize::MAX);
        for n in &infra.nodes {
            if graph.rank(&n.id) > c {
                exclude(&n.id, Rule::ZoneCeiling, format!("tier {} is above {ceiling}", n.tier));
            }
        }
    }
    Ok(reasons)
}

fn apply_overrides(service: &ComponentId, rules: &RuleSet, reasons: &mut BTreeMap<NodeId, Vec<Reason>>) {
    let Some(o) = rules.overrides.get(service) else { return };
    if let Some(allow) = &o.allow {
        for (n, r) in reasons.iter_mut() {
            r.clear();
            if !allow.contains(n) {
                r.push(Reason {
                    rule: Rule::OverrideAllow,
                    path: None,
                    detail: "not in the designer's allow list".into(),
                });
            }
        }
    }
    for n in &o.deny {
        if let Some(r) = reasons.get_mut(n) {
            r.push(Reason {
                rule: Rule::OverrideDeny,
                path: None,
                detail: "denied by designer override".into(),
            });
        }
    }
}

/// Allowed nodes for `service` on a single path, overrides included.
pub fn candidate_nodes(
    service: &ComponentId,
    path: &ApplicationPath,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    rules: &RuleSet,
) -> Result<BTreeSet<NodeId>, RuleError> {
    let graph = Graph::new(infra);
    let mut reasons = path_reasons(service, path, infra, software, rules, &graph)?;
    apply_overrides(service, rules, &mut reasons);
    let keep: BTreeSet<NodeId> = reasons
        .into_iter()
        .filter(|(_, r)| r.is_empty())
        .map(|(n, _)| n)
        .collect();
    if keep.is_empty() {
        let pruning = Pruning {
            candidates: CandidateSets(BTreeMap::from([(service.clone(), BTreeSet::new())])),
            trace: Vec::new(),
        };
        return Err(RuleError::EmptyCandidates {
            service: service.clone(),
            pruning: Box::new(pruning),
        });
    }
    Ok(keep)
}

/// Candidate sets for every service, intersected over the paths each belongs to.
pub fn apply_best_practices(
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    rules: &RuleSet,
) -> Result<Pruning, RuleError> {
    rules.validate(infra, software)?;
    let graph = Graph::new(infra);
    let mut candidates = BTreeMap::new();
    let mut trace = Vec::new();
    let mut empty = None;
    for svc in software.services() {
        let mut merged: BTreeMap<NodeId, Vec<Reason>> =
            infra.nodes.iter().map(|n| (n.id.clone(), Vec::new())).collect();
        for path in software.paths.iter().filter(|p| p.members.contains(&svc.id)) {
            for (n, r) in path_reasons(&svc.id, path, infra, software, rules, &graph)? {
                merged.get_mut(&n).expect("known node").extend(r);
            }
        }
        apply_overrides(&svc.id, rules, &mut merged);
        let mut keep = BTreeSet::new();
        for (node, reasons) in merged {
            if reasons.is_empty() {
                keep.insert(node);
            } else {
                trace.push(Exclusion {
                    service: svc.id.clone(),
                    node,
                    reasons,
                });
            }
        }
        if keep.is_empty() && empty.is_none() {
            empty = Some(svc.id.clone());
        }
        candidates.insert(svc.id.clone(), keep);
    }
    let pruning = Pruning {
        candidates: CandidateSets(candidates),
        trace,
    };
    match empty {
        Some(service) => Err(RuleError::EmptyCandidates {
            service,
            pruning: Box::new(pruning),
        }),
        None => Ok(pruning),
    }
}

/// A placement-level best-practice failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OptionRuleViolation {
    pub rule: Rule,
    pub detail: String,
}

/// Placement-level rules compiled against a [`Scenario`].
#[derive(Debug, Clone)]
pub struct OptionRules {
    link_reuse: Option<(u32, LinkReuseScope, bool)>,
    ordering: Vec<(usize, usize)>,
}

impl OptionRules {
    pub fn new(scenario: &Scenario, software: &SoftwareModel, rules: &RuleSet) -> Self {
        let link_reuse = rules.link_reuse.then_some((
            rules.link_reuse_threshold,
            rules.link_reuse_scope,
            rules.link_reuse_directional,
        ));
        let mut ordering = BTreeSet::new();
        if rules.ordering_constraints {
            let role = |c: usize| {
                software
                    .component(scenario.component_id(c).as_str())
                    .filter(|c| c.kind == ComponentKind::Service)
                    .and_then(|c| c.role)
            };
            for (pi, p) in software.paths.iter().enumerate() {
                if p.class != PathClass::DataAnalytics {
                    continue;
                }
                for chain in scenario.chains(pi) {
                    for (i, &a) in chain.components.iter().enumerate() {
                        if role(a) != Some(ServiceRole::Preprocessor) {
                            continue;
                        }
                        for &b in &chain.components[i + 1..] {
                            if role(b) == Some(ServiceRole::HeavyAnalytics) {
                                ordering.insert((a, b));
                            }
                        }
                    }
                }
            }
        }
        Self {
            link_reuse,
            ordering: ordering.into_iter().collect(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.link_reuse.is_some() || !self.ordering.is_empty()
    }

    pub fn check(&self, scenario: &Scenario, option: &IndexedOption) -> Result<Option<OptionRuleViolation>, SimError> {
        for &(pre, heavy) in &self.ordering {
            let (p, h) = (scenario.host(pre, option), scenario.host(heavy, option));
            if scenario.tier(h) < scenario.tier(p) {
                return Ok(Some(OptionRuleViolation {
                    rule: Rule::Ordering,
                    detail: format!(
                        "{} on {} sits below its preprocessor {} on {}",
                        scenario.component_id(heavy),
                        scenario.index.nodes[h],
                        scenario.component_id(pre),
                        scenario.index.nodes[p]
                    ),
                }));
            }
        }
        if let Some((threshold, scope, directional)) = self.link_reuse {
            let groups: Vec<Vec<usize>> = match scope {
                LinkReuseScope::Option => vec![(0..scenario.connection_count()).collect()],
                LinkReuseScope::Chain => (0..scenario.path_ids().count())
                    .flat_map(|p| scenario.chains(p).iter().map(|c| c.connections.clone()))
                    .collect(),
            };
            for group in groups {
                let mut counts: HashMap<(usize, bool), u32> = HashMap::new();
                for conn in group {
                    let (prod, cons) = scenario.connection(conn);
                    let route = scenario.route(scenario.host(prod, option), scenario.host(cons, option))?;
                    for (i, &l) in route.links.iter().enumerate() {
                        let forward = directional && route.nodes[i] < route.nodes[i + 1];
                        let c = counts.entry((l, forward)).or_default();
                        *c += 1;
                        if *c > threshold {
                            return Ok(Some(OptionRuleViolation {
                                rule: Rule::LinkReuse,
                                detail: format!(
                                    "link {} carries the flow {} times (limit {threshold})",
                                    scenario.link_id(l),
                                    c
                                ),
                            }));
                        }
                    }
                }
            }
        }
        Ok(None)
    }
}

/// True iff no link is traversed more than `rules.linkReuseThreshold` times.
pub fn link_reuse_ok(
    option: &DesignOption,
    infra: &InfrastructureModel,
    software: &SoftwareModel,
    rules: &RuleSet,
) -> Result<bool, SimError> {
    let scenario = Scenario::new(infra, software)?;
    let indexed = scenario.index.indexed(option)?;
    let only_reuse = RuleSet {
        link_reuse: true,
        ordering_constraints: false,
        ..rules.clone()
    };
    let checker = OptionRules::new(&scenario, software, &only_reuse);
    Ok(checker.check(&scenario, &indexed)?.is_none())
}
