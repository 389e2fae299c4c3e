use super::*;
use crate::ids::ComponentId;
use petgraph::algo::toposort;
use petgraph::graphmap::DiGraphMap;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub thresholds: LatencyThresholds,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub(super) struct RawHardwareOption {
    id: HardwareId,
    rpi: f64,
    memory_bytes: u64,
    price_month: Option<f64>,
    price_second: Option<f64>,
}

impl TryFrom<RawHardwareOption> for HardwareOption {
    type Error = String;

    fn try_from(raw: RawHardwareOption) -> Result<Self, String> {
        let price_month = monthly(raw.price_month, raw.price_second, "price")
            .map_err(|e| format!("hardware option `{}`: {e}", raw.id))?;
        Ok(HardwareOption {
            id: raw.id,
            rpi: raw.rpi,
            memory_bytes: raw.memory_bytes,
            price_month,
        })
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub(super) struct RawNetworkLink {
    id: LinkId,
    a: NodeId,
    b: NodeId,
    latency_ms: f64,
    bandwidth_bytes_per_sec: f64,
    bandwidth_price_month_per_byte_per_sec: Option<f64>,
    bandwidth_price_second_per_byte_per_sec: Option<f64>,
    latency_class: Option<LatencyClass>,
}

impl TryFrom<RawNetworkLink> for NetworkLink {
    type Error = String;

    fn try_from(raw: RawNetworkLink) -> Result<Self, String> {
        let price = monthly(
            raw.bandwidth_price_month_per_byte_per_sec,
            raw.bandwidth_price_second_per_byte_per_sec,
            "bandwidthPrice",
        )
        .map_err(|e| format!("link `{}`: {e}", raw.id))?;
        Ok(NetworkLink {
            id: raw.id,
            a: raw.a,
            b: raw.b,
            latency_ms: raw.latency_ms,
            bandwidth_bytes_per_sec: raw.bandwidth_bytes_per_sec,
            bandwidth_price_month_per_byte_per_sec: price,
            latency_class: raw.latency_class,
        })
    }
}

fn monthly(month: Option<f64>, second: Option<f64>, what: &str) -> Result<f64, String> {
    match (month, second) {
        (Some(m), None) => Ok(m),
        (None, Some(s)) => Ok(s * SECONDS_PER_MONTH),
        (None, None) => Ok(0.0),
        (Some(_), Some(_)) => Err(format!("{what} given both per month and per second")),
    }
}

fn parse<T: serde::de::DeserializeOwned>(doc: &str, document: &'static str) -> Result<T, ModelError> {
    serde_json::from_str(doc).map_err(|e| ModelError::Schema {
        document,
        message: e.to_string(),
    })
}

/// Parses, normalizes and validates an infrastructure document on its own.
pub fn load_infrastructure(doc: &str, opts: &LoadOptions) -> Result<InfrastructureModel, ModelError> {
    let mut infra: InfrastructureModel = parse(doc, "infrastructure")?;
    normalize_infrastructure(&mut infra, &opts.thresholds);
    validate_infrastructure(&infra)?;
    Ok(infra)
}

/// Parses, normalizes and validates a software document and derives connection rates.
pub fn load_software(doc: &str) -> Result<SoftwareModel, ModelError> {
    let mut software: SoftwareModel = parse(doc, "software")?;
    normalize_software(&mut software);
    validate_software(&software)?;
    derive_rates(&software)
}

pub fn load_models(
    infra_doc: &str,
    software_doc: &str,
) -> Result<(InfrastructureModel, SoftwareModel), ModelError> {
    load_models_with(infra_doc, software_doc, &LoadOptions::default())
}

pub fn load_models_with(
    infra_doc: &str,
    software_doc: &str,
    opts: &LoadOptions,
) -> Result<(InfrastructureModel, SoftwareModel), ModelError> {
    let infra = load_infrastructure(infra_doc, opts)?;
    let software = load_software(software_doc)?;
    validate_models(&infra, &software)?;
    Ok((infra, software))
}

/// Serializes a model back into its document form.
pub fn to_document<T: Serialize>(model: &T) -> String {
    let mut s = serde_json::to_string_pretty(model).expect("models serialize");
    s.push('\n');
    s
}

pub(crate) fn normalize_infrastructure(infra: &mut InfrastructureModel, thresholds: &LatencyThresholds) {
    infra.nodes.sort_by(|x, y| x.id.cmp(&y.id));
    for n in &mut infra.nodes {
        n.hardware_options.sort_by(|x, y| x.id.cmp(&y.id));
        n.pinned.sort();
        if n.name.is_empty() {
            n.name = n.id.to_string();
        }
    }
    infra.links.sort_by(|x, y| x.id.cmp(&y.id));
    for l in &mut infra.links {
        if l.latency_class.is_none() {
            l.latency_class = Some(thresholds.classify(l.latency_ms));
        }
    }
}

pub(crate) fn normalize_software(software: &mut SoftwareModel) {
    software.components.sort_by(|x, y| x.id.cmp(&y.id));
    software
        .connections
        .sort_by(|x, y| (&x.producer, &x.consumer).cmp(&(&y.producer, &y.consumer)));
    software.paths.sort_by(|x, y| x.id.cmp(&y.id));
    for p in &mut software.paths {
        p.members.sort();
    }
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn unique<'a, I: IntoIterator<Item = &'a str>>(ids: I, invariant: &'static str) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ModelError::invalid(invariant, format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

pub(crate) fn validate_infrastructure(infra: &InfrastructureModel) -> Result<(), ModelError> {
    if infra.tier_order.is_empty() {
        return Err(ModelError::invalid("tier-order-declared", "tierOrder is empty"));
    }
    unique(infra.tier_order.iter().map(String::as_str), "unique-tiers")?;
    if infra.nodes.is_empty() {
        return Err(ModelError::invalid("nodes-present", "no nodes declared"));
    }
    unique(infra.nodes.iter().map(|n| n.id.as_str()), "unique-node-ids")?;
    unique(infra.links.iter().map(|l| l.id.as_str()), "unique-link-ids")?;
    for n in &infra.nodes {
        if infra.tier_rank(&n.tier).is_none() {
            return Err(ModelError::invalid(
                "tier-declared",
                format!("node `{}` uses undeclared tier `{}`", n.id, n.tier),
            ));
        }
        if n.hardware_options.is_empty() {
            return Err(ModelError::invalid(
                "hardware-options-non-empty",
                format!("node `{}` has no hardware options", n.id),
            ));
        }
        unique(n.hardware_options.iter().map(|o| o.id.as_str()), "unique-hardware-ids")?;
        for o in &n.hardware_options {
            if !(o.rpi.is_finite() && o.rpi > 0.0) {
                return Err(ModelError::invalid(
                    "rpi-positive",
                    format!("`{}/{}` has rpi {}", n.id, o.id, o.rpi),
                ));
            }
            if !finite_nonneg(o.price_month) {
                return Err(ModelError::invalid(
                    "price-non-negative",
                    format!("`{}/{}` has price {}", n.id, o.id, o.price_month),
                ));
            }
        }
    }
    for l in &infra.links {
        if l.a == l.b {
            return Err(ModelError::invalid(
                "link-endpoints-distinct",
                format!("link `{}` connects `{}` to itself", l.id, l.a),
            ));
        }
        for end in [&l.a, &l.b] {
            if infra.node(end.as_str()).is_none() {
                return Err(ModelError::invalid(
                    "link-endpoints-exist",
                    format!("link `{}` references unknown node `{end}`", l.id),
                ));
            }
        }
        if !finite_nonneg(l.latency_ms) {
            return Err(ModelError::invalid(
                "latency-non-negative",
                format!("link `{}` has latency {}", l.id, l.latency_ms),
            ));
        }
        if !(l.bandwidth_bytes_per_sec.is_finite() && l.bandwidth_bytes_per_sec > 0.0) {
            return Err(ModelError::invalid(
                "bandwidth-positive",
                format!("link `{}` has bandwidth {}", l.id, l.bandwidth_bytes_per_sec),
            ));
        }
        if !finite_nonneg(l.bandwidth_price_month_per_byte_per_sec) {
            return Err(ModelError::invalid(
                "bandwidth-price-non-negative",
                format!("link `{}` has price {}", l.id, l.bandwidth_price_month_per_byte_per_sec),
            ));
        }
    }
    check_connected(infra)
}

fn check_connected(infra: &InfrastructureModel) -> Result<(), ModelError> {
    let mut adj: BTreeMap<&str, Vec<&str>> = infra.nodes.iter().map(|n| (n.id.as_str(), Vec::new())).collect();
    for l in &infra.links {
        adj.get_mut(l.a.as_str()).expect("validated").push(l.b.as_str());
        adj.get_mut(l.b.as_str()).expect("validated").push(l.a.as_str());
    }
    let root = infra.nodes[0].id.as_str();
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    let unreachable: Vec<String> = adj
        .keys()
        .filter(|n| !seen.contains(*n))
        .map(|n| n.to_string())
        .collect();
    if unreachable.is_empty() {
        Ok(())
    } else {
        Err(ModelError::DisconnectedGraph {
            root: root.into(),
            unreachable,
        })
    }
}

pub(crate) fn validate_software(software: &SoftwareModel) -> Result<(), ModelError> {
    unique(software.components.iter().map(|c| c.id.as_str()), "unique-component-ids")?;
    unique(software.paths.iter().map(|p| p.id.as_str()), "unique-path-ids")?;
    for c in &software.components {
        validate_component(c)?;
    }
    let mut pairs = BTreeSet::new();
    for conn in &software.connections {
        let producer = software.component(conn.producer.as_str()).ok_or_else(|| {
            ModelError::invalid(
                "connection-endpoints-exist",
                format!("unknown producer `{}`", conn.producer),
            )
        })?;
        let consumer = software.component(conn.consumer.as_str()).ok_or_else(|| {
            ModelError::invalid(
                "connection-endpoints-exist",
                format!("unknown consumer `{}`", conn.consumer),
            )
        })?;
        if producer.id == consumer.id {
            return Err(ModelError::invalid(
                "producer-differs-from-consumer",
                format!("`{}` is connected to itself", producer.id),
            ));
        }
        if producer.kind == ComponentKind::Sink {
            return Err(ModelError::invalid(
                "sink-not-producer",
                format!("sink `{}` cannot produce data", producer.id),
            ));
        }
        if consumer.kind == ComponentKind::Source {
            return Err(ModelError::invalid(
                "source-not-consumer",
                format!("source `{}` cannot consume data", consumer.id),
            ));
        }
        if !pairs.insert((&conn.producer, &conn.consumer)) {
            return Err(ModelError::invalid(
                "unique-connections",
                format!("`{}` -> `{}` declared twice", conn.producer, conn.consumer),
            ));
        }
    }
    check_acyclic(software)?;
    validate_paths(software)
}

fn validate_component(c: &SoftwareComponent) -> Result<(), ModelError> {
    let misplaced = |field: &str| {
        ModelError::invalid(
            "kind-specific-fields",
            format!("{:?} `{}` must not declare {field}", c.kind, c.id).to_lowercase(),
        )
    };
    match c.kind {
        ComponentKind::Source | ComponentKind::Sink => {
            if c.pinned_node.is_none() {
                return Err(ModelError::invalid(
                    "endpoints-pinned",
                    format!("`{}` has no pinnedNode", c.id),
                ));
            }
            if c.output_ratio.is_some() {
                return Err(misplaced("outputRatio"));
            }
            if c.ref_delay_ms.is_some() {
                return Err(misplaced("refDelayMs"));
            }
            if c.required_memory_bytes.is_some() {
                return Err(misplaced("requiredMemoryBytes"));
            }
            if c.role.is_some() {
                return Err(misplaced("role"));
            }
            if c.kind == ComponentKind::Source {
                let rate = c.output_rate_bytes_per_sec.ok_or_else(|| ModelError::MissingRate(c.id.clone()))?;
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(ModelError::invalid(
                        "output-rate-positive",
                        format!("source `{}` has rate {rate}", c.id),
                    ));
                }
            } else if c.output_rate_bytes_per_sec.is_some() {
                return Err(misplaced("outputRateBytesPerSec"));
            }
        }
        ComponentKind::Service => {
            if c.pinned_node.is_some() {
                return Err(ModelError::invalid(
                    "services-unpinned",
                    format!("service `{}` declares a pinnedNode", c.id),
                ));
            }
            if c.output_rate_bytes_per_sec.is_some() {
                return Err(misplaced("outputRateBytesPerSec"));
            }
            let ratio = c.output_ratio.ok_or_else(|| ModelError::MissingRate(c.id.clone()))?;
            if !finite_nonneg(ratio) {
                return Err(ModelError::invalid(
                    "output-ratio-non-negative",
                    format!("service `{}` has ratio {ratio}", c.id),
                ));
            }
            if !finite_nonneg(c.ref_delay()) {
                return Err(ModelError::invalid(
                    "processing-delay-non-negative",
                    format!("service `{}` has delay {}", c.id, c.ref_delay()),
                ));
            }
            if c.role.is_none() {
                return Err(ModelError::invalid(
                    "service-role-declared",
                    format!("service `{}` has no role", c.id),
                ));
            }
        }
    }
    Ok(())
}

fn check_acyclic(software: &SoftwareModel) -> Result<(), ModelError> {
    let mut g: DiGraphMap<&str, ()> = DiGraphMap::new();
    for c in &software.components {
        g.add_node(c.id.as_str());
    }
    for conn in &software.connections {
        g.add_edge(conn.producer.as_str(), conn.consumer.as_str(), ());
    }
    toposort(&g, None)
        .map(|_| ())
        .map_err(|cycle| ModelError::CyclicSoftwareGraph(cycle.node_id().into()))
}

fn validate_paths(software: &SoftwareModel) -> Result<(), ModelError> {
    let mut covered: BTreeSet<&ComponentId> = BTreeSet::new();
    for p in &software.paths {
        unique(p.members.iter().map(|m| m.as_str()), "unique-path-members")?;
        for m in &p.members {
            if software.component(m.as_str()).is_none() {
                return Err(ModelError::invalid(
                    "path-members-exist",
                    format!("path `{}` references unknown component `{m}`", p.id),
                ));
            }
            covered.insert(m);
        }
        if !(p.slo_latency_ms.is_finite() && p.slo_latency_ms >= 0.0) {
            return Err(ModelError::invalid(
                "slo-non-negative",
                format!("path `{}` has SLO {}", p.id, p.slo_latency_ms),
            ));
        }
        let sinks = p
            .members
            .iter()
            .filter(|m| software.component(m.as_str()).map(|c| c.kind) == Some(ComponentKind::Sink))
            .count();
        if sinks != 1 {
            return Err(ModelError::invalid(
                "one-sink-per-path",
                format!("path `{}` has {sinks} sinks", p.id),
            ));
        }
        let sources: Vec<_> = software.path_sources(p).map(|c| c.id.clone()).collect();
        if sources.is_empty() {
            return Err(ModelError::invalid(
                "source-per-path",
                format!("path `{}` has no source", p.id),
            ));
        }
        let chains = software.chains(p);
        for s in &sources {
            if !chains.iter().any(|ch| &ch[0] == s) {
                return Err(ModelError::invalid(
                    "path-sources-reach-sink",
                    format!("source `{s}` of path `{}` does not reach its sink", p.id),
                ));
            }
        }
    }
    if let Some(c) = software.components.iter().find(|c| !covered.contains(&c.id)) {
        return Err(ModelError::invalid(
            "components-on-paths",
            format!("`{}` belongs to no application path", c.id),
        ));
    }
    Ok(())
}

/// Cross-checks that hold only between the two models.
pub fn validate_models(infra: &InfrastructureModel, software: &SoftwareModel) -> Result<(), ModelError> {
    for c in &software.components {
        if let Some(node) = &c.pinned_node {
            if infra.node(node.as_str()).is_none() {
                return Err(ModelError::invalid(
                    "pinned-node-exists",
                    format!("`{}` is pinned to unknown node `{node}`", c.id),
                ));
            }
        }
    }
    for n in &infra.nodes {
        for p in &n.pinned {
            let ok = software
                .component(p.as_str())
                .is_some_and(|c| c.pinned_node.as_ref() == Some(&n.id));
            if !ok {
                return Err(ModelError::invalid(
                    "pinned-lists-consistent",
                    format!("node `{}` lists `{p}` but it is not pinned there", n.id),
                ));
            }
        }
    }
    Ok(())
}
