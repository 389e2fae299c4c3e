//! Random small instances and a brute-force reference simulator.
//!
//! The reference shares no code with the library: it enumerates every simple
//! route of every connection and recomputes all sums from the raw models.

#![allow(dead_code)]

use fogforge_core::enumerate::DesignOption;
use fogforge_core::{ComponentId, NodeId};
use fogforge_core::model::*;
use fogforge_core::simulator::{SimulationMetrics, ViolationKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

pub struct Instance {
    pub infra: InfrastructureModel,
    pub software: SoftwareModel,
    pub option: DesignOption,
}

// Prices are exact in binary so that route price ties are decided exactly.
const LINK_PRICES: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0];

/// A connected instance with at most 6 nodes, 8 links and 4 services.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6usize);
    let node_ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let nodes = node_ids
        .iter()
        .map(|id| {
            let k = rng.random_range(1..=2);
            InfraNode {
                id: id.as_str().into(),
                name: id.clone(),
                tier: "t".into(),
                pinned: vec![],
                hardware_options: (0..k)
                    .map(|h| HardwareOption {
                        id: format!("h{h}").as_str().into(),
                        rpi: *[0.5, 1.0, 1.5, 2.0, 4.0].choose(&mut rng).unwrap(),
                        memory_bytes: *[100, 1000, 5000, 100_000].choose(&mut rng).unwrap(),
                        price_month: rng.random_range(0..200) as f64 / 4.0,
                    })
                    .collect(),
            }
        })
        .collect();

    let mut pairs: BTreeSet<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    let extra = rng.random_range(0..=3);
    for _ in 0..extra {
        if n < 2 || pairs.len() >= 8 {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let links = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| NetworkLink {
            id: format!("l{i}").as_str().into(),
            a: node_ids[a].as_str().into(),
            b: node_ids[b].as_str().into(),
            latency_ms: rng.random_range(0..400) as f64 / 8.0,
            bandwidth_bytes_per_sec: *[50.0, 500.0, 5000.0].choose(&mut rng).unwrap(),
            bandwidth_price_month_per_byte_per_sec: *LINK_PRICES.choose(&mut rng).unwrap(),
            latency_class: Some(LatencyClass::Low),
        })
        .collect();
    let infra = InfrastructureModel {
        tier_order: vec!["t".into()],
        nodes,
        links,
    };

    // Components in topological order: sources, services, then the sink.
    let sources = rng.random_range(1..=2usize);
    let services = rng.random_range(0..=4usize);
    let mut comps = Vec::new();
    for i in 0..sources {
        let pin = node_ids.choose(&mut rng).unwrap();
        comps.push(SoftwareComponent::source(
            &format!("src{i}"),
            rng.random_range(1..=40) as f64 * 5.0,
            pin,
        ));
    }
    for i in 0..services {
        comps.push(SoftwareComponent::service(
            &format!("s{i}"),
            *[0.0, 0.25, 0.5, 1.0, 2.0].choose(&mut rng).unwrap(),
            rng.random_range(0..100) as f64 / 4.0,
            *[10, 100, 1000, 4000].choose(&mut rng).unwrap(),
            ServiceRole::EventProcessor,
        ));
    }
    comps.push(SoftwareComponent::sink("sink", node_ids.choose(&mut rng).unwrap()));
    let total = comps.len();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    // Every non-source gets an input from an earlier non-sink component.
    for j in sources..total {
        edges.insert((rng.random_range(0..j), j));
    }
    // Every non-sink gets an output to a later component.
    for i in 0..total - 1 {
        edges.insert((i, rng.random_range(sources.max(i + 1)..total)));
    }
    for _ in 0..rng.random_range(0..=2) {
        let i = rng.random_range(0..total - 1);
        let j = rng.random_range(sources.max(i + 1)..total);
        edges.insert((i, j));
    }
    let connections = edges
        .iter()
        .map(|&(i, j)| Connection::new(comps[i].id.as_str(), comps[j].id.as_str()))
        .collect();
    let mut software = SoftwareModel {
        components: comps,
        connections,
        paths: vec![],
    };
    let everyone: Vec<ComponentId> = software.components.iter().map(|c| c.id.clone()).collect();
    software.paths.push(ApplicationPath {
        id: "P0".into(),
        class: PathClass::EventProcessing,
        members: everyone.clone(),
        slo_latency_ms: rng.random_range(0..200) as f64,
    });
    // A second path along one chain of the first.
    let chains = chains_of(&software, &everyone);
    if let Some(chain) = chains.choose(&mut rng) {
        software.paths.push(ApplicationPath {
            id: "P1".into(),
            class: PathClass::EventProcessing,
            members: chain.clone(),
            slo_latency_ms: rng.random_range(0..200) as f64,
        });
    }

    let mut option = DesignOption::default();
    for c in software.services() {
        option
            .placement
            .insert(c.id.clone(), node_ids.choose(&mut rng).unwrap().as_str().into());
    }
    for node in &infra.nodes {
        let h = node.hardware_options.choose(&mut rng).unwrap();
        option.hardware.insert(node.id.clone(), h.id.clone());
    }
    Instance { infra, software, option }
}

fn chains_of(sw: &SoftwareModel, members: &[ComponentId]) -> Vec<Vec<ComponentId>> {
    fn walk(sw: &SoftwareModel, members: &[ComponentId], stack: &mut Vec<ComponentId>, out: &mut Vec<Vec<ComponentId>>) {
        let last = stack.last().unwrap().clone();
        if sw.component(last.as_str()).unwrap().kind == ComponentKind::Sink {
            out.push(stack.clone());
            return;
        }
        for c in &sw.connections {
            if c.producer == last && members.contains(&c.consumer) {
                stack.push(c.consumer.clone());
                walk(sw, members, stack, out);
                stack.pop();
            }
        }
    }
    let mut out = Vec::new();
    for m in members {
        if sw.component(m.as_str()).unwrap().kind == ComponentKind::Source {
            walk(sw, members, &mut vec![m.clone()], &mut out);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Path id to (processing, transmission).
    pub paths: BTreeMap<String, (f64, f64)>,
    pub processing_cost: f64,
    pub transmission_cost: f64,
    pub violations: BTreeSet<(String, String)>,
    pub feasible: bool,
    /// Links of the route chosen per connection, in connection order.
    pub routes: Vec<Vec<String>>,
    /// Price of each chosen route.
    pub route_prices: Vec<f64>,
    /// The cheapest price over all simple routes of each connection.
    pub min_prices: Vec<f64>,
    /// Paths whose end-to-end latency lies within rounding of the SLO.
    pub borderline: BTreeSet<String>,
}

// (price, hops, node ids, link ids)
type Walk = (f64, usize, Vec<String>, Vec<String>);

fn all_simple_routes(infra: &InfrastructureModel, from: &str, to: &str) -> Vec<Walk> {
    fn dfs(infra: &InfrastructureModel, to: &str, cur: &mut Walk, out: &mut Vec<Walk>) {
        let at = cur.2.last().unwrap().clone();
        if at == to {
            out.push(cur.clone());
            return;
        }
        for l in &infra.links {
            let next = if l.a.as_str() == at {
                l.b.as_str()
            } else if l.b.as_str() == at {
                l.a.as_str()
            } else {
                continue;
            };
            if cur.2.iter().any(|n| n == next) {
                continue;
            }
            cur.0 += l.bandwidth_price_month_per_byte_per_sec;
            cur.1 += 1;
            cur.2.push(next.to_string());
            cur.3.push(l.id.to_string());
            dfs(infra, to, cur, out);
            cur.0 -= l.bandwidth_price_month_per_byte_per_sec;
            cur.1 -= 1;
            cur.2.pop();
            cur.3.pop();
        }
    }
    let mut out = Vec::new();
    dfs(infra, to, &mut (0.0, 0, vec![from.to_string()], vec![]), &mut out);
    out
}

pub fn reference(infra: &InfrastructureModel, sw: &SoftwareModel, option: &DesignOption) -> Reference {
    let host = |id: &ComponentId| -> String {
        let c = sw.component(id.as_str()).unwrap();
        match &c.pinned_node {
            Some(n) => n.to_string(),
            None => option.placement[id].to_string(),
        }
    };
    let hw = |node: &str| -> &HardwareOption {
        let n = infra.node(node).unwrap();
        n.hardware(option.hardware[&NodeId::from(node)].as_str()).unwrap()
    };

    // Output rate of each component, by recursion over producers.
    fn rate(sw: &SoftwareModel, id: &ComponentId) -> f64 {
        let c = sw.component(id.as_str()).unwrap();
        match c.kind {
            ComponentKind::Source => c.output_rate_bytes_per_sec.unwrap(),
            ComponentKind::Sink => 0.0,
            ComponentKind::Service => {
                let inflow: f64 = sw
                    .connections
                    .iter()
                    .filter(|x| &x.consumer == id)
                    .map(|x| rate(sw, &x.producer))
                    .sum();
                c.output_ratio.unwrap() * inflow
            }
        }
    }

    let mut load: BTreeMap<String, f64> = BTreeMap::new();
    let mut latency: BTreeMap<(ComponentId, ComponentId), f64> = BTreeMap::new();
    let mut routes = Vec::new();
    let mut route_prices = Vec::new();
    let mut min_prices = Vec::new();
    for c in &sw.connections {
        let all = all_simple_routes(infra, &host(&c.producer), &host(&c.consumer));
        let best = all
            .iter()
            .min_by(|x, y| {
                x.0.total_cmp(&y.0)
                    .then(x.1.cmp(&y.1))
                    .then_with(|| x.2.cmp(&y.2))
                    .then_with(|| x.3.cmp(&y.3))
            })
            .expect("connected infrastructure");
        route_prices.push(best.0);
        min_prices.push(routes_min(&all));
        routes.push(best.3.clone());
        let r = rate(sw, &c.producer);
        let mut lat = 0.0;
        for l in &best.3 {
            *load.entry(l.clone()).or_default() += r;
            lat += infra.link(l).unwrap().latency_ms;
        }
        latency.insert((c.producer.clone(), c.consumer.clone()), lat);
    }

    let mut violations = BTreeSet::new();
    let mut transmission_cost = 0.0;
    for (l, x) in &load {
        let link = infra.link(l).unwrap();
        transmission_cost += x * link.bandwidth_price_month_per_byte_per_sec;
        if *x > link.bandwidth_bytes_per_sec {
            violations.insert(("bandwidth".to_string(), l.clone()));
        }
    }
    let mut memory: BTreeMap<String, u64> = BTreeMap::new();
    for s in sw.services() {
        *memory.entry(host(&s.id)).or_default() += s.required_memory_bytes.unwrap();
    }
    let mut processing_cost = 0.0;
    for (node, m) in &memory {
        let h = hw(node);
        processing_cost += h.price_month;
        if *m > h.memory_bytes {
            violations.insert(("memory".to_string(), node.clone()));
        }
    }

    let mut paths = BTreeMap::new();
    let mut borderline = BTreeSet::new();
    for p in &sw.paths {
        let mut worst = (0.0, 0.0);
        let mut worst_total = f64::NEG_INFINITY;
        for chain in chains_of(sw, &p.members) {
            let mut proc = 0.0;
            for c in &chain {
                let comp = sw.component(c.as_str()).unwrap();
                if comp.kind == ComponentKind::Service {
                    proc += comp.ref_delay_ms.unwrap() / hw(&host(c)).rpi;
                }
            }
            let trans: f64 = chain.windows(2).map(|w| latency[&(w[0].clone(), w[1].clone())]).sum();
            if proc + trans > worst_total {
                worst_total = proc + trans;
                worst = (proc, trans);
            }
        }
        if close(worst.0 + worst.1, p.slo_latency_ms) {
            borderline.insert(p.id.to_string());
        }
        if worst.0 + worst.1 > p.slo_latency_ms {
            violations.insert(("slo".to_string(), p.id.to_string()));
        }
        paths.insert(p.id.to_string(), worst);
    }
    Reference {
        paths,
        processing_cost,
        transmission_cost,
        feasible: violations.is_empty(),
        violations,
        routes,
        route_prices,
        min_prices,
        borderline,
    }
}

fn routes_min(all: &[Walk]) -> f64 {
    all.iter().map(|w| w.0).fold(f64::INFINITY, f64::min)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Describes the first disagreement between library metrics and the reference.
pub fn mismatch(m: &SimulationMetrics, r: &Reference) -> Option<String> {
    let mut checks: Vec<(String, f64, f64)> = vec![
        ("processing cost".into(), m.processing_cost_month, r.processing_cost),
        ("transmission cost".into(), m.transmission_cost_month, r.transmission_cost),
        (
            "total cost".into(),
            m.total_cost_month,
            r.processing_cost + r.transmission_cost,
        ),
    ];
    if m.per_path.len() != r.paths.len() {
        return Some(format!("{} paths against {}", m.per_path.len(), r.paths.len()));
    }
    for (id, &(p, t)) in &r.paths {
        let Some(x) = m.per_path.get(id.as_str()) else {
            return Some(format!("path {id} missing"));
        };
        checks.push((format!("{id} processing"), x.processing_time_ms, p));
        checks.push((format!("{id} transmission"), x.transmission_time_ms, t));
        checks.push((format!("{id} end-to-end"), x.end_to_end_ms, p + t));
    }
    for (what, got, want) in checks {
        if !close(got, want) {
            return Some(format!("{what}: {got} against {want}"));
        }
    }
    let got: BTreeSet<(String, String)> = m
        .violations
        .iter()
        .map(|v| {
            let kind = match v.kind {
                ViolationKind::Memory => "memory",
                ViolationKind::Bandwidth => "bandwidth",
                ViolationKind::Slo => "slo",
            };
            (kind.to_string(), v.subject.clone())
        })
        .collect();
    let firm = |v: &BTreeSet<(String, String)>| -> BTreeSet<(String, String)> {
        v.iter()
            .filter(|(k, s)| !(k == "slo" && r.borderline.contains(s)))
            .cloned()
            .collect()
    };
    if firm(&got) != firm(&r.violations) {
        return Some(format!("violations {got:?} against {:?}", r.violations));
    }
    if r.borderline.is_empty() && m.feasible != r.feasible {
        return Some(format!("feasible {} against {}", m.feasible, r.feasible));
    }
    None
}
