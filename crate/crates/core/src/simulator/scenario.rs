use super::*;
use crate::enumerate::{IndexedOption, ModelIndex};
use crate::model::{derive_rates, ComponentKind, InfrastructureModel, SoftwareModel};
use std::cmp::Ordering;

#[derive(Debug, Clone)]
pub(crate) struct HwData {
    pub rpi: f64,
    pub memory: u64,
    pub price: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LinkData {
    pub a: usize,
    pub b: usize,
    pub latency: f64,
    pub bandwidth: f64,
    pub price: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CompData {
    pub pinned: Option<usize>,
    pub service: Option<usize>,
    pub delay: f64,
    pub memory: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct ConnData {
    pub producer: usize,
    pub consumer: usize,
    pub rate: f64,
}

/// One source-to-sink chain of a path.
#[derive(Debug, Clone)]
pub struct Chain {
    /// Component indices in flow order.
    pub components: Vec<usize>,
    /// Connection indices between consecutive components.
    pub connections: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct PathData {
    pub id: PathId,
    pub slo: f64,
    pub chains: Vec<Chain>,
}

/// Cheapest route between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<usize>,
    pub links: Vec<usize>,
    pub latency_ms: f64,
    pub price: f64,
}

/// Models compiled into dense indices with all routes precomputed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub index: ModelIndex,
    pub(crate) hardware: Vec<Vec<HwData>>,
    pub(crate) tiers: Vec<usize>,
    pub(crate) link_ids: Vec<LinkId>,
    pub(crate) links: Vec<LinkData>,
    pub(crate) component_ids: Vec<ComponentId>,
    pub(crate) components: Vec<CompData>,
    pub(crate) service_components: Vec<usize>,
    pub(crate) connections: Vec<ConnData>,
    pub(crate) paths: Vec<PathData>,
    routes: Vec<Option<Route>>,
}

impl Scenario {
    pub fn new(infra: &InfrastructureModel, software: &SoftwareModel) -> Result<Self, SimError> {
        let software = derive_rates(software)?;
        let index = ModelIndex::new(infra, &software);
        let n = index.nodes.len();
        let mut hardware = Vec::with_capacity(n);
        let mut tiers = Vec::with_capacity(n);
        for id in &index.nodes {
            let node = infra.node(id.as_str()).expect("indexed");
            tiers.push(infra.tier_rank(&node.tier).unwrap_or(0));
            let mut opts: Vec<_> = node.hardware_options.iter().collect();
            opts.sort_by(|a, b| a.id.cmp(&b.id));
            hardware.push(
                opts.into_iter()
                    .map(|o| HwData {
                        rpi: o.rpi,
                        memory: o.memory_bytes,
                        price: o.price_month,
                    })
                    .collect(),
            );
        }
        let mut sorted_links: Vec<_> = infra.links.iter().collect();
        sorted_links.sort_by(|a, b| a.id.cmp(&b.id));
        let link_ids = sorted_links.iter().map(|l| l.id.clone()).collect();
        let links = sorted_links
            .iter()
            .map(|l| {
                let a = index.node(l.a.as_str());
                let b = index.node(l.b.as_str());
                match (a, b) {
                    (Some(a), Some(b)) => Ok(LinkData {
                        a,
                        b,
                        latency: l.latency_ms,
                        bandwidth: l.bandwidth_bytes_per_sec,
                        price: l.bandwidth_price_month_per_byte_per_sec,
                    }),
                    _ => Err(SimError::UnknownNode(format!("{} or {}", l.a, l.b))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut comps: Vec<_> = software.components.iter().collect();
        comps.sort_by(|a, b| a.id.cmp(&b.id));
        let component_ids: Vec<ComponentId> = comps.iter().map(|c| c.id.clone()).collect();
        let comp_pos = |id: &ComponentId| component_ids.binary_search(id).expect("component exists");
        let mut components = Vec::with_capacity(comps.len());
        for c in &comps {
            let pinned = match (&c.kind, &c.pinned_node) {
                (ComponentKind::Service, _) => None,
                (_, Some(n)) => Some(
                    index
                        .node(n.as_str())
                        .ok_or_else(|| SimError::UnknownNode(n.to_string()))?,
                ),
                (_, None) => return Err(SimError::UnknownNode(format!("pin of {}", c.id))),
            };
            components.push(CompData {
                pinned,
                service: index.service(c.id.as_str()),
                delay: c.ref_delay(),
                memory: c.memory(),
            });
        }
        let service_components = index.services.iter().map(comp_pos).collect();
        let connections: Vec<ConnData> = software
            .connections
            .iter()
            .map(|c| ConnData {
                producer: comp_pos(&c.producer),
                consumer: comp_pos(&c.consumer),
                rate: c.rate(),
            })
            .collect();
        let mut paths = Vec::new();
        let mut sorted_paths: Vec<_> = software.paths.iter().collect();
        sorted_paths.sort_by(|a, b| a.id.cmp(&b.id));
        for p in sorted_paths {
            let chains = software
                .chains(p)
                .into_iter()
                .map(|ids| {
                    let components: Vec<usize> = ids.iter().map(comp_pos).collect();
                    let connections = components
                        .windows(2)
                        .map(|w| {
                            connections
                                .iter()
                                .position(|c| c.producer == w[0] && c.consumer == w[1])
                                .expect("chain follows connections")
                        })
                        .collect();
                    Chain {
                        components,
                        connections,
                    }
                })
                .collect();
            paths.push(PathData {
                id: p.id.clone(),
                slo: p.slo_latency_ms,
                chains,
            });
        }
        let mut scenario = Scenario {
            index,
            hardware,
            tiers,
            link_ids,
            links,
            component_ids,
            components,
            service_components,
            connections,
            paths,
            routes: Vec::new(),
        };
        scenario.routes = (0..n * n).map(|i| scenario.cheapest_route(i / n, i % n)).collect();
        Ok(scenario)
    }

    pub fn node_count(&self) -> usize {
        self.index.nodes.len()
    }

    pub fn link_id(&self, l: usize) -> &LinkId {
        &self.link_ids[l]
    }

    pub fn component_id(&self, c: usize) -> &ComponentId {
        &self.component_ids[c]
    }

    pub fn path_ids(&self) -> impl Iterator<Item = &PathId> {
        self.paths.iter().map(|p| &p.id)
    }

    /// Tier rank of node `n`, 0 at the edge.
    pub fn tier(&self, n: usize) -> usize {
        self.tiers[n]
    }

    pub fn chains(&self, path: usize) -> &[Chain] {
        &self.paths[path].chains
    }

    /// `(producer, consumer)` component indices of a connection.
    pub fn connection(&self, c: usize) -> (usize, usize) {
        (self.connections[c].producer, self.connections[c].consumer)
    }

    pub fn connection_count(&self) -> usize {
        self.connections.len()
    }

    pub fn route(&self, from: usize, to: usize) -> Result<&Route, SimError> {
        self.routes[from * self.node_count() + to]
            .as_ref()
            .ok_or_else(|| SimError::Unreachable {
                from: self.index.nodes[from].clone(),
                to: self.index.nodes[to].clone(),
            })
    }

    /// Node hosting component `c` under `option`.
    pub fn host(&self, c: usize, option: &IndexedOption) -> usize {
        let comp = &self.components[c];
        match comp.pinned {
            Some(n) => n,
            None => option.placement[comp.service.expect("service index")],
        }
    }

    // Dijkstra over labels (price sum, hop count, node sequence, link sequence),
    // compared lexicographically. Equal-hop labels have equal-length sequences, so
    // extending two labels by the same edge preserves their order.
    fn cheapest_route(&self, from: usize, to: usize) -> Option<Route> {
        let n = self.node_count();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, l) in self.links.iter().enumerate() {
            adj[l.a].push((l.b, i));
            adj[l.b].push((l.a, i));
        }
        let mut best: Vec<Option<Route>> = vec![None; n];
        let mut done = vec![false; n];
        best[from] = Some(Route {
            nodes: vec![from],
            links: vec![],
            latency_ms: 0.0,
            price: 0.0,
        });
        loop {
            let u = (0..n)
                .filter(|&i| !done[i] && best[i].is_some())
                .min_by(|&x, &y| label_cmp(best[x].as_ref().unwrap(), best[y].as_ref().unwrap()))?;
            if u == to {
                return best[u].take();
            }
            done[u] = true;
            let cur = best[u].clone().expect("selected");
            for &(v, l) in &adj[u] {
                if done[v] || cur.nodes.contains(&v) {
                    continue;
                }
                let mut cand = cur.clone();
                cand.nodes.push(v);
                cand.links.push(l);
                cand.price += self.links[l].price;
                cand.latency_ms += self.links[l].latency;
                let better = match &best[v] {
                    None => true,
                    Some(old) => label_cmp(&cand, old) == Ordering::Less,
                };
                if better {
                    best[v] = Some(cand);
                }
            }
        }
    }

    /// Core evaluation in dense form.
    pub fn evaluate(&self, option: &IndexedOption) -> Result<Evaluation, SimError> {
        let n = self.node_count();
        let mut load = vec![0.0; self.links.len()];
        let mut conn_latency = vec![0.0; self.connections.len()];
        for (i, c) in self.connections.iter().enumerate() {
            let from = self.host(c.producer, option);
            let to = self.host(c.consumer, option);
            let route = self.route(from, to)?;
            for &l in &route.links {
                load[l] += c.rate;
            }
            conn_latency[i] = route.latency_ms;
        }
        let mut used = vec![false; n];
        let mut memory = vec![0u64; n];
        for (s, &node) in option.placement.iter().enumerate() {
            used[node] = true;
            memory[node] += self.components[self.service_components[s]].memory;
        }
        let mut processing_cost = 0.0;
        let mut violations = Vec::new();
        for node in 0..n {
            if !used[node] {
                continue;
            }
            let hw = self.selected(option, node)?;
            processing_cost += hw.price;
            if memory[node] > hw.memory {
                violations.push(RawViolation::Memory {
                    node,
                    required: memory[node],
                    available: hw.memory,
                });
            }
        }
        let mut transmission_cost = 0.0;
        for (l, link) in self.links.iter().enumerate() {
            transmission_cost += load[l] * link.price;
            if load[l] > link.bandwidth {
                violations.push(RawViolation::Bandwidth {
                    link: l,
                    load: load[l],
                    available: link.bandwidth,
                });
            }
        }
        let mut paths = Vec::with_capacity(self.paths.len());
        for (pi, p) in self.paths.iter().enumerate() {
            let mut worst: Option<(f64, f64)> = None;
            for chain in &p.chains {
                let mut processing = 0.0;
                for &c in &chain.components {
                    let comp = &self.components[c];
                    if comp.service.is_some() {
                        let node = self.host(c, option);
                        processing += comp.delay / self.selected(option, node)?.rpi;
                    }
                }
                let mut transmission = 0.0;
                for &conn in &chain.connections {
                    transmission += conn_latency[conn];
                }
                let better = match worst {
                    None => true,
                    Some((wp, wt)) => processing + transmission > wp + wt,
                };
                if better {
                    worst = Some((processing, transmission));
                }
            }
            let (processing, transmission) = worst.unwrap_or((0.0, 0.0));
            let e2e = processing + transmission;
            if e2e > p.slo {
                violations.push(RawViolation::Slo {
                    path: pi,
                    latency: e2e,
                    slo: p.slo,
                });
            }
            paths.push(PathLatency {
                processing,
                transmission,
            });
        }
        Ok(Evaluation {
            paths,
            processing_cost,
            transmission_cost,
            violations,
            memory,
        })
    }

    fn selected(&self, option: &IndexedOption, node: usize) -> Result<&HwData, SimError> {
        option.hardware[node]
            .and_then(|h| self.hardware[node].get(h))
            .ok_or_else(|| SimError::NoHardware(self.index.nodes[node].clone()))
    }

    pub fn metrics(&self, option: &IndexedOption, eval: &Evaluation) -> SimulationMetrics {
        let per_path = self
            .paths
            .iter()
            .zip(&eval.paths)
            .map(|(p, l)| {
                (
                    p.id.clone(),
                    PathMetrics {
                        processing_time_ms: l.processing,
                        transmission_time_ms: l.transmission,
                        end_to_end_ms: l.processing + l.transmission,
                        slo_latency_ms: p.slo,
                    },
                )
            })
            .collect();
        let violations = eval
            .violations
            .iter()
            .map(|v| self.describe(option, v, &eval.memory))
            .collect::<Vec<_>>();
        SimulationMetrics {
            per_path,
            processing_cost_month: eval.processing_cost,
            transmission_cost_month: eval.transmission_cost,
            total_cost_month: eval.processing_cost + eval.transmission_cost,
            feasible: violations.is_empty(),
            violations,
        }
    }

    fn describe(&self, option: &IndexedOption, v: &RawViolation, memory: &[u64]) -> Violation {
        match *v {
            RawViolation::Memory {
                node,
                required,
                available,
            } => {
                let hosted: Vec<&str> = option
                    .placement
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| n == node)
                    .map(|(s, _)| self.index.services[s].as_str())
                    .collect();
                let hw = option.hardware[node].map(|h| self.index.hardware[node][h].as_str()).unwrap_or("?");
                debug_assert_eq!(memory[node], required);
                Violation {
                    kind: ViolationKind::Memory,
                    subject: self.index.nodes[node].to_string(),
                    required: required as f64,
                    available: available as f64,
                    detail: format!(
                        "{} need {required} B, {hw} offers {available} B",
                        hosted.join(" + ")
                    ),
                }
            }
            RawViolation::Bandwidth { link, load, available } => Violation {
                kind: ViolationKind::Bandwidth,
                subject: self.link_ids[link].to_string(),
                required: load,
                available,
                detail: format!("flows need {load} B/s, link offers {available} B/s"),
            },
            RawViolation::Slo { path, latency, slo } => Violation {
                kind: ViolationKind::Slo,
                subject: self.paths[path].id.to_string(),
                required: latency,
                available: slo,
                detail: format!("end-to-end {latency:.3} ms exceeds {slo} ms by {:.3} ms", latency - slo),
            },
        }
    }

    pub fn simulate(&self, option: &IndexedOption) -> Result<SimulationMetrics, SimError> {
        let eval = self.evaluate(option)?;
        Ok(self.metrics(option, &eval))
    }

    pub fn routed_flows(&self, option: &IndexedOption) -> Result<Vec<RoutedFlow>, SimError> {
        self.connections
            .iter()
            .map(|c| {
                let route = self.route(self.host(c.producer, option), self.host(c.consumer, option))?;
                Ok(RoutedFlow {
                    producer: self.component_ids[c.producer].clone(),
                    consumer: self.component_ids[c.consumer].clone(),
                    node_path: route.nodes.iter().map(|&n| self.index.nodes[n].clone()).collect(),
                    links: route.links.iter().map(|&l| self.link_ids[l].clone()).collect(),
                    data_rate: c.rate,
                })
            })
            .collect()
    }
}

fn label_cmp(x: &Route, y: &Route) -> Ordering {
    x.price
        .total_cmp(&y.price)
        .then(x.links.len().cmp(&y.links.len()))
        .then_with(|| x.nodes.cmp(&y.nodes))
        .then_with(|| x.links.cmp(&y.links))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLatency {
    pub processing: f64,
    pub transmission: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RawViolation {
    Memory { node: usize, required: u64, available: u64 },
    Bandwidth { link: usize, load: f64, available: f64 },
    Slo { path: usize, latency: f64, slo: f64 },
}

/// Dense simulation result, converted to [`SimulationMetrics`] on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub paths: Vec<PathLatency>,
    pub processing_cost: f64,
    pub transmission_cost: f64,
    pub(crate) violations: Vec<RawViolation>,
    memory: Vec<u64>,
}

impl Evaluation {
    pub fn total_cost(&self) -> f64 {
        self.processing_cost + self.transmission_cost
    }

    /// No memory or bandwidth violation.
    pub fn resources_ok(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v, RawViolation::Memory { .. } | RawViolation::Bandwidth { .. }))
    }

    /// Resources fit and every path meets its SLO.
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}
