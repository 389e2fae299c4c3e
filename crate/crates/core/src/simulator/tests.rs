use super::*;
use crate::model::*;

fn node(id: &str, tier: &str, opts: &[(&str, f64, u64, f64)]) -> InfraNode {
    InfraNode {
        id: id.into(),
        name: id.into(),
        tier: tier.into(),
        pinned: vec![],
        hardware_options: opts
            .iter()
            .map(|(h, rpi, mem, price)| HardwareOption {
                id: (*h).into(),
                rpi: *rpi,
                memory_bytes: *mem,
                price_month: *price,
            })
            .collect(),
    }
}

fn link(id: &str, a: &str, b: &str, latency: f64, bw: f64, price: f64) -> NetworkLink {
    NetworkLink {
        id: id.into(),
        a: a.into(),
        b: b.into(),
        latency_ms: latency,
        bandwidth_bytes_per_sec: bw,
        bandwidth_price_month_per_byte_per_sec: price,
        latency_class: Some(LatencyClass::Low),
    }
}

fn infra(nodes: Vec<InfraNode>, links: Vec<NetworkLink>) -> InfrastructureModel {
    InfrastructureModel {
        tier_order: vec!["edge".into(), "cloud".into()],
        nodes,
        links,
    }
}

fn plain(id: &str) -> InfraNode {
    node(id, "edge", &[("m", 1.0, 1_000_000, 1.0)])
}

/// source -> svc -> sink with the given pins.
fn pipeline(src_node: &str, sink_node: &str, rate: f64, delay: f64, mem: u64) -> SoftwareModel {
    let sw = SoftwareModel {
        components: vec![
            SoftwareComponent::source("src", rate, src_node),
            SoftwareComponent::service("svc", 1.0, delay, mem, ServiceRole::EventProcessor),
            SoftwareComponent::sink("dst", sink_node),
        ],
        connections: vec![Connection::new("src", "svc"), Connection::new("svc", "dst")],
        paths: vec![ApplicationPath {
            id: "P".into(),
            class: PathClass::EventProcessing,
            members: vec!["dst".into(), "src".into(), "svc".into()],
            slo_latency_ms: 100.0,
        }],
    };
    derive_rates(&sw).unwrap()
}

fn place(pairs: &[(&str, &str)], hw: &[(&str, &str)]) -> DesignOption {
    DesignOption {
        placement: pairs.iter().map(|(s, n)| ((*s).into(), (*n).into())).collect(),
        hardware: hw.iter().map(|(n, h)| ((*n).into(), (*h).into())).collect(),
    }
}

#[test]
fn same_node_route_is_empty() {
    let i = infra(vec![plain("a"), plain("b")], vec![link("ab", "a", "b", 3.0, 1e6, 1.0)]);
    let sw = pipeline("a", "a", 10.0, 1.0, 0);
    let f = route(&sw.connections[0], &place(&[("svc", "a")], &[("a", "m")]), &i, &sw).unwrap();
    assert!(f.links.is_empty());
    assert_eq!(f.node_path, vec![NodeId::from("a")]);
    let m = simulate(&place(&[("svc", "a")], &[("a", "m")]), &i, &sw).unwrap();
    assert_eq!(m.per_path["P"].transmission_time_ms, 0.0);
}

#[test]
fn single_link_route() {
    let i = infra(vec![plain("a"), plain("b")], vec![link("ab", "a", "b", 3.0, 1e6, 1.0)]);
    let sw = pipeline("a", "a", 10.0, 1.0, 0);
    let f = route(&sw.connections[0], &place(&[("svc", "b")], &[("b", "m")]), &i, &sw).unwrap();
    assert_eq!(f.links, vec![LinkId::from("ab")]);
}

#[test]
fn cheap_detour_beats_expensive_direct_link() {
    // a-b direct costs 5; a-c-d-b costs 1+1+1.
    let i = infra(
        vec![plain("a"), plain("b"), plain("c"), plain("d"), plain("e")],
        vec![
            link("ab", "a", "b", 1.0, 1e6, 5.0),
            link("ac", "a", "c", 1.0, 1e6, 1.0),
            link("cd", "c", "d", 1.0, 1e6, 1.0),
            link("db", "d", "b", 1.0, 1e6, 1.0),
            link("be", "b", "e", 1.0, 1e6, 0.0),
        ],
    );
    let sw = pipeline("a", "b", 10.0, 1.0, 0);
    let f = route(&sw.connections[0], &place(&[("svc", "b")], &[("b", "m")]), &i, &sw).unwrap();
    let ids: Vec<&str> = f.links.iter().map(|l| l.as_str()).collect();
    assert_eq!(ids, vec!["ac", "cd", "db"]);
}

#[test]
fn equal_price_prefers_fewer_hops_then_lower_ids() {
    let i = infra(
        vec![plain("a"), plain("b"), plain("c"), plain("d")],
        vec![
            link("ab", "a", "b", 1.0, 1e6, 0.0),
            link("bd", "b", "d", 1.0, 1e6, 0.0),
            link("ac", "a", "c", 1.0, 1e6, 0.0),
            link("cd", "c", "d", 1.0, 1e6, 0.0),
            link("ad", "a", "d", 9.0, 1e6, 0.0),
        ],
    );
    let sw = pipeline("a", "d", 10.0, 1.0, 0);
    let f = route(&sw.connections[0], &place(&[("svc", "d")], &[("d", "m")]), &i, &sw).unwrap();
    assert_eq!(f.links, vec![LinkId::from("ad")]);

    let mut i2 = i.clone();
    i2.links.retain(|l| l.id.as_str() != "ad");
    let f = route(&sw.connections[0], &place(&[("svc", "d")], &[("d", "m")]), &i2, &sw).unwrap();
    let nodes: Vec<&str> = f.node_path.iter().map(|n| n.as_str()).collect();
    assert_eq!(nodes, vec!["a", "b", "d"]);
}

#[test]
fn memory_violation_on_small_camera() {
    let i = infra(
        vec![node("cam", "edge", &[("smart", 0.05, 10_000_000, 5.0)])],
        vec![],
    );
    let sw = pipeline("cam", "cam", 100_000.0, 20.0, 250_000_000);
    let v = check_resources(&place(&[("svc", "cam")], &[("cam", "smart")]), &i, &sw).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::Memory);
    assert_eq!(v[0].subject, "cam");
    assert_eq!((v[0].required, v[0].available), (250e6, 10e6));
}

#[test]
fn no_services_no_violations_zero_metrics() {
    let i = infra(vec![plain("a")], vec![]);
    let sw = SoftwareModel {
        components: vec![
            SoftwareComponent::source("s", 5.0, "a"),
            SoftwareComponent::sink("t", "a"),
        ],
        connections: vec![Connection::new("s", "t")],
        paths: vec![ApplicationPath {
            id: "P".into(),
            class: PathClass::DataAnalytics,
            members: vec!["s".into(), "t".into()],
            slo_latency_ms: 1.0,
        }],
    };
    let m = simulate(&DesignOption::default(), &i, &sw).unwrap();
    assert!(m.feasible);
    assert_eq!(m.total_cost_month, 0.0);
    assert_eq!(m.per_path["P"].end_to_end_ms, 0.0);
    assert!(check_resources(&DesignOption::default(), &i, &sw).unwrap().is_empty());
}

#[test]
fn shared_link_bandwidth_violation() {
    // Two 60 B/s flows over a 100 B/s link: 120 > 100.
    let i = infra(
        vec![plain("a"), plain("b"), plain("c")],
        vec![link("ab", "a", "b", 1.0, 100.0, 0.0), link("bc", "b", "c", 1.0, 1000.0, 0.0)],
    );
    let sw = SoftwareModel {
        components: vec![
            SoftwareComponent::source("s1", 60.0, "a"),
            SoftwareComponent::source("s2", 60.0, "a"),
            SoftwareComponent::service("svc", 1.0, 0.0, 0, ServiceRole::EventProcessor),
            SoftwareComponent::sink("t", "c"),
        ],
        connections: vec![
            Connection::new("s1", "svc"),
            Connection::new("s2", "svc"),
            Connection::new("svc", "t"),
        ],
        paths: vec![ApplicationPath {
            id: "P".into(),
            class: PathClass::DataAnalytics,
            members: vec!["s1".into(), "s2".into(), "svc".into(), "t".into()],
            slo_latency_ms: 100.0,
        }],
    };
    let sw = derive_rates(&sw).unwrap();
    let v = check_resources(&place(&[("svc", "b")], &[("b", "m")]), &i, &sw).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].kind, ViolationKind::Bandwidth);
    assert_eq!(v[0].subject, "ab");
    assert_eq!(v[0].required, 120.0);
}

#[test]
fn rpi_scales_processing_time() {
    let i = infra(
        vec![node("a", "edge", &[("fast", 2.0, 0, 1.0), ("ref", 1.0, 0, 1.0)])],
        vec![],
    );
    let sw = pipeline("a", "a", 1.0, 20.0, 0);
    let p = &sw.paths[0];
    let fast = path_latency(p, &place(&[("svc", "a")], &[("a", "fast")]), &i, &sw).unwrap();
    assert_eq!(fast.processing_time_ms, 10.0);
    let reference = path_latency(p, &place(&[("svc", "a")], &[("a", "ref")]), &i, &sw).unwrap();
    assert_eq!(reference.processing_time_ms, 20.0);
}

#[test]
fn worst_source_chain_wins() {
    // chain 1: s1 -(3ms)-> svc(5ms) ; chain 2: s2 -(8ms)-> svc(5ms); sink co-located.
    let i = infra(
        vec![plain("a"), plain("b"), plain("c")],
        vec![link("ac", "a", "c", 3.0, 1e6, 0.0), link("bc", "b", "c", 8.0, 1e6, 0.0)],
    );
    let sw = SoftwareModel {
        components: vec![
            SoftwareComponent::source("s1", 1.0, "a"),
            SoftwareComponent::source("s2", 1.0, "b"),
            SoftwareComponent::service("svc", 1.0, 5.0, 0, ServiceRole::EventProcessor),
            SoftwareComponent::sink("t", "c"),
        ],
        connections: vec![
            Connection::new("s1", "svc"),
            Connection::new("s2", "svc"),
            Connection::new("svc", "t"),
        ],
        paths: vec![ApplicationPath {
            id: "P".into(),
            class: PathClass::EventProcessing,
            members: vec!["s1".into(), "s2".into(), "svc".into(), "t".into()],
            slo_latency_ms: 100.0,
        }],
    };
    let sw = derive_rates(&sw).unwrap();
    let m = path_latency(&sw.paths[0], &place(&[("svc", "c")], &[("c", "m")]), &i, &sw).unwrap();
    assert_eq!(m.end_to_end_ms, 13.0);
    assert_eq!(m.transmission_time_ms, 8.0);
    assert_eq!(m.processing_time_ms + m.transmission_time_ms, m.end_to_end_ms);
}

#[test]
fn unused_node_is_not_billed() {
    let i = infra(
        vec![plain("a"), node("cloud", "cloud", &[("big", 8.0, 0, 40.0)])],
        vec![link("ac", "a", "cloud", 50.0, 1e6, 0.0)],
    );
    let sw = pipeline("a", "a", 1.0, 1.0, 0);
    let c = costs(&place(&[("svc", "a")], &[("a", "m"), ("cloud", "big")]), &i, &sw).unwrap();
    assert_eq!(c.processing_cost_month, 1.0);
    assert_eq!(c.transmission_cost_month, 0.0);
    assert_eq!(c.total_cost_month, 1.0);
}

#[test]
fn transmission_cost_is_rate_times_price() {
    // 10 kb/s (1 kb = 1000 bytes) over one link priced 0.002 per (B/s)/month.
    let i = infra(vec![plain("a"), plain("b")], vec![link("ab", "a", "b", 1.0, 1e6, 0.002)]);
    let mut sw = pipeline("a", "a", 10_000.0, 1.0, 0);
    sw.components[1].output_ratio = Some(0.0);
    let sw = derive_rates(&sw).unwrap();
    let c = costs(&place(&[("svc", "b")], &[("b", "m")]), &i, &sw).unwrap();
    assert!((c.transmission_cost_month - 20.0).abs() < 1e-12);
    assert_eq!(c.total_cost_month, c.processing_cost_month + c.transmission_cost_month);
}

fn record(id: u64, cost: f64, e2e: f64) -> SimRecord {
    SimRecord {
        option_id: OptionId(id),
        multiplicity: 1,
        option: DesignOption::default(),
        metrics: SimulationMetrics {
            per_path: BTreeMap::from([(
                PathId::from("A1"),
                PathMetrics {
                    processing_time_ms: 0.0,
                    transmission_time_ms: e2e,
                    end_to_end_ms: e2e,
                    slo_latency_ms: 50.0,
                },
            )]),
            processing_cost_month: cost,
            transmission_cost_month: 0.0,
            total_cost_month: cost,
            feasible: e2e <= 50.0,
            violations: vec![],
        },
    }
}

#[test]
fn slo_filter_is_inclusive() {
    let kept = filter_slo(vec![record(0, 1.0, 32.01), record(1, 1.0, 50.0), record(2, 1.0, 50.0001)]);
    let ids: Vec<u64> = kept.iter().map(|r| r.option_id.0).collect();
    assert_eq!(ids, vec![0, 1]);
}

#[test]
fn slo_filter_needs_every_path() {
    let mut r = record(0, 1.0, 10.0);
    r.metrics.per_path.insert(
        "A2".into(),
        PathMetrics {
            processing_time_ms: 0.0,
            transmission_time_ms: 16.0,
            end_to_end_ms: 16.0,
            slo_latency_ms: 15.0,
        },
    );
    assert!(filter_slo(vec![r]).is_empty());
}

#[test]
fn percentile_counts() {
    let many = |n: u64| (0..n).map(|i| record(i, (n - i) as f64, 1.0)).collect::<Vec<_>>();
    assert_eq!(select_percentile(many(215), 0.05).unwrap().len(), 10);
    assert_eq!(select_percentile(many(1), 0.05).unwrap().len(), 1);
    assert_eq!(select_percentile(many(100), 0.05).unwrap().len(), 5);
    assert!(matches!(select_percentile(vec![], 0.05), Err(SimError::EmptyInput)));
    assert!(matches!(select_percentile(many(3), 0.0), Err(SimError::InvalidFraction(_))));
}

#[test]
fn percentile_ties_keep_enumeration_order() {
    let rs = vec![record(5, 2.0, 1.0), record(3, 1.0, 1.0), record(1, 1.0, 1.0), record(0, 3.0, 1.0)];
    let top = select_percentile(rs, 0.5).unwrap();
    let ids: Vec<u64> = top.iter().map(|r| r.option_id.0).collect();
    assert_eq!(ids, vec![1, 3]);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn shortlist_size_is_floor_with_minimum_one(n in 1usize..10_000) {
        proptest::prop_assert_eq!(shortlist_size(n, 0.05), (n / 20).max(1));
        let rs: Vec<SimRecord> = (0..n as u64).map(|i| record(i, ((i * 7919) % 101) as f64, 1.0)).collect();
        let top = select_percentile(rs.clone(), 0.05).unwrap();
        proptest::prop_assert_eq!(top.len(), (n / 20).max(1));
        // Nothing left out is cheaper than anything kept.
        let worst_kept = top.iter().map(|r| r.metrics.total_cost_month).fold(f64::MIN, f64::max);
        let kept: std::collections::BTreeSet<u64> = top.iter().map(|r| r.option_id.0).collect();
        for r in rs.iter().filter(|r| !kept.contains(&r.option_id.0)) {
            proptest::prop_assert!(r.metrics.total_cost_month >= worst_kept);
        }
    }

    #[test]
    fn shortlist_size_for_whole_percentages(n in 1usize..10_000, pct in 1usize..=100) {
        proptest::prop_assert_eq!(shortlist_size(n, pct as f64 / 100.0), (n * pct / 100).max(1));
    }
}
