use super::*;
use proptest::prelude::*;
use serde_json::{json, Value};

fn infra_doc() -> Value {
    json!({
        "tierOrder": ["edge", "cloud"],
        "nodes": [
            {"id": "gw", "tier": "edge", "hardwareOptions": [{"id": "s", "rpi": 1.0, "memoryBytes": 1000, "priceMonth": 2.0}]},
            {"id": "dc", "tier": "cloud", "hardwareOptions": [{"id": "m", "rpi": 2.0, "memoryBytes": 9000, "priceSecond": 0.001}]}
        ],
        "links": [
            {"id": "up", "a": "gw", "b": "dc", "latencyMs": 20.0, "bandwidthBytesPerSec": 1000.0,
             "bandwidthPriceMonthPerBytePerSec": 0.01}
        ]
    })
}

fn software_doc() -> Value {
    json!({
        "components": [
            {"id": "cam", "kind": "source", "outputRateBytesPerSec": 100.0, "pinnedNode": "gw"},
            {"id": "detect", "kind": "service", "outputRatio": 0.5, "refDelayMs": 20.0,
             "requiredMemoryBytes": 500, "role": "event-processor"},
            {"id": "plc", "kind": "sink", "pinnedNode": "gw"}
        ],
        "connections": [
            {"producer": "cam", "consumer": "detect"},
            {"producer": "detect", "consumer": "plc"}
        ],
        "paths": [
            {"id": "A1", "class": "event-processing", "members": ["cam", "detect", "plc"], "sloLatencyMs": 50.0}
        ]
    })
}

fn load(i: &Value, s: &Value) -> Result<(InfrastructureModel, SoftwareModel), ModelError> {
    load_models(&i.to_string(), &s.to_string())
}

fn invariant(e: ModelError) -> &'static str {
    match e {
        ModelError::Validation { invariant, .. } => invariant,
        other => panic!("expected a validation error, got {other}"),
    }
}

type Edit = Box<dyn Fn(&mut Value)>;

#[test]
fn loads_and_normalizes() {
    let (infra, sw) = load(&infra_doc(), &software_doc()).unwrap();
    assert_eq!(infra.nodes[0].id.as_str(), "dc");
    assert_eq!(infra.nodes[0].name, "dc");
    assert!((infra.nodes[0].hardware_options[0].price_month - 2592.0).abs() < 1e-9);
    assert_eq!(infra.links[0].latency_class, Some(LatencyClass::Medium));
    let rates: Vec<f64> = sw.connections.iter().map(Connection::rate).collect();
    assert_eq!(rates, vec![100.0, 50.0]);
}

#[test]
fn latency_thresholds_are_configurable() {
    let t = LatencyThresholds {
        medium_from_ms: 1.0,
        high_from_ms: 10.0,
    };
    let opts = LoadOptions { thresholds: t };
    let infra = load_infrastructure(&infra_doc().to_string(), &opts).unwrap();
    assert_eq!(infra.links[0].latency_class, Some(LatencyClass::High));
    assert_eq!(t.classify(0.5), LatencyClass::Low);
    assert_eq!(t.classify(10.0), LatencyClass::High);

    let mut doc = infra_doc();
    doc["links"][0]["latencyClass"] = json!("low");
    let infra = load_infrastructure(&doc.to_string(), &opts).unwrap();
    assert_eq!(infra.links[0].latency_class, Some(LatencyClass::Low));
}

#[test]
fn infrastructure_invariants() {
    let cases: Vec<(&str, Edit)> = vec![
        ("tier-order-declared", Box::new(|d| d["tierOrder"] = json!([]))),
        ("unique-tiers", Box::new(|d| d["tierOrder"] = json!(["edge", "edge", "cloud"]))),
        ("nodes-present", Box::new(|d| {
            d["nodes"] = json!([]);
            d["links"] = json!([]);
        })),
        ("unique-node-ids", Box::new(|d| d["nodes"][1]["id"] = json!("gw"))),
        ("tier-declared", Box::new(|d| d["nodes"][0]["tier"] = json!("fog"))),
        ("hardware-options-non-empty", Box::new(|d| d["nodes"][0]["hardwareOptions"] = json!([]))),
        ("rpi-positive", Box::new(|d| d["nodes"][0]["hardwareOptions"][0]["rpi"] = json!(0.0))),
        ("price-non-negative", Box::new(|d| d["nodes"][0]["hardwareOptions"][0]["priceMonth"] = json!(-1.0))),
        ("link-endpoints-distinct", Box::new(|d| d["links"][0]["b"] = json!("gw"))),
        ("link-endpoints-exist", Box::new(|d| d["links"][0]["b"] = json!("nowhere"))),
        ("latency-non-negative", Box::new(|d| d["links"][0]["latencyMs"] = json!(-0.5))),
        ("bandwidth-positive", Box::new(|d| d["links"][0]["bandwidthBytesPerSec"] = json!(0.0))),
        ("unique-link-ids", Box::new(|d| {
            let l = d["links"][0].clone();
            d["links"].as_array_mut().unwrap().push(l);
        })),
    ];
    for (name, edit) in cases {
        let mut doc = infra_doc();
        edit(&mut doc);
        let e = load(&doc, &software_doc()).unwrap_err();
        assert_eq!(invariant(e), name);
    }
}

#[test]
fn disconnected_infrastructure_is_rejected() {
    let mut doc = infra_doc();
    doc["links"] = json!([]);
    match load(&doc, &software_doc()).unwrap_err() {
        ModelError::DisconnectedGraph { root, unreachable } => {
            assert_eq!(root.as_str(), "dc");
            assert_eq!(unreachable, vec!["gw".to_string()]);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn both_price_units_are_a_schema_error() {
    let mut doc = infra_doc();
    doc["nodes"][0]["hardwareOptions"][0]["priceSecond"] = json!(1.0);
    assert!(matches!(load(&doc, &software_doc()), Err(ModelError::Schema { .. })));
    let mut doc = infra_doc();
    doc["nodes"][0]["colour"] = json!("red");
    assert!(matches!(load(&doc, &software_doc()), Err(ModelError::Schema { .. })));
}

#[test]
fn software_invariants() {
    let cases: Vec<(&str, Edit)> = vec![
        ("unique-component-ids", Box::new(|d| d["components"][2]["id"] = json!("cam"))),
        ("endpoints-pinned", Box::new(|d| {
            d["components"][2].as_object_mut().unwrap().remove("pinnedNode");
        })),
        ("services-unpinned", Box::new(|d| d["components"][1]["pinnedNode"] = json!("gw"))),
        ("kind-specific-fields", Box::new(|d| d["components"][0]["refDelayMs"] = json!(1.0))),
        ("service-role-declared", Box::new(|d| {
            d["components"][1].as_object_mut().unwrap().remove("role");
        })),
        ("output-rate-positive", Box::new(|d| d["components"][0]["outputRateBytesPerSec"] = json!(0.0))),
        ("connection-endpoints-exist", Box::new(|d| d["connections"][0]["consumer"] = json!("ghost"))),
        ("producer-differs-from-consumer", Box::new(|d| d["connections"][0]["producer"] = json!("detect"))),
        ("sink-not-producer", Box::new(|d| {
            d["connections"].as_array_mut().unwrap().push(json!({"producer": "plc", "consumer": "detect"}));
        })),
        ("source-not-consumer", Box::new(|d| {
            d["connections"].as_array_mut().unwrap().push(json!({"producer": "detect", "consumer": "cam"}));
        })),
        ("unique-connections", Box::new(|d| {
            d["connections"].as_array_mut().unwrap().push(json!({"producer": "cam", "consumer": "detect"}));
        })),
        ("one-sink-per-path", Box::new(|d| d["paths"][0]["members"] = json!(["cam", "detect"]))),
        ("path-members-exist", Box::new(|d| d["paths"][0]["members"] = json!(["cam", "detect", "plc", "x"]))),
        ("path-sources-reach-sink", Box::new(|d| {
            d["connections"] = json!([{"producer": "cam", "consumer": "detect"}]);
        })),
        ("components-on-paths", Box::new(|d| {
            d["components"].as_array_mut().unwrap().push(json!({
                "id": "spare", "kind": "service", "outputRatio": 1.0, "role": "preprocessor"
            }));
        })),
        ("slo-non-negative", Box::new(|d| d["paths"][0]["sloLatencyMs"] = json!(-1.0))),
    ];
    for (name, edit) in cases {
        let mut doc = software_doc();
        edit(&mut doc);
        let e = load(&infra_doc(), &doc).unwrap_err();
        assert_eq!(invariant(e), name);
    }
}

#[test]
fn cycles_and_missing_rates() {
    let mut doc = software_doc();
    doc["components"].as_array_mut().unwrap().push(json!({
        "id": "echo", "kind": "service", "outputRatio": 1.0, "role": "event-processor"
    }));
    doc["connections"] = json!([
        {"producer": "cam", "consumer": "detect"},
        {"producer": "detect", "consumer": "echo"},
        {"producer": "echo", "consumer": "detect"},
        {"producer": "detect", "consumer": "plc"}
    ]);
    doc["paths"][0]["members"] = json!(["cam", "detect", "echo", "plc"]);
    assert!(matches!(load(&infra_doc(), &doc), Err(ModelError::CyclicSoftwareGraph(_))));

    let mut doc = software_doc();
    doc["components"][0].as_object_mut().unwrap().remove("outputRateBytesPerSec");
    assert!(matches!(load(&infra_doc(), &doc), Err(ModelError::MissingRate(_))));
}

#[test]
fn cross_model_invariants() {
    let mut doc = software_doc();
    doc["components"][2]["pinnedNode"] = json!("mars");
    assert_eq!(invariant(load(&infra_doc(), &doc).unwrap_err()), "pinned-node-exists");

    let mut doc = infra_doc();
    doc["nodes"][1]["pinned"] = json!(["cam"]);
    assert_eq!(invariant(load(&doc, &software_doc()).unwrap_err()), "pinned-lists-consistent");
    doc["nodes"][1]["pinned"] = json!([]);
    doc["nodes"][0]["pinned"] = json!(["cam", "plc"]);
    load(&doc, &software_doc()).unwrap();
}

prop_compose! {
    fn arb_infra()(
        n in 1usize..6,
        latencies in prop::collection::vec(0.0f64..200.0, 5),
        prices in prop::collection::vec(0.0f64..500.0, 6),
        rpis in prop::collection::vec(0.1f64..8.0, 6),
    ) -> Value {
        let nodes: Vec<Value> = (0..n).map(|i| json!({
            "id": format!("n{i}"),
            "tier": if i % 2 == 0 { "edge" } else { "cloud" },
            "hardwareOptions": [{"id": "h", "rpi": rpis[i], "memoryBytes": 1u64 << (i + 10), "priceMonth": prices[i]}]
        })).collect();
        let links: Vec<Value> = (1..n).map(|i| json!({
            "id": format!("l{i}"), "a": format!("n{}", i - 1), "b": format!("n{i}"),
            "latencyMs": latencies[i - 1], "bandwidthBytesPerSec": 1000.0 * i as f64,
            "bandwidthPriceMonthPerBytePerSec": prices[i] / 100.0
        })).collect();
        json!({"tierOrder": ["edge", "cloud"], "nodes": nodes, "links": links})
    }
}

proptest! {
    #[test]
    fn documents_round_trip(doc in arb_infra(), rate in 1.0f64..1e6, ratio in 0.0f64..4.0) {
        let mut sw = software_doc();
        sw["components"][0]["outputRateBytesPerSec"] = json!(rate);
        sw["components"][0]["pinnedNode"] = json!("n0");
        sw["components"][2]["pinnedNode"] = json!("n0");
        sw["components"][1]["outputRatio"] = json!(ratio);
        let (infra, software) = load(&doc, &sw).unwrap();
        let (again_i, again_s) = load_models(&to_document(&infra), &to_document(&software)).unwrap();
        prop_assert_eq!(&infra, &again_i);
        prop_assert_eq!(&software, &again_s);
        prop_assert_eq!(to_document(&infra), to_document(&again_i));
    }
}
