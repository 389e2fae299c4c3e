use super::*;
use crate::emulator::Calibration;
use crate::enumerate::DesignOption;
use crate::model::*;
use std::fs;

fn hw(id: &str, rpi: f64, memory: u64, price: f64) -> HardwareOption {
    HardwareOption {
        id: id.into(),
        rpi,
        memory_bytes: memory,
        price_month: price,
    }
}

// Source on x, sink on y, one service free to sit on either.
fn models() -> (InfrastructureModel, SoftwareModel) {
    let node = |id: &str| InfraNode {
        id: id.into(),
        name: id.into(),
        tier: "edge".into(),
        pinned: vec![],
        hardware_options: vec![hw("tiny", 1.0, 10, 0.5), hw("small", 1.0, 1 << 20, 1.0), hw("big", 4.0, 1 << 30, 8.0)],
    };
    let infra = InfrastructureModel {
        tier_order: vec!["edge".into()],
        nodes: vec![node("x"), node("y")],
        links: vec![NetworkLink {
            id: "xy".into(),
            a: "x".into(),
            b: "y".into(),
            latency_ms: 2.0,
            bandwidth_bytes_per_sec: 1e6,
            bandwidth_price_month_per_byte_per_sec: 0.001,
            latency_class: Some(LatencyClass::Low),
        }],
    };
    let sw = SoftwareModel {
        components: vec![
            SoftwareComponent::source("src", 1000.0, "x"),
            SoftwareComponent::service("svc", 1.0, 4.0, 1000, ServiceRole::EventProcessor),
            SoftwareComponent::sink("dst", "y"),
        ],
        connections: vec![Connection::new("src", "svc"), Connection::new("svc", "dst")],
        paths: vec![ApplicationPath {
            id: "P".into(),
            class: PathClass::EventProcessing,
            members: vec!["dst".into(), "src".into(), "svc".into()],
            slo_latency_ms: 100.0,
        }],
    };
    (infra, derive_rates(&sw).unwrap())
}

fn config(out: &Path, extra: serde_json::Value) -> PipelineConfig {
    let mut doc = serde_json::json!({
        "infrastructure": "infrastructure.json",
        "software": "software.json",
        "outputDir": out,
        "emulation": {"enabled": false},
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    PipelineConfig::parse(&doc.to_string(), out).unwrap()
}

fn session(out: &Path, extra: serde_json::Value) -> Session {
    let (infra, sw) = models();
    Session::new(config(out, extra), infra, sw).unwrap()
}

#[test]
fn run_without_emulation_marks_stage_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), serde_json::json!({}));
    let report = s.run(None).unwrap();
    let names: Vec<StageName> = report.stages.iter().map(|r| r.stage).collect();
    assert_eq!(names, StageName::ALL);
    assert!(report.is_monotonic());
    let em = report.stage(StageName::Emulation).unwrap();
    assert!(em.skipped);
    assert_eq!(em.options_in, em.options_out);
    assert_eq!(report.stage(StageName::Final).unwrap().options_out, 1);

    let rec = report.recommendation.as_ref().unwrap();
    assert!(rec.emulation.is_none());
    // tiny cannot hold the service, so its host gets small and the other node tiny.
    let svc_node = &rec.placement[&ComponentId::from("svc")];
    for (node, h) in &rec.hardware {
        assert_eq!(h.as_str(), if node == svc_node { "small" } else { "tiny" });
    }
    assert!(rec.metrics.feasible);

    for f in [
        "candidates.json",
        "justification.txt",
        "records.jsonl",
        "records.csv",
        "shortlist.jsonl",
        "config.json",
        "timings.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let bytes = fs::read_to_string(dir.path().join("funnel.json")).unwrap();
    assert_eq!(bytes, report.to_document());
    assert!(!dir.path().join("emulation.json").exists());
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    session(a.path(), serde_json::json!({"jobs": 1})).run(None).unwrap();
    session(b.path(), serde_json::json!({"jobs": 2})).run(None).unwrap();
    for f in ["funnel.json", "records.jsonl", "shortlist.jsonl", "candidates.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn emulated_run_ranks_the_shortlist() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dir.path().join("cal.json");
    fs::write(&cal, serde_json::to_string(&Calibration::fixed(50.0)).unwrap()).unwrap();
    let s = session(
        dir.path(),
        serde_json::json!({
            "percentile": 1.0,
            "emulation": {
                "calibration": "cal.json",
                "dumpSamples": true,
                "workload": {"messagesPerSec": 20, "durationSec": 0.5, "warmupSec": 0.1, "repeats": 2}
            }
        }),
    );
    let report = s.run(None).unwrap();
    let em = report.stage(StageName::Emulation).unwrap();
    assert!(!em.skipped);
    assert!(em.options_in >= 2);
    let rec = report.recommendation.as_ref().unwrap();
    let verdict = rec.emulation.as_ref().unwrap();
    assert_eq!(verdict.rank, 1);
    assert!(verdict.slos_met);
    for f in ["calibration.json", "emulation.json", "emulation.csv", "samples.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let text = explain(rec.option_id.0, dir.path()).unwrap();
    assert!(text.contains("emulation: rank 1 of"), "{text}");
    assert!(text.contains("shortlisted at position"), "{text}");
}

#[test]
fn impossible_slo_leaves_no_recommendation() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), serde_json::json!({"sloOverrides": {"P": 0.5}}));
    let report = s.run(None).unwrap();
    assert_eq!(report.stage(StageName::Slo).unwrap().options_out, 0);
    assert_eq!(report.stage(StageName::Final).unwrap().options_out, 0);
    assert!(report.recommendation.is_none());
    assert!(report.to_document().contains("\"final\": null"));
}

#[test]
fn relative_paths_resolve_against_config_dir() {
    let doc = r#"{"infrastructure": "m/i.json", "software": "/abs/s.json",
        "emulation": {"workload": {"sources": {"src": {"mode": "trace-replay", "trace": "t.csv"}}}}}"#;
    let c = PipelineConfig::parse(doc, Path::new("/base")).unwrap();
    assert_eq!(c.infrastructure, Path::new("/base/m/i.json"));
    assert_eq!(c.software, Path::new("/abs/s.json"));
    assert_eq!(c.output_dir, Path::new("/base/out"));
    assert_eq!(c.percentile, 0.05);
    assert!(c.emulation.enabled);
    match &c.emulation.workload.sources[&ComponentId::from("src")] {
        crate::emulator::SourceWorkload::TraceReplay { trace } => assert_eq!(trace, Path::new("/base/t.csv")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_input_exits_with_two() {
    let base = Path::new("/tmp");
    for doc in [
        r#"{"infrastructure": "i", "software": "s", "percentile": 0}"#,
        r#"{"infrastructure": "i", "software": "s", "percentile": 1.5}"#,
        r#"{"infrastructure": "i", "software": "s", "jobs": 0}"#,
        r#"{"infrastructure": "i", "software": "s", "colour": "red"}"#,
        r#"{"infrastructure": "i"}"#,
        r#"{"infrastructure": "i", "software": "s", "emulation": {"workload": {"repeats": 0}}}"#,
    ] {
        let e = PipelineConfig::parse(doc, base).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{doc}: {e}");
    }
    let (infra, sw) = models();
    let c = config(Path::new("/tmp"), serde_json::json!({"sloOverrides": {"Q": 5}}));
    assert_eq!(Session::new(c, infra, sw).unwrap_err().exit_code(), 2);
    let e = Session::load(Path::new("/nonexistent/pipeline.json")).unwrap_err();
    assert!(matches!(e, PipelineError::Io { .. }));
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn denying_every_node_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(
        dir.path(),
        serde_json::json!({"rules": {"overrides": {"svc": {"deny": ["x", "y"]}}}}),
    );
    let e = s.run(None).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
    assert!(e.to_string().starts_with("best-practices stage failed"), "{e}");
    // The trace is still written so the user can see why.
    let why = fs::read_to_string(dir.path().join("justification.txt")).unwrap();
    assert!(why.contains("svc"), "{why}");
}

#[test]
fn progress_sees_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let seen = std::sync::Mutex::new(Vec::new());
    let f = |s: StageName, done: &[StageRecord]| seen.lock().unwrap().push((s, done.len()));
    session(dir.path(), serde_json::json!({})).run(Some(&f)).unwrap();
    let seen = seen.into_inner().unwrap();
    let names: Vec<StageName> = seen.iter().map(|x| x.0).collect();
    assert_eq!(names, StageName::ALL);
    assert!(seen.iter().enumerate().all(|(i, x)| x.1 == i));
}

#[test]
fn explain_reports_violations_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), serde_json::json!({}));
    let report = s.run(None).unwrap();
    let id = report.recommendation.unwrap().option_id.0;
    let text = explain(id, dir.path()).unwrap();
    assert!(text.starts_with(&format!("option {id}\n")));
    assert!(text.contains("P: processing 4.000 ms + transmission"), "{text}");
    assert!(text.contains("feasibility: passed"));

    let tiny = DesignOption {
        placement: [("svc".into(), "x".into())].into(),
        hardware: [("x".into(), "tiny".into()), ("y".into(), "tiny".into())].into(),
    };
    let text = explain_design(&tiny, dir.path()).unwrap();
    assert!(text.contains("violation Memory on x: needs 1000 bytes, has 10"), "{text}");
    assert!(text.contains("feasibility: failed"));
    assert!(text.contains("percentile: not shortlisted"));

    let e = explain(u64::MAX, dir.path()).unwrap_err();
    assert!(matches!(e, PipelineError::UnknownOption(_)));
    assert_eq!(e.exit_code(), 2);
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(explain(0, empty.path()), Err(PipelineError::MissingArtifact(_))));
}

#[test]
fn stage_names_are_kebab_case() {
    assert_eq!(StageName::BestPractices.to_string(), "best-practices");
    let r = StageRecord {
        stage: StageName::Slo,
        options_in: 3,
        options_out: 2,
        skipped: false,
    };
    assert_eq!(
        serde_json::to_string(&r).unwrap(),
        r#"{"stage":"slo","optionsIn":3,"optionsOut":2,"skipped":false}"#
    );
}

#[test]
fn stages_rerun_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), serde_json::json!({"percentile": 0.5}));
    let prune = s.prune().unwrap();
    let sim = s.simulate(&prune).unwrap();
    let again = s.read_simulation().unwrap();
    assert_eq!(again.records, sim.records);
    assert_eq!(
        (again.options, again.resource_feasible, again.slo_conforming),
        (sim.options, sim.resource_feasible, sim.slo_conforming)
    );
    let short = s.shortlist(&again).unwrap();
    assert_eq!(s.read_shortlist().unwrap(), short);
}

#[test]
fn sampling_is_seeded_and_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path(), serde_json::json!({"seed": 3}));
    let a = s.sample(4).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, s.sample(4).unwrap());
    let ids: std::collections::BTreeSet<u64> = a.iter().map(|r| r.option_id.0).collect();
    assert_eq!(ids.len(), 4);
    let all = s.sample(1000).unwrap();
    assert_eq!(all.len() as u128, s.prune().unwrap().space_options);
}
