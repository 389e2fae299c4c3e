use super::stages::{read_json, read_jsonl, EmulationSummary, Session};
use super::{PipelineConfig, PipelineError};
use crate::bestpractices::{apply_best_practices, OptionRules};
use crate::enumerate::DesignOption;
use crate::model::{load_models_with, LoadOptions, SoftwareModel};
use crate::simulator::{Scenario, SimRecord, ViolationKind};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn session_from(out_dir: &Path) -> Result<Session, PipelineError> {
    let read = |name: &str| {
        let p = out_dir.join(name);
        fs::read_to_string(&p).map_err(|_| PipelineError::MissingArtifact(p))
    };
    let config: PipelineConfig =
        serde_json::from_str(&read("config.json")?).map_err(|e| PipelineError::Config(e.to_string()))?;
    let opts = LoadOptions {
        thresholds: config.latency_thresholds.unwrap_or_default(),
    };
    let (infra, software) = load_models_with(&read("infrastructure.json")?, &read("software.json")?, &opts)?;
    // The copied software model already carries any SLO overrides.
    let config = PipelineConfig {
        slo_overrides: Default::default(),
        output_dir: out_dir.to_path_buf(),
        ..config
    };
    Session::new(config, infra, software)
}

/// Rationale for the option at `option_id` of the pruned enumeration, using the
/// artifacts in `out_dir`.
pub fn explain(option_id: u64, out_dir: &Path) -> Result<String, PipelineError> {
    let session = session_from(out_dir)?;
    let prune = session.prune_quietly()?;
    let option = prune
        .space
        .option_at(option_id as u128)
        .ok_or(PipelineError::UnknownOption(option_id))?;
    let design = prune.space.design(&option).effective();
    let mut text = format!("option {option_id}\n");
    text.push_str(&explain_with(&session, &design, out_dir)?);
    Ok(text)
}

/// Rationale for an arbitrary design against the artifacts in `out_dir`.
pub fn explain_design(design: &DesignOption, out_dir: &Path) -> Result<String, PipelineError> {
    let session = session_from(out_dir)?;
    explain_with(&session, &design.effective(), out_dir)
}

fn path_names(software: &SoftwareModel) -> Vec<&str> {
    software.paths.iter().map(|p| p.id.as_str()).collect()
}

fn explain_with(session: &Session, design: &DesignOption, out_dir: &Path) -> Result<String, PipelineError> {
    let mut t = String::new();
    let w = &mut t;
    let _ = writeln!(w, "design {design}");

    let scenario = Scenario::new(&session.infra, &session.software)?;
    let indexed = scenario.index.indexed(design).map_err(crate::simulator::SimError::from)?;

    let _ = writeln!(w, "best practices:");
    let mut pruned = false;
    if let Ok(p) = apply_best_practices(&session.infra, &session.software, &session.config.rules) {
        for (svc, node) in &design.placement {
            if let Some(e) = p.trace.iter().find(|e| &e.service == svc && &e.node == node) {
                pruned = true;
                let _ = writeln!(w, "  failed: {e}");
            }
        }
    }
    let rules = OptionRules::new(&scenario, &session.software, &session.config.rules);
    if let Some(v) = rules.check(&scenario, &indexed)? {
        pruned = true;
        let _ = writeln!(w, "  failed: {} ({})", v.rule, v.detail);
    }
    if !pruned {
        let _ = writeln!(w, "  passed");
    }

    let m = scenario.simulate(&indexed)?;
    let _ = writeln!(w, "simulation:");
    for id in path_names(&session.software) {
        let p = &m.per_path[id];
        let verdict = if p.slo_margin_ms() >= 0.0 { "met" } else { "missed" };
        let _ = writeln!(
            w,
            "  {id}: processing {:.3} ms + transmission {:.3} ms = {:.3} ms against SLO {} ms, margin {:.3} ms ({verdict})",
            p.processing_time_ms,
            p.transmission_time_ms,
            p.end_to_end_ms,
            p.slo_latency_ms,
            p.slo_margin_ms()
        );
    }
    let _ = writeln!(
        w,
        "  cost per month: processing {:.3} + transmission {:.3} = {:.3}",
        m.processing_cost_month, m.transmission_cost_month, m.total_cost_month
    );
    for v in &m.violations {
        let unit = match v.kind {
            ViolationKind::Memory => "bytes",
            ViolationKind::Bandwidth => "bytes/s",
            ViolationKind::Slo => "ms",
        };
        let _ = writeln!(
            w,
            "  violation {:?} on {}: needs {} {unit}, has {} ({})",
            v.kind, v.subject, v.required, v.available, v.detail
        );
    }
    let _ = writeln!(
        w,
        "  feasibility: {}",
        if m.resources_ok() { "passed" } else { "failed" }
    );
    let failed: Vec<String> = m
        .per_path
        .iter()
        .filter(|(_, p)| p.slo_margin_ms() < 0.0)
        .map(|(id, p)| format!("{id} over by {:.3} ms", -p.slo_margin_ms()))
        .collect();
    let _ = writeln!(
        w,
        "  slo: {}",
        if failed.is_empty() {
            "passed".to_string()
        } else {
            format!("failed, {}", failed.join(", "))
        }
    );

    let shortlist: Option<Vec<SimRecord>> = read_jsonl(&out_dir.join("shortlist.jsonl")).ok();
    let mut shortlisted_id = None;
    if let Some(short) = &shortlist {
        match short.iter().position(|r| &r.option == design) {
            Some(i) => {
                shortlisted_id = Some(short[i].option_id);
                let _ = writeln!(w, "percentile: shortlisted at position {} of {}", i + 1, short.len());
            }
            None => {
                let _ = writeln!(w, "percentile: not shortlisted");
            }
        }
    }

    if let (Some(id), Ok(em)) = (
        shortlisted_id,
        read_json::<EmulationSummary>(&out_dir.join("emulation.json")),
    ) {
        if let Some(r) = em.results.iter().find(|r| r.option_id == id) {
            match r.report() {
                Some(report) => {
                    let rank = em.comparison.ranking.iter().find(|x| x.option_id == id);
                    let _ = writeln!(
                        w,
                        "emulation: rank {} of {}, SLOs {}",
                        rank.map_or(0, |x| x.rank),
                        em.comparison.ranking.len(),
                        if report.all_slos_met() { "met" } else { "missed" }
                    );
                    for (p, pr) in &report.paths {
                        let cov = pr.cov.map_or("n/a".to_string(), |c| format!("{:.2}%", c * 100.0));
                        let _ = writeln!(
                            w,
                            "  {p}: median run {:.3} ms (stddev {:.3} ms, {} samples), CoV {cov}",
                            pr.median.mean_ms, pr.median.stddev_ms, pr.median.sample_count
                        );
                    }
                }
                None => {
                    if let super::EmulationOutcome::Failed { error } = &r.outcome {
                        let _ = writeln!(w, "emulation: failed, {error}");
                    }
                }
            }
        }
    }
    Ok(t)
}
