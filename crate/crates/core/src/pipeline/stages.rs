use super::{
    EmulationVerdict, FunnelReport, PipelineConfig, PipelineError, Recommendation, StageName, StageRecord,
};
use crate::bestpractices::{apply_best_practices, OptionRules, Pruning, RuleError};
use crate::emulator::{
    build_testbed, calibrate, compare, run_experiment_with, Calibration, Comparison, EmulationReport, Measured,
    RunOptions, Sample,
};
use crate::enumerate::{CandidateSets, IndexedOption, OptionSpace};
use crate::ids::OptionId;
use crate::model::{load_models_with, to_document, validate_models, InfrastructureModel, LoadOptions, SoftwareModel};
use crate::simulator::{filter_slo, select_percentile, Scenario, SimRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Called as each stage starts, with the records of the stages already finished.
pub type Progress<'a> = &'a (dyn Fn(StageName, &[StageRecord]) + Sync);

/// Validated inputs of one run.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: PipelineConfig,
    pub infra: InfrastructureModel,
    pub software: SoftwareModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CountSummary {
    pub placements: u128,
    pub options: u128,
}

#[derive(Debug, Clone)]
pub struct PruneSummary {
    pub pruning: Pruning,
    pub space: OptionSpace,
    /// Options in the pruned space before placement-level rules.
    pub space_options: u128,
    /// Options whose placement also passes the placement-level rules.
    pub options: u128,
    pub rejected_placements: usize,
    /// Surviving placements with the enumeration index of their first option.
    pub placements: Vec<(Vec<usize>, u128)>,
}

#[derive(Debug, Clone)]
pub struct SimSummary {
    /// One record per distinct design, in enumeration order.
    pub records: Vec<SimRecord>,
    pub options: u128,
    /// Options, counted with multiplicity, that fit memory and bandwidth.
    pub resource_feasible: u128,
    /// Distinct designs that also meet every SLO.
    pub slo_conforming: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum EmulationOutcome {
    Ok { report: EmulationReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmulationResult {
    pub option_id: OptionId,
    pub cost_month: f64,
    #[serde(flatten)]
    pub outcome: EmulationOutcome,
}

impl EmulationResult {
    pub fn report(&self) -> Option<&EmulationReport> {
        match &self.outcome {
            EmulationOutcome::Ok { report } => Some(report),
            EmulationOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EmulationSummary {
    pub calibration: Calibration,
    pub results: Vec<EmulationResult>,
    pub comparison: Comparison,
}

impl EmulationSummary {
    pub fn slo_conforming(&self) -> usize {
        self.comparison.ranking.iter().filter(|r| r.slos_met).count()
    }
}

fn u64_of(n: u128) -> u64 {
    u64::try_from(n).unwrap_or(u64::MAX)
}

impl Session {
    pub fn load(config_path: &Path) -> Result<Self, PipelineError> {
        Self::from_config(PipelineConfig::load(config_path)?)
    }

    /// Reads the model files named by `config`.
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        let read = |p: &PathBuf| fs::read_to_string(p).map_err(|e| PipelineError::io(p, e));
        let infra_doc = read(&config.infrastructure)?;
        let sw_doc = read(&config.software)?;
        let opts = LoadOptions {
            thresholds: config.latency_thresholds.unwrap_or_default(),
        };
        let (infra, software) = load_models_with(&infra_doc, &sw_doc, &opts)?;
        Self::new(config, infra, software)
    }

    pub fn new(
        config: PipelineConfig,
        infra: InfrastructureModel,
        mut software: SoftwareModel,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        validate_models(&infra, &software)?;
        config.rules.validate(&infra, &software)?;
        for (p, slo) in &config.slo_overrides {
            let path = software
                .paths
                .iter_mut()
                .find(|x| &x.id == p)
                .ok_or_else(|| PipelineError::Config(format!("sloOverrides names unknown path `{p}`")))?;
            path.slo_latency_ms = *slo;
        }
        Ok(Self {
            config,
            infra,
            software,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let dir = self.out_dir();
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| PipelineError::io(&path, e))
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), PipelineError> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it).expect("serializable"));
            s.push('\n');
        }
        self.write(name, &s)
    }

    /// Model and config copies that make the output directory self-contained.
    fn write_inputs(&self) -> Result<(), PipelineError> {
        self.write("infrastructure.json", &to_document(&self.infra))?;
        self.write("software.json", &to_document(&self.software))?;
        self.write("config.json", &to_document(&self.config))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.config.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Size of the unrestricted space.
    pub fn count(&self) -> Result<CountSummary, PipelineError> {
        let all = CandidateSets::unrestricted(&self.infra, &self.software);
        let space = OptionSpace::new(&self.infra, &self.software, &all, self.config.hardware_scope)?;
        Ok(CountSummary {
            placements: space.placement_count(),
            options: space.count(),
        })
    }

    /// Applies the best-practice rules and writes `candidates.json` and `justification.txt`.
    pub fn prune(&self) -> Result<PruneSummary, PipelineError> {
        self.write_inputs()?;
        let summary = self.prune_quietly();
        let pruning = match &summary {
            Ok(s) => Some(&s.pruning),
            Err(PipelineError::Rules(RuleError::EmptyCandidates { pruning, .. })) => Some(&**pruning),
            Err(_) => None,
        };
        if let Some(p) = pruning {
            self.write("candidates.json", &to_document(&p.candidates))?;
            let mut text = p.report();
            if let Ok(s) = &summary {
                text.push_str(&format!(
                    "{} placement(s) rejected by placement-level rules\n",
                    s.rejected_placements
                ));
            }
            self.write("justification.txt", &text)?;
        }
        summary
    }

    pub(crate) fn prune_quietly(&self) -> Result<PruneSummary, PipelineError> {
        let pruning = apply_best_practices(&self.infra, &self.software, &self.config.rules)?;
        let space = OptionSpace::new(&self.infra, &self.software, &pruning.candidates, self.config.hardware_scope)?;
        let scenario = Scenario::new(&self.infra, &self.software)?;
        let rules = OptionRules::new(&scenario, &self.software, &self.config.rules);
        let n = space.index().nodes.len();
        let mut placements = Vec::new();
        let mut base = 0u128;
        let mut options = 0u128;
        let mut rejected = 0;
        for p in space.placements() {
            let count = space.hardware_count(&p);
            let probe = IndexedOption {
                placement: p,
                hardware: vec![None; n],
            };
            let ok = !rules.is_active() || rules.check(&scenario, &probe)?.is_none();
            if ok {
                options += count;
                placements.push((probe.placement, base));
            } else {
                rejected += 1;
            }
            base += count;
        }
        Ok(PruneSummary {
            space_options: space.count(),
            pruning,
            space,
            options,
            rejected_placements: rejected,
            placements,
        })
    }

    /// Simulates every surviving option; writes `records.jsonl` and `records.csv`.
    pub fn simulate(&self, prune: &PruneSummary) -> Result<SimSummary, PipelineError> {
        let scenario = Scenario::new(&self.infra, &self.software)?;
        let space = &prune.space;
        let chunks: Vec<Vec<SimRecord>> = self.pool()?.install(|| {
            prune
                .placements
                .par_iter()
                .map(|(p, base)| simulate_placement(&scenario, space, p, *base))
                .collect::<Result<_, PipelineError>>()
        })?;
        let records: Vec<SimRecord> = chunks.into_iter().flatten().collect();
        let resource_feasible = records
            .iter()
            .filter(|r| r.metrics.resources_ok())
            .map(|r| r.multiplicity as u128)
            .sum();
        let slo_conforming = records.iter().filter(|r| r.metrics.feasible).count();
        self.write_jsonl("records.jsonl", &records)?;
        self.write("records.csv", &records_csv(&self.software, &records))?;
        Ok(SimSummary {
            records,
            options: prune.options,
            resource_feasible,
            slo_conforming,
        })
    }

    /// Cheapest SLO-conforming designs; writes `shortlist.jsonl`.
    pub fn shortlist(&self, sim: &SimSummary) -> Result<Vec<SimRecord>, PipelineError> {
        let conforming = filter_slo(sim.records.clone());
        let short = if conforming.is_empty() {
            Vec::new()
        } else {
            select_percentile(conforming, self.config.percentile)?
        };
        self.write_jsonl("shortlist.jsonl", &short)?;
        Ok(short)
    }

    pub fn read_shortlist(&self) -> Result<Vec<SimRecord>, PipelineError> {
        read_jsonl(&self.out_dir().join("shortlist.jsonl"))
    }

    /// The simulation stage as recorded in `records.jsonl`.
    pub fn read_simulation(&self) -> Result<SimSummary, PipelineError> {
        let records: Vec<SimRecord> = read_jsonl(&self.out_dir().join("records.jsonl"))?;
        let weight = |r: &SimRecord| r.multiplicity as u128;
        Ok(SimSummary {
            options: records.iter().map(weight).sum(),
            resource_feasible: records.iter().filter(|r| r.metrics.resources_ok()).map(weight).sum(),
            slo_conforming: records.iter().filter(|r| r.metrics.feasible).count(),
            records,
        })
    }

    /// Up to `n` distinct options drawn uniformly from the pruned space with the
    /// configured seed, simulated and in enumeration order.
    pub fn sample(&self, n: usize) -> Result<Vec<SimRecord>, PipelineError> {
        let prune = self.prune_quietly()?;
        let space = &prune.space;
        let total = space.count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let picks: BTreeSet<u128> = if (n as u128) >= total {
            (0..total).collect()
        } else {
            let mut s = BTreeSet::new();
            while s.len() < n {
                s.insert(rng.random_range(0..total));
            }
            s
        };
        let scenario = Scenario::new(&self.infra, &self.software)?;
        picks
            .into_iter()
            .map(|i| {
                let opt = space.option_at(i).expect("index below count");
                Ok(SimRecord {
                    option_id: OptionId(u64_of(i)),
                    multiplicity: 1,
                    option: space.design(&opt).effective(),
                    metrics: scenario.simulate(&opt)?,
                })
            })
            .collect()
    }

    fn calibration(&self) -> Result<Calibration, PipelineError> {
        match &self.config.emulation.calibration {
            Some(p) => {
                let doc = fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
                serde_json::from_str(&doc).map_err(|e| PipelineError::io(p, e))
            }
            None => Ok(calibrate(self.config.emulation.reference_work_units)?),
        }
    }

    /// Runs each shortlisted design on the virtual testbed; writes `calibration.json`,
    /// `emulation.json`, `emulation.csv` and, when asked, `samples.csv`.
    pub fn emulate(&self, shortlist: &[SimRecord]) -> Result<EmulationSummary, PipelineError> {
        let calibration = self.calibration()?;
        self.write("calibration.json", &to_document(&calibration))?;
        let opts = RunOptions {
            keep_samples: self.config.emulation.dump_samples,
            ..RunOptions::default()
        };
        let mut results = Vec::with_capacity(shortlist.len());
        let mut samples: Vec<(OptionId, Sample)> = Vec::new();
        for rec in shortlist {
            let outcome = build_testbed(&rec.option, &self.infra, &self.software, &calibration)
                .and_then(|tb| run_experiment_with(&tb, &self.config.emulation.workload, &opts));
            let outcome = match outcome {
                Ok(mut report) => {
                    samples.extend(report.samples.drain(..).map(|s| (rec.option_id, s)));
                    EmulationOutcome::Ok { report }
                }
                Err(e) => EmulationOutcome::Failed { error: e.to_string() },
            };
            results.push(EmulationResult {
                option_id: rec.option_id,
                cost_month: rec.metrics.total_cost_month,
                outcome,
            });
        }
        let measured: Vec<Measured<'_>> = results
            .iter()
            .filter_map(|r| {
                r.report().map(|report| Measured {
                    option_id: r.option_id,
                    cost_month: r.cost_month,
                    report,
                })
            })
            .collect();
        let comparison = compare(&measured);
        let summary = EmulationSummary {
            calibration,
            results,
            comparison,
        };
        self.write("emulation.json", &to_document(&summary))?;
        self.write("emulation.csv", &summary.comparison.bars_csv)?;
        if self.config.emulation.dump_samples {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["optionId", "run", "message", "source", "sink", "originMs", "latencyMs", "warmup"])
                .expect("in-memory");
            for (id, s) in &samples {
                w.write_record([
                    id.0.to_string(),
                    s.run.to_string(),
                    s.message.to_string(),
                    s.source.to_string(),
                    s.sink.to_string(),
                    s.origin_ms.to_string(),
                    s.latency_ms.to_string(),
                    s.warmup.to_string(),
                ])
                .expect("in-memory");
            }
            let bytes = w.into_inner().expect("in-memory");
            self.write("samples.csv", &String::from_utf8(bytes).expect("utf-8"))?;
        }
        Ok(summary)
    }

    /// Every stage in order. A run whose final stage keeps nothing still returns
    /// its report, with no recommendation.
    pub fn run(&self, progress: Option<Progress<'_>>) -> Result<FunnelReport, PipelineError> {
        let notify = |s: StageName, done: &[StageRecord]| {
            if let Some(f) = progress {
                f(s, done)
            }
        };
        let mut timings: BTreeMap<StageName, f64> = BTreeMap::new();
        let mut stages = Vec::new();
        let mut clock = Instant::now();
        let mut lap = |stage: StageName, timings: &mut BTreeMap<StageName, f64>| {
            timings.insert(stage, clock.elapsed().as_secs_f64() * 1e3);
            clock = Instant::now();
        };
        let record = |stage, i: u128, o: u128, skipped| StageRecord {
            stage,
            options_in: u64_of(i),
            options_out: u64_of(o),
            skipped,
        };

        notify(StageName::Enumerate, &stages);
        let count = self.count().map_err(|e| e.at(StageName::Enumerate))?;
        stages.push(record(StageName::Enumerate, count.options, count.options, false));
        lap(StageName::Enumerate, &mut timings);

        notify(StageName::BestPractices, &stages);
        let prune = self.prune().map_err(|e| e.at(StageName::BestPractices))?;
        stages.push(record(StageName::BestPractices, count.options, prune.options, false));
        lap(StageName::BestPractices, &mut timings);

        notify(StageName::Feasibility, &stages);
        let sim = self.simulate(&prune).map_err(|e| e.at(StageName::Feasibility))?;
        stages.push(record(StageName::Feasibility, sim.options, sim.resource_feasible, false));
        lap(StageName::Feasibility, &mut timings);

        notify(StageName::Slo, &stages);
        let conforming = sim.slo_conforming as u128;
        stages.push(record(StageName::Slo, sim.resource_feasible, conforming, false));
        lap(StageName::Slo, &mut timings);

        notify(StageName::Percentile, &stages);
        let short = self.shortlist(&sim).map_err(|e| e.at(StageName::Percentile))?;
        stages.push(record(StageName::Percentile, conforming, short.len() as u128, false));
        lap(StageName::Percentile, &mut timings);

        notify(StageName::Emulation, &stages);
        let n = short.len() as u128;
        let emulation = if self.config.emulation.enabled && !short.is_empty() {
            let e = self.emulate(&short).map_err(|e| e.at(StageName::Emulation))?;
            stages.push(record(StageName::Emulation, n, e.slo_conforming() as u128, false));
            Some(e)
        } else {
            stages.push(record(StageName::Emulation, n, n, !self.config.emulation.enabled));
            None
        };
        lap(StageName::Emulation, &mut timings);

        notify(StageName::Final, &stages);
        let pick = match &emulation {
            Some(e) => e
                .comparison
                .ranking
                .first()
                .filter(|r| r.slos_met)
                .map(|r| {
                    let rec = short.iter().find(|s| s.option_id == r.option_id).expect("emulated from shortlist");
                    (
                        rec,
                        Some(EmulationVerdict {
                            rank: r.rank,
                            slos_met: r.slos_met,
                        }),
                    )
                }),
            None => short.first().map(|r| (r, None)),
        };
        let before = stages.last().map_or(0, |s| s.options_out) as u128;
        stages.push(record(StageName::Final, before, pick.is_some() as u128, false));
        let recommendation = pick.map(|(rec, emulation)| Recommendation {
            option_id: rec.option_id,
            placement: rec.option.placement.clone(),
            hardware: rec.option.hardware.clone(),
            metrics: rec.metrics.clone(),
            emulation,
        });
        lap(StageName::Final, &mut timings);

        let report = FunnelReport {
            stages,
            recommendation,
        };
        self.write("funnel.json", &report.to_document())?;
        let timings: BTreeMap<String, f64> = timings.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        self.write("timings.json", &to_document(&timings))?;
        Ok(report)
    }
}

// Distinct designs of one placement. Hardware picked for nodes hosting no
// service leaves the metrics unchanged, so those options fold into one record.
fn simulate_placement(
    scenario: &Scenario,
    space: &OptionSpace,
    placement: &[usize],
    base: u128,
) -> Result<Vec<SimRecord>, PipelineError> {
    let used: Vec<usize> = {
        let mut u = placement.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    let mut seen: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
    let mut out: Vec<SimRecord> = Vec::new();
    for (k, opt) in space.hardware_choices(placement).enumerate() {
        let key: Vec<Option<usize>> = used.iter().map(|&n| opt.hardware[n]).collect();
        if let Some(&i) = seen.get(&key) {
            out[i].multiplicity += 1;
            continue;
        }
        let metrics = scenario.simulate(&opt)?;
        seen.insert(key, out.len());
        out.push(SimRecord {
            option_id: OptionId(u64_of(base + k as u128)),
            multiplicity: 1,
            option: space.design(&opt).effective(),
            metrics,
        });
    }
    Ok(out)
}

fn records_csv(software: &SoftwareModel, records: &[SimRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["optionId", "multiplicity", "placement", "hardware"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(software.paths.iter().map(|p| format!("{}Ms", p.id)));
    header.extend(
        [
            "processingCostMonth",
            "transmissionCostMonth",
            "totalCostMonth",
            "resourcesOk",
            "slosMet",
            "feasible",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    w.write_record(&header).expect("in-memory");
    for r in records {
        let placement: Vec<String> = r.option.placement.iter().map(|(s, n)| format!("{s}@{n}")).collect();
        let hardware: Vec<String> = r.option.hardware.iter().map(|(n, h)| format!("{n}={h}")).collect();
        let mut row = vec![
            r.option_id.0.to_string(),
            r.multiplicity.to_string(),
            placement.join(";"),
            hardware.join(";"),
        ];
        row.extend(
            software
                .paths
                .iter()
                .map(|p| r.metrics.per_path.get(&p.id).map_or(String::new(), |m| m.end_to_end_ms.to_string())),
        );
        let m = &r.metrics;
        row.extend([
            m.processing_cost_month.to_string(),
            m.transmission_cost_month.to_string(),
            m.total_cost_month.to_string(),
            m.resources_ok().to_string(),
            m.slos_met().to_string(),
            m.feasible.to_string(),
        ]);
        w.write_record(&row).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(|_| PipelineError::MissingArtifact(path.to_path_buf()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::io(path, e))?);
    }
    Ok(out)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let doc = fs::read_to_string(path).map_err(|_| PipelineError::MissingArtifact(path.to_path_buf()))?;
    serde_json::from_str(&doc).map_err(|e| PipelineError::io(path, e))
}
