use clap::{Parser, Subcommand};
use fogforge_core::pipeline::{explain, PipelineConfig, PipelineError, Session, StageName};
use fogforge_core::simulator::SimRecord;
use std::path::PathBuf;
use std::process::ExitCode;

/// Design-space exploration for fog and edge deployments.
#[derive(Debug, Parser)]
#[command(name = "fogforge", version)]
struct Cli {
    /// Pipeline configuration document.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Simulation worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Fraction of SLO-conforming designs to shortlist.
    #[arg(long, global = true, value_name = "F")]
    percentile: Option<f64>,
    /// Skip the emulation stage.
    #[arg(long, global = true)]
    no_emulation: bool,
    /// Keep raw per-message latencies in samples.csv.
    #[arg(long, global = true)]
    dump_samples: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Size of the unrestricted design space.
    Count,
    /// Simulate N random options from the pruned space.
    Sample { n: usize },
    /// Apply the best-practice rules.
    Prune,
    /// Simulate every option that survives pruning.
    Simulate,
    /// Select the cheapest SLO-conforming designs from records.jsonl.
    Shortlist,
    /// Benchmark the shortlist on the emulated testbed.
    Emulate,
    /// Run every stage.
    Run,
    /// Explain one option of a finished run.
    Explain { option_id: u64 },
}

#[derive(Debug)]
enum Failure {
    Pipeline(PipelineError),
    Usage(String),
    Empty(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required for this command".into()))?;
    let mut c = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        c.output_dir = out.clone();
    }
    if cli.jobs.is_some() {
        c.jobs = cli.jobs;
    }
    if let Some(p) = cli.percentile {
        c.percentile = p;
    }
    if cli.no_emulation {
        c.emulation.enabled = false;
    }
    if cli.dump_samples {
        c.emulation.dump_samples = true;
    }
    c.validate()?;
    Ok(c)
}

fn print_records(records: &[SimRecord]) {
    for r in records {
        println!(
            "{:>10}  cost {:>10.3}  worst path {:>9.3} ms  {}  {}",
            r.option_id.0,
            r.metrics.total_cost_month,
            r.metrics.worst_path_ms(),
            if r.metrics.feasible { "feasible  " } else { "infeasible" },
            r.option
        );
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Command::Explain { option_id } = cli.command {
        let out = match (&cli.out, &cli.config) {
            (Some(o), _) => o.clone(),
            (None, Some(_)) => config(cli)?.output_dir,
            (None, None) => return Err(Failure::Usage("explain needs --out or --config".into())),
        };
        print!("{}", explain(option_id, &out)?);
        return Ok(());
    }

    let session = Session::from_config(config(cli)?)?;
    match cli.command {
        Command::Count => {
            let c = session.count()?;
            println!("placements {}", c.placements);
            println!("options {}", c.options);
        }
        Command::Sample { n } => print_records(&session.sample(n)?),
        Command::Prune => {
            let p = session.prune()?;
            for (service, nodes) in &p.pruning.candidates.0 {
                let names: Vec<&str> = nodes.iter().map(|n| n.as_str()).collect();
                println!("{service}: {} candidate(s): {}", nodes.len(), names.join(", "));
            }
            println!("options {}", p.options);
        }
        Command::Simulate => {
            let p = session.prune()?;
            let s = session.simulate(&p)?;
            println!("options {}", s.options);
            println!("distinct designs {}", s.records.len());
            println!("resource-feasible {}", s.resource_feasible);
            println!("slo-conforming {}", s.slo_conforming);
        }
        Command::Shortlist => {
            let short = session.shortlist(&session.read_simulation()?)?;
            if short.is_empty() {
                return Err(Failure::Empty("no design meets every SLO".into()));
            }
            print_records(&short);
        }
        Command::Emulate => {
            let short = session.read_shortlist()?;
            if short.is_empty() {
                return Err(Failure::Empty("the shortlist is empty".into()));
            }
            let e = session.emulate(&short)?;
            for r in &e.comparison.ranking {
                println!(
                    "rank {:>2}  option {:>10}  cost {:>10.3}  worst path {:>9.3} ms  SLOs {}",
                    r.rank,
                    r.option_id.0,
                    r.cost_month,
                    r.worst_path_ms,
                    if r.slos_met { "met" } else { "missed" }
                );
            }
            for r in e.results.iter().filter(|r| r.report().is_none()) {
                eprintln!("option {} could not be emulated: {:?}", r.option_id.0, r.outcome);
            }
        }
        Command::Run => {
            let progress = |s: StageName, _: &[_]| eprintln!("stage {s}");
            let report = session.run(Some(&progress))?;
            for s in &report.stages {
                println!(
                    "{:<15} {:>10} -> {:>10}{}",
                    s.stage.to_string(),
                    s.options_in,
                    s.options_out,
                    if s.skipped { "  (skipped)" } else { "" }
                );
            }
            match &report.recommendation {
                Some(r) => {
                    println!("recommended option {}", r.option_id.0);
                    for (svc, node) in &r.placement {
                        println!("  {svc} on {node} ({})", r.hardware[node]);
                    }
                    println!("  cost per month {:.3}", r.metrics.total_cost_month);
                }
                None => return Err(Failure::Empty("no design survives every stage".into())),
            }
        }
        Command::Explain { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Empty(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}
