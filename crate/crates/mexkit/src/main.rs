use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use mexkit::gateway::serve;
use mexkit::harness::report::{parse_csv_report, parse_json_report};
use mexkit::harness::serve_config::GatewayConfig;
use mexkit::harness::{self, emit_report, AttackConfig, CheckpointMeta, Harness, ReportFormat, RunOptions};
use mexkit::oracle::{Budget, NetworkVictim, Oracle, OracleConfig, ValidityGate};
use mexkit::retro::{diff_report, ingest_snapshot, result_fidelity, DiffInputs};
use mexkit::{MexError, Result};

/// Model-extraction benchmark runner.
#[derive(Parser)]
#[command(name = "mexkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more attack configs and print a report.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory for results, checkpoints, traces and logs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Response cache to read and update.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Experiments run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Rerun a config entirely from a response cache, spending no budget.
    Replay {
        config: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Render saved results (JSON or CSV) as json, csv or table.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Compare two historical snapshots.
    RetroDiff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        year_a: Option<String>,
        #[arg(long)]
        year_b: Option<String>,
        /// Attack result against the first year's API, for the fidelity delta.
        #[arg(long, requires = "result_b")]
        result_a: Option<PathBuf>,
        #[arg(long, requires = "result_a")]
        result_b: Option<PathBuf>,
    },
    /// Serve a victim over HTTP.
    Serve { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { configs, out, cache, jobs, format } => {
            let format: ReportFormat = format.parse()?;
            let harnesses = configs
                .iter()
                .map(|p| Harness::new(AttackConfig::load(p)?))
                .collect::<Result<Vec<_>>>()?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir).map_err(|e| MexError::io(dir, e))?;
                for (i, h) in harnesses.iter().enumerate() {
                    if let Some(net) = h.victim_network() {
                        let meta = CheckpointMeta { role: "victim".into(), seed: 0, epochs: 0, optimizer: None };
                        harness::Checkpoint::of(net, meta).save(&dir.join(format!("victim-{i:02}.json")))?;
                    }
                }
            }
            let opts = RunOptions { cache, replay: false, out_dir: out };
            let results = if harnesses.len() == 1 {
                vec![harnesses[0].run(&opts)]
            } else {
                harness::run_experiments(&harnesses, &opts, jobs)
            };
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            print!("{}", emit_report(&results, format)?);
            Ok(())
        }
        Command::Replay { config, cache, out, format } => {
            let format: ReportFormat = format.parse()?;
            let h = Harness::new(AttackConfig::load(&config)?)?;
            let result = h.run(&RunOptions { cache: Some(cache), replay: true, out_dir: out })?;
            print!("{}", emit_report(&[result], format)?);
            Ok(())
        }
        Command::Report { results, format } => {
            let format: ReportFormat = format.parse()?;
            let mut all = Vec::new();
            for p in &results {
                all.extend(read_results(p)?);
            }
            print!("{}", emit_report(&all, format)?);
            Ok(())
        }
        Command::RetroDiff { a, b, year_a, year_b, result_a, result_b } => {
            let sa = ingest_snapshot(&a)?;
            let sb = ingest_snapshot(&b)?;
            let fidelity = match (result_a, result_b) {
                (Some(ra), Some(rb)) => Some((result_fidelity(&ra)?, result_fidelity(&rb)?)),
                _ => None,
            };
            let report = diff_report(&DiffInputs {
                a: &sa,
                b: &sb,
                year_a: year_a.as_deref(),
                year_b: year_b.as_deref(),
                fidelity,
            })?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            Ok(())
        }
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(&config)?;
            let net = harness::build_victim(&cfg.victim)?.ok_or(MexError::ModelNotLoaded)?;
            let shape = net.spec().input;
            let gate = cfg.oracle.gate.clone().map(|mut g| {
                g.shape = Some(shape);
                Box::new(g) as Box<dyn ValidityGate>
            });
            let oracle = Oracle::new(
                Arc::new(NetworkVictim::new(net)),
                OracleConfig {
                    attack: Budget::new(cfg.budget.batches, cfg.budget.batch_size),
                    evaluation: Budget::new(0, cfg.budget.batch_size),
                    costs: cfg.oracle.costs.clone(),
                    gate,
                    label_map: cfg.oracle.label_map.clone(),
                },
            );
            if let Some(c) = &cfg.cache {
                let n = oracle.load_cache(c)?;
                eprintln!("loaded {n} cached responses");
            }
            if let Some(l) = &cfg.log {
                oracle.attach_log(l)?;
            }
            let handle = serve(Arc::new(oracle), &cfg.bind, cfg.accounts.clone())?;
            println!("listening on {}", handle.endpoint());
            handle.wait();
            Ok(())
        }
    }
}

fn read_results(path: &Path) -> Result<Vec<harness::ExperimentResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "csv") {
        parse_csv_report(&text)
    } else {
        parse_json_report(&text)
    }
}
