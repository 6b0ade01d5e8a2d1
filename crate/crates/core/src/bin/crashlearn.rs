use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crashlearn::analysis::{AnalysisOptions, Check, Detectability};
use crashlearn::graph::{DirectedGraph, Limits};
use crashlearn::harness::{self, exit, ExperimentBatch, GATE_MESSAGE};
use crashlearn::observation::{check_assumption1, LikelihoodModel};
use crashlearn::protocol::{run_execution, SimulationConfig};
use crashlearn::{Error, Result};

#[derive(Parser)]
#[command(name = "crashlearn", version, about = "Crash-tolerant distributed hypothesis testing simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct LimitArgs {
    /// Budget for reduced-graph candidates.
    #[arg(long, default_value_t = Limits::default().max_candidates)]
    max_candidates: u64,
}

impl LimitArgs {
    fn limits(self) -> Limits {
        Limits {
            max_candidates: self.max_candidates,
            ..Limits::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one execution and write its trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run checks on a persisted trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        /// `all` or a comma-separated subset of
        /// lemma1,lemma2,thm2,prop1,prop2,prop3,lemma4,psi,thm3.
        #[arg(long, default_value = "all")]
        checks: String,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Run a seeded batch: seeds start at the config's seed.
    Batch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        checks: String,
        #[arg(long, default_value_t = harness::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Do not write per-seed trace files.
        #[arg(long)]
        skip_traces: bool,
        /// Run even if the identifiability gate refuses.
        #[arg(long)]
        override_gate: bool,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Print the detectability report of a graph.
    Detect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        f: usize,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Print the identifiability report of a graph and model.
    Identify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        f: usize,
        #[command(flatten)]
        limits: LimitArgs,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = SimulationConfig::load(&config)?.with_seed(seed);
            let trace = run_execution(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            let trace_path = out.join("trace.jsonl");
            trace.write(&trace_path)?;
            harness::write_trajectory(&trace, &out.join("trajectory.csv"))?;
            let final_mu: Vec<f64> = (0..trace.n()).map(|i| trace.final_mu_theta_star(i)).collect();
            print_json(&json!({
                "seed": seed,
                "T": trace.horizon(),
                "trace": trace_path,
                "survivors": trace.survivors().labels(),
                "final_mu_theta_star": final_mu,
            }))?;
            Ok(exit::OK)
        }
        Command::Analyze {
            trace,
            checks,
            out,
            limits,
        } => {
            let checks = Check::parse_list(&checks)?;
            let report = harness::analyze_trace(&trace, &checks, &limits.limits(), &AnalysisOptions::default())?;
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            print_json(&report)?;
            Ok(if report.passed { exit::OK } else { exit::INVARIANT_VIOLATION })
        }
        Command::Batch {
            config,
            seeds,
            out,
            checks,
            threshold,
            skip_traces,
            override_gate,
            limits,
        } => {
            let cfg = SimulationConfig::load(&config)?;
            let mut batch = ExperimentBatch::new(cfg, seeds, out);
            batch.checks = Check::parse_list(&checks)?;
            batch.threshold = threshold;
            batch.persist_traces = !skip_traces;
            batch.override_gate = override_gate;
            batch.limits = limits.limits();
            let summary = harness::run_batch(&batch)?;
            if !summary.gate.passed {
                eprintln!(
                    "{GATE_MESSAGE}: {}",
                    summary.gate.reason.as_deref().unwrap_or("unknown reason")
                );
            }
            print_json(&json!({
                "gate": summary.gate,
                "convergence_asserted": summary.convergence_asserted,
                "seeds": summary.seeds.len(),
                "convergence_rate": summary.convergence_rate,
                "psi_slope_rate": summary.psi_slope_rate,
                "check_failures": summary.check_failures,
                "worst_margins": summary.worst_margins,
            }))?;
            Ok(summary.exit_code())
        }
        Command::Detect { graph, f, limits } => {
            let g = DirectedGraph::load(&graph)?;
            let det = Detectability::compute(&g, f, &limits.limits())?;
            print_json(&det.report)?;
            Ok(exit::OK)
        }
        Command::Identify {
            graph,
            model,
            f,
            limits,
        } => {
            let g = DirectedGraph::load(&graph)?;
            let m = LikelihoodModel::load(&model)?;
            let report = check_assumption1(&m, &g, f, &limits.limits())?;
            print_json(&report)?;
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
