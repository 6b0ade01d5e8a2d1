//! Seeded experiment batches: simulate, verify, persist and summarise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{analyze, AnalysisOptions, Check, DecayParams, Detectability, VerificationReport};
use crate::error::{Error, Result};
use crate::graph::Limits;
use crate::observation::{identifiability_over, IdentifiabilityReport};
use crate::protocol::{run_execution, ExecutionTrace, SimulationConfig};
pub use crate::protocol::DEFAULT_HORIZON;

pub const DEFAULT_THRESHOLD: f64 = 0.99;
pub const GATE_MESSAGE: &str = "identifiability precondition failed";

/// Process exit statuses shared by the CLI and the batch summary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const INVARIANT_VIOLATION: i32 = 2;
    pub const CONVERGENCE_MISS: i32 = 3;
    pub const GATE_REFUSED: i32 = 4;
}

#[derive(Debug, Clone)]
pub struct ExperimentBatch {
    /// Template; each run replaces its seed.
    pub config: SimulationConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub checks: Vec<Check>,
    pub threshold: f64,
    /// Write `trace.jsonl` per seed.
    pub persist_traces: bool,
    /// Run even when the identifiability gate refuses; convergence is then
    /// reported but not asserted.
    pub override_gate: bool,
    pub limits: Limits,
    pub options: AnalysisOptions,
}

impl ExperimentBatch {
    /// Seeds `base .. base + count` with default settings.
    pub fn new(config: SimulationConfig, count: u64, out_dir: impl Into<PathBuf>) -> Self {
        let base = config.seed;
        Self {
            config,
            seeds: (base..base + count).collect(),
            out_dir: out_dir.into(),
            checks: Check::ALL.to_vec(),
            threshold: DEFAULT_THRESHOLD,
            persist_traces: true,
            override_gate: false,
            limits: Limits::default(),
            options: AnalysisOptions::default(),
        }
    }
}

/// Outcome of the detectability and identifiability preconditions.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub condition1: bool,
    pub assumption1: bool,
    pub passed: bool,
    pub overridden: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub worst_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: u64,
    /// 1-based labels of agents that crashed within the horizon.
    pub crashed: Vec<usize>,
    pub converged: bool,
    pub min_mu_theta_star: f64,
    pub max_mu_theta_star: f64,
    /// Final `μ(θ*)` per agent (last recorded value for crashed agents).
    pub final_mu_theta_star: Vec<f64>,
    /// Whether `ψ_T^i(θ)/T <= −C1 ξ^{nχ}/2` for every survivor and
    /// alternative; `None` when the drift constant is unavailable.
    pub psi_slope_ok: Option<bool>,
    pub trace_valid: bool,
    pub checks: BTreeMap<String, CheckOutcome>,
}

impl SeedSummary {
    pub fn checks_passed(&self) -> bool {
        self.trace_valid && self.checks.values().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub gate: GateReport,
    /// Convergence misses only affect the exit status when this is set.
    pub convergence_asserted: bool,
    pub threshold: f64,
    pub seeds: Vec<SeedSummary>,
    pub convergence_rate: f64,
    pub psi_slope_rate: Option<f64>,
    /// Smallest per-seed margin for each check.
    pub worst_margins: BTreeMap<String, f64>,
    /// Number of seeds on which each check failed.
    pub check_failures: BTreeMap<String, usize>,
    pub identifiability: Option<IdentifiabilityReport>,
}

impl BatchSummary {
    pub fn exit_code(&self) -> i32 {
        if !self.gate.passed && !self.gate.overridden {
            exit::GATE_REFUSED
        } else if self.seeds.iter().any(|s| !s.checks_passed()) {
            exit::INVARIANT_VIOLATION
        } else if self.convergence_asserted && self.seeds.iter().any(|s| !s.converged) {
            exit::CONVERGENCE_MISS
        } else {
            exit::OK
        }
    }
}

/// Evaluates detectability and global identifiability for a config.
pub fn precondition_gate(
    cfg: &SimulationConfig,
    det: &Detectability,
) -> (GateReport, Option<IdentifiabilityReport>) {
    let condition1 = det.report.condition1_holds;
    let ident = if condition1 {
        identifiability_over(&cfg.model, &det.reduced).ok()
    } else {
        None
    };
    let assumption1 = ident.as_ref().is_some_and(|r| r.assumption1_ok);
    let reason = match (condition1, assumption1) {
        (false, _) => Some("detectability condition does not hold".to_string()),
        (true, false) => Some("global identifiability does not hold".to_string()),
        _ => None,
    };
    let gate = GateReport {
        condition1,
        assumption1,
        passed: condition1 && assumption1,
        overridden: false,
        reason,
    };
    (gate, ident)
}

/// `ψ_T^i(θ)/T <= −C1 ξ^{nχ}/2` for every survivor and `θ ≠ θ*`, in log space.
pub fn psi_slope_within_bound(trace: &ExecutionTrace, c1: f64, params: &DecayParams) -> bool {
    let horizon = trace.horizon();
    if horizon == 0 || c1 <= 0.0 {
        return false;
    }
    let target = c1.ln() + params.ln_x - 2f64.ln() + (horizon as f64).ln();
    trace.survivors().iter().all(|i| {
        let b = trace.final_log_belief(i);
        (0..trace.m())
            .filter(|&h| h != trace.theta_star)
            .all(|h| {
                let psi = b[h] - b[trace.theta_star];
                psi < 0.0 && (-psi).ln() >= target - 1e-9
            })
    })
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Writes `t, agent, mu_theta_star` for every agent in `N̄[t]`.
pub fn write_trajectory(trace: &ExecutionTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "agent", "mu_theta_star"])?;
    for step in trace.steps() {
        for i in step.alive_end().iter() {
            let a = step.agents[i].as_ref().expect("alive agent has a record");
            let mu = a.log_belief[trace.theta_star].exp();
            w.write_record([step.t.to_string(), (i + 1).to_string(), mu.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run_seed(
    batch: &ExperimentBatch,
    det: &Detectability,
    ident: Option<&IdentifiabilityReport>,
    seed: u64,
) -> Result<SeedSummary> {
    let cfg = batch.config.with_seed(seed);
    let trace = run_execution(&cfg)?;
    let report = analyze(&trace, &batch.checks, det, &batch.options)?;

    let dir = seed_dir(&batch.out_dir, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if batch.persist_traces {
        trace.write(&dir.join("trace.jsonl"))?;
    }
    write_json(&dir.join("report.json"), &report)?;
    write_trajectory(&trace, &dir.join("trajectory.csv"))?;

    let n = trace.n();
    let final_mu: Vec<f64> = (0..n).map(|i| trace.final_mu_theta_star(i)).collect();
    let survivors = trace.survivors();
    let surv_mu: Vec<f64> = survivors.iter().map(|i| final_mu[i]).collect();
    let min_mu = surv_mu.iter().copied().fold(f64::INFINITY, f64::min);
    let max_mu = surv_mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = DecayParams::from_detectability(det);
    let psi_slope_ok = ident
        .filter(|r| r.assumption1_ok && r.c1.is_finite())
        .map(|r| psi_slope_within_bound(&trace, r.c1, &params));
    Ok(SeedSummary {
        seed,
        horizon: trace.horizon(),
        crashed: trace.crashes().iter().map(|&(i, _)| i + 1).collect(),
        converged: !survivors.is_empty() && min_mu >= batch.threshold,
        min_mu_theta_star: min_mu,
        max_mu_theta_star: max_mu,
        final_mu_theta_star: final_mu,
        psi_slope_ok,
        trace_valid: report.trace_violations.is_empty(),
        checks: outcomes(&report),
    })
}

fn outcomes(report: &VerificationReport) -> BTreeMap<String, CheckOutcome> {
    report
        .checks
        .iter()
        .map(|(k, c)| {
            (
                k.clone(),
                CheckOutcome {
                    passed: c.passed,
                    skipped: c.skipped.clone(),
                    worst_margin: c.worst_margin,
                },
            )
        })
        .collect()
}

/// Runs every seed (in parallel), persists per-seed artefacts and the
/// aggregate summary. When the gate refuses and is not overridden, no seed
/// is run and the summary records the refusal.
pub fn run_batch(batch: &ExperimentBatch) -> Result<BatchSummary> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = batch.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::InvalidConfig(format!("seed {dup} listed twice")));
    }
    batch.config.validate()?;
    fs::create_dir_all(&batch.out_dir).map_err(|e| Error::io(&batch.out_dir, e))?;

    let det = Detectability::compute(&batch.config.graph, batch.config.f, &batch.limits)?;
    let (mut gate, ident) = precondition_gate(&batch.config, &det);
    gate.overridden = !gate.passed && batch.override_gate;
    let runnable = gate.passed || gate.overridden;

    let seeds: Vec<SeedSummary> = if runnable {
        batch
            .seeds
            .par_iter()
            .map(|&s| run_seed(batch, &det, ident.as_ref(), s))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let summary = aggregate(gate, ident, batch.threshold, seeds);
    report_metrics(&summary, &batch.out_dir)?;
    Ok(summary)
}

fn aggregate(
    gate: GateReport,
    ident: Option<IdentifiabilityReport>,
    threshold: f64,
    seeds: Vec<SeedSummary>,
) -> BatchSummary {
    let count = seeds.len().max(1) as f64;
    let convergence_rate = seeds.iter().filter(|s| s.converged).count() as f64 / count;
    let slopes: Vec<bool> = seeds.iter().filter_map(|s| s.psi_slope_ok).collect();
    let psi_slope_rate =
        (!slopes.is_empty()).then(|| slopes.iter().filter(|&&b| b).count() as f64 / slopes.len() as f64);
    let mut worst_margins: BTreeMap<String, f64> = BTreeMap::new();
    let mut check_failures: BTreeMap<String, usize> = BTreeMap::new();
    for s in &seeds {
        for (k, c) in &s.checks {
            if let Some(m) = c.worst_margin {
                let e = worst_margins.entry(k.clone()).or_insert(m);
                *e = e.min(m);
            }
            let e = check_failures.entry(k.clone()).or_insert(0);
            if !c.passed {
                *e += 1;
            }
        }
    }
    BatchSummary {
        convergence_asserted: gate.passed,
        gate,
        threshold,
        seeds,
        convergence_rate,
        psi_slope_rate,
        worst_margins,
        check_failures,
        identifiability: ident,
    }
}

/// Writes `summary.csv` (one row per seed) and `summary.json` (everything).
pub fn report_metrics(summary: &BatchSummary, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("summary.json"), summary)?;
    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let n = summary.seeds.first().map_or(0, |s| s.final_mu_theta_star.len());
    let mut header = vec![
        "seed".to_string(),
        "T".into(),
        "converged".into(),
        "min_mu_theta_star".into(),
        "psi_slope_ok".into(),
        "checks_passed".into(),
        "crashed".into(),
    ];
    header.extend((1..=n).map(|i| format!("mu_theta_star_{i}")));
    w.write_record(&header)?;
    for s in &summary.seeds {
        let mut row = vec![
            s.seed.to_string(),
            s.horizon.to_string(),
            s.converged.to_string(),
            s.min_mu_theta_star.to_string(),
            s.psi_slope_ok.map_or(String::new(), |b| b.to_string()),
            s.checks_passed().to_string(),
            s.crashed.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        ];
        row.extend(s.final_mu_theta_star.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads a persisted trace and runs the selected checks on it.
pub fn analyze_trace(
    trace_path: &Path,
    checks: &[Check],
    limits: &Limits,
    options: &AnalysisOptions,
) -> Result<VerificationReport> {
    let trace = ExecutionTrace::read(trace_path)?;
    if checks.is_empty() {
        return analyze(&trace, checks, &empty_detectability(&trace), options);
    }
    let det = Detectability::compute(&trace.graph, trace.f, limits)?;
    analyze(&trace, checks, &det, options)
}

/// Placeholder detectability data; only valid with an empty check list.
fn empty_detectability(trace: &ExecutionTrace) -> Detectability {
    Detectability {
        report: crate::graph::DetectabilityReport {
            n: trace.n(),
            f: trace.f,
            condition1_holds: false,
            condition2_holds: false,
            chi: 0,
            gamma: 0,
            xi_denominator: 1,
            xi: 1.0,
            condition1_witness: None,
            condition2_witness: None,
        },
        reduced: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedGraph;
    use crate::observation::LikelihoodModel;
    use crate::protocol::AdversaryConfig;

    fn single_agent(horizon: u64) -> SimulationConfig {
        SimulationConfig::new(
            DirectedGraph::new(1, []).unwrap(),
            LikelihoodModel::bernoulli(&[(0.3, 0.7)]).unwrap(),
            0,
            1,
            horizon,
            0,
            AdversaryConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_agent_batch_converges_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let batch = ExperimentBatch::new(single_agent(300), 1, dir.path());
        let s = run_batch(&batch).unwrap();
        assert!(s.gate.passed);
        assert_eq!(s.seeds.len(), 1);
        assert!(s.seeds[0].converged, "{:?}", s.seeds[0]);
        assert!(s.seeds[0].checks_passed(), "{:?}", s.seeds[0].checks);
        assert_eq!(s.exit_code(), exit::OK);
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        let traj = fs::read_to_string(dir.path().join("seed-0/trajectory.csv")).unwrap();
        assert_eq!(traj.lines().count(), 1 + 300);
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut batch = ExperimentBatch::new(single_agent(5), 1, dir.path());
        batch.seeds = vec![3, 3];
        assert!(matches!(run_batch(&batch), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn uninformative_model_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = single_agent(5);
        cfg.model = LikelihoodModel::bernoulli(&[(0.5, 0.5)]).unwrap();
        let mut batch = ExperimentBatch::new(cfg, 2, dir.path());
        let s = run_batch(&batch).unwrap();
        assert!(!s.gate.passed && s.seeds.is_empty());
        assert_eq!(s.exit_code(), exit::GATE_REFUSED);
        batch.override_gate = true;
        let s = run_batch(&batch).unwrap();
        assert_eq!(s.seeds.len(), 2);
        assert!(!s.convergence_asserted);
        assert!(s.seeds.iter().all(|x| !x.converged));
    }
}
