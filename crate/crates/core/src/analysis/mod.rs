//! Update matrices, backward products and the numerical checks that are run
//! against recorded traces.

pub mod checks;
pub mod matrix;
pub mod pseudo;
pub mod theorem3;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

pub use checks::{estimate_pi, DecayParams, PiEstimate};
pub use matrix::{
    backward_product, build_update_matrices, build_update_matrix, ergodic_coefficients, left_multiply,
    right_multiply, support_product, ErgodicCoefficients, UpdateMatrix,
};
pub use pseudo::{likelihood_ratio_vector, pseudo_belief_evolution, psi, psi_recursion_check, PseudoBeliefs, PsiResiduals};
pub use theorem3::{decompose_psi, drift_within_bound, series_constant, Decomposition, DecompositionPoint};

use crate::error::{Error, Result};
use crate::graph::{detectability_report, DetectabilityReport, DirectedGraph, Limits, ReducedGraph};
use crate::observation::identifiability_over;
use crate::protocol::ExecutionTrace;

/// Tolerance for `μ̃ = μ` on agents that complete an iteration.
pub const PSEUDO_TOL: f64 = 1e-9;
/// Relative tolerance for the `ψ` recursion and its expansions.
pub const PSI_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    Lemma1,
    Lemma2,
    Thm2,
    Prop1,
    Prop2,
    Prop3,
    Lemma4,
    Psi,
    Thm3,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Lemma1,
        Check::Lemma2,
        Check::Thm2,
        Check::Prop1,
        Check::Prop2,
        Check::Prop3,
        Check::Lemma4,
        Check::Psi,
        Check::Thm3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Lemma1 => "lemma1",
            Check::Lemma2 => "lemma2",
            Check::Thm2 => "thm2",
            Check::Prop1 => "prop1",
            Check::Prop2 => "prop2",
            Check::Prop3 => "prop3",
            Check::Lemma4 => "lemma4",
            Check::Psi => "psi",
            Check::Thm3 => "thm3",
        }
    }

    /// Parses a comma-separated list; `all` expands to every check and an
    /// empty string to none.
    pub fn parse_list(s: &str) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Check::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown check {s:?}")))
    }
}

/// Sampling knobs for [`analyze`].
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub lemma2_triples: usize,
    /// Check the `ψ` expansion at every iteration up to this horizon, and at
    /// `expansion_samples` evenly spaced iterations beyond it.
    pub expansion_full_until: u64,
    pub expansion_samples: u64,
    pub theorem3_checkpoints: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            lemma2_triples: 50,
            expansion_full_until: 200,
            expansion_samples: 25,
            theorem3_checkpoints: 10,
        }
    }
}

/// Detectability data for one `(graph, f)`, computed once and shared.
#[derive(Debug, Clone)]
pub struct Detectability {
    pub report: DetectabilityReport,
    pub reduced: Vec<ReducedGraph>,
}

impl Detectability {
    pub fn compute(g: &DirectedGraph, f: usize, limits: &Limits) -> Result<Self> {
        let (report, reduced) = detectability_report(g, f, limits)?;
        Ok(Self { report, reduced })
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    /// Number of individual inequalities or points evaluated.
    pub evaluated: u64,
    /// Smallest slack seen; negative beyond tolerance means a violation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
}

impl CheckResult {
    pub fn new() -> Self {
        Self {
            passed: true,
            skipped: None,
            evaluated: 0,
            worst_margin: None,
            witness: None,
            details: BTreeMap::new(),
        }
    }

    pub fn skipped(reason: impl Into<String>) -> Self {
        Self {
            skipped: Some(reason.into()),
            ..Self::new()
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            passed: false,
            witness: Some(json!(reason.into())),
            ..Self::new()
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

impl Default for CheckResult {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace_violations: Vec<String>,
    pub checks: BTreeMap<String, CheckResult>,
}

impl VerificationReport {
    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|(_, c)| !c.passed)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

fn expansion_points(horizon: u64, opts: &AnalysisOptions) -> Vec<u64> {
    if horizon <= opts.expansion_full_until {
        return (1..=horizon).collect();
    }
    let k = opts.expansion_samples.max(1);
    let mut v: Vec<u64> = (1..=k).map(|j| (j * horizon / k).max(1)).collect();
    v.dedup();
    v
}

fn theorem3_points(horizon: u64, k: u64) -> Vec<u64> {
    let k = k.max(1);
    let mut v: Vec<u64> = (1..=k).map(|j| j * horizon / k).filter(|&t| t >= 1).collect();
    v.dedup();
    v
}

fn psi_check(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    pseudo: &PseudoBeliefs,
    opts: &AnalysisOptions,
) -> CheckResult {
    let mut res = CheckResult::new();
    let points = expansion_points(trace.horizon(), opts);
    let mut rows = Vec::new();
    for theta in (0..trace.m()).filter(|&h| h != trace.theta_star) {
        let r = psi_recursion_check(trace, matrices, pseudo, theta, &points);
        let scale = 1.0 + r.max_abs_l * trace.horizon() as f64;
        let psi_slack = PSI_TOL * scale - r.recursion.max(r.expansion);
        let pseudo_slack = PSEUDO_TOL - r.pseudo_identity;
        res.evaluated += trace.horizon() + points.len() as u64;
        let slack = psi_slack.min(pseudo_slack);
        if res.worst_margin.is_none_or(|w| slack < w) {
            res.worst_margin = Some(slack);
        }
        if psi_slack < 0.0 || pseudo_slack < 0.0 || r.initial != 0.0 {
            res.passed = false;
        }
        rows.push(json!({"theta": trace.model.hypotheses()[theta], "residuals": r}));
    }
    res.detail("per_hypothesis", rows);
    res
}

fn theorem3_check(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    pseudo: &PseudoBeliefs,
    det: &Detectability,
    params: &DecayParams,
    opts: &AnalysisOptions,
) -> CheckResult {
    if !det.report.condition1_holds {
        return CheckResult::skipped("detectability condition does not hold");
    }
    let ident = match identifiability_over(&trace.model, &det.reduced) {
        Ok(r) => r,
        Err(e) => return CheckResult::skipped(e.to_string()),
    };
    if !ident.assumption1_ok {
        return CheckResult::skipped("global identifiability does not hold");
    }
    let checkpoints = theorem3_points(trace.horizon(), opts.theorem3_checkpoints);
    let mut res = CheckResult::new();
    let mut decomps = Vec::new();
    let mut worst_residual = 0.0f64;
    for theta in (0..trace.m()).filter(|&h| h != trace.theta_star) {
        let d = match decompose_psi(trace, matrices, pseudo, &ident, params, theta, &checkpoints) {
            Ok(d) => d,
            Err(e) => return CheckResult::failed(e.to_string()),
        };
        for (i, &hi) in d.h.iter().enumerate() {
            if hi > 0.0 || hi < -d.c0 - 1e-12 {
                res.passed = false;
                res.witness.get_or_insert(json!({"theta": d.theta, "agent": i + 1, "h": hi, "c0": d.c0}));
            }
        }
        for p in &d.points {
            res.evaluated += 1;
            worst_residual = worst_residual.max(p.residual);
            if p.residual > PSI_TOL * p.psi.abs().max(1.0) {
                res.passed = false;
                res.witness.get_or_insert(json!({"theta": d.theta, "residual": p}));
            }
            if p.fluctuation_phi.abs() > d.fluctuation_bound {
                res.passed = false;
                res.witness.get_or_insert(json!({"theta": d.theta, "fluctuation": p, "bound": d.fluctuation_bound}));
            }
            if !drift_within_bound(p.drift, d.c1, params, p.t) {
                res.passed = false;
                res.witness.get_or_insert(json!({"theta": d.theta, "drift": p}));
            }
        }
        decomps.push(d);
    }
    res.detail("max_residual", worst_residual);
    res.detail("decompositions", decomps);
    res
}

/// Runs the selected checks on a trace. Trace invariants are validated
/// first; if they fail, every other check is skipped.
pub fn analyze(
    trace: &ExecutionTrace,
    checks: &[Check],
    det: &Detectability,
    opts: &AnalysisOptions,
) -> Result<VerificationReport> {
    if checks.is_empty() {
        return Ok(VerificationReport {
            passed: true,
            trace_violations: Vec::new(),
            checks: BTreeMap::new(),
        });
    }
    if det.report.n != trace.n() || det.report.f != trace.f {
        return Err(Error::InvalidConfig(format!(
            "detectability data is for n = {}, f = {} but the trace has n = {}, f = {}",
            det.report.n,
            det.report.f,
            trace.n(),
            trace.f
        )));
    }
    let violations = trace.validate();
    let mut out = BTreeMap::new();
    if !violations.is_empty() {
        for c in checks {
            out.insert(c.name().to_string(), CheckResult::skipped("trace invariants violated"));
        }
        return Ok(VerificationReport {
            passed: false,
            trace_violations: violations,
            checks: out,
        });
    }

    let matrices = build_update_matrices(trace);
    let params = DecayParams::from_detectability(det);
    let stride = (trace.horizon() / 100).max(1);
    let pseudo = checks
        .iter()
        .any(|c| matches!(c, Check::Psi | Check::Thm3))
        .then(|| pseudo_belief_evolution(trace));

    for &c in checks {
        let r = match c {
            Check::Lemma1 => checks::verify_lemma1(trace, &matrices, stride.max(trace.horizon() / 50)),
            Check::Lemma2 => checks::verify_lemma2(trace, &matrices, opts.lemma2_triples),
            Check::Thm2 => checks::verify_theorem2(trace, &matrices, &params, stride),
            Check::Prop1 => checks::verify_proposition1(trace, &matrices, det),
            Check::Prop2 => checks::verify_proposition2(trace, &matrices, stride),
            Check::Prop3 => checks::verify_proposition3(trace, &matrices, &params, stride),
            Check::Lemma4 => checks::verify_lemma4(trace, &matrices, det, &params),
            Check::Psi => psi_check(trace, &matrices, pseudo.as_ref().expect("computed above"), opts),
            Check::Thm3 => theorem3_check(
                trace,
                &matrices,
                pseudo.as_ref().expect("computed above"),
                det,
                &params,
                opts,
            ),
        };
        out.insert(c.name().to_string(), r);
    }
    Ok(VerificationReport {
        passed: out.values().all(|c| c.passed),
        trace_violations: Vec::new(),
        checks: out,
    })
}
