use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use super::matrix::{ergodic_coefficients, left_multiply, UpdateMatrix};
use super::{CheckResult, Detectability};
use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::protocol::ExecutionTrace;
use crate::rng::{substream, Purpose};

/// Absolute slack allowed on floating-point inequalities.
pub const TOL: f64 = 1e-12;

/// The decay constants `nχ`, `ln ξ^{nχ}` and `f` shared by the ergodicity
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayParams {
    pub n_chi: u64,
    /// `ln ξ^{nχ}`; `ξ^{nχ}` itself underflows for most graphs.
    pub ln_x: f64,
    pub f: u64,
}

impl DecayParams {
    pub fn from_detectability(det: &Detectability) -> Self {
        Self {
            n_chi: det.report.n_chi(),
            ln_x: det.report.ln_xi_pow_nchi(),
            f: det.report.f as u64,
        }
    }

    /// `min{1, (1 − ξ^{nχ})^{⌊span/nχ⌋ − f}}`.
    pub fn bound(&self, span: u64) -> f64 {
        let e = (span / self.n_chi) as i64 - self.f as i64;
        if e <= 0 {
            return 1.0;
        }
        let x = self.ln_x.exp();
        (e as f64 * (-x).ln_1p()).exp()
    }

    /// Whether `value >= ξ^{nχ}`, compared in log space.
    pub fn at_least_x(&self, value: f64) -> bool {
        value > 0.0 && value.ln() >= self.ln_x - 1e-9
    }
}

/// `lo, lo + stride, …` up to and including `hi`.
pub fn grid(lo: u64, hi: u64, stride: u64) -> Vec<u64> {
    if lo > hi {
        return Vec::new();
    }
    let mut v: Vec<u64> = (lo..=hi).step_by(stride.max(1) as usize).collect();
    if v.last() != Some(&hi) {
        v.push(hi);
    }
    v
}

/// The restriction points `{1, ⌊T/4⌋, ⌊T/2⌋}` (deduplicated, at least 1).
pub fn restriction_points(horizon: u64) -> Vec<u64> {
    let set: BTreeSet<u64> = [1, horizon / 4, horizon / 2]
        .into_iter()
        .map(|r| r.max(1))
        .filter(|&r| r <= horizon)
        .collect();
    set.into_iter().collect()
}

fn step_matrix(matrices: &[UpdateMatrix], t: u64) -> &UpdateMatrix {
    &matrices[(t - 1) as usize]
}

/// Largest `|Φ_ik − Φ_jk|` over `i, j` in `rows` and every column `k`.
fn row_spread(phi: &Array2<f64>, rows: NodeSet) -> (f64, Option<(usize, usize, usize)>) {
    let mut worst = 0.0;
    let mut at = None;
    for k in 0..phi.ncols() {
        let mut lo = (f64::INFINITY, 0);
        let mut hi = (f64::NEG_INFINITY, 0);
        for i in rows.iter() {
            let v = phi[[i, k]];
            if v < lo.0 {
                lo = (v, i);
            }
            if v > hi.0 {
                hi = (v, i);
            }
        }
        if hi.0 - lo.0 > worst {
            worst = hi.0 - lo.0;
            at = Some((hi.1, lo.1, k));
        }
    }
    (worst, at)
}

fn update_min(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.map_or(v, |s: f64| s.min(v)));
}

/// Every `A[t]` dominates `ξ H` for some reduced graph `H` (with self-loops
/// on surviving nodes), compared exactly in rationals.
pub fn verify_proposition1(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    det: &Detectability,
) -> CheckResult {
    let xi = Ratio::new(1i64, det.report.xi_denominator as i64);
    let adjacency: Vec<Vec<NodeSet>> = det.reduced.iter().map(|h| h.adjacency_rows()).collect();
    let mut cache: HashMap<Vec<u64>, Option<usize>> = HashMap::new();
    let mut res = CheckResult::new();
    let mut failures = Vec::new();
    let mut failures_total = 0u64;
    let mut failures_at_crash = 0u64;
    for a in matrices {
        res.evaluated += 1;
        let supports = a.supports();
        let key: Vec<u64> = supports.iter().map(|s| s.0).collect();
        let found = *cache.entry(key).or_insert_with(|| {
            adjacency.iter().position(|rows| {
                rows.iter().enumerate().all(|(i, hr)| {
                    hr.is_subset(supports[i]) && hr.iter().all(|j| a.entry(i, j) >= xi)
                })
            })
        });
        if found.is_none() {
            failures_total += 1;
            let step = trace.step(a.t);
            let crashed = step.alive_start().difference(step.alive_end());
            if !crashed.is_empty() {
                failures_at_crash += 1;
            }
            if failures.len() < 20 {
                let used: Vec<usize> = crashed
                    .iter()
                    .filter(|&c| {
                        step.alive_end()
                            .iter()
                            .any(|i| step.agents[i].as_ref().and_then(|s| s.quorum.as_ref()).is_some_and(|q| q.contains(&c)))
                    })
                    .map(|c| c + 1)
                    .collect();
                failures.push(json!({
                    "t": a.t,
                    "crashed_during": crashed.labels(),
                    "crashed_messages_used": used,
                }));
            }
        }
    }
    res.passed = failures_total == 0;
    res.detail("failing_iterations", failures_total);
    res.detail("failing_iterations_with_crash", failures_at_crash);
    res.detail("distinct_supports", cache.len());
    if !failures.is_empty() {
        res.witness = Some(json!(failures));
    }
    res
}

/// Start points `t` with `N[t] ≠ V` at which products are checked for the
/// structural zeros: the iteration after each crash plus a stride grid.
fn crash_start_points(trace: &ExecutionTrace, stride: u64) -> Vec<u64> {
    let all = trace.graph.all_nodes();
    let mut set: BTreeSet<u64> = trace
        .crashes()
        .iter()
        .map(|&(_, t)| t + 1)
        .filter(|&t| t <= trace.horizon())
        .collect();
    for t in grid(1, trace.horizon(), stride) {
        if trace.alive_start(t) != all {
            set.insert(t);
        }
    }
    set.into_iter().collect()
}

/// `Φ_ij(t', t) = 0` for `i ∈ N[t]`, `j ∉ N[t]`, and the rows of `N[t]`
/// sum to one over `N[t]`, for every `t' >= t`.
pub fn verify_proposition2(trace: &ExecutionTrace, matrices: &[UpdateMatrix], stride: u64) -> CheckResult {
    let mut res = CheckResult::new();
    let starts = crash_start_points(trace, stride);
    if starts.is_empty() {
        res.detail("vacuous", true);
        return res;
    }
    let n = trace.n();
    let mut witness = None;
    let mut worst_sum_err = 0.0f64;
    for &t in &starts {
        let alive = trace.alive_start(t);
        let dead = trace.graph.all_nodes().difference(alive);
        let mut phi: Array2<f64> = Array2::eye(n);
        let mut sup: Vec<NodeSet> = (0..n).map(NodeSet::singleton).collect();
        for tp in t..=trace.horizon() {
            let a = step_matrix(matrices, tp);
            phi = left_multiply(a, &phi);
            sup = (0..n)
                .map(|i| a.support(i).iter().fold(NodeSet::EMPTY, |acc, j| acc.union(sup[j])))
                .collect();
            res.evaluated += 1;
            for i in alive.iter() {
                for j in dead.iter() {
                    if phi[[i, j]] != 0.0 || sup[i].contains(j) {
                        res.passed = false;
                        witness.get_or_insert(json!({"t_prime": tp, "t": t, "i": i + 1, "j": j + 1, "value": phi[[i, j]]}));
                    }
                }
                let s: f64 = alive.iter().map(|j| phi[[i, j]]).sum();
                worst_sum_err = worst_sum_err.max((s - 1.0).abs());
            }
        }
    }
    if worst_sum_err > TOL {
        res.passed = false;
    }
    res.worst_margin = Some(TOL - worst_sum_err);
    res.detail("start_points", starts.len());
    res.detail("max_row_sum_error", worst_sum_err);
    res.witness = witness;
    res
}

/// Row disagreement of `Φ(t, r)` over `N̄[t]` against the decay bound, at
/// the sampled `(r, t)` pairs. Also checks that crash-free windows of length
/// `nχ` have `η >= ξ^{nχ}`.
pub fn verify_theorem2(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    params: &DecayParams,
    stride: u64,
) -> CheckResult {
    let mut res = CheckResult::new();
    let horizon = trace.horizon();
    let n = trace.n();
    let mut worst_at = None;
    for r in restriction_points(horizon) {
        let mut phi: Array2<f64> = Array2::eye(n);
        for t in r..=horizon {
            phi = left_multiply(step_matrix(matrices, t), &phi);
            if (t - r) % stride != 0 && t != horizon {
                continue;
            }
            let (obs, at) = row_spread(&phi, trace.alive_end(t));
            let bound = params.bound(t - r + 1);
            let slack = bound - obs;
            res.evaluated += 1;
            if res.worst_margin.is_none_or(|w| slack < w) {
                res.worst_margin = Some(slack);
                worst_at = at.map(|(i, j, k)| json!({"r": r, "t": t, "i": i + 1, "j": j + 1, "k": k + 1, "observed": obs, "bound": bound}));
            }
        }
    }
    res.passed = res.worst_margin.is_none_or(|w| w >= -TOL);
    res.witness = worst_at;

    // Crash-free blocks.
    let len = params.n_chi;
    let mut blocks = 0u64;
    let mut block_failures = 0u64;
    let mut min_ln_eta = f64::INFINITY;
    if len <= horizon {
        for r in grid(1, horizon + 1 - len, stride.max(len / 4).max(1)) {
            let end = r + len - 1;
            if trace.alive_start(r) != trace.alive_end(end) {
                continue;
            }
            let phi = super::matrix::backward_product(matrices, end, r);
            let c = ergodic_coefficients(&phi, trace.alive_start(r));
            blocks += 1;
            min_ln_eta = min_ln_eta.min(c.eta.ln());
            if !params.at_least_x(c.eta) {
                block_failures += 1;
            }
        }
    }
    if block_failures > 0 {
        res.passed = false;
    }
    res.detail("crash_free_blocks", blocks);
    res.detail("crash_free_block_failures", block_failures);
    if blocks > 0 {
        res.detail("min_ln_block_eta", min_ln_eta);
    }
    res.detail("ln_xi_pow_nchi", params.ln_x);
    res
}

/// Restricted Hajnal inequality `δ_t ≤ 1 − η_t` on sampled products
/// `Φ(t', t)`, and monotonicity of both coefficients in the restriction.
pub fn verify_lemma1(trace: &ExecutionTrace, matrices: &[UpdateMatrix], stride: u64) -> CheckResult {
    let mut res = CheckResult::new();
    let horizon = trace.horizon();
    let n = trace.n();
    let mut hajnal_worst: Option<f64> = None;
    let mut mono_worst: Option<f64> = None;
    let mut witness = None;
    for t in grid(1, horizon, stride) {
        let rows_t = trace.alive_start(t);
        let rs: BTreeSet<u64> = [1, t.div_ceil(2), t.saturating_sub(1).max(1), t].into_iter().collect();
        let mut phi: Array2<f64> = Array2::eye(n);
        for tp in t..=horizon {
            phi = left_multiply(step_matrix(matrices, tp), &phi);
            if (tp - t) % stride != 0 && tp != horizon {
                continue;
            }
            let c = ergodic_coefficients(&phi, rows_t);
            let slack = 1.0 - c.eta - c.delta;
            res.evaluated += 1;
            if slack < -TOL && witness.is_none() {
                witness = Some(json!({"t_prime": tp, "t": t, "delta": c.delta, "eta": c.eta}));
            }
            update_min(&mut hajnal_worst, slack);
            for &r in &rs {
                let cr = ergodic_coefficients(&phi, trace.alive_start(r));
                let s = (cr.delta - c.delta).min(c.eta - cr.eta);
                if s < -TOL && witness.is_none() {
                    witness = Some(json!({"t_prime": tp, "t": t, "r": r, "delta_t": c.delta, "delta_r": cr.delta, "eta_t": c.eta, "eta_r": cr.eta}));
                }
                update_min(&mut mono_worst, s);
            }
        }
    }
    if let Some(w) = hajnal_worst {
        res.detail("hajnal_worst_slack", w);
    }
    if let Some(w) = mono_worst {
        res.detail("monotonicity_worst_slack", w);
    }
    res.worst_margin = match (hajnal_worst, mono_worst) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    res.passed = res.worst_margin.is_none_or(|w| w >= -TOL);
    res.witness = witness;
    res
}

/// `δ_{t1+1}(Φ(t2, t0)) ≤ (1 − η_{t1+1}(Φ(t2, t1+1))) δ_{t1+1}(Φ(t1, t0))`
/// on `triples` random `t0 ≤ t1 < t2`.
pub fn verify_lemma2(trace: &ExecutionTrace, matrices: &[UpdateMatrix], triples: usize) -> CheckResult {
    let mut res = CheckResult::new();
    let horizon = trace.horizon();
    if horizon < 2 {
        res.detail("vacuous", true);
        return res;
    }
    let mut rng = substream(trace.seed, Purpose::Sampling, 2);
    let mut witness = None;
    for _ in 0..triples {
        let t0 = rng.random_range(1..horizon);
        let t1 = rng.random_range(t0..horizon);
        let t2 = rng.random_range(t1 + 1..=horizon);
        let g = super::matrix::backward_product(matrices, t1, t0);
        let p = super::matrix::backward_product(matrices, t2, t1 + 1);
        let f = p.dot(&g);
        let rows = trace.alive_start(t1 + 1);
        let cf = ergodic_coefficients(&f, rows);
        let cp = ergodic_coefficients(&p, rows);
        let cg = ergodic_coefficients(&g, rows);
        let slack = (1.0 - cp.eta) * cg.delta - cf.delta;
        res.evaluated += 1;
        if slack < -TOL && witness.is_none() {
            witness = Some(json!({"t0": t0, "t1": t1, "t2": t2, "delta_f": cf.delta, "eta_p": cp.eta, "delta_g": cg.delta}));
        }
        update_min(&mut res.worst_margin, slack);
    }
    res.passed = res.worst_margin.is_none_or(|w| w >= -TOL);
    res.witness = witness;
    res
}

/// An estimate of the limit row `π(r)` taken from `Φ(horizon, r)`.
#[derive(Debug, Clone, Serialize)]
pub struct PiEstimate {
    pub r: u64,
    pub horizon: u64,
    pub pi: Vec<f64>,
    /// Largest disagreement between rows of surviving agents.
    pub residual: f64,
    pub bound: f64,
}

/// Estimates `π(r)` as the row of the smallest surviving agent of
/// `Φ(horizon, r)`. Fails when the surviving rows still disagree by more
/// than the decay bound at this horizon.
pub fn estimate_pi(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    params: &DecayParams,
    r: u64,
    horizon: u64,
) -> Result<PiEstimate> {
    if r == 0 || horizon < r || horizon > trace.horizon() {
        return Err(Error::Precondition(format!(
            "need 1 <= r <= horizon <= T (r = {r}, horizon = {horizon})"
        )));
    }
    let phi = super::matrix::backward_product(matrices, horizon, r);
    let rows = trace.alive_end(horizon);
    let (residual, _) = row_spread(&phi, rows);
    let bound = params.bound(horizon - r + 1);
    let i0 = rows.min().ok_or_else(|| Error::Precondition("no surviving agent".into()))?;
    let pi = phi.row(i0).to_vec();
    if residual > bound + TOL {
        return Err(Error::HorizonTooShort { residual, bound });
    }
    Ok(PiEstimate {
        r,
        horizon,
        pi,
        residual,
        bound,
    })
}

/// Limit-row checks at the restriction points: surviving rows agree within
/// the decay bound at the horizon, `π̂_k(r) = 0` for `k ∉ N[r]`, and
/// `|Φ_ik(t, r) − π̂_k(r)|` stays under the bound along the way.
pub fn verify_proposition3(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    params: &DecayParams,
    stride: u64,
) -> CheckResult {
    let mut res = CheckResult::new();
    let horizon = trace.horizon();
    let n = trace.n();
    let mut estimates = Vec::new();
    let mut positive_crashed = Vec::new();
    for r in restriction_points(horizon) {
        let est = match estimate_pi(trace, matrices, params, r, horizon) {
            Ok(e) => e,
            Err(e) => {
                res.passed = false;
                res.witness.get_or_insert(json!({"r": r, "error": e.to_string()}));
                continue;
            }
        };
        update_min(&mut res.worst_margin, est.bound - est.residual);
        let dead = trace.graph.all_nodes().difference(trace.alive_start(r));
        for k in dead.iter() {
            if est.pi[k] != 0.0 {
                res.passed = false;
                res.witness.get_or_insert(json!({"r": r, "k": k + 1, "pi_k": est.pi[k]}));
            }
        }
        let crashed_later = trace.alive_start(r).difference(trace.survivors());
        for k in crashed_later.iter() {
            if est.pi[k] > 0.0 {
                positive_crashed.push(json!({"r": r, "k": k + 1, "pi_k": est.pi[k]}));
            }
        }
        let survivors = trace.survivors();
        let mut phi: Array2<f64> = Array2::eye(n);
        for t in r..=horizon {
            phi = left_multiply(step_matrix(matrices, t), &phi);
            if (t - r) % stride != 0 && t != horizon {
                continue;
            }
            let bound = params.bound(t - r + 1);
            let mut worst = 0.0f64;
            for i in survivors.iter() {
                for k in 0..n {
                    worst = worst.max((phi[[i, k]] - est.pi[k]).abs());
                }
            }
            res.evaluated += 1;
            update_min(&mut res.worst_margin, bound - worst);
        }
        estimates.push(est);
    }
    if res.worst_margin.is_some_and(|w| w < -TOL) {
        res.passed = false;
    }
    res.detail("estimates", json!(estimates));
    if !positive_crashed.is_empty() {
        // Agents that crash after r still carry limit mass from before
        // their crash.
        res.detail("crashed_after_r_with_positive_mass", json!(positive_crashed));
    }
    res
}

/// For each restriction point, some reduced graph's source component `S`
/// has `π̂_j(r) >= ξ^{nχ}` for every `j ∈ S` and `|S| >= γ`.
pub fn verify_lemma4(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    det: &Detectability,
    params: &DecayParams,
) -> CheckResult {
    let mut res = CheckResult::new();
    let horizon = trace.horizon();
    let sources: Vec<NodeSet> = det.reduced.iter().filter_map(|h| h.unique_source()).collect();
    let mut found = Vec::new();
    for r in restriction_points(horizon) {
        res.evaluated += 1;
        let est = match estimate_pi(trace, matrices, params, r, horizon) {
            Ok(e) => e,
            Err(e) => {
                res.passed = false;
                res.witness.get_or_insert(json!({"r": r, "error": e.to_string()}));
                continue;
            }
        };
        let hit = sources
            .iter()
            .find(|s| s.len() >= det.report.gamma && s.iter().all(|j| params.at_least_x(est.pi[j])));
        match hit {
            Some(s) => found.push(json!({"r": r, "source": s.labels(), "min_pi": s.iter().map(|j| est.pi[j]).fold(f64::INFINITY, f64::min)})),
            None => {
                res.passed = false;
                res.witness.get_or_insert(json!({"r": r, "pi": est.pi}));
            }
        }
    }
    res.detail("sources", json!(found));
    res
}
