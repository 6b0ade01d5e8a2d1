use ndarray::Array2;
use serde::Serialize;

use super::checks::DecayParams;
use super::matrix::{right_multiply, UpdateMatrix};
use super::pseudo::{likelihood_ratio_vector, psi, PseudoBeliefs};
use crate::error::{Error, Result};
use crate::observation::{kl_divergence, IdentifiabilityReport};
use crate::protocol::ExecutionTrace;

/// Terms are summed until they drop below this.
const SERIES_CUTOFF: f64 = 1e-15;
/// Above this many terms the closed form is used instead of the sum.
const SERIES_MAX_TERMS: u64 = 50_000_000;

/// `C = Σ_{s >= 0} min{1, (1 − ξ^{nχ})^{⌊s/nχ⌋ − f}}`.
///
/// Summed directly while that is affordable; otherwise the closed form
/// `nχ (f + 1) + nχ (1 − x)/x` with `x = ξ^{nχ}`, which is infinite when
/// `x` underflows.
pub fn series_constant(params: &DecayParams) -> f64 {
    let x = params.ln_x.exp();
    let n_chi = params.n_chi as f64;
    if x >= 1.0 {
        return n_chi * (params.f as f64 + 1.0);
    }
    let closed = n_chi * (params.f as f64 + 1.0) + n_chi * (1.0 - x) / x;
    // Terms below the cutoff once (1 − x)^e < cutoff.
    let blocks = SERIES_CUTOFF.ln() / (-x).ln_1p();
    let terms = (blocks + params.f as f64 + 1.0) * n_chi;
    if !terms.is_finite() || terms > SERIES_MAX_TERMS as f64 {
        return closed;
    }
    let mut sum = 0.0;
    let mut s = 0u64;
    loop {
        let term = params.bound(s);
        if term < SERIES_CUTOFF {
            break;
        }
        sum += term;
        s += 1;
    }
    sum
}

/// One agent at one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionPoint {
    pub t: u64,
    /// 1-based agent label.
    pub agent: usize,
    pub psi: f64,
    /// `Σ_k Φ_ik(t, 1) ψ_0^k`.
    pub initial: f64,
    /// `Σ_r Σ_k (Φ_ik(t, r+1) − π̂_k(r+1)) L_r^k`.
    pub fluctuation_phi: f64,
    /// `Σ_r π̂(r+1) · (L_r − H)`.
    pub fluctuation_lln: f64,
    /// `Σ_r π̂(r+1) · H`.
    pub drift: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    /// Label of the alternative hypothesis.
    pub theta: String,
    pub c0: f64,
    pub c1: f64,
    pub series_constant: f64,
    /// `n C C0`, the per-step bound on the matrix fluctuation term.
    pub fluctuation_bound: f64,
    /// `H_i = −D(θ* ‖ θ)` per agent.
    pub h: Vec<f64>,
    pub points: Vec<DecompositionPoint>,
}

/// Whether `drift <= −C1 ξ^{nχ} t`, compared in log space.
pub fn drift_within_bound(drift: f64, c1: f64, params: &DecayParams, t: u64) -> bool {
    if t == 0 {
        return drift <= 0.0;
    }
    drift < 0.0 && (-drift).ln() >= c1.ln() + params.ln_x + (t as f64).ln() - 1e-9
}

/// Splits `ψ_t^i(θ)` into an initial term, the matrix fluctuation, the
/// law-of-large-numbers fluctuation and the drift, at each checkpoint and
/// surviving agent. `π̂(s)` is the row of `Φ(T, s)` for the smallest
/// survivor.
pub fn decompose_psi(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    pseudo: &PseudoBeliefs,
    ident: &IdentifiabilityReport,
    params: &DecayParams,
    theta: usize,
    checkpoints: &[u64],
) -> Result<Decomposition> {
    let horizon = trace.horizon();
    let ts = trace.theta_star;
    if theta == ts || theta >= trace.m() {
        return Err(Error::Precondition(format!("theta index {theta} is not an alternative")));
    }
    if !ident.assumption1_ok {
        return Err(Error::Precondition("global identifiability does not hold".into()));
    }
    let n = trace.n();
    let survivors = trace.survivors();
    let i0 = survivors
        .min()
        .ok_or_else(|| Error::Precondition("no surviving agent".into()))?;

    // π̂(s) for s = 1..=T+1 via one backward sweep of e_{i0}^T Φ(T, s).
    let mut pi_hat = vec![vec![0.0; n]; horizon as usize + 2];
    let mut v = vec![0.0; n];
    v[i0] = 1.0;
    pi_hat[horizon as usize + 1] = v.clone();
    for s in (1..=horizon).rev() {
        let a = &matrices[(s - 1) as usize];
        let mut next = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                for &(k, w) in a.row_f64(j) {
                    next[k] += vj * w;
                }
            }
        }
        v = next;
        pi_hat[s as usize] = v.clone();
    }

    let h: Vec<f64> = (0..n).map(|i| -kl_divergence(&trace.model, i, ts, theta)).collect();
    let l: Vec<Vec<f64>> = (1..=horizon).map(|t| likelihood_ratio_vector(trace, t, theta)).collect();
    let psi0 = psi(pseudo, n, 0, theta, ts);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let c = series_constant(params);
    let fluctuation_bound = if ident.c0 == 0.0 { 0.0 } else { n as f64 * c * ident.c0 };
    let mut points = Vec::new();
    for &t in checkpoints {
        if t > horizon {
            continue;
        }
        let mut fphi = vec![0.0; n];
        let mut lln = 0.0;
        let mut drift = 0.0;
        let mut p: Array2<f64> = Array2::eye(n);
        for r in (1..=t).rev() {
            let lr = &l[(r - 1) as usize];
            let pi = &pi_hat[r as usize + 1];
            for (i, f) in fphi.iter_mut().enumerate() {
                *f += (0..n).map(|k| (p[[i, k]] - pi[k]) * lr[k]).sum::<f64>();
            }
            let ph = dot(pi, &h);
            lln += dot(pi, lr) - ph;
            drift += ph;
            p = right_multiply(&p, &matrices[(r - 1) as usize]);
        }
        let psi_t = psi(pseudo, n, t, theta, ts);
        for i in survivors.iter() {
            let initial = (0..n).map(|k| p[[i, k]] * psi0[k]).sum::<f64>();
            let total = initial + fphi[i] + lln + drift;
            points.push(DecompositionPoint {
                t,
                agent: i + 1,
                psi: psi_t[i],
                initial,
                fluctuation_phi: fphi[i],
                fluctuation_lln: lln,
                drift,
                residual: (total - psi_t[i]).abs(),
            });
        }
    }
    Ok(Decomposition {
        theta: trace.model.hypotheses()[theta].clone(),
        c0: ident.c0,
        c1: ident.c1,
        series_constant: c,
        fluctuation_bound,
        h,
        points,
    })
}
