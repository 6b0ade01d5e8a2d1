use ndarray::Array2;
use serde::Serialize;

use super::matrix::{right_multiply, UpdateMatrix};
use crate::protocol::{update_belief, BeliefVector, ExecutionTrace};

/// `μ̃_t^i` for `0 <= t <= T`, every agent, as log-probabilities.
#[derive(Debug, Clone)]
pub struct PseudoBeliefs {
    /// `log[t][i]`.
    log: Vec<Vec<Vec<f64>>>,
}

impl PseudoBeliefs {
    pub fn at(&self, t: u64, i: usize) -> &[f64] {
        &self.log[t as usize][i]
    }

    pub fn horizon(&self) -> u64 {
        (self.log.len() - 1) as u64
    }
}

/// Replays the update rule for agents in `N̄[t]` using the recorded quorum
/// and signal; everyone else keeps the previous pseudo-belief.
pub fn pseudo_belief_evolution(trace: &ExecutionTrace) -> PseudoBeliefs {
    let n = trace.n();
    let mut log = Vec::with_capacity(trace.horizon() as usize + 1);
    log.push(vec![BeliefVector::uniform(trace.m()).log_belief; n]);
    for step in trace.steps() {
        let prev: &Vec<Vec<f64>> = log.last().expect("initial state present");
        let next: Vec<Vec<f64>> = (0..n)
            .map(|i| match &step.agents[i] {
                Some(a) if a.alive => {
                    let q = a.quorum.as_deref().unwrap_or(&[]);
                    let nbs: Vec<&[f64]> = q.iter().map(|&j| prev[j].as_slice()).collect();
                    let signal = a.signal.unwrap_or(0);
                    update_belief(&prev[i], &nbs, signal, &trace.model, i, nbs.len())
                        .expect("arity matches by construction")
                }
                _ => prev[i].clone(),
            })
            .collect();
        log.push(next);
    }
    PseudoBeliefs { log }
}

/// `L_t(θ)`: the signal log-likelihood ratio for agents in `N̄[t]`, zero
/// elsewhere.
pub fn likelihood_ratio_vector(trace: &ExecutionTrace, t: u64, theta: usize) -> Vec<f64> {
    let step = trace.step(t);
    (0..trace.n())
        .map(|i| match &step.agents[i] {
            Some(a) if a.alive => {
                let w = a.signal.unwrap_or(0);
                trace.model.log_ratio(i, w, theta, trace.theta_star)
            }
            _ => 0.0,
        })
        .collect()
}

/// `ψ_t(θ) = log μ̃_t(θ) − log μ̃_t(θ*)`.
pub fn psi(pseudo: &PseudoBeliefs, n: usize, t: u64, theta: usize, theta_star: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let b = pseudo.at(t, i);
            b[theta] - b[theta_star]
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiResiduals {
    /// `max |μ̃_t^i − μ_t^i|` over `i ∈ N̄[t]`, in probabilities.
    pub pseudo_identity: f64,
    /// Pseudo-belief `ψ` against the propagated recursion.
    pub recursion: f64,
    /// Pseudo-belief `ψ` against the backward-product expansion.
    pub expansion: f64,
    pub expansion_points: usize,
    /// `max |L_t^i(θ)|` seen in the trace.
    pub max_abs_l: f64,
    /// `max |ψ_0|`.
    pub initial: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares `ψ` built from pseudo-beliefs with the linear recursion
/// `ψ_t = A[t] ψ_{t−1} + L_t` (propagated from `ψ_0`) and with the expansion
/// `Φ(t, 1) ψ_0 + Σ_r Φ(t, r + 1) L_r` at the given iterations.
pub fn psi_recursion_check(
    trace: &ExecutionTrace,
    matrices: &[UpdateMatrix],
    pseudo: &PseudoBeliefs,
    theta: usize,
    expansion_at: &[u64],
) -> PsiResiduals {
    let n = trace.n();
    let ts = trace.theta_star;
    let mut out = PsiResiduals {
        pseudo_identity: 0.0,
        recursion: 0.0,
        expansion: 0.0,
        expansion_points: expansion_at.len(),
        max_abs_l: 0.0,
        initial: 0.0,
    };
    let psi0 = psi(pseudo, n, 0, theta, ts);
    out.initial = psi0.iter().map(|x| x.abs()).fold(0.0, f64::max);

    let l: Vec<Vec<f64>> = (1..=trace.horizon())
        .map(|t| likelihood_ratio_vector(trace, t, theta))
        .collect();

    let mut rec = psi0.clone();
    for t in 1..=trace.horizon() {
        let lt = &l[(t - 1) as usize];
        out.max_abs_l = out.max_abs_l.max(lt.iter().map(|x| x.abs()).fold(0.0, f64::max));
        let a = &matrices[(t - 1) as usize];
        rec = (0..n)
            .map(|i| a.row_f64(i).iter().map(|&(j, w)| w * rec[j]).sum::<f64>() + lt[i])
            .collect();
        let from_pseudo = psi(pseudo, n, t, theta, ts);
        out.recursion = out.recursion.max(max_abs_diff(&rec, &from_pseudo));
        for i in trace.alive_end(t).iter() {
            let real = trace.belief(t, i).expect("alive agent has a record");
            let pb = pseudo.at(t, i);
            let d = real
                .iter()
                .zip(pb)
                .map(|(x, y)| (x.exp() - y.exp()).abs())
                .fold(0.0, f64::max);
            out.pseudo_identity = out.pseudo_identity.max(d);
        }
    }

    for &t in expansion_at {
        // Walk r from t down to 1 keeping P = Φ(t, r + 1).
        let mut p: Array2<f64> = Array2::eye(n);
        let mut sum = vec![0.0; n];
        for r in (1..=t).rev() {
            let lr = &l[(r - 1) as usize];
            for i in 0..n {
                sum[i] += (0..n).map(|k| p[[i, k]] * lr[k]).sum::<f64>();
            }
            p = right_multiply(&p, &matrices[(r - 1) as usize]);
        }
        // p is now Φ(t, 1).
        for i in 0..n {
            sum[i] += (0..n).map(|k| p[[i, k]] * psi0[k]).sum::<f64>();
        }
        let from_pseudo = psi(pseudo, n, t, theta, ts);
        out.expansion = out.expansion.max(max_abs_diff(&sum, &from_pseudo));
    }
    out
}
