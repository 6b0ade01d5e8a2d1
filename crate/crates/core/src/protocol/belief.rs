use crate::error::{Error, Result};
use crate::observation::LikelihoodModel;

/// `log Σ exp(x)`, stable for large negative entries.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shifts `xs` in place so that `logsumexp(xs) == 0`.
pub fn normalize_log(xs: &mut [f64]) {
    let z = logsumexp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
}

/// A distribution over the hypotheses, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub log_belief: Vec<f64>,
}

impl BeliefVector {
    pub fn uniform(m: usize) -> Self {
        Self {
            log_belief: vec![-(m as f64).ln(); m],
        }
    }

    pub fn from_log(mut log_belief: Vec<f64>) -> Self {
        normalize_log(&mut log_belief);
        Self { log_belief }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_belief.iter().map(|x| x.exp()).collect()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.log_belief.iter().all(|x| x.is_finite()) && logsumexp(&self.log_belief).abs() <= tol
    }
}

/// Unnormalized log update: `log ℓ_i(s|θ) + w Σ_j log μ^j(θ)` with
/// `w = 1/(|R|+1)`, summing `current` first and then `neighbors` in the
/// order given.
fn aggregate(
    current: &[f64],
    neighbors: &[&[f64]],
    signal: usize,
    model: &LikelihoodModel,
    i: usize,
    upto: usize,
) -> Vec<f64> {
    let w = 1.0 / (neighbors.len() + 1) as f64;
    let lik = model.agent(i);
    (0..upto)
        .map(|h| {
            let mut acc = current[h];
            for nb in neighbors {
                acc += nb[h];
            }
            lik.log_row(h)[signal] + w * acc
        })
        .collect()
}

fn check_inputs(
    current: &[f64],
    neighbors: &[&[f64]],
    model: &LikelihoodModel,
    quorum: usize,
) -> Result<()> {
    if neighbors.len() != quorum {
        return Err(Error::Arity {
            expected: quorum,
            got: neighbors.len(),
        });
    }
    let m = model.m();
    if current.len() != m || neighbors.iter().any(|b| b.len() != m) {
        return Err(Error::Precondition(format!(
            "belief vectors must have length {m}"
        )));
    }
    Ok(())
}

/// One geometric-averaging step for agent `i`, given the beliefs received
/// from its quorum (`quorum = |I_i| − f` of them) and its private signal.
pub fn update_belief(
    current: &[f64],
    neighbors: &[&[f64]],
    signal: usize,
    model: &LikelihoodModel,
    i: usize,
    quorum: usize,
) -> Result<Vec<f64>> {
    check_inputs(current, neighbors, model, quorum)?;
    let mut out = aggregate(current, neighbors, signal, model, i, model.m());
    normalize_log(&mut out);
    Ok(out)
}

/// The state left by a crash partway through the update: the first `k`
/// hypotheses receive the new unnormalized value, the rest keep their old
/// value, and the result is renormalized.
pub fn partial_update(
    current: &[f64],
    neighbors: &[&[f64]],
    signal: usize,
    model: &LikelihoodModel,
    i: usize,
    quorum: usize,
    k: usize,
) -> Result<Vec<f64>> {
    check_inputs(current, neighbors, model, quorum)?;
    let k = k.min(model.m());
    let mut out = aggregate(current, neighbors, signal, model, i, k);
    out.extend_from_slice(&current[k..]);
    normalize_log(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_hypothesis_stays_certain() {
        let model = LikelihoodModel::from_tables(
            vec!["only".into()],
            vec![vec!["a".into(), "b".into()]; 2],
            vec![vec![vec![0.2, 0.8]]; 2],
        )
        .unwrap();
        let nb = [0.0];
        let out = update_belief(&[0.0], &[&nb], 1, &model, 0, 1).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn uninformative_keeps_uniform() {
        let model = LikelihoodModel::bernoulli(&[(0.4, 0.4); 3]).unwrap();
        let u = BeliefVector::uniform(2).log_belief;
        let out = update_belief(&u, &[&u, &u], 0, &model, 0, 2).unwrap();
        for x in out {
            assert!((x - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn arity_is_checked() {
        let model = LikelihoodModel::bernoulli(&[(0.3, 0.7); 2]).unwrap();
        let u = BeliefVector::uniform(2).log_belief;
        assert!(matches!(
            update_belief(&u, &[], 0, &model, 0, 1),
            Err(Error::Arity { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn single_agent_matches_bayes() {
        let model = LikelihoodModel::bernoulli(&[(0.3, 0.7)]).unwrap();
        let mut b = BeliefVector::uniform(2).log_belief;
        let signals = [1, 1, 0, 1, 0, 0, 0, 1];
        for &s in &signals {
            b = update_belief(&b, &[], s, &model, 0, 0).unwrap();
        }
        // Four ones and four zeros: the likelihoods are symmetric, so the
        // posterior is uniform again.
        assert!((b[0].exp() - 0.5).abs() < 1e-12);
        let b = update_belief(&b, &[], 1, &model, 0, 0).unwrap();
        assert!((b[1].exp() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn partial_update_bounds() {
        let model = LikelihoodModel::bernoulli(&[(0.3, 0.7); 2]).unwrap();
        let u = BeliefVector::uniform(2).log_belief;
        let nb = [0.2f64.ln(), 0.8f64.ln()];
        let full = update_belief(&u, &[&nb], 1, &model, 0, 1).unwrap();
        assert_eq!(partial_update(&u, &[&nb], 1, &model, 0, 1, 2).unwrap(), full);
        assert_eq!(partial_update(&u, &[&nb], 1, &model, 0, 1, 0).unwrap(), u);
        let half = partial_update(&u, &[&nb], 1, &model, 0, 1, 1).unwrap();
        assert!(BeliefVector { log_belief: half }.is_normalized(1e-12));
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }
}
