//! Per-agent likelihood tables over a finite hypothesis set, the KL
//! divergences derived from them, and the identifiability checks that decide
//! whether the true hypothesis can be learned at all.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    enumerate_reduced_graphs, DirectedGraph, Limits, ReducedGraph, ReducedGraphJson,
};

/// KL sums at or below this are treated as zero.
pub const KL_ZERO_TOL: f64 = 1e-12;

/// Row-sum tolerance applied when a model file is loaded.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentLikelihood {
    signals: Vec<String>,
    /// `probs[h * signals.len() + w] = ℓ(w | θ_h)`.
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl AgentLikelihood {
    pub fn signals(&self) -> &[String] {
        &self.signals
    }

    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    /// The distribution `ℓ(· | θ_h)`.
    pub fn row(&self, h: usize) -> &[f64] {
        let s = self.signals.len();
        &self.probs[h * s..(h + 1) * s]
    }

    pub fn log_row(&self, h: usize) -> &[f64] {
        let s = self.signals.len();
        &self.log_probs[h * s..(h + 1) * s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    hypotheses: Vec<String>,
    agents: Vec<AgentLikelihood>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentFile {
    pub signals: Vec<String>,
    pub likelihood: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub hypotheses: Vec<String>,
    pub agents: Vec<AgentFile>,
}

impl LikelihoodModel {
    /// Builds a model from dense rows: `tables[i][h]` is `ℓ_i(· | θ_h)`.
    pub fn from_tables(
        hypotheses: Vec<String>,
        signals: Vec<Vec<String>>,
        tables: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let m = hypotheses.len();
        if m == 0 {
            return Err(Error::InvalidModel("at least one hypothesis is required".into()));
        }
        let unique: HashSet<&String> = hypotheses.iter().collect();
        if unique.len() != m {
            return Err(Error::InvalidModel("hypothesis labels must be unique".into()));
        }
        if signals.len() != tables.len() {
            return Err(Error::InvalidModel("signal spaces and tables disagree in length".into()));
        }
        let mut agents = Vec::with_capacity(tables.len());
        for (i, (sig, rows)) in signals.into_iter().zip(tables).enumerate() {
            let label = i + 1;
            if sig.is_empty() {
                return Err(Error::InvalidModel(format!("agent {label} has an empty signal space")));
            }
            if sig.iter().collect::<HashSet<_>>().len() != sig.len() {
                return Err(Error::InvalidModel(format!("agent {label} repeats a signal label")));
            }
            if rows.len() != m {
                return Err(Error::InvalidModel(format!(
                    "agent {label} has {} rows for {m} hypotheses",
                    rows.len()
                )));
            }
            let mut probs = Vec::with_capacity(m * sig.len());
            for (h, row) in rows.iter().enumerate() {
                if row.len() != sig.len() {
                    return Err(Error::InvalidModel(format!(
                        "agent {label}, hypothesis {}: {} probabilities for {} signals",
                        hypotheses[h],
                        row.len(),
                        sig.len()
                    )));
                }
                if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    return Err(Error::InvalidModel(format!(
                        "agent {label}, hypothesis {}: entry {p} is not strictly positive",
                        hypotheses[h]
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "agent {label}, hypothesis {}: row sums to {sum}",
                        hypotheses[h]
                    )));
                }
                probs.extend_from_slice(row);
            }
            let log_probs = probs.iter().map(|p| p.ln()).collect();
            agents.push(AgentLikelihood {
                signals: sig,
                probs,
                log_probs,
            });
        }
        Ok(Self { hypotheses, agents })
    }

    /// Binary hypotheses `{θ1, θ2}` with binary signals `{0, 1}` where agent
    /// `i` sees `1` with probability `p[i].0` under θ1 and `p[i].1` under θ2.
    pub fn bernoulli(p: &[(f64, f64)]) -> Result<Self> {
        let hyps = vec!["theta1".to_string(), "theta2".to_string()];
        let signals = vec![vec!["0".to_string(), "1".to_string()]; p.len()];
        let tables = p
            .iter()
            .map(|&(a, b)| vec![vec![1.0 - a, a], vec![1.0 - b, b]])
            .collect();
        Self::from_tables(hyps, signals, tables)
    }

    pub fn from_file_format(file: &ModelFile) -> Result<Self> {
        let mut signals = Vec::with_capacity(file.agents.len());
        let mut tables = Vec::with_capacity(file.agents.len());
        for (i, a) in file.agents.iter().enumerate() {
            if a.likelihood.len() != file.hypotheses.len() {
                return Err(Error::InvalidModel(format!(
                    "agent {} lists {} hypotheses, expected {}",
                    i + 1,
                    a.likelihood.len(),
                    file.hypotheses.len()
                )));
            }
            let mut rows = Vec::with_capacity(file.hypotheses.len());
            for h in &file.hypotheses {
                let row = a.likelihood.get(h).ok_or_else(|| {
                    Error::InvalidModel(format!("agent {} has no row for {h}", i + 1))
                })?;
                rows.push(row.clone());
            }
            signals.push(a.signals.clone());
            tables.push(rows);
        }
        Self::from_tables(file.hypotheses.clone(), signals, tables)
    }

    pub fn to_file_format(&self) -> ModelFile {
        ModelFile {
            hypotheses: self.hypotheses.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentFile {
                    signals: a.signals.clone(),
                    likelihood: self
                        .hypotheses
                        .iter()
                        .enumerate()
                        .map(|(h, label)| (label.clone(), a.row(h).to_vec()))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        Self::from_file_format(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn m(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn hypotheses(&self) -> &[String] {
        &self.hypotheses
    }

    pub fn hypothesis_index(&self, label: &str) -> Option<usize> {
        self.hypotheses.iter().position(|h| h == label)
    }

    pub fn agent(&self, i: usize) -> &AgentLikelihood {
        &self.agents[i]
    }

    pub fn log_likelihood(&self, i: usize, h: usize, w: usize) -> f64 {
        self.agents[i].log_row(h)[w]
    }

    /// `log ℓ_i(w|θ) − log ℓ_i(w|θ*)`.
    pub fn log_ratio(&self, i: usize, w: usize, theta: usize, theta_star: usize) -> f64 {
        let a = &self.agents[i];
        a.log_row(theta)[w] - a.log_row(theta_star)[w]
    }
}

/// `D(ℓ_i(·|θ1) || ℓ_i(·|θ2))` in nats.
pub fn kl_divergence(model: &LikelihoodModel, i: usize, theta1: usize, theta2: usize) -> f64 {
    let a = model.agent(i);
    a.row(theta1)
        .iter()
        .zip(a.log_row(theta1).iter().zip(a.log_row(theta2)))
        .map(|(p, (lp, lq))| p * (lp - lq))
        .sum()
}

/// Ordered pair `(θ*, θ)` by hypothesis label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairWitness {
    pub theta_star: String,
    pub theta: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceWitness {
    pub theta_star: String,
    pub theta: String,
    /// 1-based labels of the source component that cannot separate the pair.
    pub source: Vec<usize>,
    pub reduced_graph: ReducedGraphJson,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifiabilityReport {
    pub failure_free_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_free_witness: Option<PairWitness>,
    pub assumption1_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption1_witness: Option<SourceWitness>,
    pub c0: f64,
    /// Infinite (serialized as `null`) when there is no hypothesis pair.
    pub c1: f64,
}

fn pair(model: &LikelihoodModel, theta_star: usize, theta: usize) -> PairWitness {
    PairWitness {
        theta_star: model.hypotheses[theta_star].clone(),
        theta: model.hypotheses[theta].clone(),
    }
}

fn ordered_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
}

/// Whether every ordered pair `θ* ≠ θ` is separated by some agent.
pub fn check_failure_free_identifiability(model: &LikelihoodModel) -> (bool, Option<PairWitness>) {
    for (ts, t) in ordered_pairs(model.m()) {
        let total: f64 = (0..model.n_agents())
            .map(|i| kl_divergence(model, i, ts, t))
            .sum();
        if total <= KL_ZERO_TOL {
            return (false, Some(pair(model, ts, t)));
        }
    }
    (true, None)
}

/// `C0 = −min_i min_{θ1≠θ2} min_w log(ℓ_i(w|θ1)/ℓ_i(w|θ2))`, never negative.
pub fn compute_c0(model: &LikelihoodModel) -> f64 {
    let mut min_ratio = 0.0f64;
    for i in 0..model.n_agents() {
        let a = model.agent(i);
        for (h1, h2) in ordered_pairs(model.m()) {
            for (l1, l2) in a.log_row(h1).iter().zip(a.log_row(h2)) {
                min_ratio = min_ratio.min(l1 - l2);
            }
        }
    }
    -min_ratio
}

/// Minimum over reduced graphs and ordered pairs of the KL sum across the
/// graph's unique source component, plus the first minimizing witness.
///
/// Errors if some reduced graph lacks a unique source component.
fn source_kl_minimum(
    model: &LikelihoodModel,
    reduced: &[ReducedGraph],
) -> Result<(f64, Option<SourceWitness>)> {
    let mut best = f64::INFINITY;
    let mut witness = None;
    for h in reduced {
        let source = h.unique_source().ok_or_else(|| {
            Error::Precondition(format!(
                "reduced graph on nodes {:?} has no unique source component",
                h.surviving_nodes().labels()
            ))
        })?;
        for (ts, t) in ordered_pairs(model.m()) {
            let sum: f64 = source.iter().map(|i| kl_divergence(model, i, ts, t)).sum();
            if sum < best {
                best = sum;
                witness = Some(SourceWitness {
                    theta_star: model.hypotheses[ts].clone(),
                    theta: model.hypotheses[t].clone(),
                    source: source.labels(),
                    reduced_graph: h.to_json(),
                });
            }
        }
    }
    Ok((best, witness))
}

fn check_agent_count(model: &LikelihoodModel, g: &DirectedGraph) -> Result<()> {
    if model.n_agents() != g.n() {
        return Err(Error::InvalidConfig(format!(
            "model has {} agents but graph has {} nodes",
            model.n_agents(),
            g.n()
        )));
    }
    Ok(())
}

/// `C1` over an already-enumerated set of reduced graphs. Zero whenever
/// some source component cannot separate some pair.
pub fn compute_c1_over(model: &LikelihoodModel, reduced: &[ReducedGraph]) -> Result<f64> {
    let (best, _) = source_kl_minimum(model, reduced)?;
    Ok(if best <= KL_ZERO_TOL { 0.0 } else { best })
}

pub fn compute_c1(model: &LikelihoodModel, g: &DirectedGraph, f: usize, limits: &Limits) -> Result<f64> {
    check_agent_count(model, g)?;
    let reduced = enumerate_reduced_graphs(g, f, limits)?;
    compute_c1_over(model, &reduced)
}

/// Identifiability report over an already-enumerated set of reduced graphs.
pub fn identifiability_over(
    model: &LikelihoodModel,
    reduced: &[ReducedGraph],
) -> Result<IdentifiabilityReport> {
    let (failure_free_ok, failure_free_witness) = check_failure_free_identifiability(model);
    let (best, witness) = source_kl_minimum(model, reduced)?;
    let assumption1_ok = best > KL_ZERO_TOL;
    Ok(IdentifiabilityReport {
        failure_free_ok,
        failure_free_witness,
        assumption1_ok,
        assumption1_witness: if assumption1_ok { None } else { witness },
        c0: compute_c0(model),
        c1: if assumption1_ok { best } else { 0.0 },
    })
}

/// Checks global identifiability over every reduced graph's source
/// component. Requires a unique source in every reduced graph.
pub fn check_assumption1(
    model: &LikelihoodModel,
    g: &DirectedGraph,
    f: usize,
    limits: &Limits,
) -> Result<IdentifiabilityReport> {
    check_agent_count(model, g)?;
    let reduced = enumerate_reduced_graphs(g, f, limits)?;
    identifiability_over(model, &reduced)
}

/// Draws one signal index for agent `i` from `ℓ_i(· | θ*)`.
pub fn sample_signal<R: Rng + ?Sized>(
    model: &LikelihoodModel,
    i: usize,
    theta_star: usize,
    rng: &mut R,
) -> usize {
    let row = model.agent(i).row(theta_star);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (w, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return w;
        }
    }
    row.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two(a: [f64; 2], b: [f64; 2]) -> LikelihoodModel {
        LikelihoodModel::from_tables(
            vec!["a".into(), "b".into()],
            vec![vec!["x".into(), "y".into()]],
            vec![vec![a.to_vec(), b.to_vec()]],
        )
        .unwrap()
    }

    #[test]
    fn kl_examples() {
        let m = two_by_two([0.5, 0.5], [0.25, 0.75]);
        assert_eq!(kl_divergence(&m, 0, 0, 0), 0.0);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&m, 0, 0, 1) - expected).abs() < 1e-15);
        assert!((kl_divergence(&m, 0, 0, 1) - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn c0_examples() {
        let uniform = two_by_two([0.5, 0.5], [0.5, 0.5]);
        assert_eq!(compute_c0(&uniform), 0.0);
        let skew = two_by_two([0.25, 0.75], [0.75, 0.25]);
        assert!((compute_c0(&skew) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn c1_single_agent_takes_worse_direction() {
        let m = two_by_two([0.5, 0.5], [0.25, 0.75]);
        let g = DirectedGraph::new(1, []).unwrap();
        let c1 = compute_c1(&m, &g, 0, &Limits::default()).unwrap();
        let forward = kl_divergence(&m, 0, 0, 1);
        let backward = kl_divergence(&m, 0, 1, 0);
        assert!((c1 - forward.min(backward)).abs() < 1e-15);
        assert!(backward < forward);
    }

    #[test]
    fn failure_free_identifiability() {
        let same = LikelihoodModel::bernoulli(&[(0.3, 0.3), (0.6, 0.6)]).unwrap();
        let (ok, w) = check_failure_free_identifiability(&same);
        assert!(!ok);
        assert_eq!(
            w.unwrap(),
            PairWitness {
                theta_star: "theta1".into(),
                theta: "theta2".into()
            }
        );
        let one = LikelihoodModel::bernoulli(&[(0.3, 0.3), (0.3, 0.7)]).unwrap();
        assert!(check_failure_free_identifiability(&one).0);
    }

    #[test]
    fn assumption1_on_a_path() {
        // Only node 2 separates the pair, but the unique source of the path
        // 1 -> 2 -> 3 is {1}.
        let g = DirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let model = LikelihoodModel::bernoulli(&[(0.5, 0.5), (0.3, 0.7), (0.5, 0.5)]).unwrap();
        let rep = check_assumption1(&model, &g, 0, &Limits::default()).unwrap();
        assert!(rep.failure_free_ok);
        assert!(!rep.assumption1_ok);
        assert_eq!(rep.c1, 0.0);
        assert_eq!(rep.assumption1_witness.unwrap().source, vec![1]);

        let cycle = DirectedGraph::cycle(3).unwrap();
        let rep = check_assumption1(&model, &cycle, 0, &Limits::default()).unwrap();
        assert!(rep.assumption1_ok);
        let expected = kl_divergence(&model, 1, 0, 1).min(kl_divergence(&model, 1, 1, 0));
        assert!((rep.c1 - expected).abs() < 1e-15);
    }

    #[test]
    fn assumption1_needs_unique_sources() {
        let g = DirectedGraph::new(2, []).unwrap();
        let model = LikelihoodModel::bernoulli(&[(0.3, 0.7); 2]).unwrap();
        assert!(matches!(
            check_assumption1(&model, &g, 0, &Limits::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn rejects_bad_rows() {
        let bad_zero = r#"{"hypotheses":["a","b"],"agents":[{"signals":["x","y"],"likelihood":{"a":[1.0,0.0],"b":[0.5,0.5]}}]}"#;
        assert!(LikelihoodModel::from_json_str(bad_zero).is_err());
        let bad_sum = r#"{"hypotheses":["a","b"],"agents":[{"signals":["x","y"],"likelihood":{"a":[0.6,0.6],"b":[0.5,0.5]}}]}"#;
        assert!(LikelihoodModel::from_json_str(bad_sum).is_err());
        let missing = r#"{"hypotheses":["a","b"],"agents":[{"signals":["x","y"],"likelihood":{"a":[0.5,0.5]}}]}"#;
        assert!(LikelihoodModel::from_json_str(missing).is_err());
        let good = r#"{"hypotheses":["a","b"],"agents":[{"signals":["x","y"],"likelihood":{"a":[0.1,0.9],"b":[0.5,0.5]}}]}"#;
        let m = LikelihoodModel::from_json_str(good).unwrap();
        assert_eq!(m.agent(0).row(0), &[0.1, 0.9]);
        let again = LikelihoodModel::from_file_format(&m.to_file_format()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn sampling_near_point_mass() {
        let eps = 1e-9;
        let m = two_by_two([1.0 - eps, eps], [0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000;
        let first = (0..draws).filter(|_| sample_signal(&m, 0, 0, &mut rng) == 0).count();
        assert!(first as f64 / draws as f64 >= 1.0 - 1e-6);
    }

    #[test]
    fn sampling_uniform_four() {
        let row = vec![0.25; 4];
        let m = LikelihoodModel::from_tables(
            vec!["a".into()],
            vec![(0..4).map(|w| w.to_string()).collect()],
            vec![vec![row]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_signal(&m, 0, 0, &mut rng)] += 1;
        }
        let sigma = (0.25f64 * 0.75 / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = two_by_two([0.3, 0.7], [0.6, 0.4]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| sample_signal(&m, 0, 1, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }
}
