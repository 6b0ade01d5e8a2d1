use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::belief::{logsumexp, BeliefVector};
use super::config::AdversaryConfig;
use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, GraphFile, NodeSet};
use crate::observation::{LikelihoodModel, ModelFile};

/// What one agent did in one iteration it started.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    /// Whether the agent completed the iteration (membership in `N̄[t]`).
    pub alive: bool,
    /// Sorted 0-based senders whose iteration-`t` beliefs were used.
    pub quorum: Option<Vec<usize>>,
    pub signal: Option<usize>,
    /// Belief held at the end of the iteration.
    pub log_belief: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStep {
    pub t: u64,
    /// Indexed by agent; `None` for agents that crashed in an earlier iteration.
    pub agents: Vec<Option<AgentStep>>,
    alive_start: NodeSet,
    alive_end: NodeSet,
}

impl IterationStep {
    pub fn new(t: u64, agents: Vec<Option<AgentStep>>) -> Self {
        let mut alive_start = NodeSet::EMPTY;
        let mut alive_end = NodeSet::EMPTY;
        for (i, a) in agents.iter().enumerate() {
            if let Some(a) = a {
                alive_start.insert(i);
                if a.alive {
                    alive_end.insert(i);
                }
            }
        }
        Self {
            t,
            agents,
            alive_start,
            alive_end,
        }
    }

    /// `N[t]`: agents that had not crashed when the iteration began.
    pub fn alive_start(&self) -> NodeSet {
        self.alive_start
    }

    /// `N̄[t]`: agents that completed the iteration.
    pub fn alive_end(&self) -> NodeSet {
        self.alive_end
    }
}

/// A complete execution together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub graph: DirectedGraph,
    pub model: LikelihoodModel,
    pub f: usize,
    pub theta_star: usize,
    pub seed: u64,
    pub adversary: AdversaryConfig,
    steps: Vec<IterationStep>,
}

/// One line of a trace file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub agent: usize,
    pub alive: bool,
    pub quorum: Option<Vec<usize>>,
    pub signal: Option<String>,
    pub log_belief: Vec<f64>,
}

/// The sidecar file holding everything but the per-iteration records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub graph: GraphFile,
    pub model: ModelFile,
    pub f: usize,
    pub theta_star: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub seed: u64,
    pub adversary: AdversaryConfig,
}

/// `trace.jsonl` keeps its metadata in `trace.meta.json`.
pub fn meta_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("meta.json")
}

impl ExecutionTrace {
    pub fn new(
        graph: DirectedGraph,
        model: LikelihoodModel,
        f: usize,
        theta_star: usize,
        seed: u64,
        adversary: AdversaryConfig,
        steps: Vec<IterationStep>,
    ) -> Self {
        Self {
            graph,
            model,
            f,
            theta_star,
            seed,
            adversary,
            steps,
        }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// Number of iterations `T`.
    pub fn horizon(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn steps(&self) -> &[IterationStep] {
        &self.steps
    }

    /// Iteration `t`, 1-based.
    pub fn step(&self, t: u64) -> &IterationStep {
        &self.steps[(t - 1) as usize]
    }

    pub fn steps_mut(&mut self) -> &mut Vec<IterationStep> {
        &mut self.steps
    }

    /// `N[t]` for `1 <= t <= T + 1`, with `N[T + 1] = N̄[T]`.
    pub fn alive_start(&self, t: u64) -> NodeSet {
        if t == 0 || self.steps.is_empty() {
            return self.graph.all_nodes();
        }
        if t > self.horizon() {
            return self.step(self.horizon()).alive_end();
        }
        self.step(t).alive_start()
    }

    /// `N̄[t]`; `N̄[0]` is every agent.
    pub fn alive_end(&self, t: u64) -> NodeSet {
        if t == 0 {
            return self.graph.all_nodes();
        }
        self.step(t).alive_end()
    }

    /// `N`: agents that never crashed within the horizon.
    pub fn survivors(&self) -> NodeSet {
        self.alive_end(self.horizon())
    }

    /// Agents that crashed within the horizon, with the iteration of the crash.
    pub fn crashes(&self) -> Vec<(usize, u64)> {
        let mut out = Vec::new();
        for s in &self.steps {
            for i in s.alive_start().difference(s.alive_end()).iter() {
                out.push((i, s.t));
            }
        }
        out
    }

    /// Agent `i`'s belief at the end of iteration `t`, if it started it.
    pub fn belief(&self, t: u64, i: usize) -> Option<&[f64]> {
        if t == 0 {
            return None;
        }
        self.step(t).agents[i].as_ref().map(|a| a.log_belief.as_slice())
    }

    /// Agent `i`'s last recorded belief (the uniform prior if none).
    pub fn final_log_belief(&self, i: usize) -> Vec<f64> {
        self.steps
            .iter()
            .rev()
            .find_map(|s| s.agents[i].as_ref().map(|a| a.log_belief.clone()))
            .unwrap_or_else(|| BeliefVector::uniform(self.m()).log_belief)
    }

    pub fn final_mu_theta_star(&self, i: usize) -> f64 {
        self.final_log_belief(i)[self.theta_star].exp()
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            graph: self.graph.to_file_format(),
            model: self.model.to_file_format(),
            f: self.f,
            theta_star: self.model.hypotheses()[self.theta_star].clone(),
            horizon: self.horizon(),
            seed: self.seed,
            adversary: self.adversary.clone(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        self.steps.iter().flat_map(move |s| {
            s.agents.iter().enumerate().filter_map(move |(i, a)| {
                a.as_ref().map(|a| TraceRecord {
                    t: s.t,
                    agent: i + 1,
                    alive: a.alive,
                    quorum: a.quorum.as_ref().map(|q| q.iter().map(|j| j + 1).collect()),
                    signal: a.signal.map(|w| self.model.agent(i).signals()[w].clone()),
                    log_belief: a.log_belief.clone(),
                })
            })
        })
    }

    /// Writes the JSON-lines records to `path` and the metadata beside it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let meta = meta_path(path);
        let text = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta_file = meta_path(path);
        let meta_text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
        let meta: TraceMeta = serde_json::from_str(&meta_text)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<TraceRecord>(&line)?);
        }
        Self::from_records(meta, records)
    }

    /// Rebuilds a trace, rejecting records that cannot be placed at all.
    /// Protocol-level invariants are left to [`ExecutionTrace::validate`].
    pub fn from_records(meta: TraceMeta, records: Vec<TraceRecord>) -> Result<Self> {
        let graph = DirectedGraph::from_file_format(&meta.graph)?;
        let model = LikelihoodModel::from_file_format(&meta.model)?;
        let theta_star = model.hypothesis_index(&meta.theta_star).ok_or_else(|| {
            Error::InvalidTrace(format!("unknown true hypothesis {}", meta.theta_star))
        })?;
        let n = graph.n();
        let horizon = meta.horizon as usize;
        let mut table: Vec<Vec<Option<AgentStep>>> = vec![vec![None; n]; horizon];
        for r in records {
            if r.t == 0 || r.t as usize > horizon {
                return Err(Error::InvalidTrace(format!("record with t = {} outside 1..={horizon}", r.t)));
            }
            if r.agent == 0 || r.agent > n {
                return Err(Error::InvalidTrace(format!("record for unknown agent {}", r.agent)));
            }
            let i = r.agent - 1;
            if r.log_belief.len() != model.m() {
                return Err(Error::InvalidTrace(format!(
                    "agent {} at t = {}: belief of length {}",
                    r.agent,
                    r.t,
                    r.log_belief.len()
                )));
            }
            let signal = match &r.signal {
                None => None,
                Some(label) => Some(
                    model
                        .agent(i)
                        .signals()
                        .iter()
                        .position(|s| s == label)
                        .ok_or_else(|| {
                            Error::InvalidTrace(format!("agent {}: unknown signal {label}", r.agent))
                        })?,
                ),
            };
            let quorum = match r.quorum {
                None => None,
                Some(q) => {
                    if q.iter().any(|&j| j == 0 || j > n) {
                        return Err(Error::InvalidTrace(format!(
                            "agent {} at t = {}: quorum label out of range",
                            r.agent, r.t
                        )));
                    }
                    Some(q.into_iter().map(|j| j - 1).collect())
                }
            };
            let slot = &mut table[(r.t - 1) as usize][i];
            if slot.is_some() {
                return Err(Error::InvalidTrace(format!(
                    "duplicate record for agent {} at t = {}",
                    r.agent, r.t
                )));
            }
            *slot = Some(AgentStep {
                alive: r.alive,
                quorum,
                signal,
                log_belief: r.log_belief,
            });
        }
        let steps = table
            .into_iter()
            .enumerate()
            .map(|(k, agents)| IterationStep::new(k as u64 + 1, agents))
            .collect();
        Ok(Self::new(graph, model, meta.f, theta_star, meta.seed, meta.adversary, steps))
    }

    /// Protocol invariants a well-formed trace satisfies; returns one message
    /// per violation.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.n();
        let mut prev_end = self.graph.all_nodes();
        for s in &self.steps {
            let t = s.t;
            if s.alive_start() != prev_end {
                v.push(format!(
                    "t = {t}: agents started {:?} but {:?} completed the previous iteration",
                    s.alive_start().labels(),
                    prev_end.labels()
                ));
            }
            for i in 0..n {
                let Some(a) = &s.agents[i] else { continue };
                let label = i + 1;
                if let Some(q) = &a.quorum {
                    let expected = self.graph.in_degree(i).saturating_sub(self.f);
                    if q.len() != expected {
                        v.push(format!("t = {t}, agent {label}: quorum size {} != {expected}", q.len()));
                    }
                    if q.windows(2).any(|w| w[0] >= w[1]) {
                        v.push(format!("t = {t}, agent {label}: quorum not sorted and distinct"));
                    }
                    let qs: NodeSet = q.iter().copied().collect();
                    if !qs.is_subset(self.graph.in_set(i)) {
                        v.push(format!("t = {t}, agent {label}: quorum outside in-neighbors"));
                    }
                    if !qs.is_subset(s.alive_start()) {
                        v.push(format!("t = {t}, agent {label}: quorum uses agents not alive at start"));
                    }
                    if a.signal.is_none() {
                        v.push(format!("t = {t}, agent {label}: update without a signal"));
                    }
                } else if a.alive {
                    v.push(format!("t = {t}, agent {label}: completed without a quorum"));
                }
                if a.log_belief.iter().any(|x| !x.is_finite()) {
                    v.push(format!("t = {t}, agent {label}: non-finite belief"));
                } else if logsumexp(&a.log_belief).abs() > 1e-9 {
                    v.push(format!("t = {t}, agent {label}: belief not normalized"));
                }
            }
            prev_end = s.alive_end();
        }
        let crashed = n - self.survivors().len();
        if crashed > self.f {
            v.push(format!("{crashed} agents crashed but f = {}", self.f));
        }
        v
    }
}
