use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, GraphFile};
use crate::observation::{LikelihoodModel, ModelFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Each message independently waits `U{0..=dmax}` ticks.
    #[default]
    Uniform,
    /// Each edge has one delay for the whole run, listed in `edge_delays`
    /// or drawn once from `U{0..=dmax}`.
    Fixed,
    /// Messages are held until some receiver cannot otherwise complete its
    /// quorum, and then only the missing ones are released.
    AdversarialLatest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashPhaseName {
    BeforeTransmit,
    AfterTransmit,
    MidUpdate,
    AfterUpdate,
}

/// One crash as written in a config file (1-based agent label).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub agent: usize,
    pub t: u64,
    pub phase: CrashPhaseName,
    /// Hypotheses updated before a `mid_update` crash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AdversaryConfig {
    #[serde(default)]
    pub mode: DelayMode,
    #[serde(default)]
    pub dmax: u64,
    /// `[from, to, delay]` triples with 1-based labels (fixed mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_delays: Vec<[u64; 3]>,
    #[serde(default)]
    pub crash_plan: Vec<CrashSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPhase {
    BeforeTransmit,
    AfterTransmit,
    /// Crash after updating the first `k` hypotheses of iteration `t`.
    MidUpdate(usize),
}

/// A crash normalized to 0-based agents. An `after_update` crash at `t`
/// is indistinguishable from a `before_transmit` crash at `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashEvent {
    pub agent: usize,
    pub t: u64,
    pub phase: CrashPhase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DelayPolicy {
    Uniform { dmax: u64 },
    Fixed { dmax: u64, overrides: BTreeMap<(usize, usize), u64> },
    AdversarialLatest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversarySchedule {
    pub delay: DelayPolicy,
    pub crashes: Vec<CrashEvent>,
}

impl AdversarySchedule {
    pub fn crash_of(&self, agent: usize) -> Option<CrashEvent> {
        self.crashes.iter().copied().find(|c| c.agent == agent)
    }
}

impl AdversaryConfig {
    pub fn schedule(&self, g: &DirectedGraph, m: usize, f: usize) -> Result<AdversarySchedule> {
        let n = g.n();
        if self.crash_plan.len() > f {
            return Err(Error::InvalidConfig(format!(
                "crash plan lists {} agents but f = {f}",
                self.crash_plan.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut crashes = Vec::with_capacity(self.crash_plan.len());
        for c in &self.crash_plan {
            if c.agent == 0 || c.agent > n {
                return Err(Error::InvalidConfig(format!("crash agent {} out of range", c.agent)));
            }
            if !seen.insert(c.agent) {
                return Err(Error::InvalidConfig(format!("agent {} crashes twice", c.agent)));
            }
            if c.t == 0 {
                return Err(Error::InvalidConfig("crash iterations start at 1".into()));
            }
            let (t, phase) = match c.phase {
                CrashPhaseName::BeforeTransmit => (c.t, CrashPhase::BeforeTransmit),
                CrashPhaseName::AfterTransmit => (c.t, CrashPhase::AfterTransmit),
                CrashPhaseName::AfterUpdate => (c.t + 1, CrashPhase::BeforeTransmit),
                CrashPhaseName::MidUpdate => {
                    let k = c.k.ok_or_else(|| {
                        Error::InvalidConfig(format!("mid_update crash of agent {} needs k", c.agent))
                    })?;
                    if k > m {
                        return Err(Error::InvalidConfig(format!(
                            "mid_update k = {k} exceeds {m} hypotheses"
                        )));
                    }
                    (c.t, CrashPhase::MidUpdate(k))
                }
            };
            crashes.push(CrashEvent {
                agent: c.agent - 1,
                t,
                phase,
            });
        }
        let delay = match self.mode {
            DelayMode::Uniform => DelayPolicy::Uniform { dmax: self.dmax },
            DelayMode::AdversarialLatest => DelayPolicy::AdversarialLatest,
            DelayMode::Fixed => {
                let mut overrides = BTreeMap::new();
                for &[j, i, d] in &self.edge_delays {
                    let (j, i) = (j as usize, i as usize);
                    if j == 0 || i == 0 || j > n || i > n || !g.has_edge(j - 1, i - 1) {
                        return Err(Error::InvalidConfig(format!("edge delay on non-edge {j} -> {i}")));
                    }
                    overrides.insert((j - 1, i - 1), d);
                }
                DelayPolicy::Fixed {
                    dmax: self.dmax,
                    overrides,
                }
            }
        };
        Ok(AdversarySchedule { delay, crashes })
    }
}

/// Everything that determines one execution.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub graph: DirectedGraph,
    pub model: LikelihoodModel,
    pub f: usize,
    /// Index of the true hypothesis.
    pub theta_star: usize,
    pub horizon: u64,
    pub seed: u64,
    pub adversary: AdversaryConfig,
}

impl SimulationConfig {
    pub fn new(
        graph: DirectedGraph,
        model: LikelihoodModel,
        f: usize,
        theta_star: usize,
        horizon: u64,
        seed: u64,
        adversary: AdversaryConfig,
    ) -> Result<Self> {
        let cfg = Self {
            graph,
            model,
            f,
            theta_star,
            horizon,
            seed,
            adversary,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<AdversarySchedule> {
        if self.model.n_agents() != self.graph.n() {
            return Err(Error::InvalidConfig(format!(
                "model has {} agents but graph has {} nodes",
                self.model.n_agents(),
                self.graph.n()
            )));
        }
        if self.theta_star >= self.model.m() {
            return Err(Error::InvalidConfig("true hypothesis out of range".into()));
        }
        if self.f > self.graph.min_in_degree() {
            return Err(Error::InvalidConfig(format!(
                "f = {} exceeds the minimum in-degree {}",
                self.f,
                self.graph.min_in_degree()
            )));
        }
        self.adversary.schedule(&self.graph, self.model.m(), self.f)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn theta_star_label(&self) -> &str {
        &self.model.hypotheses()[self.theta_star]
    }

    pub fn to_file_format(&self) -> ConfigFile {
        ConfigFile {
            graph: Source::Inline(self.graph.to_file_format()),
            model: Source::Inline(self.model.to_file_format()),
            f: self.f,
            theta_star: self.theta_star_label().to_string(),
            horizon: self.horizon,
            seed: self.seed,
            adversary: self.adversary.clone(),
        }
    }

    /// Parses a config, resolving file references relative to `base`.
    pub fn from_json_str(s: &str, base: &Path) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(s)?;
        file.resolve(base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base)
    }
}

/// Horizon used when a config file omits `T`.
pub const DEFAULT_HORIZON: u64 = 5000;

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

/// A value given inline or as a path to a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub graph: Source<GraphFile>,
    pub model: Source<ModelFile>,
    pub f: usize,
    pub theta_star: String,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adversary: AdversaryConfig,
}

impl ConfigFile {
    pub fn resolve(&self, base: &Path) -> Result<SimulationConfig> {
        let graph = match &self.graph {
            Source::Path(p) => DirectedGraph::load(&base.join(p))?,
            Source::Inline(g) => DirectedGraph::from_file_format(g)?,
        };
        let model = match &self.model {
            Source::Path(p) => LikelihoodModel::load(&base.join(p))?,
            Source::Inline(m) => LikelihoodModel::from_file_format(m)?,
        };
        let theta_star = model.hypothesis_index(&self.theta_star).ok_or_else(|| {
            Error::InvalidConfig(format!("unknown true hypothesis {}", self.theta_star))
        })?;
        SimulationConfig::new(
            graph,
            model,
            self.f,
            theta_star,
            self.horizon,
            self.seed,
            self.adversary.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k4_config(adversary: AdversaryConfig) -> Result<SimulationConfig> {
        SimulationConfig::new(
            DirectedGraph::complete(4).unwrap(),
            LikelihoodModel::bernoulli(&[(0.3, 0.7); 4]).unwrap(),
            1,
            0,
            10,
            1,
            adversary,
        )
    }

    #[test]
    fn parses_inline_config() {
        let text = r#"{
            "graph": {"n": 3, "edges": [[1,2],[2,3],[3,1]]},
            "model": {"hypotheses": ["a","b"], "agents": [
                {"signals": ["x","y"], "likelihood": {"a": [0.3,0.7], "b": [0.7,0.3]}},
                {"signals": ["x","y"], "likelihood": {"a": [0.3,0.7], "b": [0.7,0.3]}},
                {"signals": ["x","y"], "likelihood": {"a": [0.3,0.7], "b": [0.7,0.3]}}]},
            "f": 0, "theta_star": "b", "T": 20, "seed": 5,
            "adversary": {"mode": "fixed", "dmax": 2, "edge_delays": [[1,2,4]]}
        }"#;
        let cfg = SimulationConfig::from_json_str(text, Path::new(".")).unwrap();
        assert_eq!(cfg.theta_star, 1);
        let sched = cfg.validate().unwrap();
        match sched.delay {
            DelayPolicy::Fixed { dmax, overrides } => {
                assert_eq!(dmax, 2);
                assert_eq!(overrides.get(&(0, 1)), Some(&4));
            }
            other => panic!("unexpected policy {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_plans() {
        let crash = |agent, phase, k| CrashSpec {
            agent,
            t: 2,
            phase,
            k,
        };
        let two = AdversaryConfig {
            crash_plan: vec![
                crash(1, CrashPhaseName::BeforeTransmit, None),
                crash(2, CrashPhaseName::BeforeTransmit, None),
            ],
            ..Default::default()
        };
        assert!(k4_config(two).is_err());
        let no_k = AdversaryConfig {
            crash_plan: vec![crash(1, CrashPhaseName::MidUpdate, None)],
            ..Default::default()
        };
        assert!(k4_config(no_k).is_err());
        let ok = AdversaryConfig {
            crash_plan: vec![crash(1, CrashPhaseName::AfterUpdate, None)],
            ..Default::default()
        };
        let cfg = k4_config(ok).unwrap();
        assert_eq!(
            cfg.validate().unwrap().crashes,
            vec![CrashEvent {
                agent: 0,
                t: 3,
                phase: CrashPhase::BeforeTransmit
            }]
        );
    }

    #[test]
    fn f_bounded_by_in_degree() {
        let r = SimulationConfig::new(
            DirectedGraph::cycle(3).unwrap(),
            LikelihoodModel::bernoulli(&[(0.3, 0.7); 3]).unwrap(),
            2,
            0,
            5,
            0,
            AdversaryConfig::default(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
