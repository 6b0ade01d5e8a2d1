//! Discrete-event execution of the protocol.
//!
//! Time is an integer tick. Every message is tagged with the sender's
//! iteration and delivered into a per-tag inbox, so late messages are kept
//! until (and unless) the receiver needs them. An agent starts iteration `t`
//! by transmitting its current belief, then waits for `|I_i| − f` tag-`t`
//! messages, draws its signal and updates. The event heap, ordered by
//! `(time, sequence)`, is the only source of ordering.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::belief::{partial_update, update_belief, BeliefVector};
use super::config::{AdversarySchedule, CrashPhase, DelayPolicy, SimulationConfig};
use super::trace::{AgentStep, ExecutionTrace, IterationStep};
use crate::error::{Error, Result};
use crate::observation::sample_signal;
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Message {
    from: usize,
    to: usize,
    tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Running,
    Done,
    Crashed,
}

struct Agent {
    iter: u64,
    status: Status,
    belief: Vec<f64>,
    quorum: usize,
    /// tag -> deliveries as `(time, sender)`.
    inbox: BTreeMap<u64, Vec<(u64, usize)>>,
    signal_rng: ChaCha8Rng,
    delay_rng: ChaCha8Rng,
}

struct Engine<'a> {
    cfg: &'a SimulationConfig,
    schedule: AdversarySchedule,
    agents: Vec<Agent>,
    /// `sent[i][t - 1]` is the belief agent `i` transmitted in iteration `t`.
    sent: Vec<Vec<Arc<Vec<f64>>>>,
    out: Vec<Vec<usize>>,
    edge_delay: Vec<Vec<u64>>,
    heap: BinaryHeap<Reverse<(u64, u64, Message)>>,
    held: Vec<Message>,
    seq: u64,
    now: u64,
    ready: VecDeque<usize>,
    table: Vec<Vec<Option<AgentStep>>>,
    adversary_rng: ChaCha8Rng,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimulationConfig) -> Result<Self> {
        let schedule = cfg.validate()?;
        let g = &cfg.graph;
        let n = g.n();
        let m = cfg.model.m();
        let agents = (0..n)
            .map(|i| Agent {
                iter: 1,
                status: Status::Running,
                belief: BeliefVector::uniform(m).log_belief,
                quorum: g.in_degree(i) - cfg.f,
                inbox: BTreeMap::new(),
                signal_rng: substream(cfg.seed, Purpose::Signal, i as u64),
                delay_rng: substream(cfg.seed, Purpose::Delay, i as u64),
            })
            .collect();
        let mut edge_delay = vec![vec![0u64; n]; n];
        if let DelayPolicy::Fixed { dmax, overrides } = &schedule.delay {
            let mut rng = substream(cfg.seed, Purpose::EdgeDelay, 0);
            for (j, i) in g.edges() {
                let drawn = rng.random_range(0..=*dmax);
                edge_delay[j][i] = overrides.get(&(j, i)).copied().unwrap_or(drawn);
            }
        }
        Ok(Self {
            cfg,
            schedule,
            agents,
            sent: vec![Vec::new(); n],
            out: (0..n).map(|j| g.out_neighbors(j)).collect(),
            edge_delay,
            heap: BinaryHeap::new(),
            held: Vec::new(),
            seq: 0,
            now: 0,
            ready: (0..n).collect(),
            table: vec![vec![None; n]; cfg.horizon as usize],
            adversary_rng: substream(cfg.seed, Purpose::Adversary, 0),
        })
    }

    fn record(&mut self, t: u64, i: usize, step: AgentStep) {
        self.table[(t - 1) as usize][i] = Some(step);
    }

    fn crash(&mut self, i: usize, t: u64, quorum: Option<Vec<usize>>, signal: Option<usize>) {
        let a = &mut self.agents[i];
        a.status = Status::Crashed;
        a.inbox.clear();
        let belief = a.belief.clone();
        self.record(
            t,
            i,
            AgentStep {
                alive: false,
                quorum,
                signal,
                log_belief: belief,
            },
        );
    }

    fn schedule_delivery(&mut self, msg: Message, at: u64) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, msg)));
    }

    fn transmit(&mut self, i: usize, t: u64) {
        self.sent[i].push(Arc::new(self.agents[i].belief.clone()));
        debug_assert_eq!(self.sent[i].len() as u64, t);
        for k in 0..self.out[i].len() {
            let to = self.out[i][k];
            let msg = Message { from: i, to, tag: t };
            match &self.schedule.delay {
                DelayPolicy::AdversarialLatest => self.held.push(msg),
                DelayPolicy::Uniform { dmax } => {
                    let d = self.agents[i].delay_rng.random_range(0..=*dmax);
                    self.schedule_delivery(msg, self.now + d);
                }
                DelayPolicy::Fixed { .. } => {
                    let d = self.edge_delay[i][to];
                    self.schedule_delivery(msg, self.now + d);
                }
            }
        }
    }

    fn start_iteration(&mut self, i: usize) {
        if self.agents[i].status != Status::Running {
            return;
        }
        let t = self.agents[i].iter;
        if t > self.cfg.horizon {
            self.agents[i].status = Status::Done;
            return;
        }
        let crash = self.schedule.crash_of(i).filter(|c| c.t == t).map(|c| c.phase);
        if crash == Some(CrashPhase::BeforeTransmit) {
            self.crash(i, t, None, None);
            return;
        }
        self.transmit(i, t);
        if crash == Some(CrashPhase::AfterTransmit) {
            self.crash(i, t, None, None);
            return;
        }
        self.try_update(i);
    }

    fn deliver(&mut self, msg: Message) {
        let a = &mut self.agents[msg.to];
        if a.status == Status::Crashed {
            return;
        }
        a.inbox.entry(msg.tag).or_default().push((self.now, msg.from));
        if a.status == Status::Running && a.iter == msg.tag {
            self.try_update(msg.to);
        }
    }

    fn waiting_count(&self, i: usize) -> usize {
        let a = &self.agents[i];
        a.inbox.get(&a.iter).map_or(0, Vec::len)
    }

    fn try_update(&mut self, i: usize) {
        let t = self.agents[i].iter;
        let q = self.agents[i].quorum;
        if self.waiting_count(i) < q {
            return;
        }
        let mut arrivals = self.agents[i].inbox.remove(&t).unwrap_or_default();
        arrivals.sort_unstable();
        let mut quorum: Vec<usize> = arrivals[..q].iter().map(|&(_, j)| j).collect();
        quorum.sort_unstable();
        let payloads: Vec<Arc<Vec<f64>>> = quorum
            .iter()
            .map(|&j| Arc::clone(&self.sent[j][(t - 1) as usize]))
            .collect();
        let refs: Vec<&[f64]> = payloads.iter().map(|p| p.as_slice()).collect();
        let model = &self.cfg.model;
        let signal = sample_signal(model, i, self.cfg.theta_star, &mut self.agents[i].signal_rng);
        let crash = self.schedule.crash_of(i).filter(|c| c.t == t).map(|c| c.phase);
        let current = &self.agents[i].belief;
        if let Some(CrashPhase::MidUpdate(k)) = crash {
            let partial = partial_update(current, &refs, signal, model, i, q, k)
                .expect("quorum arity is fixed by construction");
            self.agents[i].belief = partial;
            self.crash(i, t, Some(quorum), Some(signal));
            return;
        }
        let next = update_belief(current, &refs, signal, model, i, q)
            .expect("quorum arity is fixed by construction");
        self.agents[i].belief = next.clone();
        self.record(
            t,
            i,
            AgentStep {
                alive: true,
                quorum: Some(quorum),
                signal: Some(signal),
                log_belief: next,
            },
        );
        self.agents[i].iter += 1;
        self.ready.push_back(i);
    }

    /// At quiescence, releases exactly the held messages that blocked agents
    /// still need, chosen in a seeded order. Returns how many were released.
    fn release_held(&mut self) -> usize {
        let mut released = 0;
        let mut keep = Vec::with_capacity(self.held.len());
        let mut by_receiver: BTreeMap<usize, Vec<Message>> = BTreeMap::new();
        for msg in std::mem::take(&mut self.held) {
            let a = &self.agents[msg.to];
            match a.status {
                Status::Crashed => {}
                _ if msg.tag < a.iter => {
                    // Too old to matter; hand it over so nothing stays held
                    // forever.
                    self.schedule_delivery(msg, self.now + 1);
                }
                Status::Running if msg.tag == a.iter => by_receiver.entry(msg.to).or_default().push(msg),
                _ => keep.push(msg),
            }
        }
        for (i, mut msgs) in by_receiver {
            let need = self.agents[i].quorum.saturating_sub(self.waiting_count(i));
            msgs.shuffle(&mut self.adversary_rng);
            let take = need.min(msgs.len());
            for msg in msgs.drain(..take) {
                self.schedule_delivery(msg, self.now + 1);
                released += 1;
            }
            keep.extend(msgs);
        }
        keep.sort_unstable();
        self.held = keep;
        released
    }

    fn run(mut self) -> Result<Vec<IterationStep>> {
        loop {
            while let Some(i) = self.ready.pop_front() {
                self.start_iteration(i);
            }
            if let Some(Reverse((time, _, msg))) = self.heap.pop() {
                self.now = time;
                self.deliver(msg);
                continue;
            }
            if matches!(self.schedule.delay, DelayPolicy::AdversarialLatest) && self.release_held() > 0 {
                continue;
            }
            break;
        }
        let blocked: Vec<usize> = (0..self.agents.len())
            .filter(|&i| self.agents[i].status == Status::Running)
            .map(|i| i + 1)
            .collect();
        if !blocked.is_empty() {
            return Err(Error::Deadlock {
                time: self.now,
                blocked,
            });
        }
        Ok(self
            .table
            .into_iter()
            .enumerate()
            .map(|(k, agents)| IterationStep::new(k as u64 + 1, agents))
            .collect())
    }
}

/// Runs one execution; a deterministic function of the config (seed included).
pub fn run_execution(cfg: &SimulationConfig) -> Result<ExecutionTrace> {
    let steps = Engine::new(cfg)?.run()?;
    Ok(ExecutionTrace::new(
        cfg.graph.clone(),
        cfg.model.clone(),
        cfg.f,
        cfg.theta_star,
        cfg.seed,
        cfg.adversary.clone(),
        steps,
    ))
}

/// Whether every surviving agent ends with `μ_T(θ*) >= threshold`.
pub fn converged(trace: &ExecutionTrace, theta_star: usize, threshold: f64) -> bool {
    trace
        .survivors()
        .iter()
        .all(|i| trace.final_log_belief(i)[theta_star].exp() >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedGraph;
    use crate::observation::LikelihoodModel;
    use crate::protocol::config::{AdversaryConfig, CrashPhaseName, CrashSpec, DelayMode};

    fn config(g: DirectedGraph, f: usize, horizon: u64, adversary: AdversaryConfig) -> SimulationConfig {
        let n = g.n();
        SimulationConfig::new(
            g,
            LikelihoodModel::bernoulli(&vec![(0.3, 0.7); n]).unwrap(),
            f,
            1,
            horizon,
            17,
            adversary,
        )
        .unwrap()
    }

    #[test]
    fn zero_delay_complete_graph_is_lockstep() {
        let cfg = config(DirectedGraph::complete(4).unwrap(), 0, 20, AdversaryConfig::default());
        let trace = run_execution(&cfg).unwrap();
        for s in trace.steps() {
            for (i, a) in s.agents.iter().enumerate() {
                let a = a.as_ref().unwrap();
                assert!(a.alive);
                assert_eq!(a.quorum.as_deref().unwrap(), cfg.graph.in_neighbors(i).as_slice());
            }
        }
    }

    #[test]
    fn before_transmit_crash_removes_agent() {
        let adversary = AdversaryConfig {
            mode: DelayMode::Uniform,
            dmax: 3,
            crash_plan: vec![CrashSpec {
                agent: 2,
                t: 3,
                phase: CrashPhaseName::BeforeTransmit,
                k: None,
            }],
            ..Default::default()
        };
        let cfg = config(DirectedGraph::complete(4).unwrap(), 1, 12, adversary);
        let trace = run_execution(&cfg).unwrap();
        assert!(trace.alive_start(3).contains(1));
        assert!(!trace.alive_end(3).contains(1));
        assert!(!trace.alive_start(4).contains(1));
        for s in &trace.steps()[2..] {
            for a in s.agents.iter().flatten() {
                if let Some(q) = &a.quorum {
                    assert!(!q.contains(&1));
                }
            }
        }
        assert!(trace.validate().is_empty(), "{:?}", trace.validate());
    }

    #[test]
    fn adversarial_latest_is_live() {
        let adversary = AdversaryConfig {
            mode: DelayMode::AdversarialLatest,
            crash_plan: vec![CrashSpec {
                agent: 4,
                t: 5,
                phase: CrashPhaseName::MidUpdate,
                k: Some(1),
            }],
            ..Default::default()
        };
        let cfg = config(DirectedGraph::complete(4).unwrap(), 1, 40, adversary);
        let trace = run_execution(&cfg).unwrap();
        assert_eq!(trace.survivors().labels(), vec![1, 2, 3]);
        for s in trace.steps() {
            for i in s.alive_end().iter() {
                assert_eq!(s.agents[i].as_ref().unwrap().quorum.as_ref().unwrap().len(), 2);
            }
        }
        assert!(trace.validate().is_empty(), "{:?}", trace.validate());
    }

    #[test]
    fn deterministic_per_seed() {
        let adversary = AdversaryConfig {
            mode: DelayMode::Uniform,
            dmax: 5,
            ..Default::default()
        };
        let cfg = config(DirectedGraph::complete(4).unwrap(), 1, 30, adversary);
        assert_eq!(run_execution(&cfg).unwrap(), run_execution(&cfg).unwrap());
        assert_ne!(
            run_execution(&cfg).unwrap(),
            run_execution(&cfg.with_seed(18)).unwrap()
        );
    }

    #[test]
    fn horizon_zero_is_uniform() {
        let cfg = config(DirectedGraph::cycle(3).unwrap(), 0, 0, AdversaryConfig::default());
        let trace = run_execution(&cfg).unwrap();
        assert_eq!(trace.horizon(), 0);
        assert!(!converged(&trace, 1, 0.6));
        assert!(converged(&trace, 1, 0.5));
    }
}
