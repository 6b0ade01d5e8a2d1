//! Detectability: every reduced graph has a unique source component
//! (`check_condition1`), equivalently no node partition `(L, R, C)` isolates
//! `L` and `R` from each other beyond what `f` dropped links can explain
//! (`check_condition2`).

use std::ops::ControlFlow;

use serde::Serialize;

use super::reduced::{enumerate_reduced_graphs, for_each_reduced_candidate, Limits};
use super::scc::source_components_bits;
use super::{DirectedGraph, NodeSet, ReducedGraph, ReducedGraphJson};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Condition1Outcome {
    pub holds: bool,
    /// A reduced graph with zero or several source components.
    pub witness: Option<ReducedGraph>,
    pub candidates_visited: u64,
}

/// Node partition with `left` and `right` nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub center: Vec<usize>,
}

impl Partition {
    fn from_sets(l: NodeSet, r: NodeSet, c: NodeSet) -> Self {
        // The condition is symmetric in L and R; report the side holding
        // the smaller label as L.
        let (l, r) = if l.min() <= r.min() { (l, r) } else { (r, l) };
        Self {
            left: l.labels(),
            right: r.labels(),
            center: c.labels(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Condition2Outcome {
    pub holds: bool,
    pub witness: Option<Partition>,
}

pub fn check_condition1(g: &DirectedGraph, f: usize, limits: &Limits) -> Result<Condition1Outcome> {
    let mut witness = None;
    let visited = for_each_reduced_candidate(g, f, limits, |cand| {
        if source_components_bits(cand.nodes, cand.in_sets).len() != 1 {
            witness = Some(cand.to_reduced());
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(Condition1Outcome {
        holds: witness.is_none(),
        witness,
        candidates_visited: visited,
    })
}

pub fn check_condition2(g: &DirectedGraph, f: usize, limits: &Limits) -> Result<Condition2Outcome> {
    let n = g.n();
    if n > limits.max_partition_nodes {
        return Err(Error::Budget {
            what: "partition sweep node count",
            limit: limits.max_partition_nodes as u64,
        });
    }
    let total = 3u64.pow(n as u32);
    let mut labels = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for slot in labels.iter_mut() {
            *slot = (c % 3) as u8;
            c /= 3;
        }
        let mut l = NodeSet::EMPTY;
        let mut r = NodeSet::EMPTY;
        let mut rest = NodeSet::EMPTY;
        for (i, &lab) in labels.iter().enumerate() {
            match lab {
                0 => l.insert(i),
                1 => r.insert(i),
                _ => rest.insert(i),
            }
        }
        if l.is_empty() || r.is_empty() {
            continue;
        }
        let outside_l = r.union(rest);
        let outside_r = l.union(rest);
        let left_ok = l
            .iter()
            .any(|i| g.in_set(i).intersection(outside_l).len() > f);
        let right_ok = r
            .iter()
            .any(|j| g.in_set(j).intersection(outside_r).len() > f);
        if !left_ok && !right_ok {
            return Ok(Condition2Outcome {
                holds: false,
                witness: Some(Partition::from_sets(l, r, rest)),
            });
        }
    }
    Ok(Condition2Outcome {
        holds: true,
        witness: None,
    })
}

/// Summary of the detectability structure of `(g, f)`.
#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityReport {
    pub n: usize,
    pub f: usize,
    pub condition1_holds: bool,
    pub condition2_holds: bool,
    /// Number of distinct reduced graphs.
    pub chi: usize,
    /// Smallest source component over all reduced graphs.
    pub gamma: usize,
    /// `ξ = 1 / xi_denominator` with `xi_denominator = 1 + max_i |I_i|`.
    pub xi_denominator: usize,
    pub xi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition1_witness: Option<ReducedGraphJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition2_witness: Option<Partition>,
}

impl DetectabilityReport {
    /// `n χ`, the block length in the ergodicity bounds.
    pub fn n_chi(&self) -> u64 {
        (self.n as u64) * (self.chi as u64)
    }

    /// `ln ξ^{nχ}`; the value itself underflows `f64` for all but tiny graphs.
    pub fn ln_xi_pow_nchi(&self) -> f64 {
        -(self.n_chi() as f64) * (self.xi_denominator as f64).ln()
    }
}

/// Computes χ, γ, ξ and both condition flags; also returns the reduced
/// graphs it enumerated so callers can reuse them.
pub fn detectability_report(
    g: &DirectedGraph,
    f: usize,
    limits: &Limits,
) -> Result<(DetectabilityReport, Vec<ReducedGraph>)> {
    let reduced = enumerate_reduced_graphs(g, f, limits)?;
    let mut gamma = usize::MAX;
    let mut witness1 = None;
    for h in &reduced {
        let sources = h.source_components();
        if sources.len() != 1 && witness1.is_none() {
            witness1 = Some(h.to_json());
        }
        for s in sources {
            gamma = gamma.min(s.len());
        }
    }
    let c2 = check_condition2(g, f, limits)?;
    let condition1_holds = witness1.is_none();
    if condition1_holds != c2.holds {
        return Err(Error::EquivalenceViolation {
            condition1: condition1_holds,
            condition2: c2.holds,
        });
    }
    let xi_denominator = 1 + g.max_in_degree();
    let report = DetectabilityReport {
        n: g.n(),
        f,
        condition1_holds,
        condition2_holds: c2.holds,
        chi: reduced.len(),
        gamma,
        xi_denominator,
        xi: 1.0 / xi_denominator as f64,
        condition1_witness: witness1,
        condition2_witness: c2.witness,
    };
    Ok((report, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node() {
        let g = DirectedGraph::new(1, []).unwrap();
        let l = Limits::default();
        assert!(check_condition1(&g, 0, &l).unwrap().holds);
        assert!(check_condition2(&g, 0, &l).unwrap().holds);
        let (r, _) = detectability_report(&g, 0, &l).unwrap();
        assert_eq!((r.chi, r.gamma, r.xi_denominator), (1, 1, 1));
        assert_eq!(r.xi, 1.0);
        assert!(r.condition1_holds && r.condition2_holds);
    }

    #[test]
    fn three_cycle_without_faults() {
        let g = DirectedGraph::cycle(3).unwrap();
        let (r, _) = detectability_report(&g, 0, &Limits::default()).unwrap();
        assert_eq!((r.chi, r.gamma, r.xi_denominator), (1, 3, 2));
        assert!(r.condition1_holds);
    }

    #[test]
    fn disjoint_two_cycles_fail_both() {
        let g = DirectedGraph::new(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        let l = Limits::default();
        let c1 = check_condition1(&g, 0, &l).unwrap();
        assert!(!c1.holds);
        let w = c1.witness.unwrap();
        assert_eq!(w.surviving_nodes(), g.all_nodes());
        assert_eq!(w.source_components().len(), 2);
        let c2 = check_condition2(&g, 0, &l).unwrap();
        assert!(!c2.holds);
        assert_eq!(
            c2.witness.unwrap(),
            Partition {
                left: vec![1, 2],
                right: vec![3, 4],
                center: vec![]
            }
        );
    }

    #[test]
    fn partition_budget() {
        let g = DirectedGraph::complete(13).unwrap();
        assert!(matches!(
            check_condition2(&g, 1, &Limits::default()),
            Err(Error::Budget { .. })
        ));
    }
}
