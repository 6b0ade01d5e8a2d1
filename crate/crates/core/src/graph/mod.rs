//! Static communication topology and the reduced-graph machinery used to
//! decide whether consensus (and hence learning) can survive `f` crashes
//! under arbitrary message delays.
//!
//! Nodes are 0-based internally. Every file format and every report that
//! leaves the crate uses 1-based labels.

mod conditions;
mod nodeset;
mod reduced;
mod scc;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conditions::{
    check_condition1, check_condition2, detectability_report, Condition1Outcome,
    Condition2Outcome, DetectabilityReport, Partition,
};
pub use nodeset::NodeSet;
pub use reduced::{
    enumerate_reduced_graphs, for_each_reduced_candidate, link_removal_subgraphs, Limits,
    ReducedGraph, ReducedGraphJson,
};
pub use scc::{source_components_bits, strongly_connected_components, SourceDecomposition};

/// Upper bound on node count; node sets are 64-bit masks.
pub const MAX_NODES: usize = 64;

/// Directed graph with edges `j -> i` stored as in-neighbor sets.
///
/// Self-loops are never stored; the update rule always includes the agent's
/// own belief, so analysis code adds them where needed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    in_sets: Vec<NodeSet>,
}

/// On-disk graph format with 1-based labels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl DirectedGraph {
    /// Builds a graph from 0-based `(from, to)` pairs.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        if n > MAX_NODES {
            return Err(Error::InvalidGraph(format!(
                "{n} nodes exceeds the supported maximum of {MAX_NODES}"
            )));
        }
        let mut in_sets = vec![NodeSet::EMPTY; n];
        for (from, to) in edges {
            if from >= n || to >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a node outside 1..={n}",
                    from + 1,
                    to + 1
                )));
            }
            if from == to {
                return Err(Error::InvalidGraph(format!("self-loop on node {}", from + 1)));
            }
            if in_sets[to].contains(from) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    from + 1,
                    to + 1
                )));
            }
            in_sets[to].insert(from);
        }
        Ok(Self { n, in_sets })
    }

    /// Complete digraph on `n` nodes.
    pub fn complete(n: usize) -> Result<Self> {
        let edges = (0..n).flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i)));
        Self::new(n, edges)
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(n, std::iter::empty());
        }
        Self::new(n, (0..n).map(|j| (j, (j + 1) % n)))
    }

    pub fn from_file_format(file: &GraphFile) -> Result<Self> {
        let mut edges = Vec::with_capacity(file.edges.len());
        for &[from, to] in &file.edges {
            if from == 0 || to == 0 {
                return Err(Error::InvalidGraph(
                    "node labels are 1-based; found label 0".into(),
                ));
            }
            edges.push((from - 1, to - 1));
        }
        Self::new(file.n, edges)
    }

    pub fn to_file_format(&self) -> GraphFile {
        GraphFile {
            n: self.n,
            edges: self.edges().map(|(j, i)| [j + 1, i + 1]).collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        Self::from_file_format(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn all_nodes(&self) -> NodeSet {
        NodeSet::full(self.n)
    }

    /// `I_i`, the in-neighbors of `i` (self excluded).
    pub fn in_set(&self, i: usize) -> NodeSet {
        self.in_sets[i]
    }

    pub fn in_sets(&self) -> &[NodeSet] {
        &self.in_sets
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.in_sets[i].iter().collect()
    }

    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.in_sets[i].contains(j)).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_sets[i].len()
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.n).map(|i| self.in_degree(i)).max().unwrap_or(0)
    }

    pub fn min_in_degree(&self) -> usize {
        (0..self.n).map(|i| self.in_degree(i)).min().unwrap_or(0)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        to < self.n && self.in_sets[to].contains(from)
    }

    /// Edges as 0-based `(from, to)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let set: BTreeSet<(usize, usize)> = (0..self.n)
            .flat_map(|i| self.in_sets[i].iter().map(move |j| (j, i)))
            .collect();
        set.into_iter()
    }

    pub fn edge_count(&self) -> usize {
        self.in_sets.iter().map(|s| s.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(DirectedGraph::new(2, [(0, 0)]).is_err());
        assert!(DirectedGraph::new(2, [(0, 1), (0, 1)]).is_err());
        assert!(DirectedGraph::new(2, [(0, 2)]).is_err());
        assert!(DirectedGraph::new(0, []).is_err());
    }

    #[test]
    fn json_is_one_based() {
        let g = DirectedGraph::from_json_str(r#"{"n":3,"edges":[[1,2],[2,3],[3,1]]}"#).unwrap();
        assert_eq!(g.in_neighbors(1), vec![0]);
        assert_eq!(g.in_neighbors(0), vec![2]);
        assert!(DirectedGraph::from_json_str(r#"{"n":2,"edges":[[0,1]]}"#).is_err());
        assert!(DirectedGraph::from_json_str(r#"{"n":2,"edges":[[1,1]]}"#).is_err());
        assert!(DirectedGraph::from_json_str(r#"{"n":2,"edges":[[1,2],[1,2]]}"#).is_err());
        let back = g.to_file_format();
        assert_eq!(DirectedGraph::from_file_format(&back).unwrap(), g);
    }

    #[test]
    fn in_neighbors_match_edges() {
        let g = DirectedGraph::complete(4).unwrap();
        for i in 0..4 {
            let from_edges: Vec<usize> = g.edges().filter(|&(_, t)| t == i).map(|(j, _)| j).collect();
            assert_eq!(from_edges, g.in_neighbors(i));
            assert!(!g.in_set(i).contains(i));
        }
        assert_eq!(g.max_in_degree(), 3);
        assert_eq!(g.edge_count(), 12);
    }
}
