use std::collections::HashSet;
use std::ops::ControlFlow;

use serde::Serialize;

use super::scc::{source_components_bits, strongly_connected_components, SourceDecomposition};
use super::{DirectedGraph, NodeSet};
use crate::error::{Error, Result};

/// Budgets for the exponential enumerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Maximum number of reduced-graph candidates visited (before dedup).
    pub max_candidates: u64,
    /// Maximum node count for the `3^n` partition sweep.
    pub max_partition_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_candidates: 1_000_000,
            max_partition_nodes: 12,
        }
    }
}

/// A graph obtained by dropping at most `f` in-links per node and then at
/// most `f` of the resulting sinks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedGraph {
    n: usize,
    removed_in_links: Vec<NodeSet>,
    removed_sinks: NodeSet,
    nodes: NodeSet,
    in_sets: Vec<NodeSet>,
}

/// Candidate handed to [`for_each_reduced_candidate`] visitors.
#[derive(Debug)]
pub struct Candidate<'a> {
    pub removed_in_links: &'a [NodeSet],
    pub removed_sinks: NodeSet,
    pub nodes: NodeSet,
    /// In-neighbor sets restricted to `nodes`; empty for removed nodes.
    pub in_sets: &'a [NodeSet],
}

impl Candidate<'_> {
    pub fn to_reduced(&self) -> ReducedGraph {
        ReducedGraph {
            n: self.in_sets.len(),
            removed_in_links: self.removed_in_links.to_vec(),
            removed_sinks: self.removed_sinks,
            nodes: self.nodes,
            in_sets: self.in_sets.to_vec(),
        }
    }

    fn key(&self) -> Vec<u64> {
        std::iter::once(self.nodes.0)
            .chain(self.in_sets.iter().map(|s| s.0))
            .collect()
    }
}

/// 1-based serializable view of a reduced graph.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ReducedGraphJson {
    pub nodes: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub removed_in_links: Vec<[usize; 2]>,
    pub removed_sinks: Vec<usize>,
}

impl ReducedGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn surviving_nodes(&self) -> NodeSet {
        self.nodes
    }

    pub fn in_sets(&self) -> &[NodeSet] {
        &self.in_sets
    }

    pub fn removed_in_links(&self) -> &[NodeSet] {
        &self.removed_in_links
    }

    pub fn removed_sinks(&self) -> NodeSet {
        self.removed_sinks
    }

    /// Surviving edges as 0-based `(from, to)` pairs.
    pub fn surviving_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .flat_map(|i| self.in_sets[i].iter().map(move |j| (j, i)))
            .collect();
        edges.sort_unstable();
        edges
    }

    pub fn source_decomposition(&self) -> SourceDecomposition {
        strongly_connected_components(self.n, self.nodes, &self.in_sets)
    }

    pub fn source_components(&self) -> Vec<NodeSet> {
        source_components_bits(self.nodes, &self.in_sets)
    }

    pub fn unique_source(&self) -> Option<NodeSet> {
        match self.source_components().as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    /// Rows of the 0/1 adjacency matrix `H` with `H[i][j] = 1` iff `j -> i`
    /// survives or `i == j` is a surviving node (implicit self-loop).
    pub fn adjacency_rows(&self) -> Vec<NodeSet> {
        (0..self.n)
            .map(|i| {
                if self.nodes.contains(i) {
                    self.in_sets[i].union(NodeSet::singleton(i))
                } else {
                    NodeSet::EMPTY
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> ReducedGraphJson {
        ReducedGraphJson {
            nodes: self.nodes.labels(),
            edges: self
                .surviving_edges()
                .into_iter()
                .map(|(j, i)| [j + 1, i + 1])
                .collect(),
            removed_in_links: (0..self.n)
                .flat_map(|i| self.removed_in_links[i].iter().map(move |j| [j + 1, i + 1]))
                .collect(),
            removed_sinks: self.removed_sinks.labels(),
        }
    }
}

/// Per-node choices of removed in-link sets (each of size `<= f`).
pub fn link_removal_subgraphs(g: &DirectedGraph, f: usize) -> Vec<Vec<NodeSet>> {
    (0..g.n()).map(|i| g.in_set(i).subsets_up_to(f)).collect()
}

/// Visits every (not deduplicated) reduced-graph candidate of `g`.
///
/// Link-removal choices are walked as a mixed-radix counter with node 0 as
/// the fastest digit; for each, every set of at most `f` sinks of the
/// link-reduced graph is removed in turn. Removing every node is never
/// allowed, so each candidate keeps at least one node. Returns the number of
/// candidates visited.
pub fn for_each_reduced_candidate<F>(
    g: &DirectedGraph,
    f: usize,
    limits: &Limits,
    mut visit: F,
) -> Result<u64>
where
    F: FnMut(&Candidate<'_>) -> ControlFlow<()>,
{
    let n = g.n();
    let options = link_removal_subgraphs(g, f);
    let mut product: u64 = 1;
    for opts in &options {
        product = product.saturating_mul(opts.len() as u64);
        if product > limits.max_candidates {
            return Err(Error::Budget {
                what: "reduced-graph enumeration",
                limit: limits.max_candidates,
            });
        }
    }

    let all = g.all_nodes();
    let mut digits = vec![0usize; n];
    let mut removed = vec![NodeSet::EMPTY; n];
    let mut kept = vec![NodeSet::EMPTY; n];
    let mut restricted = vec![NodeSet::EMPTY; n];
    let mut visited: u64 = 0;

    loop {
        let mut has_out = NodeSet::EMPTY;
        for i in 0..n {
            removed[i] = options[i][digits[i]];
            kept[i] = g.in_set(i).difference(removed[i]);
            has_out = has_out.union(kept[i]);
        }
        let sinks = all.difference(has_out);
        for sink_set in sinks.subsets_up_to(f) {
            if sink_set == all {
                continue;
            }
            visited += 1;
            if visited > limits.max_candidates {
                return Err(Error::Budget {
                    what: "reduced-graph enumeration",
                    limit: limits.max_candidates,
                });
            }
            let nodes = all.difference(sink_set);
            for i in 0..n {
                restricted[i] = if nodes.contains(i) {
                    kept[i].intersection(nodes)
                } else {
                    NodeSet::EMPTY
                };
            }
            let cand = Candidate {
                removed_in_links: &removed,
                removed_sinks: sink_set,
                nodes,
                in_sets: &restricted,
            };
            if visit(&cand).is_break() {
                return Ok(visited);
            }
        }

        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(visited);
            }
            digits[pos] += 1;
            if digits[pos] < options[pos].len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// All distinct reduced graphs of `g`, deduplicated by surviving node set
/// and surviving edge set, in order of first discovery. Its length is `χ`.
pub fn enumerate_reduced_graphs(
    g: &DirectedGraph,
    f: usize,
    limits: &Limits,
) -> Result<Vec<ReducedGraph>> {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut out = Vec::new();
    for_each_reduced_candidate(g, f, limits, |cand| {
        if seen.insert(cand.key()) {
            out.push(cand.to_reduced());
        }
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_zero_yields_the_graph_itself() {
        for g in [
            DirectedGraph::cycle(3).unwrap(),
            DirectedGraph::complete(4).unwrap(),
            DirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap(),
        ] {
            let rs = enumerate_reduced_graphs(&g, 0, &Limits::default()).unwrap();
            assert_eq!(rs.len(), 1);
            assert_eq!(rs[0].surviving_nodes(), g.all_nodes());
            assert_eq!(rs[0].surviving_edges(), g.edges().collect::<Vec<_>>());
        }
    }

    #[test]
    fn two_cycle_with_one_fault() {
        // Link choices: keep both, drop 1->2, drop 2->1, drop both.
        // Sinks then allow removing one node in the last three cases.
        let g = DirectedGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        let rs = enumerate_reduced_graphs(&g, 1, &Limits::default()).unwrap();
        let mut shapes: Vec<(Vec<usize>, Vec<(usize, usize)>)> = rs
            .iter()
            .map(|r| (r.surviving_nodes().iter().collect(), r.surviving_edges()))
            .collect();
        shapes.sort();
        let expected = vec![
            (vec![0], vec![]),
            (vec![0, 1], vec![]),
            (vec![0, 1], vec![(0, 1)]),
            (vec![0, 1], vec![(0, 1), (1, 0)]),
            (vec![0, 1], vec![(1, 0)]),
            (vec![1], vec![]),
        ];
        assert_eq!(shapes, expected);
    }

    #[test]
    fn removed_sinks_were_sinks_after_link_removal() {
        let g = DirectedGraph::complete(4).unwrap();
        for r in enumerate_reduced_graphs(&g, 1, &Limits::default()).unwrap() {
            let kept: Vec<NodeSet> = (0..4)
                .map(|i| g.in_set(i).difference(r.removed_in_links()[i]))
                .collect();
            for s in r.removed_sinks().iter() {
                assert!(kept.iter().all(|k| !k.contains(s)), "{s} was not a sink");
            }
            assert!(r.removed_sinks().len() <= 1);
            assert!(r.removed_in_links().iter().all(|x| x.len() <= 1));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = DirectedGraph::complete(6).unwrap();
        let limits = Limits {
            max_candidates: 100,
            ..Limits::default()
        };
        assert!(matches!(
            enumerate_reduced_graphs(&g, 2, &limits),
            Err(Error::Budget { .. })
        ));
    }
}
