use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use super::NodeSet;

/// Strongly connected components of a (sub)graph and the subset of them
/// that no edge enters from outside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceDecomposition {
    /// Components as sorted 0-based node lists, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    pub source_components: Vec<Vec<usize>>,
}

impl SourceDecomposition {
    pub fn unique_source(&self) -> Option<&[usize]> {
        match self.source_components.as_slice() {
            [only] => Some(only),
            _ => None,
        }
    }
}

/// SCC decomposition of the graph restricted to `nodes`, where edge
/// `j -> i` exists iff `j ∈ in_sets[i]` and both endpoints are in `nodes`.
pub fn strongly_connected_components(
    n: usize,
    nodes: NodeSet,
    in_sets: &[NodeSet],
) -> SourceDecomposition {
    let mut g: DiGraph<usize, ()> = DiGraph::with_capacity(n, 0);
    let idx: Vec<NodeIndex> = (0..n).map(|i| g.add_node(i)).collect();
    for i in nodes.iter() {
        for j in in_sets[i].intersection(nodes).iter() {
            g.add_edge(idx[j], idx[i], ());
        }
    }

    let mut comp_of = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|x| g[x]).collect();
            c.sort_unstable();
            c
        })
        .filter(|c| c.iter().all(|&v| nodes.contains(v)))
        .collect();
    components.sort_by_key(|c| c[0]);
    for (cid, c) in components.iter().enumerate() {
        for &v in c {
            comp_of[v] = cid;
        }
    }

    let mut entered = vec![false; components.len()];
    for i in nodes.iter() {
        for j in in_sets[i].intersection(nodes).iter() {
            if comp_of[j] != comp_of[i] {
                entered[comp_of[i]] = true;
            }
        }
    }
    let source_components = components
        .iter()
        .zip(&entered)
        .filter(|(_, &e)| !e)
        .map(|(c, _)| c.clone())
        .collect();

    SourceDecomposition {
        components,
        source_components,
    }
}

/// Source components via bitmask reachability; the hot path used inside
/// reduced-graph enumeration. Returned in order of smallest member.
pub fn source_components_bits(nodes: NodeSet, in_sets: &[NodeSet]) -> Vec<NodeSet> {
    let mut out_sets = [NodeSet::EMPTY; 64];
    for i in nodes.iter() {
        for j in in_sets[i].intersection(nodes).iter() {
            out_sets[j].insert(i);
        }
    }
    let mut desc = [NodeSet::EMPTY; 64];
    for v in nodes.iter() {
        let mut seen = NodeSet::singleton(v);
        let mut frontier = seen;
        while !frontier.is_empty() {
            let mut next = NodeSet::EMPTY;
            for u in frontier.iter() {
                next = next.union(out_sets[u]);
            }
            frontier = next.difference(seen);
            seen = seen.union(next);
        }
        desc[v] = seen;
    }
    let mut sources = Vec::new();
    let mut covered = NodeSet::EMPTY;
    for v in nodes.iter() {
        if covered.contains(v) {
            continue;
        }
        // Ancestors of v are the nodes whose descendant set contains v.
        let anc: NodeSet = nodes.iter().filter(|&u| desc[u].contains(v)).collect();
        let comp = anc.intersection(desc[v]);
        covered = covered.union(comp);
        if anc == comp {
            sources.push(comp);
        }
    }
    sources
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedGraph;

    fn decompose(g: &DirectedGraph) -> SourceDecomposition {
        strongly_connected_components(g.n(), g.all_nodes(), g.in_sets())
    }

    #[test]
    fn singleton_is_its_own_source() {
        let g = DirectedGraph::new(1, []).unwrap();
        let d = decompose(&g);
        assert_eq!(d.components, vec![vec![0]]);
        assert_eq!(d.source_components, vec![vec![0]]);
    }

    #[test]
    fn three_cycle_is_one_source() {
        let g = DirectedGraph::cycle(3).unwrap();
        let d = decompose(&g);
        assert_eq!(d.components, vec![vec![0, 1, 2]]);
        assert_eq!(d.unique_source(), Some(&[0, 1, 2][..]));
    }

    #[test]
    fn path_has_head_as_only_source() {
        let g = DirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let d = decompose(&g);
        assert_eq!(d.components, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(d.source_components, vec![vec![0]]);
    }

    #[test]
    fn bit_and_tarjan_paths_agree_on_restriction() {
        // Two 2-cycles joined by 2 -> 1; restricted to {0, 1, 3} the
        // surviving edges are 0 <-> 1 only, leaving 3 isolated.
        let g = DirectedGraph::new(4, [(0, 1), (1, 0), (2, 3), (3, 2), (2, 1)]).unwrap();
        let nodes: NodeSet = [0, 1, 3].into_iter().collect();
        let d = strongly_connected_components(4, nodes, g.in_sets());
        let bits = source_components_bits(nodes, g.in_sets());
        let as_vecs: Vec<Vec<usize>> = bits.iter().map(|s| s.iter().collect()).collect();
        assert_eq!(as_vecs, d.source_components);
        assert_eq!(d.source_components, vec![vec![0, 1], vec![3]]);
    }
}
