//! Directed acyclic graphs and the oracle structure derived from them.
//!
//! A [`Dag`] carries a designated target node. Everything that the benchmark treats
//! as ground truth (the Markov boundary of the target, layered blankets, skeleton
//! proximity masks) is computed here from the graph alone.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("a DAG needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge density {0} is outside [0, 1]")]
    InvalidDensity(f64),
    #[error("node {node} is out of range for a graph with {node_count} nodes")]
    InvalidNode { node: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(usize, usize),
    #[error("edges contain a directed cycle")]
    Cycle,
    #[error("d-separation query has overlapping arguments: {0}")]
    OverlappingArguments(String),
    #[error("{0} must be at least 1")]
    ZeroDepth(&'static str),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Canonical (sorted, deduplicated) set of node indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn insert(&mut self, v: usize) -> bool {
        match self.0.binary_search(&v) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, v);
                true
            }
        }
    }

    pub fn remove(&mut self, v: usize) -> bool {
        match self.0.binary_search(&v) {
            Ok(pos) => {
                self.0.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.0.iter().all(|&v| other.contains(v))
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        self.0.iter().chain(other.0.iter()).copied().collect()
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        self.0.iter().copied().filter(|&v| other.contains(v)).collect()
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        self.0.iter().copied().filter(|&v| !other.contains(v)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for NodeSet {
    fn from(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

impl From<NodeSet> for Vec<usize> {
    fn from(s: NodeSet) -> Self {
        s.0
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::from(iter.into_iter().collect::<Vec<_>>())
    }
}

impl<'a> IntoIterator for &'a NodeSet {
    type Item = &'a usize;
    type IntoIter = std::slice::Iter<'a, usize>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// On-disk form: `{"node_count", "target", "edges": [[parent, child], ...]}`.
#[derive(Serialize, Deserialize)]
struct DagJson {
    node_count: usize,
    target: usize,
    edges: Vec<[usize; 2]>,
}

/// Directed acyclic graph over `node_count` nodes with a designated target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DagJson", into = "DagJson")]
pub struct Dag {
    node_count: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    target: usize,
    topo_order: Vec<usize>,
}

impl TryFrom<DagJson> for Dag {
    type Error = GraphError;
    fn try_from(j: DagJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = j.edges.iter().map(|e| (e[0], e[1])).collect();
        Dag::new(j.node_count, &edges, j.target)
    }
}

impl From<Dag> for DagJson {
    fn from(d: Dag) -> Self {
        DagJson {
            node_count: d.node_count,
            target: d.target,
            edges: d.edges().into_iter().map(|(p, c)| [p, c]).collect(),
        }
    }
}

impl Dag {
    pub fn new(node_count: usize, edges: &[(usize, usize)], target: usize) -> Result<Self> {
        let mut parents = vec![Vec::new(); node_count];
        for &(p, c) in edges {
            for v in [p, c] {
                if v >= node_count {
                    return Err(GraphError::InvalidNode { node: v, node_count });
                }
            }
            if p == c {
                return Err(GraphError::SelfLoop(p));
            }
            parents[c].push(p);
        }
        for (c, ps) in parents.iter_mut().enumerate() {
            ps.sort_unstable();
            if let Some(w) = ps.windows(2).find(|w| w[0] == w[1]) {
                return Err(GraphError::DuplicateEdge(w[0], c));
            }
        }
        Self::from_parents(parents, target)
    }

    /// Builds from per-node parent lists; lists are sorted here.
    pub fn from_parents(mut parents: Vec<Vec<usize>>, target: usize) -> Result<Self> {
        let node_count = parents.len();
        if target >= node_count {
            return Err(GraphError::InvalidNode { node: target, node_count });
        }
        let mut children = vec![Vec::new(); node_count];
        for (c, ps) in parents.iter_mut().enumerate() {
            ps.sort_unstable();
            for w in ps.windows(2) {
                if w[0] == w[1] {
                    return Err(GraphError::DuplicateEdge(w[0], c));
                }
            }
            for &p in ps.iter() {
                if p >= node_count {
                    return Err(GraphError::InvalidNode { node: p, node_count });
                }
                if p == c {
                    return Err(GraphError::SelfLoop(c));
                }
                children[p].push(c);
            }
        }
        // Kahn; ties resolved by smallest index so the order is canonical.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..node_count).filter(|&v| indegree[v] == 0).collect();
        let mut topo_order = Vec::with_capacity(node_count);
        while let Some(v) = ready.pop_first() {
            topo_order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo_order.len() != node_count {
            return Err(GraphError::Cycle);
        }
        Ok(Self { node_count, parents, children, target, topo_order })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn feature_count(&self) -> usize {
        self.node_count - 1
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// All nodes except the target, ascending.
    pub fn features(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&v| v != self.target).collect()
    }

    pub fn with_target(&self, target: usize) -> Result<Dag> {
        self.check(target)?;
        Ok(Dag { target, ..self.clone() })
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Edges as `(parent, child)`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        e.sort_unstable();
        e
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.node_count {
            Err(GraphError::InvalidNode { node: v, node_count: self.node_count })
        } else {
            Ok(())
        }
    }

    /// Other parents of `v`'s children.
    pub fn spouses(&self, v: usize) -> Result<NodeSet> {
        self.check(v)?;
        Ok(self.children[v]
            .iter()
            .flat_map(|&c| self.parents[c].iter().copied())
            .filter(|&s| s != v)
            .collect())
    }

    /// Parents, children and spouses of `v`, excluding `v`.
    pub fn markov_boundary(&self, v: usize) -> Result<NodeSet> {
        self.check(v)?;
        let spouses = self.children[v].iter().flat_map(|&c| self.parents[c].iter().copied());
        Ok(self.parents[v]
            .iter()
            .copied()
            .chain(self.children[v].iter().copied())
            .chain(spouses)
            .filter(|&s| s != v)
            .collect())
    }

    /// `|B(target)| / (node_count - 1)`.
    pub fn mb_ratio(&self) -> f64 {
        self.mb_ratio_of(self.target).expect("target is a valid node")
    }

    pub fn mb_ratio_of(&self, v: usize) -> Result<f64> {
        Ok(self.markov_boundary(v)?.len() as f64 / self.feature_count() as f64)
    }

    /// `an(seeds)`, including the seeds themselves.
    pub fn ancestors_of(&self, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut mark = vec![false; self.node_count];
        let mut stack: Vec<usize> = seeds.into_iter().collect();
        while let Some(v) = stack.pop() {
            if !mark[v] {
                mark[v] = true;
                stack.extend(self.parents[v].iter().copied().filter(|&p| !mark[p]));
            }
        }
        mark
    }

    fn check_query(&self, a: usize, b: usize, z: &NodeSet) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        for v in z.iter() {
            self.check(v)?;
        }
        if a == b {
            return Err(GraphError::OverlappingArguments(format!("a = b = {a}")));
        }
        if z.contains(a) || z.contains(b) {
            return Err(GraphError::OverlappingArguments(format!(
                "conditioning set {:?} contains an endpoint ({a}, {b})",
                z.members()
            )));
        }
        Ok(())
    }

    /// d-separation of `a` and `b` given `z`, decided on the moral graph of the
    /// ancestral subgraph of `{a, b} ∪ z`.
    pub fn d_separated(&self, a: usize, b: usize, z: &NodeSet) -> Result<bool> {
        self.check_query(a, b, z)?;
        let anc = self.ancestors_of([a, b].into_iter().chain(z.iter()));
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.node_count];
        for v in (0..self.node_count).filter(|&v| anc[v]) {
            let ps = &self.parents[v];
            for (i, &p) in ps.iter().enumerate() {
                adj[p].push(v);
                adj[v].push(p);
                for &q in &ps[i + 1..] {
                    adj[p].push(q);
                    adj[q].push(p);
                }
            }
        }
        let mut seen = vec![false; self.node_count];
        seen[a] = true;
        let mut queue = VecDeque::from([a]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if w == b {
                    return Ok(false);
                }
                if !seen[w] && !z.contains(w) {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        Ok(true)
    }

    /// Nodes d-connected to `source` given `z` (Bayes-ball reachability).
    ///
    /// Entry `v` is true when some active trail joins `source` and `v`; `source`
    /// itself and members of `z` are always false.
    pub fn d_connected_from(&self, source: usize, z: &NodeSet) -> Result<Vec<bool>> {
        self.check(source)?;
        for v in z.iter() {
            self.check(v)?;
        }
        if z.contains(source) {
            return Err(GraphError::OverlappingArguments(format!(
                "source {source} is in the conditioning set"
            )));
        }
        let n = self.node_count;
        let anc_z = self.ancestors_of(z.iter());
        // visited[v][0]: reached travelling up (from a child); [1]: travelling down.
        let mut visited = vec![[false; 2]; n];
        let mut reach = vec![false; n];
        let mut stack = vec![(source, 0usize)];
        while let Some((v, dir)) = stack.pop() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            let observed = z.contains(v);
            if !observed {
                reach[v] = true;
            }
            if dir == 0 && !observed {
                stack.extend(self.parents[v].iter().map(|&p| (p, 0)));
                stack.extend(self.children[v].iter().map(|&c| (c, 1)));
            } else if dir == 1 {
                if !observed {
                    stack.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if anc_z[v] {
                    stack.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        reach[source] = false;
        Ok(reach)
    }

    /// Bayes-ball form of [`Dag::d_separated`].
    pub fn d_separated_reachability(&self, a: usize, b: usize, z: &NodeSet) -> Result<bool> {
        self.check_query(a, b, z)?;
        Ok(!self.d_connected_from(a, z)?[b])
    }

    /// Accumulated layers `[L≤1, ..., L≤k_max]` with `L≤1 = B(y)` and
    /// `L≤k+1 = (L≤k ∪ ⋃_{v ∈ L≤k} B(v)) \ {y}`.
    pub fn layered_blankets(&self, y: usize, k_max: usize) -> Result<Vec<NodeSet>> {
        self.check(y)?;
        if k_max == 0 {
            return Err(GraphError::ZeroDepth("k_max"));
        }
        let mut layers = Vec::with_capacity(k_max);
        let mut current = self.markov_boundary(y)?;
        layers.push(current.clone());
        while layers.len() < k_max {
            current = self.expand_layer(y, &current);
            layers.push(current.clone());
        }
        Ok(layers)
    }

    fn expand_layer(&self, y: usize, layer: &NodeSet) -> NodeSet {
        let mut next: Vec<usize> = layer.members().to_vec();
        for v in layer.iter() {
            next.extend(self.markov_boundary(v).expect("layer members are valid").iter());
        }
        next.retain(|&v| v != y);
        NodeSet::from(next)
    }

    /// Blanket rank per node: the first `k` with `v ∈ L≤k`, `None` for nodes the
    /// closure never absorbs (including `y` itself).
    pub fn blanket_rank(&self, y: usize) -> Result<Vec<Option<usize>>> {
        self.check(y)?;
        let mut rank = vec![None; self.node_count];
        let mut layer = self.markov_boundary(y)?;
        let mut k = 1;
        loop {
            for v in layer.iter() {
                rank[v].get_or_insert(k);
            }
            let next = self.expand_layer(y, &layer);
            if next == layer {
                break;
            }
            layer = next;
            k += 1;
        }
        Ok(rank)
    }

    /// Undirected shortest-path distances from `y` in the skeleton.
    pub fn skeleton_distances(&self, y: usize) -> Result<Vec<Option<usize>>> {
        self.check(y)?;
        let mut dist = vec![None; self.node_count];
        dist[y] = Some(0);
        let mut queue = VecDeque::from([y]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or(0);
            for &w in self.parents[v].iter().chain(self.children[v].iter()) {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Nodes within skeleton distance `radius` of `y`, excluding `y`.
    pub fn proximity_mask(&self, y: usize, radius: usize) -> Result<NodeSet> {
        if radius == 0 {
            return Err(GraphError::ZeroDepth("radius"));
        }
        Ok(self
            .skeleton_distances(y)?
            .iter()
            .enumerate()
            .filter(|&(v, d)| v != y && matches!(d, Some(d) if *d <= radius))
            .map(|(v, _)| v)
            .collect())
    }
}

/// Erdős–Rényi DAG: nodes are placed in a uniformly random order and every
/// forward pair receives an edge independently with probability `density`.
///
/// The target is node 0 until a caller picks one with [`Dag::with_target`].
pub fn generate_er_dag(num_nodes: usize, density: f64, seed: u64) -> Result<Dag> {
    if num_nodes < 2 {
        return Err(GraphError::TooFewNodes(num_nodes));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(GraphError::InvalidDensity(density));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(&mut rng);
    let mut parents = vec![Vec::new(); num_nodes];
    for i in 0..num_nodes {
        for j in (i + 1)..num_nodes {
            if rng.random::<f64>() < density {
                parents[order[j]].push(order[i]);
            }
        }
    }
    Dag::from_parents(parents, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> NodeSet {
        NodeSet::from(v.to_vec())
    }

    #[test]
    fn er_extremes() {
        assert_eq!(generate_er_dag(5, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(generate_er_dag(5, 1.0, 1).unwrap().edge_count(), 10);
    }

    #[test]
    fn er_rejects_bad_arguments() {
        assert_eq!(generate_er_dag(1, 0.5, 1), Err(GraphError::TooFewNodes(1)));
        assert!(matches!(generate_er_dag(5, 1.5, 1), Err(GraphError::InvalidDensity(_))));
        assert!(matches!(generate_er_dag(5, -0.1, 1), Err(GraphError::InvalidDensity(_))));
    }

    #[test]
    fn er_is_deterministic_per_seed() {
        let a = generate_er_dag(30, 0.2, 11).unwrap();
        assert_eq!(a, generate_er_dag(30, 0.2, 11).unwrap());
        assert_ne!(a, generate_er_dag(30, 0.2, 12).unwrap());
    }

    #[test]
    fn construction_rejects_invalid_graphs() {
        assert_eq!(Dag::new(3, &[(0, 1), (1, 2), (2, 0)], 0), Err(GraphError::Cycle));
        assert_eq!(Dag::new(3, &[(1, 1)], 0), Err(GraphError::SelfLoop(1)));
        assert_eq!(Dag::new(3, &[(0, 1), (0, 1)], 0), Err(GraphError::DuplicateEdge(0, 1)));
        assert!(matches!(Dag::new(3, &[(0, 3)], 0), Err(GraphError::InvalidNode { .. })));
        assert!(matches!(Dag::new(3, &[], 3), Err(GraphError::InvalidNode { .. })));
    }

    #[test]
    fn chain_and_collider_boundaries() {
        // A=0 -> Y=1 -> C=2
        let chain = Dag::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        assert_eq!(chain.markov_boundary(1).unwrap(), set(&[0, 2]));
        // Y=0 -> C=1 <- S=2
        let collider = Dag::new(3, &[(0, 1), (2, 1)], 0).unwrap();
        assert_eq!(collider.markov_boundary(0).unwrap(), set(&[1, 2]));
        assert!(chain.markov_boundary(3).is_err());
    }

    #[test]
    fn d_separation_basics() {
        let chain = Dag::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        assert!(chain.d_separated(0, 2, &set(&[1])).unwrap());
        assert!(!chain.d_separated(0, 2, &NodeSet::new()).unwrap());
        let collider = Dag::new(3, &[(0, 1), (2, 1)], 0).unwrap();
        assert!(collider.d_separated(0, 2, &NodeSet::new()).unwrap());
        assert!(!collider.d_separated(0, 2, &set(&[1])).unwrap());
        // conditioning on a descendant of the collider also opens it
        let desc = Dag::new(4, &[(0, 1), (2, 1), (1, 3)], 0).unwrap();
        assert!(!desc.d_separated(0, 2, &set(&[3])).unwrap());
        assert!(!desc.d_separated_reachability(0, 2, &set(&[3])).unwrap());
    }

    #[test]
    fn d_separation_rejects_overlap() {
        let chain = Dag::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        assert!(matches!(chain.d_separated(0, 0, &NodeSet::new()), Err(GraphError::OverlappingArguments(_))));
        assert!(matches!(chain.d_separated(0, 2, &set(&[0])), Err(GraphError::OverlappingArguments(_))));
    }

    #[test]
    fn star_layers_reach_fixed_point() {
        // p0, p1, p2 -> y=3
        let star = Dag::new(4, &[(0, 3), (1, 3), (2, 3)], 3).unwrap();
        let layers = star.layered_blankets(3, 3).unwrap();
        assert_eq!(layers[0], set(&[0, 1, 2]));
        assert_eq!(layers[1], layers[0]);
        assert!(star.layered_blankets(3, 0).is_err());
    }

    #[test]
    fn ranks_and_isolated_nodes() {
        // 0 -> 1 -> 2 -> 3, node 4 isolated, y = 0
        let g = Dag::new(5, &[(0, 1), (1, 2), (2, 3)], 0).unwrap();
        let rank = g.blanket_rank(0).unwrap();
        assert_eq!(rank, vec![None, Some(1), Some(2), Some(3), None]);
    }

    #[test]
    fn proximity_of_collider() {
        let collider = Dag::new(3, &[(0, 1), (2, 1)], 0).unwrap();
        assert_eq!(collider.proximity_mask(0, 1).unwrap(), set(&[1]));
        assert_eq!(collider.proximity_mask(0, 2).unwrap(), set(&[1, 2]));
        assert!(collider.proximity_mask(0, 0).is_err());
    }

    #[test]
    fn mb_ratio_arithmetic() {
        let edgeless = Dag::new(5, &[], 2).unwrap();
        assert_eq!(edgeless.mb_ratio(), 0.0);
        // target 0 with 8 children among 40 features
        let edges: Vec<(usize, usize)> = (1..=8).map(|c| (0, c)).collect();
        let g = Dag::new(41, &edges, 0).unwrap();
        assert!((g.mb_ratio() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn json_shape_is_sorted_edges() {
        let g = Dag::new(3, &[(2, 1), (0, 1)], 0).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"node_count":3,"target":0,"edges":[[0,1],[2,1]]}"#);
        let back: Dag = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Dag>(r#"{"node_count":2,"target":0,"edges":[[0,1],[1,0]]}"#).is_err());
    }

    #[test]
    fn node_set_is_canonical() {
        let s = NodeSet::from(vec![3, 1, 3, 2]);
        assert_eq!(s.members(), &[1, 2, 3]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[1,2,3]");
        let back: NodeSet = serde_json::from_str("[3,3,1]").unwrap();
        assert_eq!(back.members(), &[1, 3]);
    }
}
