//! Correlated-failure clustering.
//!
//! The similarity graph joins every pair of devices linked by a dependency
//! path (either direction). Its weight averages the two directed Bayes
//! conditionals computed over the whole vertex set. Girvan–Newman then
//! removes maximum-betweenness edges until the graph is fully fragmented and
//! keeps the connected-component partition of highest weighted modularity.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::root_cause::MarginalTable;
use crate::topology::{DependencyGraph, DeviceId, LevelMap, ReachabilityIndex};

/// Relative tolerance when comparing betweenness values for ties.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("partition covers {found} devices, graph has {expected}")]
    PartitionSize { expected: usize, found: usize },
    #[error("partition file does not list device {0}")]
    MissingDevice(DeviceId),
    #[error("device {0:?} is not part of the dependency graph")]
    UnknownDevice(String),
    #[error("partition was built for graph {found}, current graph is {expected}")]
    GraphMismatch { expected: String, found: String },
    #[error("edge ({0}, {1}) is invalid")]
    InvalidEdge(usize, usize),
}

/// Undirected weighted graph; edges are stored once with `u < v`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl SimilarityGraph {
    /// Build from an arbitrary undirected edge list. Duplicate pairs keep the
    /// last weight.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, CorrelationError> {
        let mut map = BTreeMap::new();
        for (a, b, w) in edges {
            if a == b || a >= n || b >= n || w.is_nan() || w < 0.0 {
                return Err(CorrelationError::InvalidEdge(a, b));
            }
            map.insert((a.min(b), a.max(b)), w);
        }
        Ok(Self::from_sorted(
            n,
            map.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
        ))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (e, &(u, v, _)) in edges.iter().enumerate() {
            adj[u].push((v, e));
            adj[v].push((u, e));
        }
        SimilarityGraph { n, edges, adj }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[v].iter().map(|&(u, e)| (u, self.edges[e].2))
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|&(u, v, _)| (u, v).cmp(&key))
            .ok()
            .map(|e| self.edges[e].2)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }
}

/// Build the similarity graph, dropping edges lighter than `min_weight`
/// (`0.0` keeps every path pair).
///
/// For an ancestor `i` of `j` the only nonzero conditional is
/// `P(i|j) = M[i] / (M[j] + Σ_{a ancestor of j} M[a])`, so the edge weight is
/// half of that.
pub fn build_similarity_graph(
    graph: &DependencyGraph,
    table: &MarginalTable,
    reach: &ReachabilityIndex,
    min_weight: f64,
) -> SimilarityGraph {
    let n = graph.node_count();
    let mut explain_mass: Vec<f64> = table.as_slice().to_vec();
    for i in 0..n {
        let m = table.get(i);
        for j in reach.descendants(i) {
            explain_mass[j] += m;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in reach.descendants(i) {
            let w = if explain_mass[j] > 0.0 {
                table.get(i) / explain_mass[j] / 2.0
            } else {
                0.0
            };
            if w >= min_weight {
                edges.push((i.min(j), i.max(j), w));
            }
        }
    }
    edges.sort_by_key(|e| (e.0, e.1));
    SimilarityGraph::from_sorted(n, edges)
}

/// Edge betweenness over unordered vertex pairs, unweighted shortest paths.
pub fn edge_betweenness(g: &SimilarityGraph) -> Vec<f64> {
    let alive = vec![true; g.edge_count()];
    let mut out = vec![0.0; g.edge_count()];
    let mut scratch = Brandes::new(g.n);
    for s in 0..g.n {
        scratch.accumulate(g, &alive, s, &mut out);
    }
    out.iter_mut().for_each(|b| *b /= 2.0);
    out
}

struct Brandes {
    dist: Vec<i64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl Brandes {
    fn new(n: usize) -> Self {
        Brandes {
            dist: vec![-1; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            order: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
        }
    }

    /// Add source `s`'s dependencies to `out` (ordered pairs).
    fn accumulate(&mut self, g: &SimilarityGraph, alive: &[bool], s: usize, out: &mut [f64]) {
        self.order.clear();
        self.dist[s] = 0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.order.push(v);
            for &(w, e) in &g.adj[v] {
                if !alive[e] {
                    continue;
                }
                if self.dist[w] < 0 {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                }
            }
        }
        for &w in self.order.iter().rev() {
            for &(v, e) in &g.adj[w] {
                if alive[e] && self.dist[v] == self.dist[w] - 1 {
                    let c = self.sigma[v] / self.sigma[w] * (1.0 + self.delta[w]);
                    out[e] += c;
                    self.delta[v] += c;
                }
            }
        }
        for &v in &self.order {
            self.dist[v] = -1;
            self.sigma[v] = 0.0;
            self.delta[v] = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    /// Cluster id per device index, dense and ordered by smallest member.
    pub assignment: Vec<usize>,
    pub cluster_count: usize,
    pub modularity: f64,
}

impl CommunityPartition {
    pub fn cluster_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&v| self.assignment[v] == cluster)
            .collect()
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

/// `Q = Σ_c [W_in(c)/W − (W_tot(c)/2W)²]`; 0 when the graph has no weight.
pub fn modularity(g: &SimilarityGraph, labels: &[usize]) -> Result<f64, CorrelationError> {
    if labels.len() != g.n {
        return Err(CorrelationError::PartitionSize {
            expected: g.n,
            found: labels.len(),
        });
    }
    let total = g.total_weight();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut per: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for &(u, v, w) in &g.edges {
        if labels[u] == labels[v] {
            per.entry(labels[u]).or_default().0 += w;
        }
        per.entry(labels[u]).or_default().1 += w;
        per.entry(labels[v]).or_default().1 += w;
    }
    Ok(per
        .values()
        .map(|&(inner, tot)| inner / total - (tot / (2.0 * total)).powi(2))
        .sum())
}

/// Connected components over alive edges, labelled by smallest member.
fn components(g: &SimilarityGraph, alive: &[bool]) -> (Vec<usize>, usize) {
    let mut label = vec![usize::MAX; g.n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..g.n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(w, e) in &g.adj[v] {
                if alive[e] && label[w] == usize::MAX {
                    label[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

fn reachable_from(g: &SimilarityGraph, alive: &[bool], s: usize, seen: &mut [bool]) -> Vec<usize> {
    let mut out = vec![s];
    seen[s] = true;
    let mut i = 0;
    while i < out.len() {
        let v = out[i];
        i += 1;
        for &(w, e) in &g.adj[v] {
            if alive[e] && !seen[w] {
                seen[w] = true;
                out.push(w);
            }
        }
    }
    out
}

/// Girvan–Newman with recomputation after every removal; returns the
/// maximum-modularity component partition seen. Ties keep the earlier,
/// coarser partition.
pub fn girvan_newman(g: &SimilarityGraph) -> CommunityPartition {
    let m = g.edge_count();
    let mut alive = vec![true; m];
    let mut bt = edge_betweenness(g);
    let (labels, count) = components(g, &alive);
    let mut best = CommunityPartition {
        modularity: modularity(g, &labels).unwrap_or(0.0),
        assignment: labels,
        cluster_count: count,
    };
    let mut brandes = Brandes::new(g.n);
    let mut seen = vec![false; g.n];
    let mut current_count = count;

    for _ in 0..m {
        let max = (0..m)
            .filter(|&e| alive[e])
            .map(|e| bt[e])
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = TIE_TOL * max.abs().max(1.0);
        let Some(cut) = (0..m).find(|&e| alive[e] && bt[e] >= max - tol) else {
            break;
        };
        alive[cut] = false;
        let (u, v, _) = g.edges[cut];

        let mut part = reachable_from(g, &alive, u, &mut seen);
        let split = !seen[v];
        if split {
            part.extend(reachable_from(g, &alive, v, &mut seen));
        }
        for &x in &part {
            for &(_, e) in &g.adj[x] {
                bt[e] = 0.0;
            }
        }
        let mut fresh = vec![0.0; m];
        for &s in &part {
            brandes.accumulate(g, &alive, s, &mut fresh);
        }
        for &x in &part {
            seen[x] = false;
            for &(_, e) in &g.adj[x] {
                if alive[e] {
                    bt[e] = fresh[e] / 2.0;
                }
            }
        }

        if split {
            current_count += 1;
            let (labels, count) = components(g, &alive);
            debug_assert_eq!(count, current_count);
            let q = modularity(g, &labels).unwrap_or(0.0);
            if q > best.modularity + 1e-12 {
                best = CommunityPartition {
                    assignment: labels,
                    cluster_count: count,
                    modularity: q,
                };
            }
        }
    }
    best
}

/// Mean incident edge weight per device; isolated devices score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityTable(Vec<f64>);

impl SeverityTable {
    pub fn get(&self, v: usize) -> f64 {
        self.0[v]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn node_severity(g: &SimilarityGraph) -> SeverityTable {
    SeverityTable(
        (0..g.n)
            .map(|v| {
                let deg = g.adj[v].len();
                if deg == 0 {
                    0.0
                } else {
                    g.neighbors(v).map(|(_, w)| w).sum::<f64>() / deg as f64
                }
            })
            .collect(),
    )
}

/// Every device in a cluster that holds an alarming device, ordered by
/// (level asc, severity desc, id asc).
pub fn cluster_scoped_rank(
    alarming: &[usize],
    partition: &CommunityPartition,
    levels: &LevelMap,
    severity: &SeverityTable,
) -> Vec<usize> {
    let mut hit = vec![false; partition.cluster_count];
    for &d in alarming {
        hit[partition.cluster_of(d)] = true;
    }
    let mut out: Vec<usize> = (0..partition.assignment.len())
        .filter(|&v| hit[partition.cluster_of(v)])
        .collect();
    out.sort_by(|&a, &b| {
        levels
            .level(a)
            .cmp(&levels.level(b))
            .then(severity.get(b).total_cmp(&severity.get(a)))
            .then(a.cmp(&b))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub device_id: DeviceId,
    pub cluster_id: usize,
}

/// Persisted partition, reloaded for online ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub graph_hash: String,
    pub built_at_tick: u64,
    pub modularity: f64,
    pub cluster_count: usize,
    pub clusters: Vec<ClusterRecord>,
}

impl PartitionFile {
    pub fn new(graph: &DependencyGraph, p: &CommunityPartition, built_at_tick: u64) -> Self {
        PartitionFile {
            graph_hash: graph.content_hash(),
            built_at_tick,
            modularity: p.modularity,
            cluster_count: p.cluster_count,
            clusters: p
                .assignment
                .iter()
                .enumerate()
                .map(|(v, &c)| ClusterRecord {
                    device_id: graph.id(v).clone(),
                    cluster_id: c,
                })
                .collect(),
        }
    }

    pub fn to_partition(&self, graph: &DependencyGraph) -> Result<CommunityPartition, CorrelationError> {
        let expected = graph.content_hash();
        if expected != self.graph_hash {
            return Err(CorrelationError::GraphMismatch {
                expected,
                found: self.graph_hash.clone(),
            });
        }
        let mut slots = vec![None; graph.node_count()];
        for r in &self.clusters {
            let ix = graph
                .index_of(&r.device_id)
                .ok_or_else(|| CorrelationError::UnknownDevice(r.device_id.to_string()))?;
            slots[ix] = Some(r.cluster_id);
        }
        let assignment = slots
            .into_iter()
            .enumerate()
            .map(|(ix, c)| c.ok_or_else(|| CorrelationError::MissingDevice(graph.id(ix).clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let cluster_count = assignment.iter().map(|c| c + 1).max().unwrap_or(0);
        Ok(CommunityPartition {
            assignment,
            cluster_count,
            modularity: self.modularity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRecord {
    pub device_id: DeviceId,
    pub severity: f64,
}

pub fn severity_records(graph: &DependencyGraph, sev: &SeverityTable) -> Vec<SeverityRecord> {
    sev.0
        .iter()
        .enumerate()
        .map(|(v, &s)| SeverityRecord {
            device_id: graph.id(v).clone(),
            severity: s,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> DeviceId {
        DeviceId::new(s).unwrap()
    }

    fn dag(nodes: &[&str], edges: &[(&str, &str)]) -> DependencyGraph {
        DependencyGraph::new(
            nodes.iter().map(|n| (id(n), None)),
            edges.iter().map(|(a, b)| (id(a), id(b))),
        )
        .unwrap()
    }

    fn unit(n: usize, edges: &[(usize, usize)]) -> SimilarityGraph {
        SimilarityGraph::from_edges(n, edges.iter().map(|&(a, b)| (a, b, 1.0))).unwrap()
    }

    fn two_triangles() -> SimilarityGraph {
        unit(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
    }

    #[test]
    fn chain_similarity() {
        let g = dag(&["a", "b"], &[("a", "b")]);
        let reach = g.build_reachability().unwrap();
        let t = MarginalTable::from_weights(vec![0.5, 0.5]);
        let s = build_similarity_graph(&g, &t, &reach, 0.0);
        // P(a|b) = 0.5/1.0, P(b|a) = 0
        assert_eq!(s.edges(), &[(0, 1, 0.25)]);
        assert_eq!(s.weight(1, 0), Some(0.25));
    }

    #[test]
    fn diamond_similarity() {
        // a -> b, a -> c, b -> d, c -> d
        let g = dag(&["a", "b", "c", "d"], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        let reach = g.build_reachability().unwrap();
        let t = MarginalTable::from_weights(vec![0.1, 0.2, 0.3, 0.4]);
        let s = build_similarity_graph(&g, &t, &reach, 0.0);
        assert_eq!(s.edge_count(), 5);
        assert!(s.weight(1, 2).is_none());
        // mass explaining b = a + b = 0.3; d = all = 1.0
        assert!((s.weight(0, 1).unwrap() - 0.1 / 0.3 / 2.0).abs() < 1e-15);
        assert!((s.weight(0, 2).unwrap() - 0.1 / 0.4 / 2.0).abs() < 1e-15);
        assert!((s.weight(0, 3).unwrap() - 0.05).abs() < 1e-15);
        assert!((s.weight(1, 3).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.weight(2, 3).unwrap() - 0.15).abs() < 1e-15);
        // 0.05 is below the floor, 0.1 sits on it and stays
        let pruned = build_similarity_graph(&g, &t, &reach, 0.1);
        assert_eq!(pruned.edge_count(), 4);
    }

    #[test]
    fn disconnected_components_have_no_cross_edges() {
        let g = dag(&["a", "b", "c", "d"], &[("a", "b"), ("c", "d")]);
        let reach = g.build_reachability().unwrap();
        let t = MarginalTable::from_weights(vec![1.0; 4]);
        let s = build_similarity_graph(&g, &t, &reach, 0.0);
        assert_eq!(s.edge_count(), 2);
        let p = girvan_newman(&s);
        assert_eq!(p.assignment, vec![0, 0, 1, 1]);
    }

    #[test]
    fn betweenness_examples() {
        assert_eq!(edge_betweenness(&unit(3, &[(0, 1), (1, 2)])), vec![2.0, 2.0]);
        assert_eq!(edge_betweenness(&unit(3, &[(0, 1), (1, 2), (0, 2)])), vec![1.0; 3]);
        let g = two_triangles();
        let b = edge_betweenness(&g);
        let bridge = g.edges().iter().position(|e| (e.0, e.1) == (2, 3)).unwrap();
        assert_eq!(b[bridge], 9.0);
        assert!(b.iter().enumerate().all(|(e, &x)| e == bridge || x < b[bridge]));
    }

    #[test]
    fn modularity_examples() {
        let tri = unit(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(modularity(&tri, &[0, 0, 0]).unwrap().abs() < 1e-15);
        assert!((modularity(&tri, &[0, 1, 2]).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        let two = unit(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        assert!((modularity(&two, &[0, 0, 0, 1, 1, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert!(modularity(&two, &[0, 0]).is_err());
        assert_eq!(modularity(&unit(2, &[]), &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn girvan_newman_examples() {
        let p = girvan_newman(&two_triangles());
        assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert!((p.modularity - modularity(&two_triangles(), &p.assignment).unwrap()).abs() < 1e-15);

        let single = girvan_newman(&unit(2, &[(0, 1)]));
        assert_eq!(single.assignment, vec![0, 0]);
        assert_eq!(single.cluster_count, 1);
        assert_eq!(single.modularity, 0.0);

        let empty = girvan_newman(&unit(3, &[]));
        assert_eq!(empty.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn severity_examples() {
        let g = SimilarityGraph::from_edges(4, [(0, 1, 0.2), (0, 2, 0.4)]).unwrap();
        let s = node_severity(&g);
        assert!((s.get(0) - 0.3).abs() < 1e-15);
        assert_eq!(s.get(1), 0.2);
        assert_eq!(s.get(3), 0.0);
    }

    #[test]
    fn scoped_rank_unions_clusters() {
        let g = dag(
            &["a", "b", "c", "d", "e", "x", "y"],
            &[("a", "b"), ("b", "c"), ("a", "d"), ("d", "e"), ("x", "y")],
        );
        let levels = g.depth_levels().unwrap();
        let p = CommunityPartition {
            assignment: vec![0, 0, 0, 0, 0, 1, 1],
            cluster_count: 2,
            modularity: 0.0,
        };
        let sev = SeverityTable(vec![0.1, 0.5, 0.2, 0.4, 0.3, 0.0, 0.0]);
        let out = cluster_scoped_rank(&[2, 4], &p, &levels, &sev);
        // level 0: a; level 1: b (0.5), d (0.4); level 2: e (0.3), c (0.2)
        assert_eq!(out, vec![0, 1, 3, 4, 2]);
    }

    #[test]
    fn partition_file_round_trip() {
        let g = dag(&["a", "b", "c"], &[("a", "b")]);
        let p = CommunityPartition {
            assignment: vec![0, 0, 1],
            cluster_count: 2,
            modularity: 0.25,
        };
        let f = PartitionFile::new(&g, &p, 99);
        assert_eq!(f.to_partition(&g).unwrap(), p);
        let other = dag(&["a", "b", "c"], &[]);
        assert!(matches!(
            f.to_partition(&other),
            Err(CorrelationError::GraphMismatch { .. })
        ));
    }
}
