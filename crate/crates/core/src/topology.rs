//! Device dependency graph: validation, topological order, depth levels and
//! the ancestor/descendant reachability index.
//!
//! Nodes are stored in lexicographic order of their [`DeviceId`], so a node's
//! index doubles as its deterministic tie-break rank everywhere an order is
//! otherwise unspecified.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid device id {0:?}: ids must be non-empty and contain no whitespace")]
    InvalidId(String),
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self edge on {0}")]
    SelfEdge(String),
    #[error("dependency graph has a cycle: {}", format_cycle(.0))]
    Cycle(Vec<DeviceId>),
}

fn format_cycle(cycle: &[DeviceId]) -> String {
    let mut s: Vec<&str> = cycle.iter().map(DeviceId::as_str).collect();
    if let Some(first) = cycle.first() {
        s.push(first.as_str());
    }
    s.join(" -> ")
}

/// Identifier of a monitored device. Clones share one allocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId(Arc<str>);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Result<Self, TopologyError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(TopologyError::InvalidId(id));
        }
        Ok(DeviceId(id.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DeviceId {
    type Error = TopologyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DeviceId::new(value)
    }
}

impl From<DeviceId> for String {
    fn from(id: DeviceId) -> Self {
        id.0.to_string()
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for DeviceId {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceId::new(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    from: String,
    to: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

/// Directed dependency graph over devices; edges point along power or
/// information flow (parent -> child).
///
/// Construction rejects self edges, duplicate nodes and duplicate edges but
/// not cycles: acyclicity is checked by [`validate_acyclic`](Self::validate_acyclic)
/// and by every order-dependent operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    ids: Vec<DeviceId>,
    kinds: Vec<Option<String>>,
    index: HashMap<DeviceId, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    edge_count: usize,
}

impl DependencyGraph {
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self, TopologyError>
    where
        N: IntoIterator<Item = (DeviceId, Option<String>)>,
        E: IntoIterator<Item = (DeviceId, DeviceId)>,
    {
        let mut nodes: Vec<(DeviceId, Option<String>)> = nodes.into_iter().collect();
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        for w in nodes.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TopologyError::DuplicateNode(w[0].0.to_string()));
            }
        }
        let (ids, kinds): (Vec<DeviceId>, Vec<Option<String>>) = nodes.into_iter().unzip();
        let index: HashMap<DeviceId, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

        let n = ids.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        let mut edge_count = 0;
        for (from, to) in edges {
            let u = *index
                .get(&from)
                .ok_or_else(|| TopologyError::UnknownDevice(from.to_string()))?;
            let v = *index
                .get(&to)
                .ok_or_else(|| TopologyError::UnknownDevice(to.to_string()))?;
            if u == v {
                return Err(TopologyError::SelfEdge(from.to_string()));
            }
            children[u].push(v);
            parents[v].push(u);
            edge_count += 1;
        }
        for (u, list) in children.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(TopologyError::DuplicateEdge(
                    ids[u].to_string(),
                    ids[w[0]].to_string(),
                ));
            }
        }
        for list in &mut parents {
            list.sort_unstable();
        }
        Ok(DependencyGraph {
            ids,
            kinds,
            index,
            children,
            parents,
            edge_count,
        })
    }

    /// Parse the JSON topology document (`nodes: [{id, kind}]`, `edges: [{from, to}]`).
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_str(text).map_err(|e| TopologyError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| Ok((DeviceId::new(n.id)?, n.kind)))
            .collect::<Result<Vec<_>, TopologyError>>()?;
        let known: std::collections::HashSet<&DeviceId> = nodes.iter().map(|(id, _)| id).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in file.edges {
            let from = DeviceId::new(e.from)?;
            let to = DeviceId::new(e.to)?;
            for id in [&from, &to] {
                if !known.contains(id) {
                    return Err(TopologyError::UnknownDevice(id.to_string()));
                }
            }
            edges.push((from, to));
        }
        DependencyGraph::new(nodes, edges)
    }

    /// Canonical document: nodes and edges sorted lexicographically.
    pub fn to_canonical_string(&self) -> String {
        let file = TopologyFile {
            nodes: self
                .ids
                .iter()
                .zip(&self.kinds)
                .map(|(id, kind)| NodeRecord {
                    id: id.to_string(),
                    kind: kind.clone(),
                })
                .collect(),
            edges: self
                .edges()
                .map(|(u, v)| EdgeRecord {
                    from: self.ids[u].to_string(),
                    to: self.ids[v].to_string(),
                })
                .collect(),
        };
        canonical::to_canonical_json(&file).expect("topology serialization cannot fail")
    }

    /// SHA-256 of the canonical form.
    pub fn content_hash(&self) -> String {
        canonical::sha256_hex(self.to_canonical_string().as_bytes())
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn ids(&self) -> &[DeviceId] {
        &self.ids
    }

    pub fn id(&self, ix: usize) -> &DeviceId {
        &self.ids[ix]
    }

    pub fn kind(&self, ix: usize) -> Option<&str> {
        self.kinds[ix].as_deref()
    }

    pub fn index_of(&self, id: &DeviceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn index_of_str(&self, id: &str) -> Option<usize> {
        DeviceId::new(id).ok().and_then(|id| self.index_of(&id))
    }

    pub fn children(&self, ix: usize) -> &[usize] {
        &self.children[ix]
    }

    pub fn parents(&self, ix: usize) -> &[usize] {
        &self.parents[ix]
    }

    /// Edges as `(parent, child)` index pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(|&v| self.parents[v].is_empty())
    }

    /// One witness cycle if the graph is not acyclic.
    pub fn find_cycle(&self) -> Option<Vec<DeviceId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let n = self.node_count();
        let mut mark = vec![Mark::New; n];
        let mut path: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for root in 0..n {
            if mark[root] != Mark::New {
                continue;
            }
            mark[root] = Mark::Open;
            path.push(root);
            stack.push((root, 0));
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if let Some(&w) = self.children[v].get(*next) {
                    *next += 1;
                    match mark[w] {
                        Mark::New => {
                            mark[w] = Mark::Open;
                            path.push(w);
                            stack.push((w, 0));
                        }
                        Mark::Open => {
                            let start = path.iter().position(|&p| p == w).unwrap_or(0);
                            return Some(path[start..].iter().map(|&p| self.ids[p].clone()).collect());
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[v] = Mark::Done;
                    path.pop();
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn validate_acyclic(&self) -> Result<(), TopologyError> {
        match self.find_cycle() {
            Some(cycle) => Err(TopologyError::Cycle(cycle)),
            None => Ok(()),
        }
    }

    /// Kahn's algorithm; among ready nodes the lexicographically smallest id
    /// goes first.
    pub fn topological_order(&self) -> Result<Vec<usize>, TopologyError> {
        let n = self.node_count();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &w in &self.children[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push(Reverse(w));
                }
            }
        }
        if order.len() < n {
            return Err(TopologyError::Cycle(self.find_cycle().unwrap_or_default()));
        }
        Ok(order)
    }

    pub fn topological_sort(&self) -> Result<Vec<DeviceId>, TopologyError> {
        Ok(self
            .topological_order()?
            .into_iter()
            .map(|v| self.ids[v].clone())
            .collect())
    }

    /// Longest-path distance from any source.
    pub fn depth_levels(&self) -> Result<LevelMap, TopologyError> {
        let order = self.topological_order()?;
        let mut levels = vec![0u32; self.node_count()];
        for v in order {
            for &w in &self.children[v] {
                levels[w] = levels[w].max(levels[v] + 1);
            }
        }
        Ok(LevelMap { levels })
    }

    pub fn build_reachability(&self) -> Result<ReachabilityIndex, TopologyError> {
        ReachabilityIndex::build(self)
    }
}

/// Device level: length of the longest directed path from a source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMap {
    levels: Vec<u32>,
}

impl LevelMap {
    pub fn level(&self, ix: usize) -> u32 {
        self.levels[ix]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.levels
    }
}

#[derive(Debug, Clone)]
enum DescendantSet {
    Sparse(Box<[u32]>),
    Dense(Box<[u64]>),
}

/// Descendant sets for every device, accumulated in reverse topological order.
///
/// Each set is stored as a sorted id list while it is small and as a bitset
/// once it exceeds `n / 32` members, so tree-like power chains stay near
/// linear in memory while dense DAGs fall back to `n^2 / 64` words.
#[derive(Debug, Clone)]
pub struct ReachabilityIndex {
    n: usize,
    sets: Vec<DescendantSet>,
    counts: Vec<usize>,
}

impl ReachabilityIndex {
    fn build(graph: &DependencyGraph) -> Result<Self, TopologyError> {
        let order = graph.topological_order()?;
        let n = graph.node_count();
        let words = n.div_ceil(64);
        let dense_threshold = n / 32;
        let mut sets: Vec<DescendantSet> = vec![DescendantSet::Sparse(Box::new([])); n];
        let mut counts = vec![0usize; n];

        for &v in order.iter().rev() {
            let kids = graph.children(v);
            let estimate: usize = kids.iter().map(|&c| counts[c] + 1).sum();
            let (set, count) = if estimate > dense_threshold {
                let mut bits = vec![0u64; words];
                for &c in kids {
                    bits[c / 64] |= 1 << (c % 64);
                    match &sets[c] {
                        DescendantSet::Dense(child) => {
                            for (b, w) in bits.iter_mut().zip(child.iter()) {
                                *b |= w;
                            }
                        }
                        DescendantSet::Sparse(child) => {
                            for &d in child.iter() {
                                bits[d as usize / 64] |= 1 << (d % 64);
                            }
                        }
                    }
                }
                let count = bits.iter().map(|w| w.count_ones() as usize).sum();
                if count > dense_threshold {
                    (DescendantSet::Dense(bits.into_boxed_slice()), count)
                } else {
                    let list: Vec<u32> = BitIter::new(&bits).map(|d| d as u32).collect();
                    (DescendantSet::Sparse(list.into_boxed_slice()), count)
                }
            } else {
                let mut list: Vec<u32> = Vec::with_capacity(estimate);
                for &c in kids {
                    list.push(c as u32);
                    match &sets[c] {
                        DescendantSet::Sparse(child) => list.extend_from_slice(child),
                        DescendantSet::Dense(child) => {
                            list.extend(BitIter::new(child).map(|d| d as u32))
                        }
                    }
                }
                list.sort_unstable();
                list.dedup();
                let count = list.len();
                (DescendantSet::Sparse(list.into_boxed_slice()), count)
            };
            sets[v] = set;
            counts[v] = count;
        }
        Ok(ReachabilityIndex { n, sets, counts })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// True iff a directed path `from ⇝ to` of length ≥ 1 exists.
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        match &self.sets[from] {
            DescendantSet::Sparse(list) => list.binary_search(&(to as u32)).is_ok(),
            DescendantSet::Dense(bits) => bits[to / 64] >> (to % 64) & 1 == 1,
        }
    }

    /// The cause indicator: `cause` is `effect` itself or one of its ancestors.
    pub fn explains(&self, cause: usize, effect: usize) -> bool {
        cause == effect || self.reaches(cause, effect)
    }

    pub fn descendant_count(&self, v: usize) -> usize {
        self.counts[v]
    }

    /// Descendants of `v` in ascending index order.
    pub fn descendants(&self, v: usize) -> Descendants<'_> {
        match &self.sets[v] {
            DescendantSet::Sparse(list) => Descendants::Sparse(list.iter()),
            DescendantSet::Dense(bits) => Descendants::Dense(BitIter::new(bits)),
        }
    }
}

pub enum Descendants<'a> {
    Sparse(std::slice::Iter<'a, u32>),
    Dense(BitIter<'a>),
}

impl Iterator for Descendants<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Descendants::Sparse(it) => it.next().map(|&d| d as usize),
            Descendants::Dense(it) => it.next(),
        }
    }
}

pub struct BitIter<'a> {
    words: &'a [u64],
    word: usize,
    current: u64,
}

impl<'a> BitIter<'a> {
    fn new(words: &'a [u64]) -> Self {
        BitIter {
            words,
            word: 0,
            current: words.first().copied().unwrap_or(0),
        }
    }
}

impl Iterator for BitIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word * 64 + bit);
            }
            self.word += 1;
            if self.word >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word];
        }
    }
}
