//! Communication graphs, connected components and the round-based multi-hop
//! message store used for decentralized execution.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{MastError, Result};
use crate::posenc::Position;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GraphKind {
    /// Every agent receives from its `k` nearest agents.
    Knn(usize),
    /// Symmetric: edge iff distance is strictly below the radius.
    Disk(f64),
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Knn(k) => write!(f, "knn({k})"),
            GraphKind::Disk(r) => write!(f, "disk({r})"),
        }
    }
}

/// Directed communication graph. An edge `j → i` means `i` receives from `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    in_neighbors: Vec<Vec<usize>>,
}

pub fn distance(a: Position, b: Position) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn distance_sq(a: Position, b: Position) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

impl CommGraph {
    pub fn build(positions: &[Position], kind: GraphKind) -> CommGraph {
        let n = positions.len();
        let mut in_neighbors = vec![Vec::new(); n];
        match kind {
            GraphKind::Knn(k) => {
                let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
                for (i, nbrs) in in_neighbors.iter_mut().enumerate() {
                    order.clear();
                    order.extend(
                        (0..n)
                            .filter(|&j| j != i)
                            .map(|j| (distance_sq(positions[i], positions[j]), j)),
                    );
                    let take = k.min(order.len());
                    if take == 0 {
                        continue;
                    }
                    if take < order.len() {
                        order.select_nth_unstable_by(take - 1, |a, b| a.partial_cmp(b).unwrap());
                    }
                    nbrs.extend(order[..take].iter().map(|&(_, j)| j));
                    nbrs.sort_unstable();
                }
            }
            GraphKind::Disk(r) => {
                for i in 0..n {
                    for j in i + 1..n {
                        if distance(positions[i], positions[j]) < r {
                            in_neighbors[i].push(j);
                            in_neighbors[j].push(i);
                        }
                    }
                }
                for nbrs in &mut in_neighbors {
                    nbrs.sort_unstable();
                }
            }
        }
        CommGraph { in_neighbors }
    }

    /// Builds a graph from explicit `(from, to)` edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> CommGraph {
        let mut in_neighbors = vec![Vec::new(); n];
        for &(from, to) in edges {
            if from != to && !in_neighbors[to].contains(&from) {
                in_neighbors[to].push(from);
            }
        }
        for nbrs in &mut in_neighbors {
            nbrs.sort_unstable();
        }
        CommGraph { in_neighbors }
    }

    pub fn len(&self) -> usize {
        self.in_neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_neighbors.is_empty()
    }

    /// Agents that `i` receives from, ascending.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.in_neighbors[to].binary_search(&from).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    /// Weakly connected components, ids dense and numbered by first node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for to in 0..n {
            for &from in &self.in_neighbors[to] {
                let (a, b) = (find(&mut parent, from), find(&mut parent, to));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut ids = vec![usize::MAX; n];
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for i in 0..n {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            ids[i] = label[root];
        }
        ids
    }

    /// Hop counts of every agent whose information can reach `target`
    /// (BFS backwards along edges). Unreachable agents get `None`.
    pub fn hops_to(&self, target: usize) -> Vec<Option<usize>> {
        let mut hops = vec![None; self.len()];
        hops[target] = Some(0);
        let mut queue = VecDeque::from([target]);
        while let Some(k) = queue.pop_front() {
            let h = hops[k].unwrap();
            for &j in &self.in_neighbors[k] {
                if hops[j].is_none() {
                    hops[j] = Some(h + 1);
                    queue.push_back(j);
                }
            }
        }
        hops
    }

    /// Agents within `max_hops` in-hops of `target`, including itself, ascending.
    pub fn in_neighborhood(&self, target: usize, max_hops: usize) -> Vec<usize> {
        self.hops_to(target)
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_some_and(|h| h <= max_hops))
            .map(|(i, _)| i)
            .collect()
    }

    /// Longest shortest path, or `None` unless strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        let mut diam = 0;
        for k in 0..self.len() {
            for h in self.hops_to(k) {
                diam = diam.max(h?);
            }
        }
        Some(diam)
    }
}

impl FromStr for GraphKind {
    type Err = MastError;

    /// Accepts `knn:K` or `disk:R`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| MastError::Parse(format!("graph kind `{s}` must look like knn:3 or disk:256")))?;
        match kind {
            "knn" => arg
                .parse()
                .map(GraphKind::Knn)
                .map_err(|_| MastError::Parse(format!("bad neighbor count `{arg}`"))),
            "disk" => arg
                .parse()
                .map(GraphKind::Disk)
                .map_err(|_| MastError::Parse(format!("bad radius `{arg}`"))),
            _ => Err(MastError::Parse(format!("unknown graph kind `{kind}`"))),
        }
    }
}

/// Latest information an agent holds about one origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub x: Arc<Vec<f64>>,
    pub p: Position,
    pub t: f64,
}

/// What an agent currently knows about itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Fresh {
    pub x: Arc<Vec<f64>>,
    pub p: Position,
    pub t: f64,
}

/// Per-receiver, per-origin store of the most recent embeddings and positions.
#[derive(Clone, Debug)]
pub struct MessageStore {
    entries: Vec<Vec<Option<Entry>>>,
    clock: f64,
}

impl MessageStore {
    pub fn new(n: usize) -> Self {
        MessageStore {
            entries: vec![vec![None; n]; n],
            clock: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn set_clock(&mut self, t: f64) {
        self.clock = t;
    }

    pub fn entry(&self, receiver: usize, origin: usize) -> Option<&Entry> {
        self.entries[receiver][origin].as_ref()
    }

    /// Timestamp `t_ki`, `-1` when nothing was received yet.
    pub fn timestamp(&self, receiver: usize, origin: usize) -> f64 {
        self.entry(receiver, origin).map_or(-1.0, |e| e.t)
    }

    /// Overwrites every agent's self-entry.
    pub fn refresh_self(&mut self, fresh: &[Fresh]) {
        for (k, f) in fresh.iter().enumerate() {
            self.entries[k][k] = Some(Entry {
                x: Arc::clone(&f.x),
                p: f.p,
                t: f.t,
            });
        }
    }

    /// One communication round: refresh self-entries, advance the clock by
    /// `tau`, then every agent takes from each in-neighbor the entries that
    /// are strictly newer than its own. Senders' entries are read from the
    /// state before the round, so information moves one hop per round.
    /// Returns whether any entry changed.
    pub fn comm_step(&mut self, graph: &CommGraph, tau: f64, fresh: &[Fresh]) -> bool {
        self.refresh_self(fresh);
        self.clock += tau;
        self.receive(graph)
    }

    fn receive(&mut self, graph: &CommGraph) -> bool {
        let before = self.entries.clone();
        let mut changed = false;
        for (k, row) in self.entries.iter_mut().enumerate() {
            for &j in graph.in_neighbors(k) {
                for (i, sent) in before[j].iter().enumerate() {
                    let Some(sent) = sent else { continue };
                    let stale = row[i].as_ref().is_none_or(|e| e.t < sent.t);
                    if stale {
                        row[i] = Some(sent.clone());
                        changed = true;
                    }
                }
            }
        }
        changed
    }

    /// Runs rounds until nothing changes: the instantaneous-propagation limit.
    /// Returns the number of rounds that changed something.
    pub fn propagate_fully(&mut self, graph: &CommGraph, fresh: &[Fresh]) -> usize {
        self.refresh_self(fresh);
        let mut rounds = 0;
        while self.receive(graph) {
            rounds += 1;
        }
        rounds
    }

    /// Local view of agent `k`: self first, then every other known origin in
    /// ascending index order. Returns origin indices, embeddings and positions.
    pub fn gather_local(&self, k: usize) -> (Vec<usize>, Vec<Arc<Vec<f64>>>, Vec<Position>) {
        let row = &self.entries[k];
        let order = std::iter::once(k).chain((0..row.len()).filter(|&i| i != k));
        let mut origins = Vec::new();
        let mut xs = Vec::new();
        let mut ps = Vec::new();
        for i in order {
            if let Some(e) = &row[i] {
                if e.t >= 0.0 {
                    origins.push(i);
                    xs.push(Arc::clone(&e.x));
                    ps.push(e.p);
                }
            }
        }
        (origins, xs, ps)
    }
}

/// Communication rounds that complete within one control period.
pub fn rounds_per_step(dt: f64, tau: f64) -> usize {
    ((dt / tau) + 1e-9).floor() as usize
}
