//! Shortest paths over the weighted navigation graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub type Adjacency = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra. Returns distances and predecessor links.
pub fn dijkstra(adj: &Adjacency, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: source,
    });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adj[node] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                prev[next] = Some(node);
                heap.push(Entry {
                    dist: nd,
                    node: next,
                });
            }
        }
    }
    (dist, prev)
}

/// Node sequence of a shortest path `from -> to`, both endpoints included.
pub fn shortest_path(adj: &Adjacency, from: usize, to: usize) -> Option<Vec<usize>> {
    let (dist, prev) = dijkstra(adj, from);
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(p) = prev[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Some(path)
}

/// Breadth-first reachability from node 0.
pub fn is_connected(adj: &Adjacency) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// All-pairs distances, one Dijkstra per source.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<f64>,
}

impl DistanceTable {
    pub fn new(adj: &Adjacency) -> Self {
        let n = adj.len();
        let mut dist = Vec::with_capacity(n * n);
        for s in 0..n {
            dist.extend(dijkstra(adj, s).0);
        }
        Self { n, dist }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.n + b]
    }

    /// `min_t D(node, t)`; infinite for an empty target set.
    pub fn to_nearest(&self, node: usize, targets: &[usize]) -> f64 {
        targets
            .iter()
            .map(|&t| self.get(node, t))
            .fold(f64::INFINITY, f64::min)
    }
}
