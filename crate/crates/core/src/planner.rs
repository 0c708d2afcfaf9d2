//! The dynamic semantic graph built during one episode.
//!
//! The planner keeps raw panoramic features per node (`V`), the explored
//! edge set (`E`), and the most recent node embeddings (`M`). Embeddings are
//! recomputed each step: every node is initialized from its current
//! [`PlannerState::node_feature`] and then propagated through the graph
//! convolution, so re-observed nodes pick up their refreshed average.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::NavAction;
use crate::error::{Error, Result};
use crate::graph::DistanceTable;
use crate::nn::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub visited_feature: Option<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Which nodes the graph readout averages around the current position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutNeighbors {
    /// Neighbors of the current node in the explored edge set.
    #[default]
    Graph,
    /// Only the neighbors observed at this step.
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerState {
    feature_dim: usize,
    nodes: BTreeMap<usize, NodeRecord>,
    edges: BTreeSet<(usize, usize)>,
    embeddings: BTreeMap<usize, Vec<f64>>,
    visited: BTreeSet<usize>,
    frontier: BTreeSet<usize>,
    last_observed: Vec<usize>,
}

/// Serializable view of the planner for per-step debug dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerDump {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub visited: Vec<usize>,
    pub frontier: Vec<usize>,
}

impl PlannerState {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            embeddings: BTreeMap::new(),
            visited: BTreeSet::new(),
            frontier: BTreeSet::new(),
            last_observed: Vec::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Adds the current node's panorama and its neighbors' observations.
    pub fn observe(&mut self, current: usize, feature: &[f64], neighbors: &[(usize, &[f64])]) -> Result<()> {
        self.check_dim(feature)?;
        for (_, f) in neighbors {
            self.check_dim(f)?;
        }
        self.nodes.entry(current).or_default().visited_feature = Some(feature.to_vec());
        self.visited.insert(current);
        self.frontier.remove(&current);
        for &(n, f) in neighbors {
            self.nodes.entry(n).or_default().observations.push(f.to_vec());
            self.edges.insert((current.min(n), current.max(n)));
            if !self.visited.contains(&n) {
                self.frontier.insert(n);
            }
        }
        self.last_observed = neighbors.iter().map(|&(n, _)| n).collect();
        Ok(())
    }

    /// Visited nodes use their own panorama; observed-only nodes use the mean
    /// of every observation recorded for them.
    pub fn node_feature(&self, n: usize) -> Result<Vec<f64>> {
        let rec = self.nodes.get(&n).ok_or(Error::UnknownNode(n))?;
        if let Some(f) = &rec.visited_feature {
            return Ok(f.clone());
        }
        let k = rec.observations.len() as f64;
        let mut mean = vec![0.0; self.feature_dim];
        for obs in &rec.observations {
            for (m, v) in mean.iter_mut().zip(obs) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        Ok(mean)
    }

    pub fn contains(&self, n: usize) -> bool {
        self.nodes.contains_key(&n)
    }

    /// Node ids in ascending order; row `i` of every planner matrix is node `order()[i]`.
    pub fn order(&self) -> Vec<usize> {
        self.nodes.keys().copied().collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn visited(&self) -> &BTreeSet<usize> {
        &self.visited
    }

    pub fn frontier(&self) -> &BTreeSet<usize> {
        &self.frontier
    }

    /// Navigation candidates: observed but unvisited nodes, ascending id.
    pub fn candidates(&self) -> Vec<usize> {
        self.frontier.iter().copied().collect()
    }

    pub fn graph_neighbors(&self, n: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn last_observed(&self) -> &[usize] {
        &self.last_observed
    }

    pub fn embedding(&self, n: usize) -> Option<&[f64]> {
        self.embeddings.get(&n).map(Vec::as_slice)
    }

    /// Stores propagated embeddings (rows follow [`Self::order`]).
    pub fn record_embeddings(&mut self, m: &Tensor) {
        self.embeddings = self
            .order()
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, m.row(i).to_vec()))
            .collect();
    }

    /// `n x feature_dim` matrix of node features in [`Self::order`].
    pub fn feature_matrix(&self) -> Tensor {
        let order = self.order();
        let mut data = Vec::with_capacity(order.len() * self.feature_dim);
        for n in &order {
            data.extend(self.node_feature(*n).expect("order lists known nodes"));
        }
        Tensor::from_vec(order.len(), self.feature_dim, data)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` over the explored edges.
    pub fn normalized_adjacency(&self) -> Tensor {
        let order = self.order();
        let n = order.len();
        let index: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut a = Tensor::identity(n);
        for &(u, v) in &self.edges {
            let (i, j) = (index[&u], index[&v]);
            a.data[i * n + j] = 1.0;
            a.data[j * n + i] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>()).collect();
        for i in 0..n {
            for j in 0..n {
                a.data[i * n + j] /= (deg[i] * deg[j]).sqrt();
            }
        }
        a
    }

    /// Row indices (into [`Self::order`]) averaged by the readout at `current`.
    pub fn readout_rows(&self, current: usize, mode: ReadoutNeighbors) -> Result<Vec<usize>> {
        let order = self.order();
        let pos = |n: usize| order.binary_search(&n).map_err(|_| Error::MissingEmbedding(n));
        let mut rows = vec![pos(current)?];
        let nbrs = match mode {
            ReadoutNeighbors::Graph => self.graph_neighbors(current),
            ReadoutNeighbors::Observed => self.last_observed.clone(),
        };
        for n in nbrs {
            rows.push(pos(n)?);
        }
        Ok(rows)
    }

    pub fn dump(&self) -> PlannerDump {
        PlannerDump {
            nodes: self.order(),
            edges: self.edges.iter().copied().collect(),
            visited: self.visited.iter().copied().collect(),
            frontier: self.frontier.iter().copied().collect(),
        }
    }
}

/// Stacked graph convolution `H <- tanh(Â H W_l)`.
#[derive(Debug, Clone)]
pub struct GraphConv {
    pub layers: Vec<ParamId>,
    pub dim: usize,
}

impl GraphConv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| store.add_uniform(format!("{name}.w{l}"), dim, dim, dim, rng))
            .collect();
        Self { layers, dim }
    }

    pub fn propagate(&self, tape: &mut Tape, store: &ParamStore, adjacency: Var, m: Var) -> Result<Var> {
        let mut h = m;
        for &w in &self.layers {
            let wv = tape.param(store, w);
            let ah = tape.matmul(adjacency, h)?;
            let ahw = tape.matmul(ah, wv)?;
            h = tape.tanh(ahw);
        }
        Ok(h)
    }
}

/// `f_g = mean of M rows at the current node and its neighbors`.
pub fn readout(tape: &mut Tape, embeddings: Var, rows: &[usize]) -> Result<Var> {
    tape.mean_rows(embeddings, rows)
}

/// The candidate closest (by shortest path) to any target; stop when the
/// agent already stands on a target. Ties go to the smaller node id.
pub fn teacher_action(
    dist: &DistanceTable,
    candidates: &[usize],
    targets: &[usize],
    current: usize,
) -> Result<NavAction> {
    if targets.contains(&current) {
        return Ok(NavAction::Stop);
    }
    let mut best: Option<(f64, usize)> = None;
    for &c in candidates {
        let d = dist.to_nearest(c, targets);
        let better = match best {
            None => true,
            Some((bd, bn)) => d < bd || (d == bd && c < bn),
        };
        if better {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| NavAction::GotoNode(c))
        .ok_or(Error::EmptyCandidates)
}
