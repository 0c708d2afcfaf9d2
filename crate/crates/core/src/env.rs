//! Episode runtime over a [`World`].
//!
//! `GotoNode` may name any node observed so far (a neighbor of some visited
//! decision point). The move is executed along the world's shortest path,
//! so the charged path length is the true traversed metric length and
//! intermediate nodes appear in the visited sequence.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PolarPoint;
use crate::graph::{dijkstra, shortest_path};
use crate::worldgen::{EpisodeSpec, World};

pub const DEFAULT_STEP_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NavAction {
    Stop,
    GotoNode(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborObservation {
    pub node: usize,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepObservation {
    pub node: usize,
    pub feature: Vec<f64>,
    pub neighbors: Vec<NeighborObservation>,
    pub gps: [f64; 2],
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub visited: Vec<usize>,
    pub path_length: f64,
    pub stop_node: usize,
    pub localization: Option<PolarPoint>,
    pub steps: usize,
    /// True when the agent issued `Stop`; false when the step cap ended it.
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Continue(StepObservation),
    Finished(EpisodeResult),
}

/// Exact shortest-path distance between two nodes.
pub fn shortest_distance(world: &World, a: usize, b: usize) -> Result<f64> {
    let n = world.num_nodes();
    if a >= n {
        return Err(Error::UnknownNode(a));
    }
    if b >= n {
        return Err(Error::UnknownNode(b));
    }
    Ok(dijkstra(world.adjacency(), a).0[b])
}

/// Single-threaded, stateful runtime for one episode at a time.
#[derive(Debug)]
pub struct NavEnv<'w> {
    world: &'w World,
    step_cap: usize,
    episode_id: String,
    current: usize,
    visited: Vec<usize>,
    observed: BTreeSet<usize>,
    path_length: f64,
    steps: usize,
    done: bool,
    localization: Option<PolarPoint>,
}

impl<'w> NavEnv<'w> {
    pub fn new(world: &'w World) -> Self {
        Self::with_step_cap(world, DEFAULT_STEP_CAP)
    }

    pub fn with_step_cap(world: &'w World, step_cap: usize) -> Self {
        Self {
            world,
            step_cap: step_cap.max(1),
            episode_id: String::new(),
            current: 0,
            visited: Vec::new(),
            observed: BTreeSet::new(),
            path_length: 0.0,
            steps: 0,
            done: true,
            localization: None,
        }
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn step_cap(&self) -> usize {
        self.step_cap
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self, episode: &EpisodeSpec) -> Result<StepObservation> {
        if episode.world_id != self.world.id {
            return Err(Error::WorldMismatch {
                world: self.world.id,
                episode: episode.world_id,
            });
        }
        if episode.start >= self.world.num_nodes() {
            return Err(Error::UnknownNode(episode.start));
        }
        self.episode_id = episode.id.clone();
        self.current = episode.start;
        self.visited = vec![episode.start];
        self.observed.clear();
        self.path_length = 0.0;
        self.steps = 0;
        self.done = false;
        self.localization = None;
        Ok(self.observe())
    }

    /// Records the agent's localization guess; reported with the result.
    pub fn set_localization(&mut self, pred: PolarPoint) {
        self.localization = Some(pred);
    }

    pub fn step(&mut self, action: NavAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        match action {
            NavAction::Stop => {
                self.steps += 1;
                Ok(StepOutcome::Finished(self.finish(true)))
            }
            NavAction::GotoNode(target) => {
                if target >= self.world.num_nodes() {
                    return Err(Error::UnknownNode(target));
                }
                let adjacent = self.world.edge_length(self.current, target).is_some();
                if target == self.current || !(adjacent || self.observed.contains(&target)) {
                    return Err(Error::Unreachable(target));
                }
                let path = shortest_path(self.world.adjacency(), self.current, target)
                    .ok_or(Error::Unreachable(target))?;
                for pair in path.windows(2) {
                    self.path_length += self
                        .world
                        .edge_length(pair[0], pair[1])
                        .expect("path follows edges");
                    self.visited.push(pair[1]);
                }
                self.current = target;
                self.steps += 1;
                if self.steps >= self.step_cap {
                    return Ok(StepOutcome::Finished(self.finish(false)));
                }
                Ok(StepOutcome::Continue(self.observe()))
            }
        }
    }

    fn observe(&mut self) -> StepObservation {
        let world = self.world;
        let node = &world.nodes[self.current];
        let neighbors = world
            .neighbors(self.current)
            .iter()
            .map(|&(n, _)| {
                self.observed.insert(n);
                NeighborObservation {
                    node: n,
                    feature: world.nodes[n].feature.clone(),
                }
            })
            .collect();
        StepObservation {
            node: self.current,
            feature: node.feature.clone(),
            neighbors,
            gps: node.position,
            done: false,
        }
    }

    fn finish(&mut self, stopped: bool) -> EpisodeResult {
        self.done = true;
        EpisodeResult {
            episode_id: self.episode_id.clone(),
            visited: self.visited.clone(),
            path_length: self.path_length,
            stop_node: self.current,
            localization: self.localization,
            steps: self.steps,
            stopped,
        }
    }
}
