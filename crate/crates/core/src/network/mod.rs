//! Road network model and routing.
//!
//! Trips start and end on edges, so all routing happens on the turn graph
//! (edges as nodes). Three interchangeable algorithms are offered; they agree
//! on cost and Dijkstra/A* also agree on the exact path.

mod ch;
mod graph;
pub mod search;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ch::ChOverlay;
pub use graph::{Edge, EdgeId, EdgeRecord, Junction, NetworkFile, RoadNetwork};
pub use search::{astar, astar_with, dijkstra, shortest_tree, SearchTree};
pub use weights::{EdgeWeights, WeightMode, APT_SMOOTHING};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("no path from edge {from} to edge {to}")]
    Unreachable { from: String, to: String },
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("junction {0} referenced by edge {1} does not exist")]
    UnknownJunction(String, String),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(String),
    #[error("duplicate junction id {0}")]
    DuplicateJunction(String),
    #[error("edge {0}: {1}")]
    BadEdge(String, &'static str),
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("cannot parse {0}: {1}")]
    Parse(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dijkstra,
    #[serde(alias = "a*")]
    AStar,
    #[default]
    Ch,
}

/// An ordered, connected edge sequence from origin to destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub edges: Vec<EdgeId>,
    /// Summed weight of every edge after the origin.
    pub cost: f64,
}

impl Route {
    pub fn origin(&self) -> EdgeId {
        self.edges[0]
    }

    pub fn destination(&self) -> EdgeId {
        *self.edges.last().expect("routes are never empty")
    }
}

/// Route between two edges with the chosen algorithm.
///
/// `Ch` builds a fresh overlay for this one query; use [`Router`] to reuse one.
pub fn route(
    net: &RoadNetwork,
    origin: EdgeId,
    dest: EdgeId,
    weights: &EdgeWeights,
    algo: Algorithm,
) -> Result<Route, NetworkError> {
    match algo {
        Algorithm::Dijkstra => dijkstra(net, weights, origin, dest),
        Algorithm::AStar => astar(net, weights, origin, dest),
        Algorithm::Ch => ChOverlay::build(net, weights).query(net, origin, dest),
    }
}

pub fn path_length(net: &RoadNetwork, path: &[EdgeId]) -> f64 {
    net.path_length(path)
}

pub fn path_time(path: &[EdgeId], weights: &EdgeWeights) -> f64 {
    weights.path_cost(path)
}

pub fn ch_preprocess(net: &RoadNetwork, weights: &EdgeWeights) -> ChOverlay {
    ChOverlay::build(net, weights)
}

/// Routing front-end that owns a CH overlay and rebuilds it on a fixed
/// simulated-time cadence. Between rebuilds CH answers from stale weights;
/// Dijkstra and A* always read live weights.
#[derive(Debug, Clone)]
pub struct Router {
    algo: Algorithm,
    overlay: Option<ChOverlay>,
    rebuild_interval: f64,
    last_build: f64,
    builds: usize,
}

impl Router {
    pub fn new(algo: Algorithm, rebuild_interval_s: f64) -> Self {
        Self {
            algo,
            overlay: None,
            rebuild_interval: rebuild_interval_s,
            last_build: f64::NEG_INFINITY,
            builds: 0,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algo
    }

    pub fn overlay_builds(&self) -> usize {
        self.builds
    }

    /// Rebuild the overlay if it is missing, or if it is stale and the cadence has elapsed.
    pub fn refresh(&mut self, net: &RoadNetwork, weights: &EdgeWeights, now: f64) {
        if self.algo != Algorithm::Ch {
            return;
        }
        let stale = self
            .overlay
            .as_ref()
            .map_or(true, |o| o.weights_version() != weights.version());
        let due = self.overlay.is_none() || now - self.last_build >= self.rebuild_interval;
        if stale && due {
            self.overlay = Some(ChOverlay::build(net, weights));
            self.last_build = now;
            self.builds += 1;
        }
    }

    pub fn route(
        &mut self,
        net: &RoadNetwork,
        weights: &EdgeWeights,
        origin: EdgeId,
        dest: EdgeId,
        now: f64,
    ) -> Result<Route, NetworkError> {
        match self.algo {
            Algorithm::Dijkstra => dijkstra(net, weights, origin, dest),
            Algorithm::AStar => astar(net, weights, origin, dest),
            Algorithm::Ch => {
                self.refresh(net, weights, now);
                self.overlay
                    .as_ref()
                    .expect("refresh builds the overlay")
                    .query(net, origin, dest)
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests;
