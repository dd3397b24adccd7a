//! Label-setting search on the turn graph (Dijkstra and A*).
//!
//! A route's cost is the summed weight of every edge after the origin edge:
//! the vehicle is already on the origin, so `route(e, e)` costs nothing.
//!
//! Equal-cost ties resolve to the predecessor with the smallest edge index.
//! Both searches keep settling nodes until the frontier key exceeds the
//! target's cost, so every tight predecessor is seen and Dijkstra and A*
//! return the same path, not just the same cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EdgeId, EdgeWeights, NetworkError, RoadNetwork, Route};

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeapItem {
    pub key: f64,
    pub node: u32,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}

impl Ord for HeapItem {
    // Min-heap on key, then on node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.node.cmp(&self.node))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One-to-all result of a search from a single origin edge.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub origin: EdgeId,
    /// Cost to reach each edge (excluding the origin's own weight), `INFINITY` if unreachable.
    pub dist: Vec<f64>,
    pub pred: Vec<Option<EdgeId>>,
    settle_order: Vec<EdgeId>,
}

impl SearchTree {
    pub fn reached(&self, e: EdgeId) -> bool {
        self.dist[e.index()].is_finite()
    }

    pub fn path_to(&self, dest: EdgeId) -> Option<Vec<EdgeId>> {
        if !self.reached(dest) {
            return None;
        }
        let mut path = vec![dest];
        let mut cur = dest;
        while cur != self.origin {
            cur = self.pred[cur.index()]?;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    pub fn route_to(&self, dest: EdgeId) -> Option<Route> {
        let edges = self.path_to(dest)?;
        Some(Route {
            cost: self.dist[dest.index()],
            edges,
        })
    }

    /// Physical length (meters, origin edge included) of the tree path to every edge.
    pub fn path_lengths(&self, net: &RoadNetwork) -> Vec<f64> {
        let mut len = vec![f64::INFINITY; self.dist.len()];
        for &e in &self.settle_order {
            len[e.index()] = match self.pred[e.index()] {
                None => net.edge(e).length,
                Some(p) => len[p.index()] + net.edge(e).length,
            };
        }
        len
    }
}

fn check_edge(net: &RoadNetwork, e: EdgeId) -> Result<(), NetworkError> {
    if e.index() < net.edge_count() {
        Ok(())
    } else {
        Err(NetworkError::UnknownEdge(e.to_string()))
    }
}

/// Core loop shared by Dijkstra, A* and the one-to-all tree.
fn run(
    net: &RoadNetwork,
    weights: &EdgeWeights,
    origin: EdgeId,
    target: Option<EdgeId>,
    heuristic: impl Fn(EdgeId) -> f64,
) -> SearchTree {
    let n = net.edge_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<EdgeId>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut settle_order = Vec::new();
    let mut heap = BinaryHeap::new();
    dist[origin.index()] = 0.0;
    heap.push(HeapItem {
        key: heuristic(origin),
        node: origin.0,
    });
    while let Some(HeapItem { key, node }) = heap.pop() {
        let u = EdgeId(node);
        if settled[u.index()] {
            continue;
        }
        if let Some(t) = target {
            if key > dist[t.index()] {
                break;
            }
        }
        settled[u.index()] = true;
        settle_order.push(u);
        let du = dist[u.index()];
        for &v in net.successors(u) {
            let nd = du + weights.get(v);
            let dv = dist[v.index()];
            if nd < dv {
                dist[v.index()] = nd;
                pred[v.index()] = Some(u);
                heap.push(HeapItem {
                    key: nd + heuristic(v),
                    node: v.0,
                });
            } else if nd == dv && pred[v.index()].map_or(false, |p| u < p) {
                pred[v.index()] = Some(u);
            }
        }
    }
    SearchTree {
        origin,
        dist,
        pred,
        settle_order,
    }
}

/// Dijkstra from `origin` to every edge.
pub fn shortest_tree(
    net: &RoadNetwork,
    weights: &EdgeWeights,
    origin: EdgeId,
) -> Result<SearchTree, NetworkError> {
    check_edge(net, origin)?;
    Ok(run(net, weights, origin, None, |_| 0.0))
}

pub fn dijkstra(
    net: &RoadNetwork,
    weights: &EdgeWeights,
    origin: EdgeId,
    dest: EdgeId,
) -> Result<Route, NetworkError> {
    check_edge(net, origin)?;
    check_edge(net, dest)?;
    run(net, weights, origin, Some(dest), |_| 0.0)
        .route_to(dest)
        .ok_or_else(|| unreachable(net, origin, dest))
}

/// A* with a straight-line heuristic. Falls back to plain Dijkstra when the
/// network lacks usable coordinates.
pub fn astar(
    net: &RoadNetwork,
    weights: &EdgeWeights,
    origin: EdgeId,
    dest: EdgeId,
) -> Result<Route, NetworkError> {
    check_edge(net, origin)?;
    check_edge(net, dest)?;
    if !net.coordinates_consistent() {
        return dijkstra(net, weights, origin, dest);
    }
    let scale = weights.heuristic_scale(net);
    let goal = net.edge(dest).from;
    astar_with(net, weights, origin, dest, |e| {
        if e == dest {
            0.0
        } else {
            scale * net.junction_distance(net.edge(e).to, goal).unwrap_or(0.0)
        }
    })
}

/// A* with a caller-supplied heuristic. The heuristic must be consistent
/// and return 0 at `dest` for the result to be optimal.
pub fn astar_with(
    net: &RoadNetwork,
    weights: &EdgeWeights,
    origin: EdgeId,
    dest: EdgeId,
    heuristic: impl Fn(EdgeId) -> f64,
) -> Result<Route, NetworkError> {
    check_edge(net, origin)?;
    check_edge(net, dest)?;
    run(net, weights, origin, Some(dest), heuristic)
        .route_to(dest)
        .ok_or_else(|| unreachable(net, origin, dest))
}

pub(crate) fn unreachable(net: &RoadNetwork, origin: EdgeId, dest: EdgeId) -> NetworkError {
    NetworkError::Unreachable {
        from: net.edge(origin).id.clone(),
        to: net.edge(dest).id.clone(),
    }
}
