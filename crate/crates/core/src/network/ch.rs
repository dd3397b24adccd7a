//! Contraction hierarchies over the turn graph.
//!
//! Nodes are road edges and an arc `u -> v` costs `weight(v)`. Nodes are
//! contracted in edge-difference order with lazy priority updates; every
//! shortcut remembers the two arcs it replaces so query paths can be unpacked.

use std::collections::BinaryHeap;

use super::search::HeapItem;
use super::{search, EdgeId, EdgeWeights, NetworkError, RoadNetwork, Route};

const WITNESS_SETTLE_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy)]
struct Arc {
    from: u32,
    to: u32,
    cost: f64,
    /// The two arcs this shortcut replaces.
    children: Option<(u32, u32)>,
}

/// Preprocessed overlay. Immutable once built; rebuild when weights change.
#[derive(Debug, Clone)]
pub struct ChOverlay {
    arcs: Vec<Arc>,
    rank: Vec<u32>,
    up_fwd: Vec<Vec<u32>>,
    up_bwd: Vec<Vec<u32>>,
    weights_version: u64,
    node_count: usize,
    shortcut_count: usize,
}

struct Contractor {
    arcs: Vec<Arc>,
    out_adj: Vec<Vec<u32>>,
    in_adj: Vec<Vec<u32>>,
    contracted: Vec<bool>,
    deleted_neighbors: Vec<u32>,
    // scratch for witness searches
    dist: Vec<f64>,
    touched: Vec<u32>,
}

impl Contractor {
    fn live_out(&self, u: u32) -> impl Iterator<Item = u32> + '_ {
        self.out_adj[u as usize]
            .iter()
            .copied()
            .filter(move |&a| !self.contracted[self.arcs[a as usize].to as usize])
    }

    fn live_in(&self, u: u32) -> impl Iterator<Item = u32> + '_ {
        self.in_adj[u as usize]
            .iter()
            .copied()
            .filter(move |&a| !self.contracted[self.arcs[a as usize].from as usize])
    }

    /// Bounded Dijkstra from `source` that ignores `skip`. Leaves distances in `self.dist`.
    fn witness_search(&mut self, source: u32, skip: u32, max_cost: f64) {
        for &t in &self.touched {
            self.dist[t as usize] = f64::INFINITY;
        }
        self.touched.clear();
        let mut heap = BinaryHeap::new();
        self.dist[source as usize] = 0.0;
        self.touched.push(source);
        heap.push(HeapItem {
            key: 0.0,
            node: source,
        });
        let mut settled = 0;
        while let Some(HeapItem { key, node }) = heap.pop() {
            if key > self.dist[node as usize] {
                continue;
            }
            if key > max_cost || settled >= WITNESS_SETTLE_LIMIT {
                break;
            }
            settled += 1;
            for ai in 0..self.out_adj[node as usize].len() {
                let a = self.arcs[self.out_adj[node as usize][ai] as usize];
                if a.to == skip || self.contracted[a.to as usize] {
                    continue;
                }
                let nd = key + a.cost;
                if nd < self.dist[a.to as usize] {
                    if self.dist[a.to as usize].is_infinite() {
                        self.touched.push(a.to);
                    }
                    self.dist[a.to as usize] = nd;
                    heap.push(HeapItem {
                        key: nd,
                        node: a.to,
                    });
                }
            }
        }
    }

    /// Shortcuts needed to contract `v`: (in-arc, out-arc, cost).
    fn needed_shortcuts(&mut self, v: u32) -> Vec<(u32, u32, f64)> {
        let ins: Vec<u32> = self.live_in(v).collect();
        let outs: Vec<u32> = self.live_out(v).collect();
        let mut result = Vec::new();
        if outs.is_empty() {
            return result;
        }
        let max_out = outs
            .iter()
            .map(|&a| self.arcs[a as usize].cost)
            .fold(0.0, f64::max);
        for &ia in &ins {
            let in_arc = self.arcs[ia as usize];
            let u = in_arc.from;
            self.witness_search(u, v, in_arc.cost + max_out);
            for &oa in &outs {
                let out_arc = self.arcs[oa as usize];
                let x = out_arc.to;
                if x == u {
                    continue;
                }
                let via = in_arc.cost + out_arc.cost;
                if self.dist[x as usize] > via {
                    result.push((ia, oa, via));
                }
            }
        }
        result
    }

    fn priority(&mut self, v: u32) -> i64 {
        let shortcuts = self.needed_shortcuts(v).len() as i64;
        let degree = (self.live_in(v).count() + self.live_out(v).count()) as i64;
        shortcuts - degree + self.deleted_neighbors[v as usize] as i64
    }

    fn add_shortcut(&mut self, in_arc: u32, out_arc: u32, cost: f64) {
        let u = self.arcs[in_arc as usize].from;
        let x = self.arcs[out_arc as usize].to;
        // Reuse an existing live u->x arc when the shortcut improves it.
        if let Some(&existing) = self.out_adj[u as usize]
            .iter()
            .find(|&&a| self.arcs[a as usize].to == x)
        {
            let arc = &mut self.arcs[existing as usize];
            if cost < arc.cost {
                arc.cost = cost;
                arc.children = Some((in_arc, out_arc));
            }
            return;
        }
        let idx = self.arcs.len() as u32;
        self.arcs.push(Arc {
            from: u,
            to: x,
            cost,
            children: Some((in_arc, out_arc)),
        });
        self.out_adj[u as usize].push(idx);
        self.in_adj[x as usize].push(idx);
    }
}

impl ChOverlay {
    pub fn build(net: &RoadNetwork, weights: &EdgeWeights) -> Self {
        let n = net.edge_count();
        let mut arcs = Vec::new();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for u in net.edge_ids() {
            for &v in net.successors(u) {
                let idx = arcs.len() as u32;
                arcs.push(Arc {
                    from: u.0,
                    to: v.0,
                    cost: weights.get(v),
                    children: None,
                });
                out_adj[u.index()].push(idx);
                in_adj[v.index()].push(idx);
            }
        }
        let original = arcs.len();
        let mut c = Contractor {
            arcs,
            out_adj,
            in_adj,
            contracted: vec![false; n],
            deleted_neighbors: vec![0; n],
            dist: vec![f64::INFINITY; n],
            touched: Vec::new(),
        };

        let mut heap: BinaryHeap<std::cmp::Reverse<(i64, u32)>> = (0..n as u32)
            .map(|v| std::cmp::Reverse((c.priority(v), v)))
            .collect();
        let mut rank = vec![0u32; n];
        let mut next_rank = 0u32;
        while let Some(std::cmp::Reverse((prio, v))) = heap.pop() {
            if c.contracted[v as usize] {
                continue;
            }
            let fresh = c.priority(v);
            if fresh > prio {
                if let Some(std::cmp::Reverse((top, _))) = heap.peek() {
                    if fresh > *top {
                        heap.push(std::cmp::Reverse((fresh, v)));
                        continue;
                    }
                }
            }
            for (ia, oa, cost) in c.needed_shortcuts(v) {
                c.add_shortcut(ia, oa, cost);
            }
            let neighbors: Vec<u32> = c
                .live_in(v)
                .map(|a| c.arcs[a as usize].from)
                .chain(c.live_out(v).map(|a| c.arcs[a as usize].to))
                .collect();
            for w in neighbors {
                c.deleted_neighbors[w as usize] += 1;
            }
            c.contracted[v as usize] = true;
            rank[v as usize] = next_rank;
            next_rank += 1;
        }

        let mut up_fwd = vec![Vec::new(); n];
        let mut up_bwd = vec![Vec::new(); n];
        for (i, a) in c.arcs.iter().enumerate() {
            if rank[a.from as usize] < rank[a.to as usize] {
                up_fwd[a.from as usize].push(i as u32);
            } else {
                up_bwd[a.to as usize].push(i as u32);
            }
        }
        let shortcut_count = c.arcs.len() - original;
        ChOverlay {
            arcs: c.arcs,
            rank,
            up_fwd,
            up_bwd,
            weights_version: weights.version(),
            node_count: n,
            shortcut_count,
        }
    }

    pub fn weights_version(&self) -> u64 {
        self.weights_version
    }

    pub fn shortcut_count(&self) -> usize {
        self.shortcut_count
    }

    pub fn rank(&self, e: EdgeId) -> u32 {
        self.rank[e.index()]
    }

    fn upward_search(
        &self,
        start: u32,
        adj: &[Vec<u32>],
        forward: bool,
    ) -> (Vec<f64>, Vec<Option<u32>>) {
        let mut dist = vec![f64::INFINITY; self.node_count];
        let mut via: Vec<Option<u32>> = vec![None; self.node_count];
        let mut heap = BinaryHeap::new();
        dist[start as usize] = 0.0;
        heap.push(HeapItem {
            key: 0.0,
            node: start,
        });
        while let Some(HeapItem { key, node }) = heap.pop() {
            if key > dist[node as usize] {
                continue;
            }
            for &ai in &adj[node as usize] {
                let a = self.arcs[ai as usize];
                let next = if forward { a.to } else { a.from };
                let nd = key + a.cost;
                if nd < dist[next as usize] {
                    dist[next as usize] = nd;
                    via[next as usize] = Some(ai);
                    heap.push(HeapItem { key: nd, node: next });
                }
            }
        }
        (dist, via)
    }

    fn unpack(&self, arc: u32, out: &mut Vec<EdgeId>) {
        let a = self.arcs[arc as usize];
        match a.children {
            None => out.push(EdgeId(a.to)),
            Some((first, second)) => {
                self.unpack(first, out);
                self.unpack(second, out);
            }
        }
    }

    pub fn query(
        &self,
        net: &RoadNetwork,
        origin: EdgeId,
        dest: EdgeId,
    ) -> Result<Route, NetworkError> {
        if origin.index() >= self.node_count {
            return Err(NetworkError::UnknownEdge(origin.to_string()));
        }
        if dest.index() >= self.node_count {
            return Err(NetworkError::UnknownEdge(dest.to_string()));
        }
        if origin == dest {
            return Ok(Route {
                edges: vec![origin],
                cost: 0.0,
            });
        }
        // The upward graphs are small, so exhaustive upward searches are cheap
        // and avoid a fragile stopping rule.
        let (df, vf) = self.upward_search(origin.0, &self.up_fwd, true);
        let (db, vb) = self.upward_search(dest.0, &self.up_bwd, false);
        let mut best = f64::INFINITY;
        let mut meet = None;
        for v in 0..self.node_count {
            let total = df[v] + db[v];
            if total < best {
                best = total;
                meet = Some(v as u32);
            }
        }
        let meet = meet.ok_or_else(|| search::unreachable(net, origin, dest))?;

        let mut fwd_arcs = Vec::new();
        let mut cur = meet;
        while cur != origin.0 {
            let a = vf[cur as usize].expect("forward search tree is connected");
            fwd_arcs.push(a);
            cur = self.arcs[a as usize].from;
        }
        fwd_arcs.reverse();
        let mut edges = vec![origin];
        for a in fwd_arcs {
            self.unpack(a, &mut edges);
        }
        let mut cur = meet;
        while cur != dest.0 {
            let a = vb[cur as usize].expect("backward search tree is connected");
            self.unpack(a, &mut edges);
            cur = self.arcs[a as usize].to;
        }
        Ok(Route { edges, cost: best })
    }
}
