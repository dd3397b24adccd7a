use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetworkError;

/// Index of an edge inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl EdgeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl Junction {
    pub fn coords(&self) -> Option<(f64, f64)> {
        Some((self.x?, self.y?))
    }
}

/// A uni-directional road.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// Meters.
    pub length: f64,
    /// m/s.
    pub speed_limit: f64,
    pub lanes: u32,
    /// The `to` junction is a dead end: vehicles may U-turn onto the reverse edge.
    pub dead_end: bool,
}

impl Edge {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub speed_mps: f64,
    #[serde(default = "one_lane")]
    pub lanes: u32,
    #[serde(default)]
    pub dead_end: bool,
}

fn one_lane() -> u32 {
    1
}

/// On-disk layout of `network.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub junctions: Vec<Junction>,
    pub edges: Vec<EdgeRecord>,
}

/// Directed road graph. Immutable once built.
///
/// Routing runs on the turn graph: one node per edge, with an arc `e -> f`
/// whenever a vehicle finishing `e` may continue onto `f`. U-turns (`f` is the
/// reverse of `e`) are only allowed when `e` ends at a dead end.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    junctions: Vec<Junction>,
    edges: Vec<Edge>,
    edge_index: HashMap<String, EdgeId>,
    junction_index: HashMap<String, usize>,
    out_edges: Vec<Vec<EdgeId>>,
    successors: Vec<Vec<EdgeId>>,
    has_coords: bool,
    max_speed: f64,
}

impl RoadNetwork {
    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        let mut junction_index = HashMap::with_capacity(file.junctions.len());
        for (i, j) in file.junctions.iter().enumerate() {
            if junction_index.insert(j.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateJunction(j.id.clone()));
            }
        }
        let mut edges = Vec::with_capacity(file.edges.len());
        for rec in &file.edges {
            let from = *junction_index
                .get(&rec.from)
                .ok_or_else(|| NetworkError::UnknownJunction(rec.from.clone(), rec.id.clone()))?;
            let to = *junction_index
                .get(&rec.to)
                .ok_or_else(|| NetworkError::UnknownJunction(rec.to.clone(), rec.id.clone()))?;
            edges.push(Edge {
                id: rec.id.clone(),
                from,
                to,
                length: rec.length_m,
                speed_limit: rec.speed_mps,
                lanes: rec.lanes,
                dead_end: rec.dead_end,
            });
        }
        Self::new(file.junctions, edges)
    }

    pub fn new(junctions: Vec<Junction>, edges: Vec<Edge>) -> Result<Self, NetworkError> {
        let mut edge_index = HashMap::with_capacity(edges.len());
        let junction_index = junctions
            .iter()
            .enumerate()
            .map(|(i, j)| (j.id.clone(), i))
            .collect::<HashMap<_, _>>();
        let mut out_edges = vec![Vec::new(); junctions.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.from >= junctions.len() || e.to >= junctions.len() {
                return Err(NetworkError::UnknownJunction(
                    format!("#{}", e.from.max(e.to)),
                    e.id.clone(),
                ));
            }
            if !(e.length > 0.0 && e.length.is_finite()) {
                return Err(NetworkError::BadEdge(e.id.clone(), "length must be > 0"));
            }
            if !(e.speed_limit > 0.0 && e.speed_limit.is_finite()) {
                return Err(NetworkError::BadEdge(e.id.clone(), "speed limit must be > 0"));
            }
            if e.from == e.to {
                return Err(NetworkError::BadEdge(e.id.clone(), "self-loops are not allowed"));
            }
            if e.lanes == 0 {
                return Err(NetworkError::BadEdge(e.id.clone(), "lane count must be >= 1"));
            }
            let id = EdgeId(i as u32);
            if edge_index.insert(e.id.clone(), id).is_some() {
                return Err(NetworkError::DuplicateEdge(e.id.clone()));
            }
            out_edges[e.from].push(id);
        }
        let successors = edges
            .iter()
            .map(|e| {
                out_edges[e.to]
                    .iter()
                    .copied()
                    .filter(|f| {
                        let next = &edges[f.index()];
                        next.to != e.from || e.dead_end
                    })
                    .collect()
            })
            .collect();
        let has_coords = !junctions.is_empty() && junctions.iter().all(|j| j.coords().is_some());
        let max_speed = edges.iter().map(|e| e.speed_limit).fold(0.0, f64::max);
        Ok(Self {
            junctions,
            edges,
            edge_index,
            junction_index,
            out_edges,
            successors,
            has_coords,
            max_speed,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetworkError::Io(path.display().to_string(), e.to_string()))?;
        let file: NetworkFile = serde_json::from_str(&text)
            .map_err(|e| NetworkError::Parse(path.display().to_string(), e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            junctions: self.junctions.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    id: e.id.clone(),
                    from: self.junctions[e.from].id.clone(),
                    to: self.junctions[e.to].id.clone(),
                    length_m: e.length,
                    speed_mps: e.speed_limit,
                    lanes: e.lanes,
                    dead_end: e.dead_end,
                })
                .collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    #[inline]
    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.index()]
    }

    pub fn edge_id(&self, name: &str) -> Option<EdgeId> {
        self.edge_index.get(name).copied()
    }

    pub fn junction_id(&self, name: &str) -> Option<usize> {
        self.junction_index.get(name).copied()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len() as u32).map(EdgeId)
    }

    pub fn out_edges(&self, junction: usize) -> &[EdgeId] {
        &self.out_edges[junction]
    }

    /// Edges a vehicle may enter after finishing `e`.
    #[inline]
    pub fn successors(&self, e: EdgeId) -> &[EdgeId] {
        &self.successors[e.index()]
    }

    pub fn has_coordinates(&self) -> bool {
        self.has_coords
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn junction_coords(&self, j: usize) -> Option<(f64, f64)> {
        self.junctions[j].coords()
    }

    /// Midpoint of an edge, if coordinates are present.
    pub fn edge_midpoint(&self, e: EdgeId) -> Option<(f64, f64)> {
        let edge = self.edge(e);
        let (x0, y0) = self.junction_coords(edge.from)?;
        let (x1, y1) = self.junction_coords(edge.to)?;
        Some(((x0 + x1) / 2.0, (y0 + y1) / 2.0))
    }

    /// Straight-line distance between two junctions, if coordinates are present.
    pub fn junction_distance(&self, a: usize, b: usize) -> Option<f64> {
        let (x0, y0) = self.junction_coords(a)?;
        let (x1, y1) = self.junction_coords(b)?;
        Some((x1 - x0).hypot(y1 - y0))
    }

    /// Whether straight-line distances never exceed edge lengths, which keeps
    /// the A* heuristic admissible and consistent.
    pub fn coordinates_consistent(&self) -> bool {
        self.has_coords
            && self.edges.iter().all(|e| {
                self.junction_distance(e.from, e.to)
                    .map_or(false, |d| d <= e.length * (1.0 + 1e-12))
            })
    }

    /// `true` when every consecutive pair is a permitted turn.
    pub fn is_connected_path(&self, path: &[EdgeId]) -> bool {
        path.windows(2)
            .all(|w| self.successors(w[0]).contains(&w[1]))
    }

    /// Sum of edge lengths in meters.
    pub fn path_length(&self, path: &[EdgeId]) -> f64 {
        path.iter().map(|e| self.edge(*e).length).sum()
    }
}
