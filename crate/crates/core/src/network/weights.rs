use serde::{Deserialize, Serialize};

use super::{EdgeId, RoadNetwork};

/// Smoothing factor applied to each new traversal-time observation.
pub const APT_SMOOTHING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Edge length in meters.
    Shortest,
    /// Average passing time in seconds.
    #[default]
    Fastest,
}

/// Per-edge routing weights.
///
/// In `Fastest` mode each edge carries an average passing time (APT), an
/// exponential moving average of observed traversal times that never drops
/// below the edge's free-flow time.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    mode: WeightMode,
    values: Vec<f64>,
    free_flow: Vec<f64>,
    version: u64,
}

impl EdgeWeights {
    pub fn shortest(net: &RoadNetwork) -> Self {
        let values: Vec<f64> = net.edges().iter().map(|e| e.length).collect();
        Self {
            mode: WeightMode::Shortest,
            free_flow: net.edges().iter().map(|e| e.free_flow_time()).collect(),
            values,
            version: 0,
        }
    }

    pub fn fastest(net: &RoadNetwork) -> Self {
        let free_flow: Vec<f64> = net.edges().iter().map(|e| e.free_flow_time()).collect();
        Self {
            mode: WeightMode::Fastest,
            values: free_flow.clone(),
            free_flow,
            version: 0,
        }
    }

    pub fn new(net: &RoadNetwork, mode: WeightMode) -> Self {
        match mode {
            WeightMode::Shortest => Self::shortest(net),
            WeightMode::Fastest => Self::fastest(net),
        }
    }

    /// Arbitrary static weights, mainly for tests and benchmarks.
    pub fn from_values(mode: WeightMode, values: Vec<f64>) -> Self {
        Self {
            mode,
            free_flow: values.clone(),
            values,
            version: 0,
        }
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    #[inline]
    pub fn get(&self, e: EdgeId) -> f64 {
        self.values[e.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Bumped on every change; overlays compare it to detect staleness.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Fold in an observed traversal time. No-op in `Shortest` mode.
    pub fn observe(&mut self, e: EdgeId, seconds: f64) {
        if self.mode != WeightMode::Fastest || !seconds.is_finite() || seconds < 0.0 {
            return;
        }
        let i = e.index();
        let smoothed = (1.0 - APT_SMOOTHING) * self.values[i] + APT_SMOOTHING * seconds;
        let next = smoothed.max(self.free_flow[i]);
        if next != self.values[i] {
            self.values[i] = next;
            self.version += 1;
        }
    }

    pub fn path_cost(&self, path: &[EdgeId]) -> f64 {
        path.iter().map(|e| self.get(*e)).sum()
    }

    /// Lower bound on weight per meter of straight-line distance, used by A*.
    ///
    /// Taken as the smallest weight/length ratio over all edges, so the
    /// heuristic stays consistent for any weights, not just lengths or APTs.
    pub fn heuristic_scale(&self, net: &RoadNetwork) -> f64 {
        net.edges()
            .iter()
            .zip(&self.values)
            .map(|(e, w)| w / e.length)
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }
}
