//! Shared fixtures for the criterion benches.

use evgrid_core::network::{EdgeId, EdgeRecord, Junction, NetworkFile, RoadNetwork};
use evgrid_core::pdn::{attach_loads, PdnCase, StationLoad};
use evgrid_core::rng;
use rand::Rng;

/// Bidirectional `n` x `n` street grid, 200 m blocks with random extra length.
pub fn grid_network(n: usize, seed: u64) -> RoadNetwork {
    let mut r = rng::stream(seed, "bench-grid");
    let name = |i: usize, j: usize| format!("j{i}_{j}");
    let mut junctions = Vec::new();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            junctions.push(Junction {
                id: name(i, j),
                x: Some(i as f64 * 200.0),
                y: Some(j as f64 * 200.0),
            });
            let mut link = |a: String, b: String| {
                for (from, to) in [(a.clone(), b.clone()), (b, a)] {
                    edges.push(EdgeRecord {
                        id: format!("{from}>{to}"),
                        from,
                        to,
                        length_m: 200.0 + r.gen_range(0.0..100.0),
                        speed_mps: [8.33, 13.89, 19.44][r.gen_range(0..3)],
                        lanes: 2,
                        dead_end: false,
                    });
                }
            };
            if i + 1 < n {
                link(name(i, j), name(i + 1, j));
            }
            if j + 1 < n {
                link(name(i, j), name(i, j + 1));
            }
        }
    }
    RoadNetwork::from_file(NetworkFile { junctions, edges }).expect("grid is well formed")
}

/// Random origin-destination edge pairs.
pub fn od_pairs(net: &RoadNetwork, count: usize, seed: u64) -> Vec<(EdgeId, EdgeId)> {
    let mut r = rng::stream(seed, "bench-od");
    let n = net.edges().len();
    (0..count)
        .map(|_| (EdgeId(r.gen_range(0..n) as u32), EdgeId(r.gen_range(0..n) as u32)))
        .collect()
}

/// The 33-bus feeder with a charging station on every fourth bus.
pub fn loaded_feeder(kw_per_station: f64) -> PdnCase {
    let base = PdnCase::ieee33();
    let loads: Vec<StationLoad> = (2..=33)
        .step_by(4)
        .map(|b| StationLoad {
            station: format!("S{b}"),
            bus: b,
            load_kw: kw_per_station,
            v2g_cap_kw: Some(kw_per_station / 4.0),
        })
        .collect();
    attach_loads(&base, &loads).expect("buses exist")
}
