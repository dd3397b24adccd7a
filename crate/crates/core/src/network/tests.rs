use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn build(junctions: &[(&str, f64, f64)], edges: &[(&str, &str, &str, f64)]) -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        junctions: junctions
            .iter()
            .map(|(id, x, y)| Junction {
                id: id.to_string(),
                x: Some(*x),
                y: Some(*y),
            })
            .collect(),
        edges: edges
            .iter()
            .map(|(id, from, to, len)| EdgeRecord {
                id: id.to_string(),
                from: from.to_string(),
                to: to.to_string(),
                length_m: *len,
                speed_mps: 10.0,
                lanes: 1,
                dead_end: false,
            })
            .collect(),
    })
    .unwrap()
}

/// Exhaustive simple-path enumeration on the turn graph.
fn brute_force_cost(net: &RoadNetwork, w: &EdgeWeights, from: EdgeId, to: EdgeId) -> Option<f64> {
    fn dfs(
        net: &RoadNetwork,
        w: &EdgeWeights,
        cur: EdgeId,
        to: EdgeId,
        cost: f64,
        seen: &mut Vec<bool>,
        best: &mut Option<f64>,
    ) {
        if cur == to {
            if best.map_or(true, |b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for &n in net.successors(cur) {
            if !seen[n.index()] {
                seen[n.index()] = true;
                dfs(net, w, n, to, cost + w.get(n), seen, best);
                seen[n.index()] = false;
            }
        }
    }
    let mut seen = vec![false; net.edge_count()];
    seen[from.index()] = true;
    let mut best = None;
    dfs(net, w, from, to, 0.0, &mut seen, &mut best);
    best
}

fn triangle() -> RoadNetwork {
    build(
        &[("S", -1.0, 0.0), ("A", 0.0, 0.0), ("B", 0.5, 0.5), ("C", 1.0, 0.0), ("T", 2.0, 0.0)],
        &[
            ("SA", "S", "A", 1.0),
            ("AB", "A", "B", 1.0),
            ("BC", "B", "C", 1.0),
            ("AC", "A", "C", 3.0),
            ("CT", "C", "T", 1.0),
        ],
    )
}

#[test]
fn triangle_prefers_two_hop_path() {
    let net = triangle();
    let w = EdgeWeights::shortest(&net);
    let (sa, ct) = (net.edge_id("SA").unwrap(), net.edge_id("CT").unwrap());
    let oracle = brute_force_cost(&net, &w, sa, ct).unwrap();
    assert_eq!(oracle, 3.0);
    for algo in [Algorithm::Dijkstra, Algorithm::AStar, Algorithm::Ch] {
        let r = route(&net, sa, ct, &w, algo).unwrap();
        let names: Vec<&str> = r.edges.iter().map(|e| net.edge(*e).id.as_str()).collect();
        assert_eq!(names, ["SA", "AB", "BC", "CT"], "{algo:?}");
        assert_eq!(r.cost, oracle);
    }
}

#[test]
fn origin_equals_destination() {
    let net = triangle();
    let w = EdgeWeights::shortest(&net);
    let ab = net.edge_id("AB").unwrap();
    for algo in [Algorithm::Dijkstra, Algorithm::AStar, Algorithm::Ch] {
        let r = route(&net, ab, ab, &w, algo).unwrap();
        assert_eq!(r.edges, vec![ab]);
        assert_eq!(r.cost, 0.0);
    }
}

#[test]
fn disconnected_components_are_unreachable() {
    let net = build(
        &[("A", 0.0, 0.0), ("B", 1.0, 0.0), ("C", 5.0, 0.0), ("D", 6.0, 0.0)],
        &[("AB", "A", "B", 1.0), ("CD", "C", "D", 1.0)],
    );
    let w = EdgeWeights::shortest(&net);
    let (ab, cd) = (net.edge_id("AB").unwrap(), net.edge_id("CD").unwrap());
    for algo in [Algorithm::Dijkstra, Algorithm::AStar, Algorithm::Ch] {
        assert!(matches!(
            route(&net, ab, cd, &w, algo),
            Err(NetworkError::Unreachable { .. })
        ));
    }
}

#[test]
fn u_turn_only_at_dead_ends() {
    let mut file = build(
        &[("A", 0.0, 0.0), ("B", 1.0, 0.0)],
        &[("AB", "A", "B", 1.0), ("BA", "B", "A", 1.0)],
    )
    .to_file();
    let net = RoadNetwork::from_file(file.clone()).unwrap();
    let w = EdgeWeights::shortest(&net);
    let (ab, ba) = (net.edge_id("AB").unwrap(), net.edge_id("BA").unwrap());
    assert!(dijkstra(&net, &w, ab, ba).is_err());

    file.edges[0].dead_end = true;
    let net = RoadNetwork::from_file(file).unwrap();
    let r = dijkstra(&net, &w, ab, ba).unwrap();
    assert_eq!(r.edges, vec![ab, ba]);
}

#[test]
fn path_length_and_time_sum_edges() {
    let net = build(
        &[("A", 0.0, 0.0), ("B", 500.0, 0.0), ("C", 800.0, 0.0)],
        &[("AB", "A", "B", 500.0), ("BC", "B", "C", 300.0)],
    );
    let path = [net.edge_id("AB").unwrap(), net.edge_id("BC").unwrap()];
    assert_eq!(path_length(&net, &path), 800.0);
    assert_eq!(path_length(&net, &[]), 0.0);
    let w = EdgeWeights::from_values(WeightMode::Fastest, vec![60.0, 90.0]);
    assert_eq!(path_time(&path, &w), 150.0);
}

#[test]
fn rejects_invalid_edges() {
    let mut file = triangle().to_file();
    file.edges[1].length_m = 0.0;
    assert!(matches!(
        RoadNetwork::from_file(file.clone()),
        Err(NetworkError::BadEdge(..))
    ));
    file.edges[1].length_m = 1.0;
    file.edges[1].to = "nowhere".into();
    assert!(matches!(
        RoadNetwork::from_file(file),
        Err(NetworkError::UnknownJunction(..))
    ));
}

#[test]
fn apt_never_below_free_flow() {
    let net = triangle();
    let mut w = EdgeWeights::fastest(&net);
    let e = net.edge_id("AC").unwrap();
    let ff = net.edge(e).free_flow_time();
    w.observe(e, ff * 3.0);
    assert!((w.get(e) - (0.75 * ff + 0.25 * 3.0 * ff)).abs() < 1e-12);
    for _ in 0..50 {
        w.observe(e, 0.0);
    }
    assert_eq!(w.get(e), ff);
}

#[test]
fn single_edge_overlay() {
    let net = build(&[("A", 0.0, 0.0), ("B", 1.0, 0.0)], &[("AB", "A", "B", 1.0)]);
    let w = EdgeWeights::shortest(&net);
    let ch = ch_preprocess(&net, &w);
    assert_eq!(ch.shortcut_count(), 0);
    let e = net.edge_id("AB").unwrap();
    assert_eq!(ch.query(&net, e, e).unwrap().edges, vec![e]);
}

/// Bidirectional grid with integer lengths (> straight-line distance).
pub(crate) fn grid(n: usize, rng: &mut ChaCha8Rng) -> RoadNetwork {
    let mut junctions = Vec::new();
    for i in 0..n {
        for j in 0..n {
            junctions.push((format!("j{i}_{j}"), i as f64 * 100.0, j as f64 * 100.0));
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut link = |a: String, b: String| {
                let len = 100.0 + rng.gen_range(0..60) as f64;
                edges.push((format!("{a}>{b}"), a.clone(), b.clone(), len));
                edges.push((format!("{b}>{a}"), b, a, len + rng.gen_range(0..3) as f64));
            };
            if i + 1 < n {
                link(format!("j{i}_{j}"), format!("j{}_{j}", i + 1));
            }
            if j + 1 < n {
                link(format!("j{i}_{j}"), format!("j{i}_{}", j + 1));
            }
        }
    }
    let js: Vec<(&str, f64, f64)> = junctions.iter().map(|(a, x, y)| (a.as_str(), *x, *y)).collect();
    let es: Vec<(&str, &str, &str, f64)> = edges
        .iter()
        .map(|(id, a, b, l)| (id.as_str(), a.as_str(), b.as_str(), *l))
        .collect();
    build(&js, &es)
}

#[test]
fn grid_ch_matches_astar_and_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = grid(5, &mut rng);
    let w = EdgeWeights::shortest(&net);
    let ch = ch_preprocess(&net, &w);
    for _ in 0..60 {
        let o = EdgeId(rng.gen_range(0..net.edge_count() as u32));
        let d = EdgeId(rng.gen_range(0..net.edge_count() as u32));
        let a = astar(&net, &w, o, d);
        let c = ch.query(&net, o, d);
        let dj = dijkstra(&net, &w, o, d);
        match (a, c, dj) {
            (Ok(a), Ok(c), Ok(dj)) => {
                assert_eq!(a.cost, c.cost);
                assert_eq!(a.edges, dj.edges, "A* and Dijkstra share tie-breaking");
                assert!(net.is_connected_path(&c.edges));
                assert_eq!(c.edges[0], o);
                assert_eq!(*c.edges.last().unwrap(), d);
                assert_eq!(w.path_cost(&c.edges[1..]), c.cost);
            }
            (Err(_), Err(_), Err(_)) => {}
            other => panic!("algorithms disagree on reachability: {other:?}"),
        }
    }
}

#[test]
fn small_grid_all_pairs_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = grid(3, &mut rng);
    let w = EdgeWeights::shortest(&net);
    let ch = ch_preprocess(&net, &w);
    for o in net.edge_ids() {
        for d in net.edge_ids() {
            let oracle = brute_force_cost(&net, &w, o, d);
            assert_eq!(ch.query(&net, o, d).ok().map(|r| r.cost), oracle);
            assert_eq!(astar(&net, &w, o, d).ok().map(|r| r.cost), oracle);
        }
    }
}

#[test]
fn zero_heuristic_astar_equals_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = grid(4, &mut rng);
    let w = EdgeWeights::shortest(&net);
    for o in net.edge_ids().step_by(3) {
        for d in net.edge_ids().step_by(5) {
            let a = astar_with(&net, &w, o, d, |_| 0.0).map(|r| r.cost);
            let b = dijkstra(&net, &w, o, d).map(|r| r.cost);
            assert_eq!(a, b);
        }
    }
}

#[test]
fn router_rebuilds_on_cadence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = grid(3, &mut rng);
    let mut w = EdgeWeights::fastest(&net);
    let mut router = Router::new(Algorithm::Ch, 900.0);
    let (o, d) = (EdgeId(0), EdgeId(5));
    router.route(&net, &w, o, d, 0.0).unwrap();
    assert_eq!(router.overlay_builds(), 1);
    w.observe(EdgeId(3), 1e4);
    router.route(&net, &w, o, d, 100.0).unwrap();
    assert_eq!(router.overlay_builds(), 1, "stale overlay reused before cadence");
    let r = router.route(&net, &w, o, d, 900.0).unwrap();
    assert_eq!(router.overlay_builds(), 2);
    assert_eq!(r.cost, dijkstra(&net, &w, o, d).unwrap().cost);
}
