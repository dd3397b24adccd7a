use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use evgrid_bench::{grid_network, od_pairs};
use evgrid_core::ev::EvPrototype;
use evgrid_core::network::{dijkstra, EdgeWeights};
use evgrid_core::rng;
use evgrid_core::traffic::{StepConfig, Traffic, VehicleParams};

fn traffic(c: &mut Criterion) {
    let net = grid_network(10, 3);
    let w = EdgeWeights::fastest(&net);
    let params = VehicleParams::from(&EvPrototype::standard_set()[0]);
    let routes: Vec<_> = od_pairs(&net, 1000, 4)
        .into_iter()
        .filter_map(|(o, d)| dijkstra(&net, &w, o, d).ok())
        .map(|r| r.edges)
        .collect();
    let loaded = || {
        let mut t = Traffic::new(&net, StepConfig::default(), rng::stream(5, "traffic"));
        for (vid, route) in routes.iter().enumerate() {
            t.depart(vid as u32, params, route.clone(), 0.0);
        }
        for s in 0..60 {
            t.advance_all(&net, s as f64);
        }
        t
    };
    c.bench_function("advance_1000_vehicles_x100", |b| {
        b.iter_batched(
            loaded,
            |mut t| {
                for s in 60..160 {
                    t.advance_all(&net, s as f64);
                }
                t
            },
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, traffic);
criterion_main!(benches);
