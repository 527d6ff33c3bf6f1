use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use parkcast_bench::benchmark;
use parkcast_core::features::{aggregate_hourly, AggregationOptions};
use parkcast_core::geodata::{haversine, GeoPoint};
use parkcast_core::spatial::{spatial_join, SpatialJoiner};
use parkcast_core::synth::generate;
use std::hint::black_box;

fn geometry(c: &mut Criterion) {
    let a = GeoPoint {
        lon: 55.4825,
        lat: 25.28,
    };
    let b = GeoPoint {
        lon: 55.488,
        lat: 25.2855,
    };
    c.bench_function("haversine", |bch| {
        bch.iter(|| haversine(black_box(a), black_box(b)))
    });

    let bm = benchmark(3, 1);
    let joiner = SpatialJoiner::new(&bm.campus, 30.0).unwrap();
    let obs = &bm.synth.observations[0];
    c.bench_function("join_one", |bch| {
        bch.iter(|| joiner.join_one(black_box(obs)).unwrap())
    });
}

fn stages(c: &mut Criterion) {
    let bm = benchmark(3, 1);
    let mut g = c.benchmark_group("stages");
    g.sample_size(20);
    g.bench_function("synth_3_days", |bch| {
        bch.iter(|| generate(&bm.spec, &bm.campus, 1).unwrap())
    });
    g.bench_function("spatial_join_3_days", |bch| {
        bch.iter(|| spatial_join(&bm.synth.observations, &bm.campus, 30.0).unwrap())
    });
    g.bench_function("aggregate_hourly_3_days", |bch| {
        bch.iter_batched(
            AggregationOptions::default,
            |opts| aggregate_hourly(&bm.joined, &bm.campus, &bm.window, &opts).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, geometry, stages);
criterion_main!(benches);
