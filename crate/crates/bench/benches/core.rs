use criterion::{criterion_group, criterion_main, Criterion};
use poinav_bench::{cluttered_map, costmap, half_explored, scan};
use poinav_core::planner::astar;
use poinav_core::poi::extract_frontiers;
use poinav_core::rlvr::{grpo_objective, FEATURES, GroupRollout, GrpoConfig, ToyPolicy, ToyPrompt};
use poinav_core::{GridMap, Point2, Pose};
use rand::SeedableRng;
use std::hint::black_box;

fn planning(c: &mut Criterion) {
    let cm = costmap(&cluttered_map(200, 200, 1));
    let (s, g) = (Point2::new(0.15, 0.15), Point2::new(19.85, 19.85));
    assert!(astar(&cm, &s, &g).is_ok(), "bench map must have a path");
    c.bench_function("astar 200x200", |b| b.iter(|| astar(black_box(&cm), &s, &g)));
}

fn mapping(c: &mut Criterion) {
    let map = half_explored(300, 300, 2);
    c.bench_function("extract_frontiers 300x300", |b| b.iter(|| extract_frontiers(black_box(&map), 3)));
    let blank = GridMap::new(200, 200, 0.1, Point2::new(0.0, 0.0)).unwrap();
    let s = scan(Pose::new(10.0, 10.0, 0.3), 3);
    c.bench_function("integrate_scan 90 beams", |b| {
        b.iter_batched(|| blank.clone(), |mut m| m.integrate_scan(&s), criterion::BatchSize::LargeInput)
    });
}

fn training(c: &mut Criterion) {
    let prompt = ToyPrompt::fixed_example();
    let policy = ToyPolicy::new(vec![0.0; FEATURES]);
    let cfg = GrpoConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let group = GroupRollout::sample(&prompt, &policy.probs(&prompt), cfg.group_size, &mut rng).unwrap();
    c.bench_function("grpo_objective", |b| {
        b.iter(|| grpo_objective(black_box(&policy), &prompt, &group, &cfg))
    });
}

criterion_group!(benches, planning, mapping, training);
criterion_main!(benches);
