use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use splat_lod::lod::{cut_splats, select_cut, GranularityQuery};
use splat_lod::render::render;
use splat_lod::{build_bvh, BuildConfig};
use splat_lod_bench::{camera, scene};

fn bench_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_bvh");
    group.sample_size(10);
    for n in [1_000, 10_000, 50_000] {
        let (leaves, _) = scene(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &leaves, |b, l| {
            b.iter(|| build_bvh(black_box(l), &BuildConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_cut(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_cut");
    let cam = camera([1280, 720]);
    for n in [10_000, 100_000] {
        let (_, h) = scene(n);
        for tau in [3.0, 15.0] {
            let q = GranularityQuery { camera: cam.clone(), tau };
            group.bench_with_input(BenchmarkId::new(format!("tau{tau}"), n), &h, |b, h| b.iter(|| select_cut(black_box(h), &q)));
        }
    }
    group.finish();
}

fn bench_render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    let cam = camera([256, 256]);
    let (_, h) = scene(5_000);
    for tau in [0.0, 3.0, 15.0] {
        let cut = select_cut(&h, &GranularityQuery { camera: cam.clone(), tau });
        let splats = cut_splats(&h, &cut);
        group.bench_function(format!("tau{tau}"), |b| b.iter(|| render(black_box(&splats), &cam)));
    }
    group.finish();
}

criterion_group!(benches, bench_build, bench_cut, bench_render);
criterion_main!(benches);
