use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gserase::math::Vec3;
use gserase::raster::{rasterize_gbuffer, RasterOpts};
use gserase::render::{render_with, scene_bvh, RenderOpts};
use gserase::shading::shade_ideal_specular;
use gserase::ssfilter::filter_specular;
use gserase::tracer::trace_batch;
use gserase_bench::mirror_sphere;

fn raster(c: &mut Criterion) {
    let mut g = c.benchmark_group("rasterize_gbuffer");
    for size in [64, 128] {
        let s = mirror_sphere(size).scene;
        g.bench_with_input(BenchmarkId::from_parameter(size), &s, |b, s| b.iter(|| rasterize_gbuffer(s, &s.cameras[0], &RasterOpts::default())));
    }
    g.finish();
}

fn tracing(c: &mut Criterion) {
    let s = mirror_sphere(64).scene;
    let bvh = scene_bvh(&s, &RenderOpts::default());
    let rays: Vec<(Vec3, Vec3)> = (0..4096)
        .map(|k| {
            let a = k as f64 * 0.618_033_988_75 * std::f64::consts::TAU;
            let z = -1.0 + 2.0 * (k as f64 + 0.5) / 4096.0;
            let r = (1.0 - z * z).sqrt();
            (Vec3::new(0.0, 0.0, 0.05), Vec3::new(r * a.cos(), r * a.sin(), z))
        })
        .collect();
    c.bench_function("trace_batch_4096", |b| b.iter(|| trace_batch(&bvh, &s, &rays)));
}

fn shading_and_filter(c: &mut Criterion) {
    let s = mirror_sphere(96).scene;
    let ro = RenderOpts::default();
    let cam = &s.cameras[0];
    let bvh = scene_bvh(&s, &ro);
    let gb = rasterize_gbuffer(&s, cam, &ro.raster);
    c.bench_function("shade_ideal_specular_96", |b| b.iter(|| shade_ideal_specular(&gb, &s.env, &bvh, &s, cam)));
    let spec = shade_ideal_specular(&gb, &s.env, &bvh, &s, cam);
    c.bench_function("filter_specular_96", |b| b.iter(|| filter_specular(&spec, &gb.roughness, &gb.depth, &ro.translator).unwrap()));
    c.bench_function("render_frame_96", |b| b.iter(|| render_with(&s, &bvh, cam, &ro).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = raster, tracing, shading_and_filter
}
criterion_main!(benches);
