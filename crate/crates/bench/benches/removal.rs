use criterion::{criterion_group, criterion_main, Criterion};
use gserase::removal::{diffusion_fill, remove_object, RemovalOpts, INPAINT_MAX_ITERS, INPAINT_TOL};
use gserase::{Image, Mask};
use gserase_bench::mirror_sphere;

fn fill(c: &mut Criterion) {
    let img = Image::from_fn(96, 96, 3, |x, y, ch| ((x * 7 + y * 13 + ch * 5) % 17) as f64 / 16.0);
    let mask = Mask::from_fn(96, 96, |x, y| (x as f64 - 48.0).hypot(y as f64 - 48.0) < 10.0);
    c.bench_function("diffusion_fill_96_r10", |b| b.iter(|| diffusion_fill(&img, &mask, INPAINT_TOL, INPAINT_MAX_ITERS)));
}

fn remove(c: &mut Criterion) {
    let g = mirror_sphere(64);
    let dir = std::env::temp_dir().join("gserase-bench-remove");
    c.bench_function("remove_object_64", |b| b.iter(|| remove_object(&g.scene, &RemovalOpts::default(), &dir).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = fill, remove
}
criterion_main!(benches);
