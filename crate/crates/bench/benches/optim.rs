use criterion::{criterion_group, criterion_main, Criterion};
use gserase::optim::losses::{loss_color, loss_depth_distortion};
use gserase::optim::{evaluate_view, forward, render_grad_materials, LossWeights, TermSet, TrainTargets};
use gserase::render::RenderOpts;
use gserase::Mask;
use gserase_bench::mirror_sphere;

fn losses(c: &mut Criterion) {
    let g = mirror_sphere(96);
    let cam = &g.scene.cameras[0];
    let cache = forward(&g.scene, cam, &RenderOpts::default()).unwrap();
    let gt = forward(&g.ground_truth, cam, &RenderOpts::default()).unwrap().frame.color;
    let f = &cache.frame;
    c.bench_function("loss_color_96", |b| b.iter(|| loss_color(&f.color, &gt, None, None, 1.0).unwrap()));
    c.bench_function("loss_depth_distortion_96", |b| b.iter(|| loss_depth_distortion(&f.gbuffer, cam, None)));
}

fn backward(c: &mut Criterion) {
    let g = mirror_sphere(64);
    let cam = &g.scene.cameras[0];
    let ro = RenderOpts::default();
    let cache = forward(&g.scene, cam, &ro).unwrap();
    let gt = forward(&g.ground_truth, cam, &ro).unwrap().frame;
    let train = TrainTargets {
        rgb: gt.color.clone(),
        exclude: Mask::new(64, 64),
        glossy_gt: Some(gt.glossy_mask()),
        normal_gt: Some(gt.gbuffer.normal.clone()),
        label_gt: Some(gt.object_mask()),
    };
    let w = LossWeights::default();
    let (_, adj) = evaluate_view(&cache.frame, cam, Some(&train), None, &TermSet::REFINE_TRAIN, &w).unwrap();
    c.bench_function("evaluate_view_64", |b| b.iter(|| evaluate_view(&cache.frame, cam, Some(&train), None, &TermSet::REFINE_TRAIN, &w).unwrap()));
    c.bench_function("render_grad_materials_64", |b| b.iter(|| render_grad_materials(&g.scene, &cache, &adj).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = losses, backward
}
criterion_main!(benches);
