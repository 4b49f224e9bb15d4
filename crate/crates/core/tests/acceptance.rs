//! One test per acceptance criterion; each prints a PASS/FAIL line.
//! Run with `cargo test -p gserase-core --test acceptance -- --nocapture`.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use gserase::image::{Image, Mask};
use gserase::lightmask::{frame_reflection_map, lighting_mask, DEFAULT_TAU};
use gserase::math::Vec3;
use gserase::metrics::psnr;
use gserase::optim::losses::*;
use gserase::optim::{gradcheck, refine, removal_targets, view_objective, GradCheckOpts, LossWeights, RefineOpts, TermSet};
use gserase::raster::{brute_force_gbuffer, rasterize_gbuffer, RasterOpts};
use gserase::removal::{remove_object, RemovalOpts};
use gserase::render::{reference_views, render_view, Frame, RenderOpts};
use gserase::scene::{gen_synthetic_scene, save_scene, Camera, SceneSpec};
use gserase::ssfilter::ideal_specular;
use gserase::tracer::{build_bvh, intersect_linear, intersect_ray, rough_region, trace, trace_linear, TraceOpts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPHERE_CENTER: [f64; 3] = [0.0, 0.0, 0.25];
const SPHERE_RADIUS: f64 = 0.25;

fn sphere_center() -> Vec3 {
    Vec3::new(SPHERE_CENTER[0], SPHERE_CENTER[1], SPHERE_CENTER[2])
}

#[test]
fn c1_raster_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = RasterOpts::default();
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = rng.random_range(1..=500);
        let size = rng.random_range(64..=128);
        let scene = random_scene(n, 1000 + k, (k % 3) as u32, size);
        let cam = &scene.cameras[0];
        let tiled = rasterize_gbuffer(&scene, cam, &opts);
        let brute = brute_force_gbuffer(&scene, cam, &opts);
        for ((_, a), (_, b)) in tiled.channels().iter().zip(brute.channels().iter()) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-5 && elapsed < Duration::from_secs(60);
    report(1, "rasterizer oracle", pass, &format!("max deviation {worst:.2e}, {elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn c2_bvh_matches_linear_scan() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut hit_mismatch, mut worst) = (0usize, 0.0f64);
    for k in 0..10 {
        let scene = random_scene(rng.random_range(50..=500), 2000 + k, 1, 16);
        let filter = if k % 2 == 0 { rough_region as fn(&_) -> bool } else { |_: &_| true };
        let bvh = build_bvh(&scene, filter, &TraceOpts::default());
        for _ in 0..1000 {
            let o = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let d = unit(&mut rng);
            let a = intersect_ray(&bvh, &o, &d);
            let b = intersect_linear(&bvh, &o, &d);
            if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.prim != y.prim || (x.t - y.t).abs() > 1e-6 || (x.alpha - y.alpha).abs() > 1e-6) {
                hit_mismatch += 1;
            }
            let (ta, tb) = (trace(&bvh, &scene, &o, &d), trace_linear(&bvh, &scene, &o, &d));
            worst = worst.max((ta.l_i - tb.l_i).amax()).max((ta.l_ind - tb.l_ind).amax()).max((ta.v - tb.v).abs()).max((ta.e_i - tb.e_i).abs());
            if ta.contributions.len() != tb.contributions.len() {
                hit_mismatch += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = hit_mismatch == 0 && worst <= 1e-6 && elapsed < Duration::from_secs(60);
    report(2, "tracer oracle", pass, &format!("{hit_mismatch} mismatched rays, max deviation {worst:.2e}, {elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn c3_material_gradients_match_finite_differences() {
    let start = Instant::now();
    let weights = LossWeights::default();
    let ro = RenderOpts::default();
    let (mut max_rel, mut failures, mut excluded, mut checked) = (0.0f64, 0usize, 0.0f64, 0usize);
    for k in 0..5u64 {
        let scene = random_scene(30, 3000 + k, 1, 32);
        let (train, inpaint) = offset_targets(&scene, 30 + k);
        let cam = scene.cameras[0].clone();
        let obj = |s: &gserase::Scene| view_objective(s, &cam, Some(&train), Some(&inpaint), &TermSet::ALL, &weights, &ro);
        let r = gradcheck(&scene, obj, &GradCheckOpts::default()).unwrap();
        for (name, g) in &r.groups {
            println!("  scene {k} {name:>9}: checked {:3} excluded {} max {:.2e} mean {:.2e}", g.checked, g.excluded, g.max_rel, g.mean_rel);
        }
        max_rel = max_rel.max(r.max_rel);
        failures += r.failures.len();
        excluded = excluded.max(r.excluded_fraction());
        checked += r.checked;
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && max_rel < 1e-3 && excluded <= 0.05 && elapsed < Duration::from_secs(300);
    report(
        3,
        "gradient suite",
        pass,
        &format!("{checked} coordinates, max rel {max_rel:.2e}, non-smooth fraction {excluded:.3}, {elapsed:.1?}"),
    );
    assert!(pass);
}

fn mirror_sphere() -> gserase::scene::GeneratedScene {
    gen_synthetic_scene(&SceneSpec::mirror_sphere(7)).unwrap()
}

#[test]
fn c4_visibility_footprint_matches_mirror_image() {
    let scene = with_roughness(&mirror_sphere().scene, 0.0);
    let ro = RenderOpts::default();
    let mut worst = 1.0f64;
    for cam in &scene.cameras {
        let frame = render_view(&scene, cam, &ro).unwrap();
        let got = visibility_footprint(&frame, 0.99);
        let expect = mirror_footprint(cam, sphere_center(), SPHERE_RADIUS, &frame.glossy_mask());
        assert!(expect.count() > 50);
        worst = worst.min(got.iou_tolerant(&expect, 1));
    }
    let pass = worst >= 0.9;
    report(4, "mirror geometry", pass, &format!("min IoU over views {worst:.3} (1 px tolerance)"));
    assert!(pass);
}

fn render_rough(scene: &gserase::Scene, cam: &Camera, r: f32) -> Frame {
    render_view(&with_roughness(scene, r), cam, &RenderOpts::default()).unwrap()
}

#[test]
fn c5_filter_identity_and_monotonicity() {
    let scene = mirror_sphere().scene;
    let cam = &scene.cameras[0];
    let f0 = render_rough(&scene, cam, 0.0);
    let identity = f0.filtered.g.max_abs_diff(&ideal_specular(&f0.specular));

    let footprint = visibility_footprint(&f0, 0.5);
    let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
    for y in 0..cam.height {
        for x in 0..cam.width {
            if footprint.get(x, y) {
                sx += x;
                sy += y;
                n += 1;
            }
        }
    }
    let (cx, cy) = (sx / n, sy / n);
    let widths: Vec<f64> = [0.0f32, 0.1, 0.2]
        .iter()
        .map(|&r| {
            let f = render_rough(&scene, cam, r);
            let rows: Vec<f64> = (cy - 2..=cy + 2).filter_map(|y| rise_width(&f.filtered.v, y, cx)).collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        })
        .collect();
    let pass = identity <= 1e-6 && widths[0] < widths[1] && widths[1] < widths[2];
    report(
        5,
        "filter identity and monotonicity",
        pass,
        &format!("identity deviation {identity:.2e}, edge widths {:.2}/{:.2}/{:.2} px", widths[0], widths[1], widths[2]),
    );
    assert!(pass);
}

#[test]
fn c6_lighting_mask_matches_reflection_footprint() {
    let g = mirror_sphere();
    let ro = RenderOpts::default();
    let mut worst = 1.0f64;
    let mut zero_label_pixels = 0usize;
    let mut blank = g.scene.clone();
    for p in &mut blank.primitives {
        p.label = 0.0;
    }
    for cam in &g.scene.cameras {
        let frame = render_view(&g.scene, cam, &ro).unwrap();
        let lm = lighting_mask(&frame_reflection_map(&frame), DEFAULT_TAU, &frame.object_mask());
        let expect = mirror_footprint(cam, sphere_center(), SPHERE_RADIUS, &frame.glossy_mask());
        worst = worst.min(lm.m_r.iou(&expect));
        let fb = render_view(&blank, cam, &ro).unwrap();
        zero_label_pixels += lighting_mask(&frame_reflection_map(&fb), DEFAULT_TAU, &fb.object_mask()).m_r.count();
    }
    let pass = worst >= 0.8 && zero_label_pixels == 0;
    report(6, "lighting-aware mask", pass, &format!("min IoU {worst:.3} at tau {DEFAULT_TAU}, zero-label M_r pixels {zero_label_pixels}"));
    assert!(pass);
}

fn glossy_residual(f: &Frame, gt: &Frame, mask: &Mask) -> f64 {
    let mut s = 0.0;
    for p in 0..mask.data.len() {
        if mask.data[p] {
            for c in 0..3 {
                s += (f.filtered.g.data[3 * p + c] - gt.filtered.g.data[3 * p + c]).abs();
            }
        }
    }
    s / (3 * mask.count().max(1)) as f64
}

#[test]
fn c7_end_to_end_reflection_removal() {
    let start = Instant::now();
    let g = mirror_sphere();
    let ro = RenderOpts::default();
    let work = tempfile::tempdir().unwrap();
    let removal = remove_object(&g.scene, &RemovalOpts::default(), work.path()).unwrap();
    let views = reference_views(&g.scene, &ro).unwrap();
    let (train, inpaint) = removal_targets(&removal, &views).unwrap();
    let result = refine(&removal.scene, &train, &inpaint, &RefineOpts { steps: 500, ..Default::default() }).unwrap();

    let mut min_psnr = f64::INFINITY;
    let mut min_reduction = f64::INFINITY;
    for (i, cam) in g.scene.cameras.iter().enumerate() {
        let gt = render_view(&g.ground_truth, cam, &ro).unwrap();
        let before = render_view(&g.scene, cam, &ro).unwrap();
        let after = render_view(&result.scene, cam, &ro).unwrap();
        let outside = removal.inpaint_masks[i].not();
        min_psnr = min_psnr.min(psnr(&after.color, &gt.color, Some(&outside)).unwrap());
        let footprint = removal.lighting[i].m_r.and(&outside);
        let reduction = 1.0 - glossy_residual(&after, &gt, &footprint) / glossy_residual(&before, &gt, &footprint);
        min_reduction = min_reduction.min(reduction);
    }
    let mut color_ratio = 0.0f64;
    for ip in &inpaint {
        let cam = &g.scene.cameras[ip.view];
        let ex = ip.mask.not();
        let mid = render_view(&removal.scene, cam, &ro).unwrap();
        let after = render_view(&result.scene, cam, &ro).unwrap();
        let l0 = loss_color(&mid.color, &ip.maps.color, Some(&ex), None, 1.0).unwrap();
        let l1 = loss_color(&after.color, &ip.maps.color, Some(&ex), None, 1.0).unwrap();
        color_ratio = color_ratio.max(l1 / l0);
    }
    let elapsed = start.elapsed();
    let pass = min_psnr >= 25.0 && min_reduction >= 0.9 && color_ratio < 0.2 && elapsed < Duration::from_secs(600);
    report(
        7,
        "end-to-end removal",
        pass,
        &format!(
            "min PSNR outside P {min_psnr:.2} dB, min residual reduction {:.1}%, masked color loss ratio {color_ratio:.3}, {elapsed:.1?}",
            100.0 * min_reduction
        ),
    );
    assert!(pass);
}

#[test]
fn c8_loss_closed_forms() {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-6;
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let a = Image::from_fn(16, 16, 3, |_, _, _| rng.random_range(0.0..1.0));
    let b = Image::from_fn(16, 16, 3, |_, _, _| rng.random_range(0.0..1.0));
    checks.push(("color: identical", close(loss_color(&a, &a, None, None, 1.0).unwrap(), 0.0)));
    let off = Image::from_fn(16, 16, 3, |x, y, c| a.get(x, y, c) + 0.1);
    checks.push(("color: L1 of constant offset", close(l1_masked(&off, &a, None, None, 1.0).unwrap(), 0.1)));
    let ex = Mask::from_fn(16, 16, |x, y| (x, y) != (3, 11));
    let p = a.idx(3, 11);
    let single: f64 = (0..3)
        .map(|c| {
            let (u, v) = (a.data[p + c], b.data[p + c]);
            let c1 = 1e-4;
            let s = (2.0 * u * v + c1) / (u * u + v * v + c1);
            (0.8 * (u - v).abs() + 0.2 * (1.0 - s)) / 3.0
        })
        .sum();
    checks.push(("color: single pixel", close(loss_color(&a, &b, Some(&ex), None, 1.0).unwrap(), single)));

    let z3 = Image::new(4, 4, 3);
    let z1 = Image::new(4, 4, 1);
    let ones = Image::filled(4, 4, 1, 1.0);
    let full = Mask::full(4, 4);
    let base = MaterialViews {
        diffuse: &z3,
        fresnel: &z3,
        roughness: &z1,
        normal: &z3,
    };
    let d = Image::filled(4, 4, 3, 0.2);
    let shifted = MaterialViews { diffuse: &d, ..base };
    checks.push(("material: identical", close(loss_material(&base, &base, &z1, &full, None, 1.0).unwrap(), 0.0)));
    checks.push(("material: region gating", close(loss_material(&shifted, &base, &ones, &full, None, 1.0).unwrap(), 0.0)));
    let one_px = Mask::from_fn(4, 4, |x, y| (x, y) == (2, 1));
    checks.push(("material: single pixel", close(loss_material(&shifted, &base, &z1, &one_px, None, 1.0).unwrap(), 0.2)));

    let i = Image::filled(4, 4, 3, 0.4);
    let ih = Image::filled(4, 4, 3, 0.7);
    checks.push(("appearance: identical", close(loss_appearance(&i, &i, &ones, &full, None, 1.0).unwrap(), 0.0)));
    checks.push(("appearance: gating", close(loss_appearance(&i, &ih, &z1, &full, None, 1.0).unwrap(), 0.0)));
    checks.push(("appearance: uniform offset", close(loss_appearance(&i, &ih, &ones, &full, None, 1.0).unwrap(), 0.3)));

    let flat = Image::filled(12, 5, 3, 0.5);
    let m = Image::filled(12, 5, 1, 1.0);
    checks.push(("smooth: constant map", close(loss_smooth_map(&Image::filled(12, 5, 1, 0.7), &flat, &m, None, 1.0).unwrap(), 0.0)));
    let step = Image::from_fn(12, 5, 1, |x, _, _| if x < 6 { 0.2 } else { 0.5 });
    let edge = Image::from_fn(12, 5, 3, |x, _, _| if x < 6 { 0.0 } else { 40.0 });
    checks.push(("smooth: aligned image edge", loss_smooth_map(&step, &edge, &m, None, 1.0).unwrap() < 1e-6));
    checks.push(("smooth: edge on flat image", close(loss_smooth_map(&step, &flat, &m, None, 1.0).unwrap(), 0.3 / 12.0)));

    let gt = Mask::from_fn(6, 1, |x, _| x % 2 == 0);
    let exact = Image::from_fn(6, 1, 1, |x, _, _| if x % 2 == 0 { 1.0 - BCE_EPS } else { BCE_EPS });
    checks.push(("bce: exact labels", close(loss_label_bce(&exact, &gt, None, None, 1.0).unwrap(), -(1.0 - BCE_EPS).ln())));
    checks.push(("bce: symmetric point", close(loss_label_bce(&Image::filled(6, 1, 1, 0.5), &gt, None, None, 1.0).unwrap(), std::f64::consts::LN_2)));
    let bce = loss_label_bce(&Image::filled(1, 1, 1, 0.9), &Mask::full(1, 1), None, None, 1.0).unwrap();
    checks.push(("bce: single pixel", close(bce, -(0.9f64.ln())) && (bce - 0.1054).abs() < 5e-5));

    let cam = Camera::look_at(Vec3::new(0.0, -3.0, 0.0), Vec3::zeros(), Vec3::z(), 20, 16, 50.0);
    let alpha = Image::filled(20, 16, 1, 1.0);
    let plane = |n: Vec3| {
        let eye = cam.center();
        Image::from_fn(20, 16, 1, |x, y, _| {
            let d = cam.ray_dir(x as f64, y as f64);
            cam.world_to_camera(&(eye + d * ((-eye).dot(&n) / d.dot(&n)))).z
        })
    };
    let const_n = |n: Vec3| Image::from_fn(20, 16, 3, |_, _, c| n[c]);
    let nd = depth_normals(&plane(Vec3::y()), &alpha, &cam);
    checks.push(("depth-normal: fronto-parallel", close(loss_depth_normal(&const_n(-Vec3::y()), &nd, None).unwrap(), 0.0)));
    checks.push(("depth-normal: perpendicular", close(loss_depth_normal(&const_n(Vec3::x()), &nd, None).unwrap(), 1.0)));
    let tilt = Vec3::new(0.0, -1.0, 1.0).normalize();
    let nd = depth_normals(&plane(tilt), &alpha, &cam);
    checks.push(("depth-normal: 45 degree plane", loss_depth_normal(&const_n(tilt), &nd, None).unwrap().abs() < 1e-3));

    checks.push(("distortion: single contributor", close(depth_distortion_pixel(&[(0.8, 0.4)]), 0.0)));
    checks.push(("distortion: two contributors", close(depth_distortion_pixel(&[(0.5, 0.3), (0.25, 0.4)]), 0.025)));
    let s: Vec<(f64, f64)> = (0..12).map(|_| (rng.random_range(0.0..0.3), rng.random_range(-1.0..1.0))).collect();
    let brute: f64 = s.iter().flat_map(|a| s.iter().map(move |b| a.0 * b.0 * (a.1 - b.1).abs())).sum();
    checks.push(("distortion: brute force", close(depth_distortion_pixel(&s), brute)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty();
    report(8, "loss closed forms", pass, &format!("{} examples, failed {failed:?}", checks.len()));
    assert!(pass);
}

fn pipeline(out: &Path) {
    let g = mirror_sphere();
    let ro = RenderOpts::default();
    save_scene(&g.scene, &out.join("scene")).unwrap();
    save_scene(&g.ground_truth, &out.join("ground_truth")).unwrap();
    let removal = remove_object(&g.scene, &RemovalOpts::default(), &out.join("work")).unwrap();
    removal.save(&out.join("removal")).unwrap();
    let views = reference_views(&g.scene, &ro).unwrap();
    let (train, inpaint) = removal_targets(&removal, &views).unwrap();
    let result = refine(&removal.scene, &train, &inpaint, &RefineOpts { steps: 40, ..Default::default() }).unwrap();
    save_scene(&result.scene, &out.join("refined")).unwrap();
    gserase::optim::write_trace_csv(&out.join("trace.csv"), &result.trace).unwrap();
    render_view(&result.scene, &g.scene.cameras[0], &ro).unwrap().export(&out.join("render"), "render_0", true).unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c9_single_thread_runs_are_bitwise_identical() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pool.install(|| pipeline(a.path()));
    pool.install(|| pipeline(b.path()));
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = fa.len() == fb.len() && !fa.is_empty() && differing.is_empty();
    report(9, "determinism", pass, &format!("{} files compared, differing {differing:?}", fa.len()));
    assert!(pass);
}
