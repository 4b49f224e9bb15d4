#![allow(dead_code)]

use gserase::math::{self, Vec3};
use gserase::render::Frame;
use gserase::scene::{Camera, EnvKind, EnvironmentMap, GaussianPrimitive, Scene};
use gserase::Mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// `n` random primitives in the unit cube with every attribute sampled.
pub fn random_scene(n: usize, seed: u64, sh_degree: u32, size: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = math::sh_rest_count(sh_degree);
    let primitives = (0..n)
        .map(|_| {
            let mut q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
            q.iter_mut().for_each(|v| *v /= qn);
            let normal = math::to_f32(&unit(&mut rng));
            let sh_rest = (0..rest).map(|_| std::array::from_fn(|_| rng.random_range(-0.1..0.1))).collect();
            let mut u = || rng.random_range(0.0f32..1.0);
            GaussianPrimitive {
                position: [u() * 2.0 - 1.0, u() * 2.0 - 1.0, u() * 2.0 - 1.0],
                scale: [0.04 + 0.2 * u(), 0.04 + 0.2 * u(), 0.04 + 0.2 * u()],
                rotation: q,
                opacity: 0.05 + 0.9 * u(),
                color: [0.2 + 0.6 * u(), 0.2 + 0.6 * u(), 0.2 + 0.6 * u()],
                diffuse: [u(), u(), u()],
                fresnel0: [u(), u(), u()],
                roughness: u(),
                label: u(),
                region: u(),
                normal,
                sh_rest,
            }
        })
        .collect();
    let cam = Camera::look_at(Vec3::new(0.0, -3.0, 0.4), Vec3::zeros(), Vec3::z(), size, size, 55.0);
    Scene {
        primitives,
        sh_degree,
        env: EnvironmentMap::generate(
            &EnvKind::Gradient {
                ground: [0.2, 0.15, 0.1],
                horizon: [0.9, 0.8, 0.7],
                zenith: [0.2, 0.4, 0.9],
            },
            16,
            4,
        ),
        cameras: vec![cam],
        views: Vec::new(),
    }
}

/// Pixels of `cam` whose mirror ray off the plane z = 0 hits the sphere,
/// restricted to `within`.
pub fn mirror_footprint(cam: &Camera, center: Vec3, radius: f64, within: &Mask) -> Mask {
    let eye = cam.center();
    Mask::from_fn(cam.width, cam.height, |x, y| {
        if !within.get(x, y) {
            return false;
        }
        let d = cam.ray_dir(x as f64, y as f64);
        if d.z >= 0.0 {
            return false;
        }
        let p = eye + d * (-eye.z / d.z);
        let r = Vec3::new(d.x, d.y, -d.z);
        let oc = p - center;
        let b = oc.dot(&r);
        let c = oc.dot(&oc) - radius * radius;
        let disc = b * b - c;
        disc >= 0.0 && -b + disc.sqrt() > 0.0
    })
}

/// Sets every primitive's roughness to `r`.
pub fn with_roughness(scene: &Scene, r: f32) -> Scene {
    let mut s = scene.clone();
    for g in &mut s.primitives {
        g.roughness = r;
    }
    s
}

pub fn visibility_footprint(frame: &Frame, thresh: f64) -> Mask {
    let v = &frame.filtered.v;
    let glossy = frame.glossy_mask();
    Mask::from_fn(v.width, v.height, |x, y| glossy.get(x, y) && v.get(x, y, 0) < thresh)
}

pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

/// Training and inpaint targets offset by ±0.05 from the current render of
/// camera 0, with random masks.
pub fn offset_targets(scene: &Scene, seed: u64) -> (gserase::optim::TrainTargets, gserase::optim::InpaintTargets) {
    use gserase::removal::MaterialMaps;
    use gserase::render::{render_view, RenderOpts};
    use gserase::Image;
    let cam = &scene.cameras[0];
    let (w, h) = (cam.width, cam.height);
    let frame = render_view(scene, cam, &RenderOpts::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shift = |img: &Image| {
        let mut out = img.clone();
        for v in &mut out.data {
            *v += if rng.random_bool(0.5) { 0.05 } else { -0.05 };
        }
        out
    };
    let rgb = shift(&frame.color);
    let maps = MaterialMaps::from_frame(&frame);
    let maps = MaterialMaps {
        color: shift(&maps.color),
        diffuse: shift(&maps.diffuse),
        fresnel: shift(&maps.fresnel),
        roughness: shift(&maps.roughness),
        normal: maps.normal.clone(),
        region: Image::from_fn(w, h, 1, |_, _, _| rng.random_range(0.05..0.95)),
        depth: maps.depth.clone(),
    };
    let mut mask = |p: f64| Mask::from_fn(w, h, |_, _| rng.random_bool(p));
    let train = gserase::optim::TrainTargets {
        rgb,
        exclude: mask(0.1),
        glossy_gt: Some(mask(0.5)),
        normal_gt: Some(Image::from_fn(w, h, 3, |_, _, c| (c == 1) as u8 as f64)),
        label_gt: Some(mask(0.3)),
    };
    let inpaint = gserase::optim::InpaintTargets {
        view: 0,
        maps,
        mask: Mask::from_fn(w, h, |x, y| (w / 4..3 * w / 4).contains(&x) && (h / 4..3 * h / 4).contains(&y)),
    };
    (train, inpaint)
}

/// 10–90% rise width of `v` (low inside the footprint) along row `y`,
/// walking right from `x0`; linear interpolation between pixels.
pub fn rise_width(v: &gserase::Image, y: usize, x0: usize) -> Option<f64> {
    let row: Vec<f64> = (x0..v.width).map(|x| v.get(x, y, 0)).collect();
    let lo = row[0];
    let hi = row.iter().cloned().fold(f64::MIN, f64::max);
    if hi - lo < 0.5 {
        return None;
    }
    let cross = |level: f64| -> Option<f64> {
        let t = lo + level * (hi - lo);
        (1..row.len()).find(|&i| row[i] >= t).map(|i| {
            let (a, b) = (row[i - 1], row[i]);
            (i - 1) as f64 + (t - a) / (b - a)
        })
    };
    Some(cross(0.9)? - cross(0.1)?)
}
