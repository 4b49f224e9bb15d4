//! Splat projection and tiled alpha compositing into a G-buffer.

pub mod gbuffer;

pub use gbuffer::{Contributions, GBuffer};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::{self, Vec3};
use crate::scene::{Camera, GaussianPrimitive, Scene};

/// Compositing constants. Echoed into exported metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterOpts {
    pub alpha_min: f64,
    pub t_stop: f64,
    /// Footprint cutoff in standard deviations.
    pub cutoff_sigma: f64,
    pub tile_size: usize,
    /// Isotropic variance (px²) added to every screen covariance.
    pub dilation: f64,
}

impl Default for RasterOpts {
    fn default() -> Self {
        RasterOpts {
            alpha_min: 1.0 / 255.0,
            t_stop: 1e-3,
            cutoff_sigma: 3.0,
            tile_size: 16,
            dilation: 0.3,
        }
    }
}

/// Screen-space image of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenFootprint {
    pub index: u32,
    pub mean: [f64; 2],
    /// 2×2 screen covariance (symmetric), px².
    pub cov: [[f64; 2]; 2],
    /// Inverse covariance as (a, b, c): q = a·dx² + 2b·dx·dy + c·dy².
    pub conic: [f64; 3],
    /// Camera-space depth of the mean.
    pub depth: f64,
    /// Inclusive pixel bounds (x0, x1, y0, y1), clipped to the viewport.
    pub bounds: [i64; 4],
}

/// Projects `g` with the local affine approximation of the pinhole map.
/// Returns `None` behind the near plane or when the cutoff ellipse misses
/// the viewport.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera, opts: &RasterOpts) -> Option<ScreenFootprint> {
    let t = cam.world_to_camera(&g.mean());
    if t.z <= cam.near {
        return None;
    }
    let (fx, fy) = (cam.fx, cam.fy);
    let (u, v) = (fx * t.x / t.z + cam.cx, fy * t.y / t.z + cam.cy);
    let j = nalgebra::Matrix2x3::new(
        fx / t.z,
        0.0,
        -fx * t.x / (t.z * t.z),
        0.0,
        fy / t.z,
        -fy * t.y / (t.z * t.z),
    );
    let w = cam.rotation_matrix();
    let c3 = w * g.covariance() * w.transpose();
    let c2 = j * c3 * j.transpose();
    let (a, b, c) = (c2[(0, 0)] + opts.dilation, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + opts.dilation);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let k = opts.cutoff_sigma;
    let (rx, ry) = (k * a.sqrt(), k * c.sqrt());
    // Tiny padding keeps every pixel with q ≤ k² inside the bounds under rounding.
    let pad = 1e-3;
    let x0 = (u - rx - pad).ceil() as i64;
    let x1 = (u + rx + pad).floor() as i64;
    let y0 = (v - ry - pad).ceil() as i64;
    let y1 = (v + ry + pad).floor() as i64;
    let (wmax, hmax) = (cam.width as i64 - 1, cam.height as i64 - 1);
    if x1 < 0 || y1 < 0 || x0 > wmax || y0 > hmax || x0 > x1 || y0 > y1 {
        return None;
    }
    Some(ScreenFootprint {
        index: 0,
        mean: [u, v],
        cov: [[a, b], [b, c]],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        bounds: [x0.max(0), x1.min(wmax), y0.max(0), y1.min(hmax)],
    })
}

/// Projected primitives in compositing order (mean depth, then index),
/// together with their view-dependent colors.
pub(crate) struct Projected {
    pub splats: Vec<ScreenFootprint>,
    pub colors: Vec<Vec3>,
}

pub(crate) fn project_all(scene: &Scene, cam: &Camera, opts: &RasterOpts) -> Projected {
    let eye = cam.center();
    let mut items: Vec<(ScreenFootprint, Vec3)> = scene
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let mut fp = project_gaussian(g, cam, opts)?;
            fp.index = i as u32;
            let dir = (g.mean() - eye).normalize();
            let basis = math::sh_basis_rest(scene.sh_degree, &dir);
            Some((fp, math::eval_color(g.color, &g.sh_rest, &basis).0))
        })
        .collect();
    items.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));
    let (splats, colors) = items.into_iter().unzip();
    Projected { splats, colors }
}

/// Per-pixel accumulator; field order matches the G-buffer channels.
#[derive(Clone, Debug, Default)]
pub(crate) struct PixelAccum {
    pub normal: Vec3,
    pub diffuse: Vec3,
    pub fresnel0: Vec3,
    pub color: Vec3,
    pub roughness: f64,
    pub depth: f64,
    pub region: f64,
    pub label: f64,
    pub alpha: f64,
    pub contrib: Vec<(u32, f64, f64)>,
}

/// Composites the candidates (already in depth order) at pixel (x, y).
/// Shared verbatim by the tiled and brute-force paths.
fn composite_pixel<'a>(
    x: usize,
    y: usize,
    candidates: impl Iterator<Item = (&'a ScreenFootprint, &'a Vec3)>,
    scene: &Scene,
    opts: &RasterOpts,
) -> PixelAccum {
    let mut acc = PixelAccum::default();
    let mut t = 1.0;
    let cut = opts.cutoff_sigma * opts.cutoff_sigma;
    for (fp, color) in candidates {
        let dx = x as f64 - fp.mean[0];
        let dy = y as f64 - fp.mean[1];
        let q = fp.conic[0] * dx * dx + 2.0 * fp.conic[1] * dx * dy + fp.conic[2] * dy * dy;
        if q > cut {
            continue;
        }
        let g = &scene.primitives[fp.index as usize];
        let alpha = g.opacity as f64 * (-0.5 * q).exp();
        if alpha < opts.alpha_min {
            continue;
        }
        let w = alpha * t;
        acc.normal += math::vec3(g.normal) * w;
        acc.diffuse += math::vec3(g.diffuse) * w;
        acc.fresnel0 += math::vec3(g.fresnel0) * w;
        acc.color += color * w;
        acc.roughness += g.roughness as f64 * w;
        acc.depth += fp.depth * w;
        acc.region += g.region as f64 * w;
        acc.label += g.label as f64 * w;
        acc.alpha += w;
        acc.contrib.push((fp.index, w, fp.depth));
        t *= 1.0 - alpha;
        if t < opts.t_stop {
            break;
        }
    }
    acc
}

/// Tiled, parallel rasterization of all G-buffer channels.
pub fn rasterize_gbuffer(scene: &Scene, cam: &Camera, opts: &RasterOpts) -> GBuffer {
    let proj = project_all(scene, cam, opts);
    let ts = opts.tile_size.max(1);
    let (tw, th) = (cam.width.div_ceil(ts), cam.height.div_ceil(ts));

    // Bin splats to tiles; iterating in sorted order keeps bins sorted.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tw * th];
    for (k, fp) in proj.splats.iter().enumerate() {
        let [x0, x1, y0, y1] = fp.bounds;
        for ty in (y0 as usize / ts)..=(y1 as usize / ts) {
            for tx in (x0 as usize / ts)..=(x1 as usize / ts) {
                bins[ty * tw + tx].push(k as u32);
            }
        }
    }

    let tiles: Vec<Vec<(usize, PixelAccum)>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, bin)| {
            let (tx, ty) = (tile % tw, tile / tw);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(cam.height) {
                for x in tx * ts..((tx + 1) * ts).min(cam.width) {
                    let cands = bin.iter().map(|&k| (&proj.splats[k as usize], &proj.colors[k as usize]));
                    out.push((y * cam.width + x, composite_pixel(x, y, cands, scene, opts)));
                }
            }
            out
        })
        .collect();

    let mut pixels = vec![PixelAccum::default(); cam.width * cam.height];
    for (p, acc) in tiles.into_iter().flatten() {
        pixels[p] = acc;
    }
    GBuffer::assemble(cam, pixels)
}

/// Reference rasterizer: every pixel walks every projected primitive.
pub fn brute_force_gbuffer(scene: &Scene, cam: &Camera, opts: &RasterOpts) -> GBuffer {
    let proj = project_all(scene, cam, opts);
    let pixels = (0..cam.width * cam.height)
        .map(|p| {
            let (x, y) = (p % cam.width, p / cam.width);
            composite_pixel(x, y, proj.splats.iter().zip(&proj.colors), scene, opts)
        })
        .collect();
    GBuffer::assemble(cam, pixels)
}
