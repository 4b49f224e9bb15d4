//! Reverse pass from pixel adjoints to per-primitive material gradients.
//! Geometry, hit sets and ray directions are held fixed.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::{MaterialGrads, ParamLayout, PixelAdjoints};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::render::{render_with, scene_bvh, Frame, RenderOpts};
use crate::scene::{Camera, Scene};
use crate::shading::env_level;
use crate::ssfilter::{pyramid_backward, sample_filtered_backward, translate_derivative, zero_levels};

/// Forward buffers tagged with the scene and camera they came from.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub frame: Frame,
    pub scene_hash: u64,
    pub camera: Camera,
    pub opts: RenderOpts,
}

/// FNV-1a over every primitive attribute and the environment size.
pub fn scene_hash(scene: &Scene) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u32(scene.sh_degree);
    h.write_usize(scene.primitives.len());
    for g in &scene.primitives {
        let fixed = g
            .position
            .iter()
            .chain(&g.scale)
            .chain(&g.rotation)
            .chain(std::iter::once(&g.opacity))
            .chain(&g.color)
            .chain(g.sh_rest.iter().flatten())
            .chain(&g.diffuse)
            .chain(&g.fresnel0)
            .chain([&g.roughness, &g.label, &g.region])
            .chain(&g.normal);
        for v in fixed {
            h.write_u32(v.to_bits());
        }
    }
    h.write_usize(scene.env.size());
    h.write_usize(scene.env.levels());
    h.finish()
}

/// Renders `cam` and keeps what the backward pass needs.
pub fn forward(scene: &Scene, cam: &Camera, opts: &RenderOpts) -> Result<ForwardCache> {
    let bvh = scene_bvh(scene, opts);
    Ok(ForwardCache {
        frame: render_with(scene, &bvh, cam, opts)?,
        scene_hash: scene_hash(scene),
        camera: cam.clone(),
        opts: opts.clone(),
    })
}

/// Chains `adj` through compose, the glossy filter, Fresnel, direct
/// lighting, traced radiance and rasterized aggregation.
pub fn render_grad_materials(scene: &Scene, cache: &ForwardCache, adj: &PixelAdjoints) -> Result<MaterialGrads> {
    if scene_hash(scene) != cache.scene_hash {
        return Err(Error::StaleCache("scene changed since the forward pass".into()));
    }
    let f = &cache.frame;
    let gb = &f.gbuffer;
    let (w, h) = (gb.width, gb.height);
    if cache.camera.width != w || cache.camera.height != h || adj.color.width != w || adj.color.height != h {
        return Err(Error::StaleCache("adjoint size does not match the cached frame".into()));
    }
    let spec = &f.specular;
    let filt = &f.filtered;
    let env = &scene.env;
    let env_scale = env.levels() as f64 - 1.0;

    let mut d_diffuse = adj.diffuse.clone();
    let mut d_color = Image::new(w, h, 3);
    let mut d_f0 = adj.fresnel.clone();
    let mut d_r = adj.roughness.clone();
    let mut d_m = adj.region.clone();
    let mut lv_l = zero_levels(&filt.pyr_l_ind);
    let mut lv_v = zero_levels(&filt.pyr_v);

    for p in 0..w * h {
        let (x, y) = (p % w, p / w);
        let m = gb.region.data[p];
        let dc = &adj.color.data[3 * p..3 * p + 3];
        let mut dg = [0.0; 3];
        let mut dm = 0.0;
        for c in 0..3 {
            let g = filt.g.data[3 * p + c];
            let (dd, cc) = (gb.diffuse.data[3 * p + c], gb.color.data[3 * p + c]);
            dg[c] = (1.0 - m) * dc[c];
            dm += -dc[c] * g + dc[c] * (cc - dd);
            d_diffuse.data[3 * p + c] += (1.0 - m) * dc[c];
            d_color.data[3 * p + c] = m * dc[c];
        }
        d_m.data[p] += dm;
        if !spec.glossy.data[p] {
            continue;
        }
        let k = (1.0 - spec.cos_theta.data[p].clamp(0.0, 1.0)).powi(5);
        let vf = filt.v.data[p];
        let mut dl = [0.0; 3];
        let mut dldir = [0.0; 3];
        let mut dv = 0.0;
        for c in 0..3 {
            let fr = spec.fresnel.data[3 * p + c];
            let li = filt.l_ind.data[3 * p + c];
            let ld = spec.l_dir.data[3 * p + c];
            d_f0.data[3 * p + c] += dg[c] * (li + ld * vf) * (1.0 - k);
            dl[c] = dg[c] * fr;
            dldir[c] = dg[c] * fr * vf;
            dv += dg[c] * fr * ld;
        }
        let rs = filt.r_s.data[p];
        let drs = sample_filtered_backward(&filt.pyr_l_ind, x, y, rs, &dl, &mut lv_l)
            + sample_filtered_backward(&filt.pyr_v, x, y, rs, &[dv], &mut lv_v);
        let r = gb.roughness.data[p];
        if drs != 0.0 {
            d_r.data[p] += drs * translate_derivative(r, gb.depth.data[p], &cache.opts.translator)?;
        }
        if (0.0..=1.0).contains(&r) {
            let dlev = env.sample_level_derivative(&spec.reflect[p], env_level(env, r));
            d_r.data[p] += env_scale * (0..3).map(|c| dldir[c] * dlev[c]).sum::<f64>();
        }
    }
    let d_lind = pyramid_backward(lv_l);

    let layout = ParamLayout::new(math::sh_rest_count(scene.sh_degree));
    let mut out = MaterialGrads::zeros(scene.primitives.len(), layout);

    // Traced radiance of rough primitives seen in reflections.
    let sh_eval = cache.opts.trace.sh_eval;
    for p in 0..w * h {
        let Some(tr) = &spec.traces[p] else { continue };
        let dli = &d_lind.data[3 * p..3 * p + 3];
        if dli.iter().all(|v| *v == 0.0) {
            continue;
        }
        let basis = if sh_eval { math::sh_basis_rest(scene.sh_degree, &spec.reflect[p]) } else { Vec::new() };
        for &(prim, wt, live) in &tr.contributions {
            add_color_grad(out.prim_mut(prim as usize), dli, wt, live, &basis);
        }
    }

    // Rasterized aggregates.
    let eye = cache.camera.center();
    let bases: Vec<(Vec<f64>, [bool; 3])> = scene
        .primitives
        .iter()
        .map(|g| {
            let basis = math::sh_basis_rest(scene.sh_degree, &(g.mean() - eye).normalize());
            let live = math::eval_color(g.color, &g.sh_rest, &basis).1;
            (basis, live)
        })
        .collect();
    for p in 0..w * h {
        for c in gb.contributions.pixel(p) {
            let i = c.prim as usize;
            let wt = c.weight;
            let g = out.prim_mut(i);
            for ch in 0..3 {
                g[ch] += wt * d_diffuse.data[3 * p + ch];
                g[3 + ch] += wt * d_f0.data[3 * p + ch];
            }
            g[6] += wt * d_r.data[p];
            g[10] += wt * adj.label.data[p];
            g[11] += wt * d_m.data[p];
            let (basis, live) = &bases[i];
            add_color_grad(g, &d_color.data[3 * p..3 * p + 3], wt, *live, basis);
        }
    }
    Ok(out)
}

/// Adds wt·dc through the clamped SH color into color (7..10) and
/// sh_rest (12..) slots.
fn add_color_grad(g: &mut [f64], dc: &[f64], wt: f64, live: [bool; 3], basis: &[f64]) {
    for ch in 0..3 {
        if !live[ch] {
            continue;
        }
        let v = wt * dc[ch];
        g[7 + ch] += v;
        for (j, b) in basis.iter().enumerate() {
            g[12 + 3 * j + ch] += v * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::losses::l1_masked;
    use crate::raster::tests::front_camera;
    use crate::scene::{EnvironmentMap, GaussianPrimitive};

    fn single(g: GaussianPrimitive) -> Scene {
        Scene {
            primitives: vec![g],
            sh_degree: 0,
            env: EnvironmentMap::constant(8, 3, [1.0; 3]),
            cameras: vec![],
            views: vec![],
        }
    }

    #[test]
    fn linear_chain_single_primitive() {
        let s = single(GaussianPrimitive {
            position: [0.0, 0.0, 0.0],
            scale: [0.4, 0.4, 0.4],
            ..Default::default()
        });
        let cam = front_camera(9, 9);
        let cache = forward(&s, &cam, &RenderOpts::default()).unwrap();
        let p = 4 * 9 + 4;
        let contrib = cache.frame.gbuffer.contributions.pixel(p);
        assert_eq!(contrib.len(), 1);
        let wt = contrib[0].weight;
        let mut adj = PixelAdjoints::zeros(9, 9);
        for c in 0..3 {
            adj.diffuse.data[3 * p + c] = 1.0 / 3.0;
        }
        let g = render_grad_materials(&s, &cache, &adj).unwrap();
        for c in 0..3 {
            assert!((g.prim(0)[c] - wt / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut s = single(GaussianPrimitive::default());
        let cam = front_camera(8, 8);
        let cache = forward(&s, &cam, &RenderOpts::default()).unwrap();
        s.primitives[0].diffuse[1] = 0.25;
        let adj = PixelAdjoints::zeros(8, 8);
        assert!(matches!(render_grad_materials(&s, &cache, &adj), Err(Error::StaleCache(_))));
    }

    #[test]
    fn non_contributing_fresnel_has_zero_gradient() {
        // Glossy floor with a far-off primitive that never reaches a pixel.
        let mut prims: Vec<GaussianPrimitive> = (0..25)
            .map(|i| GaussianPrimitive {
                position: [(i % 5) as f32 * 0.2 - 0.4, 0.0, (i / 5) as f32 * 0.2 - 0.4],
                scale: [0.15, 0.004, 0.15],
                region: 0.0,
                roughness: 0.05,
                normal: [0.0, -1.0, 0.0],
                opacity: 0.95,
                ..Default::default()
            })
            .collect();
        prims.push(GaussianPrimitive {
            position: [40.0, 0.0, 0.0],
            ..Default::default()
        });
        let s = Scene {
            primitives: prims,
            ..single(GaussianPrimitive::default())
        };
        let cam = front_camera(16, 16);
        let cache = forward(&s, &cam, &RenderOpts::default()).unwrap();
        assert!(cache.frame.specular.diagnostics.glossy > 0);
        let mut adj = PixelAdjoints::zeros(16, 16);
        let target = Image::new(16, 16, 3);
        l1_masked(&cache.frame.color, &target, None, Some(&mut adj.color), 1.0).unwrap();
        let g = render_grad_materials(&s, &cache, &adj).unwrap();
        assert!(g.prim(25).iter().all(|v| *v == 0.0));
        assert!(g.prim(12)[3..6].iter().any(|v| *v != 0.0));
    }
}
